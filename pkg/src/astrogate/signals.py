"""Cell-to-synapse signal pipeline: linear map, smoothing, z-normalization.

Per trajectory sample: Cbar = Q c (column-stochastic Q preserves total mass),
then exponential smoothing Ctilde <- (1-phi) Ctilde + phi Cbar with
phi = 1 - exp(-dt/tau_s), then a streaming standardization
Chat = (Ctilde - mu) / (sigma + eps) whose moments advance afterwards with
gain rho (tied to a slower time constant the same way phi is).
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SynapseMap:
    """Nonnegative column-stochastic map from cells to synaptic sites."""

    q: np.ndarray  # (n_synapses, n_cells)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        object.__setattr__(self, "q", q)
        if q.ndim != 2:
            raise ValueError("q must be a matrix")
        if np.any(q < 0):
            raise ValueError("q entries must be nonnegative")
        colsums = q.sum(axis=0)
        if np.any(np.abs(colsums - 1.0) > 1e-12):
            raise ValueError("q columns must each sum to 1")

    @property
    def n_synapses(self) -> int:
        return self.q.shape[0]

    @property
    def n_cells(self) -> int:
        return self.q.shape[1]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.q).tobytes()).hexdigest()


def build_default_map(n_synapses: int, n_cells: int, seed=None,
                      mode="round_robin") -> SynapseMap:
    """Round-robin partition of synapses across cells (or a seeded random one).

    Each cell's column splits its unit mass uniformly over the synapses
    assigned to it, so the column-stochastic invariant holds by construction.
    """
    if n_synapses < 1 or n_cells < 1:
        raise ValueError("need at least one synapse and one cell")
    q = np.zeros((n_synapses, n_cells))
    if mode == "round_robin":
        if n_synapses >= n_cells:
            owners = np.arange(n_synapses) % n_cells
            for cell in range(n_cells):
                rows = np.nonzero(owners == cell)[0]
                q[rows, cell] = 1.0 / rows.size
        else:
            for cell in range(n_cells):
                q[cell % n_synapses, cell] = 1.0
    elif mode == "random":
        rng = np.random.default_rng(seed)
        per_cell = max(1, n_synapses // n_cells)
        for cell in range(n_cells):
            rows = rng.choice(n_synapses, size=per_cell, replace=False)
            q[rows, cell] = 1.0 / per_cell
    else:
        raise ValueError(f"unknown map mode {mode!r}")
    return SynapseMap(q)


def map_to_synapses(synapse_map: SynapseMap, c) -> np.ndarray:
    """Cbar = Q c; total mass is preserved by column-stochasticity."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (synapse_map.n_cells,):
        raise ValueError(
            f"expected {synapse_map.n_cells} cell values, got shape {c.shape}")
    return synapse_map.q @ c


@dataclass
class SynapseSignalState:
    """Streaming smoother + standardizer state for one synapse population."""

    c_bar: np.ndarray
    c_tilde: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    c_hat: np.ndarray
    tau_s: float
    rho_gain: float
    epsilon: float
    started: bool = False

    @classmethod
    def initialize(cls, n_synapses: int, tau_s=5.0, rho_gain=0.1,
                   epsilon=1e-6) -> "SynapseSignalState":
        if tau_s <= 0:
            raise ValueError("tau_s must be positive")
        if not 0 < rho_gain <= 1:
            raise ValueError("rho_gain must lie in (0, 1]")
        z = np.zeros(n_synapses)
        return cls(c_bar=z.copy(), c_tilde=z.copy(), mu=z.copy(),
                   sigma2=np.ones(n_synapses), c_hat=z.copy(),
                   tau_s=tau_s, rho_gain=rho_gain, epsilon=epsilon)


def smoothing_gain(dt: float, tau: float) -> float:
    """phi = 1 - exp(-dt/tau); equals 1 - 1/e when tau == dt."""
    if dt <= 0 or tau <= 0:
        raise ValueError("dt and tau must be positive")
    return 1.0 - math.exp(-dt / tau)


def ema_update(state: SynapseSignalState, c_bar, dt: float) -> SynapseSignalState:
    """Low-pass the mapped signal: Ctilde <- (1-phi) Ctilde + phi Cbar."""
    c_bar = np.asarray(c_bar, dtype=np.float64)
    phi = smoothing_gain(dt, state.tau_s)
    state.c_bar = c_bar
    state.c_tilde = (1.0 - phi) * state.c_tilde + phi * c_bar
    return state


def znorm_update(state: SynapseSignalState, c_tilde=None) -> np.ndarray:
    """Standardize, then advance the exponentially weighted moments.

    The standardized value is read with the pre-update moments; the variance
    update also uses the pre-update mean. On the first observation the mean
    seeds to the observation itself (with unit variance) so the stream has no
    cold-start spike.
    """
    if c_tilde is not None:
        state.c_tilde = np.asarray(c_tilde, dtype=np.float64)
    ct = state.c_tilde
    if not state.started:
        state.mu = ct.copy()
        state.sigma2 = np.ones_like(ct)
        state.started = True
    sigma = np.sqrt(state.sigma2)
    state.c_hat = (ct - state.mu) / (sigma + state.epsilon)
    rho = state.rho_gain
    mu_prev = state.mu
    state.mu = (1.0 - rho) * mu_prev + rho * ct
    state.sigma2 = (1.0 - rho) * state.sigma2 + rho * (ct - mu_prev) ** 2
    return state.c_hat


def build_signal_stream(trajectory, synapse_map: SynapseMap, tau_s=5.0,
                        tau_rho=None, epsilon=1e-6):
    """Standardized per-synapse signals for every trajectory sample.

    Returns (stream, state): stream has shape (n_samples, n_synapses). The
    moment gain rho comes from tau_rho (default 10 * tau_s, so the moments
    adapt slower than the signal). The smoother seeds at the first mapped
    sample to avoid a startup transient.
    """
    if trajectory.n_cells != synapse_map.n_cells:
        raise ValueError("trajectory and map disagree on cell count")
    times = trajectory.times
    if len(times) < 1:
        raise ValueError("empty trajectory")
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    if tau_rho is None:
        tau_rho = 10.0 * tau_s
    rho = smoothing_gain(dt, tau_rho)
    state = SynapseSignalState.initialize(synapse_map.n_synapses, tau_s=tau_s,
                                          rho_gain=rho, epsilon=epsilon)
    stream = np.empty((len(times), synapse_map.n_synapses))
    for k in range(len(times)):
        c_bar = map_to_synapses(synapse_map, trajectory.c_series[k])
        if k == 0:
            state.c_tilde = c_bar.copy()
            state.c_bar = c_bar
        else:
            ema_update(state, c_bar, dt)
        stream[k] = znorm_update(state)
    return stream, state
