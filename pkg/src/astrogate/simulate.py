"""Stochastic reaction-diffusion calcium field on an astrocyte lattice.

Per-cell state is (c, E, IP3): cytosolic Ca2+, ER Ca2+, and IP3 (uM). One
explicit Euler-Maruyama step advances

    c  += dt*(J_in - J_out - kappa_diff * Lw c) + sqrt(dt)*zeta
    E  += dt*(J_out - J_in - kappa_f*(E - c))
    IP3+= dt*(v_plc * c^2/(k_p^2 + c^2) - kappa_d * IP3)

with J_in = v_ip3 * Hill(c; k1, n) * Hill(IP3; k_i, m) * (E - c) and
J_out = v_serca * Hill(c; k2, p) + kappa_o * c. Lw is the conductance-weighted
Laplacian whose per-edge weights come from a two-hemichannel junction model:
each hemichannel is open with probability sigma(a0 + a1|ci-cj| + a2(ci+cj)),
giving states HH/HL/LH/LL with the product distribution and expected
conductance g_max*(p^2 + 2*rho*p*(1-p)). All pools are projected to >= 0
after each step.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .backend import active_backend, using_numba
from .lattice import AstrocyteGraph, laplacian_lambda_max, weighted_laplacian

# Junction state codes, per edge (i, j) with i < j: bit 1 = i-side hemichannel
# open, bit 0 = j-side open.
JSTATE_LL = 0
JSTATE_LH = 1
JSTATE_HL = 2
JSTATE_HH = 3
JSTATE_NAMES = {JSTATE_LL: "LL", JSTATE_LH: "LH", JSTATE_HL: "HL", JSTATE_HH: "HH"}

# Steps advanced per kernel call; fixed so the random stream layout does not
# depend on the backend.
CHUNK_STEPS = 1024


class NumericDivergenceError(RuntimeError):
    """A simulation step produced a non-finite concentration."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite state detected at step {step}")


@dataclass(frozen=True)
class SimParams:
    """Kinetic, junction, and noise constants (rates per ms, concentrations uM).

    The printed source never fixes numeric values for these constants; the
    defaults below are chosen to keep cytosolic Ca2+ in the ~0.1-3 uM range
    on the default lattice and satisfy the diffusive stability bound at dt.
    Zero is allowed for the rate constants so individual mechanisms can be
    switched off in diffusion-only or deterministic studies.
    """

    v_ip3: float = 0.05      # max IP3R-mediated release rate
    k1: float = 0.3          # Ca half-saturation of release
    hill_n: float = 2.0
    k_i: float = 0.3         # IP3 half-saturation of release
    hill_m: float = 2.0
    v_serca: float = 0.05    # SERCA uptake capacity
    k2: float = 0.4          # SERCA half-saturation
    hill_p: float = 2.0
    kappa_o: float = 0.01    # plasma-membrane extrusion
    kappa_f: float = 0.02    # ER leak/forward exchange
    v_plc: float = 0.05      # PLC production of IP3
    k_p: float = 0.3         # PLC half-saturation
    kappa_d: float = 0.08    # IP3 degradation
    kappa_diff: float = 0.40  # gap-junction diffusion coefficient
    noise_sigma: float = 0.027  # per-cell noise scale, uM * ms^-1/2
    dt: float = 0.05         # step, ms
    g_max: float = 1.0       # fully open junction conductance
    rho_half: float = 0.5    # half-open conductance fraction
    a0: float = 1.0          # junction logistic bias
    a1: float = 0.5          # sensitivity to |ci - cj|
    a2: float = 0.2          # sensitivity to (ci + cj)

    def __post_init__(self):
        for name in ("k1", "k_i", "k2", "k_p", "dt", "g_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("hill_n", "hill_m", "hill_p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("v_ip3", "v_serca", "v_plc", "kappa_o", "kappa_f",
                     "kappa_d", "kappa_diff", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.rho_half < 1:
            raise ValueError("rho_half must lie in [0, 1)")

    def digest(self) -> str:
        payload = ",".join(f"{k}={v!r}" for k, v in sorted(vars(self).items()))
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class TransmitterSchedule:
    """Exogenous drive at one cell: on/off intervals plus injection strengths.

    While the drive is on, ``amplification * delta_c_step`` uM is added to the
    transmitter cell's cytosolic Ca2+ every step; at each interval's rising
    edge ``injection_conc`` uM is added to its IP3 pool (receptor drive).
    """

    tx_cell: int
    on_intervals: tuple = ()  # ((start_ms, end_ms), ...) half-open
    injection_conc: float = 0.0
    amplification: float = 0.0
    delta_c_step: float = 2.0

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.on_intervals)
        object.__setattr__(self, "on_intervals", iv)
        prev_end = None
        for a, b in sorted(iv):
            if a < 0 or b <= a:
                raise ValueError(f"bad interval [{a}, {b})")
            if prev_end is not None and a < prev_end:
                raise ValueError("intervals must be disjoint")
            prev_end = b
        if self.injection_conc < 0 or self.delta_c_step < 0:
            raise ValueError("injection amounts must be nonnegative")

    def u_tx(self, tau: float) -> int:
        """Binary transmitter drive indicator at time tau."""
        return int(any(a <= tau < b for a, b in self.on_intervals))

    def end_time(self) -> float:
        return max((b for _, b in self.on_intervals), default=0.0)

    def to_dict(self) -> dict:
        return {
            "tx_cell": self.tx_cell,
            "on_intervals": [list(p) for p in self.on_intervals],
            "injection_conc": self.injection_conc,
            "amplification": self.amplification,
            "delta_c_step": self.delta_c_step,
        }


@dataclass
class NetworkState:
    """Concentrations and junction labels at one simulation time."""

    c: np.ndarray
    e: np.ndarray
    ip3: np.ndarray
    junction_state: np.ndarray  # int8 per edge, JSTATE_* codes
    time_tau: float = 0.0

    @classmethod
    def uniform(cls, graph: AstrocyteGraph, c0=0.1, e0=2.0, ip3_0=0.1):
        n = graph.n_cells
        return cls(
            c=np.full(n, float(c0)),
            e=np.full(n, float(e0)),
            ip3=np.full(n, float(ip3_0)),
            junction_state=np.zeros(graph.n_edges, dtype=np.int8),
        )

    def copy(self) -> "NetworkState":
        return NetworkState(self.c.copy(), self.e.copy(), self.ip3.copy(),
                            self.junction_state.copy(), self.time_tau)


@dataclass(frozen=True)
class Trajectory:
    """Recorded (c, E, IP3) series plus provenance metadata.

    Replaying ``meta['seed']`` with the same params/graph/schedule reproduces
    the series bit-exactly on the same backend.
    """

    times: np.ndarray       # (n_rec,)
    c_series: np.ndarray    # (n_rec, n_cells)
    e_series: np.ndarray
    ip3_series: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {self.c_series.shape, self.e_series.shape, self.ip3_series.shape}
        if len(shapes) != 1 or self.c_series.shape[0] != self.times.shape[0]:
            raise ValueError("trajectory series must share shape")

    @property
    def n_cells(self) -> int:
        return self.c_series.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.times, self.c_series, self.e_series, self.ip3_series):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()


def open_propensity(c_i, c_j, params: SimParams):
    """Hemichannel open probability sigma(a0 + a1|ci-cj| + a2(ci+cj))."""
    u = params.a0 + params.a1 * np.abs(np.asarray(c_i) - c_j) \
        + params.a2 * (np.asarray(c_i) + c_j)
    return _sigmoid(u)


def _sigmoid(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    ex = np.exp(u[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def expected_conductance(p, params: SimParams):
    """Mean junction conductance given hemichannel open probability p."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p must lie in [0, 1]")
    g = params.g_max * (p * p + 2.0 * params.rho_half * p * (1.0 - p))
    return float(g) if g.ndim == 0 else g


def conductance_from_labels(labels, params: SimParams):
    """Per-edge conductance implied by sampled junction labels."""
    labels = np.asarray(labels)
    g = np.where(labels == JSTATE_HH, params.g_max,
                 np.where(labels == JSTATE_LL, 0.0, params.rho_half * params.g_max))
    return g.astype(np.float64)


def sample_junction_states(p, rng) -> np.ndarray:
    """Draw junction labels from the two-hemichannel product distribution.

    P(HH) = p^2, P(HL) = P(LH) = p(1-p), P(LL) = (1-p)^2. Consumes two
    uniforms per edge (i-side first).
    """
    p = np.asarray(p, dtype=np.float64)
    u = rng.random((p.size, 2))
    left = u[:, 0] < p
    right = u[:, 1] < p
    return (2 * left + right).astype(np.int8)


def junction_step(state: NetworkState, params: SimParams, graph: AstrocyteGraph,
                  rng) -> np.ndarray:
    """Redraw every edge's junction label from the current Ca2+ field."""
    ei, ej = graph.edges[:, 0], graph.edges[:, 1]
    p = open_propensity(state.c[ei], state.c[ej], params)
    labels = sample_junction_states(p, rng)
    state.junction_state = labels
    return labels


def compute_fluxes(state: NetworkState, params: SimParams):
    """Per-cell (J_in, J_out) in uM/ms. J_in can be negative when c > E."""
    c, e, ip3 = state.c, state.e, state.ip3
    pr = params
    hill_c = c ** pr.hill_n / (pr.k1 ** pr.hill_n + c ** pr.hill_n)
    hill_i = ip3 ** pr.hill_m / (pr.k_i ** pr.hill_m + ip3 ** pr.hill_m)
    j_in = pr.v_ip3 * hill_c * hill_i * (e - c)
    j_out = pr.v_serca * (c ** pr.hill_p / (pr.k2 ** pr.hill_p + c ** pr.hill_p)) \
        + pr.kappa_o * c
    return j_in, j_out


_BOUND_CACHE: dict = {}


def stability_bound(params: SimParams, graph: AstrocyteGraph) -> float:
    """Largest stable dt: 1/(kappa_o + v_serca + kappa_diff * lmax(Lw_max)).

    Lw_max takes every junction fully open (conductance g_max); its top
    eigenvalue comes from power iteration at 1e-6 relative tolerance.
    """
    key = (params.digest(), graph.digest())
    if key not in _BOUND_CACHE:
        lw = weighted_laplacian(graph, np.full(graph.n_edges, params.g_max))
        lam = laplacian_lambda_max(lw, rel_tol=1e-6)
        denom = params.kappa_o + params.v_serca + params.kappa_diff * lam
        _BOUND_CACHE[key] = math.inf if denom == 0 else 1.0 / denom
    return _BOUND_CACHE[key]


def _injection_flags(schedule: TransmitterSchedule, dt: float, n_steps: int):
    """Per-step drive indicator and rising-edge IP3-boost indicator."""
    taus = np.arange(n_steps) * dt
    on = np.zeros(n_steps, dtype=np.uint8)
    for a, b in schedule.on_intervals:
        on[(taus >= a) & (taus < b)] = 1
    boost = np.zeros(n_steps, dtype=np.uint8)
    boost[0] = on[0]
    boost[1:] = on[1:] & (1 - on[:-1])
    return on, boost


def _check_schedule(schedule: TransmitterSchedule, graph: AstrocyteGraph,
                    t_sim: float):
    if not 0 <= schedule.tx_cell < graph.n_cells:
        raise ValueError(f"tx_cell {schedule.tx_cell} outside graph")
    if schedule.end_time() > t_sim:
        raise ValueError("schedule intervals must lie within [0, t_sim)")


def step(state: NetworkState, params: SimParams, graph: AstrocyteGraph,
         schedule: TransmitterSchedule, rng,
         sampled_conductance=False) -> NetworkState:
    """Advance one Euler-Maruyama step; returns a new state.

    Uses the vectorized path regardless of backend; ``run_simulation`` is the
    hot loop and dispatches to the numba kernel when active.
    """
    if params.dt > stability_bound(params, graph) * (1 + 1e-12):
        raise ValueError("params.dt exceeds the diffusive stability bound")
    normals = rng.standard_normal((1, graph.n_cells)) * params.noise_sigma
    uniforms = rng.random((1, 2 * graph.n_edges))
    k = int(round(state.time_tau / params.dt))
    on = np.array([schedule.u_tx(state.time_tau)], dtype=np.uint8)
    boost = on.copy() if k == 0 else np.array(
        [on[0] and not schedule.u_tx(state.time_tau - params.dt)], dtype=np.uint8)
    new = state.copy()
    out = _make_record_buffers(0, graph.n_cells)
    bad = _kernels.sim_chunk_numpy(
        new.c, new.e, new.ip3, new.junction_state,
        graph.edges[:, 0], graph.edges[:, 1],
        normals, uniforms, on, boost,
        *_param_tuple(params), schedule.tx_cell,
        schedule.amplification * schedule.delta_c_step, schedule.injection_conc,
        1 if sampled_conductance else 0, k, 0, *out)
    if bad >= 0:
        raise NumericDivergenceError(bad)
    new.time_tau = state.time_tau + params.dt
    return new


def _param_tuple(params: SimParams):
    pr = params
    return (pr.dt, math.sqrt(pr.dt), pr.v_ip3, pr.k1, pr.hill_n, pr.k_i,
            pr.hill_m, pr.v_serca, pr.k2, pr.hill_p, pr.kappa_o, pr.kappa_f,
            pr.v_plc, pr.k_p, pr.kappa_d, pr.kappa_diff, pr.g_max, pr.rho_half,
            pr.a0, pr.a1, pr.a2)


def _make_record_buffers(n_rec, n_cells):
    return (np.empty((n_rec, n_cells)), np.empty((n_rec, n_cells)),
            np.empty((n_rec, n_cells)))


def run_simulation(graph: AstrocyteGraph, params: SimParams,
                   schedule: TransmitterSchedule, t_sim: float, seed: int,
                   sample_stride=1, initial_state=None,
                   sampled_conductance=False) -> Trajectory:
    """Simulate [0, t_sim], recording every ``sample_stride``-th step.

    Deterministic given (seed, params, graph, schedule) on a fixed backend.
    """
    if t_sim <= 0:
        raise ValueError("t_sim must be positive")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if params.dt > stability_bound(params, graph) * (1 + 1e-12):
        raise ValueError("params.dt exceeds the diffusive stability bound")
    n_steps = int(round(t_sim / params.dt))
    if n_steps < 1:
        raise ValueError("t_sim shorter than one step")
    _check_schedule(schedule, graph, t_sim)

    state = (initial_state.copy() if initial_state is not None
             else NetworkState.uniform(graph))
    on_all, boost_all = _injection_flags(schedule, params.dt, n_steps)
    n_rec = n_steps // sample_stride + 1
    out_c, out_e, out_ip3 = _make_record_buffers(n_rec, graph.n_cells)
    out_c[0], out_e[0], out_ip3[0] = state.c, state.e, state.ip3

    rng = np.random.default_rng(seed)
    kernel = _kernels.sim_chunk_numba if using_numba() else _kernels.sim_chunk_numpy
    ptup = _param_tuple(params)
    ei = np.ascontiguousarray(graph.edges[:, 0])
    ej = np.ascontiguousarray(graph.edges[:, 1])
    inj_amount = schedule.amplification * schedule.delta_c_step

    base = 0
    while base < n_steps:
        k = min(CHUNK_STEPS, n_steps - base)
        normals = rng.standard_normal((k, graph.n_cells)) * params.noise_sigma
        uniforms = rng.random((k, 2 * graph.n_edges))
        bad = kernel(state.c, state.e, state.ip3, state.junction_state,
                     ei, ej, normals, uniforms,
                     on_all[base:base + k], boost_all[base:base + k],
                     *ptup, schedule.tx_cell, inj_amount,
                     schedule.injection_conc,
                     1 if sampled_conductance else 0, base, sample_stride,
                     out_c, out_e, out_ip3)
        if bad >= 0:
            raise NumericDivergenceError(int(bad))
        base += k
    state.time_tau = n_steps * params.dt

    times = np.arange(n_rec) * (sample_stride * params.dt)
    meta = {
        "seed": int(seed),
        "params_digest": params.digest(),
        "graph_digest": graph.digest(),
        "schedule": schedule.to_dict(),
        "sample_stride": int(sample_stride),
        "sampled_conductance": bool(sampled_conductance),
        "t_sim": float(t_sim),
        "backend": active_backend(),
    }
    return Trajectory(times=times, c_series=out_c, e_series=out_e,
                      ip3_series=out_ip3, meta=meta)


def run_index_settings(run_index: int, long_tx=False, delta_c_step=2.0,
                       tx_start_frac=0.25, base_duration=20.0) -> dict:
    """Drive scaling for indexed runs: conc = 100*i uM, amplification = 0.5*i,
    t_sim = 40*i ms; the transmit window lasts 20*i ms when ``long_tx``.

    The window starts at ``tx_start_frac * t_sim`` so the receiver keeps a
    pre-stimulus baseline.
    """
    if run_index < 1:
        raise ValueError("run_index must be >= 1")
    t_sim = 40.0 * run_index
    duration = 20.0 * run_index if long_tx else base_duration
    start = tx_start_frac * t_sim
    if start + duration > t_sim:
        duration = t_sim - start
    return {
        "conc": 100.0 * run_index,
        "amplification": 0.5 * run_index,
        "t_sim": t_sim,
        "tx_window": (start, start + duration),
        "delta_c_step": delta_c_step,
    }


def make_schedule(graph: AstrocyteGraph, run_index=None, long_tx=False,
                  tx_cell=None, t_sim=400.0, delta_c_step=2.0,
                  amplification=0.0013, conc=1.0, tx_start_frac=0.25,
                  tx_duration=120.0):
    """Build (schedule, t_sim) from either a run index or explicit settings."""
    if tx_cell is None:
        tx_cell = graph.center_cell()
    if run_index is not None:
        s = run_index_settings(run_index, long_tx=long_tx,
                               delta_c_step=delta_c_step,
                               tx_start_frac=tx_start_frac)
        schedule = TransmitterSchedule(
            tx_cell=tx_cell, on_intervals=(s["tx_window"],),
            injection_conc=s["conc"], amplification=s["amplification"],
            delta_c_step=delta_c_step)
        return schedule, s["t_sim"]
    if t_sim is None or t_sim <= 0:
        raise ValueError("t_sim must be positive when run_index is not set")
    start = tx_start_frac * t_sim
    end = min(start + tx_duration, t_sim)
    schedule = TransmitterSchedule(
        tx_cell=tx_cell, on_intervals=((start, end),),
        injection_conc=conc, amplification=amplification,
        delta_c_step=delta_c_step)
    return schedule, float(t_sim)
