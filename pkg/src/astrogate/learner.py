"""Feed-forward binary classifier with calcium-gated weight updates.

Backprop gradients are multiplicatively scaled per postsynaptic unit by
(1 + lambda_m * m_i), where the modulator m_i = 2*sigmoid(k*(C_i - theta_i))-1
compares a combined drive

    C_i = alpha*xbar + beta*z_i + gamma*yhat + delta*Z_i + eps_ca*chat_i

against a slowly adapting threshold theta_i <- (1-eta_theta)*theta_i +
eta_theta*C_i. Updates also carry plain weight decay, a synapse-graph
Laplacian smoothing term across each layer's units, and momentum:

    dW = -eta*(1 + lambda_m*m) .* (delta h^T) - lambda_w*W - xi*(L W) + mu*dW_prev

The Laplacian term is applied with a minus sign (gradient descent on the
quadratic smoothness penalty (xi/2) sum_j w_j^T L w_j). The baseline trainer
is the identical loop with lambda_m = xi = 0 and frozen thresholds; with
matching hyperparameters and seed it reproduces the gated trainer's weight
trajectory bit for bit.

By default the output-layer error keeps the extra sigmoid-derivative factor,
delta_L = (yhat - y) * sigma'(z_L); ``simplified_output_delta`` switches to
the analytically exact cross-entropy gradient (yhat - y), which is what the
finite-difference checks verify.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .backend import using_numba

_ACT_CODES = {"logistic": 0, "tanh": 1, "relu": 2}
_CLAMP = 1e-12


@dataclass(frozen=True)
class MlpArchitecture:
    layer_widths: tuple  # (d, n_1, ..., 1)
    hidden_activation: str = "logistic"

    def __post_init__(self):
        w = tuple(int(v) for v in self.layer_widths)
        object.__setattr__(self, "layer_widths", w)
        if len(w) < 2 or any(v < 1 for v in w):
            raise ValueError("layer widths must be >= 1 with at least one layer")
        if w[-1] != 1:
            raise ValueError("output width must be 1 (binary classifier)")
        if self.hidden_activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def total_units(self) -> int:
        return sum(self.layer_widths[1:])


@dataclass(frozen=True)
class GateConfig:
    """Coefficients of the combined drive and the modulator dynamics."""

    alpha: float = 1.2
    beta: float = 0.2
    gamma: float = 1.2
    delta: float = 1.0
    eps_ca: float = 1.0
    k_steep: float = 1.0
    eta_theta: float = 0.01
    granularity: str = "unit"  # "unit" or "synapse"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "eps_ca"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k_steep <= 0:
            raise ValueError("k_steep must be positive")
        if not 0 < self.eta_theta < 1:
            raise ValueError("eta_theta must lie in (0, 1)")
        if self.granularity not in ("unit", "synapse"):
            raise ValueError("granularity must be 'unit' or 'synapse'")

    def coeff_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "delta": self.delta, "eps_ca": self.eps_ca}


@dataclass(frozen=True)
class Hyperparams:
    eta: float = 0.05
    lambda_m: float = 0.5
    lambda_w: float = 1e-4
    xi: float = 1e-3
    mu_momentum: float = 0.9
    k_neighbors: int = 2
    simplified_output_delta: bool = False

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0 <= self.lambda_m <= 1:
            raise ValueError("lambda_m must lie in [0, 1]")
        if not 0 <= self.mu_momentum < 1:
            raise ValueError("mu_momentum must lie in [0, 1)")
        if self.lambda_w < 0 or self.xi < 0:
            raise ValueError("lambda_w and xi must be nonnegative")


def build_synapse_laplacian(n_units: int, k_neighbors: int) -> np.ndarray:
    """Ring-graph Laplacian over unit indices, k neighbors per side."""
    if not 1 <= k_neighbors < n_units:
        raise ValueError("need 1 <= k_neighbors < n_units")
    adj = np.zeros((n_units, n_units))
    for i in range(n_units):
        for step_k in range(1, k_neighbors + 1):
            j = (i + step_k) % n_units
            if j != i:
                adj[i, j] = 1.0
                adj[j, i] = 1.0
    return np.diag(adj.sum(axis=1)) - adj


def _layer_laplacian(n_units: int, k_neighbors: int) -> np.ndarray:
    # degenerate widths clamp k; a single unit gets no smoothing
    if n_units == 1:
        return np.zeros((1, 1))
    return build_synapse_laplacian(n_units, min(k_neighbors, n_units - 1))


@dataclass
class GatedModel:
    architecture: MlpArchitecture
    weights: list  # per layer, (n_out, n_in)
    biases: list
    theta: list          # per layer, per-unit thresholds
    theta_w: list        # per layer, per-weight thresholds (synapse mode)
    mom_w: list
    mom_b: list
    laplacians: list
    gate: GateConfig = field(default_factory=GateConfig)
    hypers: Hyperparams = field(default_factory=Hyperparams)

    @classmethod
    def initialize(cls, architecture: MlpArchitecture, gate=None, hypers=None,
                   seed=0) -> "GatedModel":
        gate = gate or GateConfig()
        hypers = hypers or Hyperparams()
        rng = np.random.default_rng(seed)
        widths = architecture.layer_widths
        weights, biases, theta, theta_w, mom_w, mom_b, laps = [], [], [], [], [], [], []
        for l in range(architecture.n_layers):
            nin, nout = widths[l], widths[l + 1]
            weights.append(rng.standard_normal((nout, nin)) / np.sqrt(nin))
            biases.append(np.zeros(nout))
            theta.append(np.zeros(nout))
            theta_w.append(np.zeros((nout, nin)))
            mom_w.append(np.zeros((nout, nin)))
            mom_b.append(np.zeros(nout))
            laps.append(_layer_laplacian(nout, hypers.k_neighbors))
        return cls(architecture, weights, biases, theta, theta_w, mom_w,
                   mom_b, laps, gate, hypers)

    def weight_digest(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "format": "astrogate-model-v1",
            "layer_widths": list(self.architecture.layer_widths),
            "hidden_activation": self.architecture.hidden_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "theta": [t.tolist() for t in self.theta],
            "theta_w": [t.tolist() for t in self.theta_w],
            "mom_w": [m.tolist() for m in self.mom_w],
            "mom_b": [m.tolist() for m in self.mom_b],
            "gate": vars(self.gate).copy(),
            "hypers": vars(self.hypers).copy(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GatedModel":
        if doc.get("format") != "astrogate-model-v1":
            raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
        arch = MlpArchitecture(tuple(doc["layer_widths"]),
                               doc["hidden_activation"])
        hypers = Hyperparams(**doc["hypers"])
        model = cls(
            architecture=arch,
            weights=[np.asarray(w, dtype=np.float64) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
            theta=[np.asarray(t, dtype=np.float64) for t in doc["theta"]],
            theta_w=[np.asarray(t, dtype=np.float64) for t in doc["theta_w"]],
            mom_w=[np.asarray(m, dtype=np.float64) for m in doc["mom_w"]],
            mom_b=[np.asarray(m, dtype=np.float64) for m in doc["mom_b"]],
            laplacians=[_layer_laplacian(n, hypers.k_neighbors)
                        for n in arch.layer_widths[1:]],
            gate=GateConfig(**doc["gate"]),
            hypers=hypers,
        )
        return model


def _sigmoid(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    ex = np.exp(u[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(z, name):
    if name == "logistic":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_prime(z, h, name):
    if name == "logistic":
        return h * (1.0 - h)
    if name == "tanh":
        return 1.0 - h * h
    return (z > 0.0).astype(np.float64)


def forward(model: GatedModel, x):
    """Single-sample forward pass; returns (yhat, (h_list, z_list))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.architecture.layer_widths[0],):
        raise ValueError("input dimension mismatch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    hs = [x]
    zs = []
    L = model.architecture.n_layers
    for l in range(L):
        z = model.weights[l] @ hs[-1] + model.biases[l]
        zs.append(z)
        if l == L - 1:
            hs.append(_sigmoid(z))
        else:
            hs.append(_activate(z, model.architecture.hidden_activation))
    return float(hs[-1][0]), (hs, zs)


def predict_proba(model: GatedModel, X) -> np.ndarray:
    """Batch forward pass, X of shape (n, d)."""
    H = np.asarray(X, dtype=np.float64)
    L = model.architecture.n_layers
    for l in range(L):
        Z = H @ model.weights[l].T + model.biases[l]
        H = _sigmoid(Z) if l == L - 1 else _activate(
            Z, model.architecture.hidden_activation)
    return H[:, 0]


def bce_loss(y_hat, y) -> float:
    """Mean Bernoulli negative log-likelihood with clamped predictions."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat))))


def backprop(model: GatedModel, x, y, activations):
    """Per-layer error signals for one sample (weights untouched)."""
    hs, zs = activations
    L = model.architecture.n_layers
    yhat = hs[-1][0]
    deltas = [None] * L
    if model.hypers.simplified_output_delta:
        deltas[L - 1] = np.array([yhat - y])
    else:
        deltas[L - 1] = np.array([(yhat - y) * yhat * (1.0 - yhat)])
    for l in range(L - 2, -1, -1):
        back = model.weights[l + 1].T @ deltas[l + 1]
        deltas[l] = _activate_prime(zs[l], hs[l + 1],
                                    model.architecture.hidden_activation) * back
    return deltas


def loss_gradients(model: GatedModel, X, y):
    """Mean cross-entropy gradients over a batch (for gradient checks)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    L = model.architecture.n_layers
    gw = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    for xi, yi in zip(X, y):
        _, acts = forward(model, xi)
        deltas = backprop(model, xi, yi, acts)
        for l in range(L):
            gw[l] += np.outer(deltas[l], acts[0][l])
            gb[l] += deltas[l]
    n = X.shape[0]
    return [g / n for g in gw], [g / n for g in gb]


def supervisor_signal(y, is_output_layer: bool) -> float:
    """Teacher cue: 2y - 1 on the output layer, 0 elsewhere."""
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    return 2.0 * y - 1.0 if is_output_layer else 0.0


def total_ca_drive(x_vec, pre_activation, y_hat, z_signal, c_hat, coeffs: GateConfig):
    """Per-unit combined drive from the five plasticity signals."""
    xbar = float(np.mean(x_vec))
    return (coeffs.alpha * xbar + coeffs.beta * np.asarray(pre_activation)
            + coeffs.gamma * y_hat + coeffs.delta * z_signal
            + coeffs.eps_ca * np.asarray(c_hat))


def threshold_update(theta, c, eta_theta):
    return (1.0 - eta_theta) * np.asarray(theta) + eta_theta * np.asarray(c)


def modulator(c, theta, k_steep):
    """Signed potentiation/depression gain in (-1, 1)."""
    return 2.0 * _sigmoid(k_steep * (np.asarray(c) - theta)) - 1.0


def compute_gates(model: GatedModel, activations, y_hat, y, chat_row):
    """Per-layer modulators; advances thresholds in place (gated mode only).

    chat_row holds one standardized calcium value per unit across all layers
    in layer order; None means no multicellular signal (treated as zero).
    """
    hs, zs = activations
    L = model.architecture.n_layers
    widths = model.architecture.layer_widths
    gates = []
    offset = 0
    for l in range(L):
        nout = widths[l + 1]
        chat = (chat_row[offset:offset + nout] if chat_row is not None
                else np.zeros(nout))
        zsup = supervisor_signal(y, l == L - 1)
        if model.gate.granularity == "unit":
            drive = total_ca_drive(hs[l], zs[l], y_hat, zsup, chat, model.gate)
            m = modulator(drive, model.theta[l], model.gate.k_steep)
            model.theta[l] = threshold_update(model.theta[l], drive,
                                              model.gate.eta_theta)
        else:
            g = model.gate
            drive = (g.alpha * hs[l][None, :]
                     + g.beta * zs[l][:, None]
                     + g.gamma * y_hat + g.delta * zsup
                     + g.eps_ca * chat[:, None])
            m = modulator(drive, model.theta_w[l], g.k_steep)
            model.theta_w[l] = threshold_update(model.theta_w[l], drive,
                                                g.eta_theta)
        gates.append(m)
        offset += nout
    return gates


def gated_update(model: GatedModel, deltas, activations, gates=None):
    """Apply one weight/bias update in place.

    ``gates`` is the per-layer modulator list from ``compute_gates`` or None
    (baseline: unit multiplier). The Laplacian coupling always reads the
    layer's pre-update weights.
    """
    hs, _ = activations
    hp = model.hypers
    L = model.architecture.n_layers
    for l in range(L):
        W = model.weights[l]
        if gates is None:
            gm = np.ones(W.shape[0])
        else:
            gm = 1.0 + hp.lambda_m * gates[l]
        grad_term = deltas[l][:, None] * hs[l][None, :]
        if gates is not None and model.gate.granularity == "synapse":
            dW = -hp.eta * gm * grad_term
            gm_b = np.ones(W.shape[0])
        else:
            dW = -hp.eta * gm[:, None] * grad_term
            gm_b = gm
        dW -= hp.lambda_w * W
        if hp.xi != 0.0:
            dW -= hp.xi * (model.laplacians[l] @ W)
        dW += hp.mu_momentum * model.mom_w[l]
        db = -hp.eta * gm_b * deltas[l] + hp.mu_momentum * model.mom_b[l]
        W += dW
        model.mom_w[l] = dW
        model.biases[l] += db
        model.mom_b[l] = db
        if not np.all(np.isfinite(W)):
            raise FloatingPointError(f"non-finite weight update in layer {l}")


# --- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        d = self.precision + self.recall
        return 2.0 * self.precision * self.recall / d if d else 0.0

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "fpr": self.fpr}


def confusion_counts(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return Metrics(
        tp=int(np.sum(y_pred & y_true)),
        fp=int(np.sum(y_pred & ~y_true)),
        tn=int(np.sum(~y_pred & ~y_true)),
        fn=int(np.sum(~y_pred & y_true)),
    )


def evaluate(model: GatedModel, dataset, threshold=0.5) -> Metrics:
    """Confusion-matrix metrics at a fixed decision threshold."""
    X, y = _as_xy(dataset)
    if len(y) == 0:
        raise ValueError("empty dataset")
    probs = predict_proba(model, X)
    return confusion_counts(y, probs > threshold)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    weight_digest: str = ""

    def to_row(self):
        return [self.epoch, self.loss, self.accuracy, self.tp, self.fp,
                self.tn, self.fn]


def _as_xy(dataset):
    if hasattr(dataset, "X"):
        return np.asarray(dataset.X, dtype=np.float64), np.asarray(dataset.y)
    X, y = dataset
    return np.asarray(X, dtype=np.float64), np.asarray(y)


# --- training --------------------------------------------------------------


def _pack(model: GatedModel):
    widths = np.asarray(model.architecture.layer_widths, dtype=np.int64)
    L = model.architecture.n_layers
    w_sizes = [model.weights[l].size for l in range(L)]
    w_off = np.concatenate([[0], np.cumsum(w_sizes)]).astype(np.int64)
    u_off = np.concatenate([[0], np.cumsum(widths[1:])]).astype(np.int64)
    h_off = np.concatenate([[0], np.cumsum(widths)]).astype(np.int64)[:L + 1]
    lap_sizes = [model.laplacians[l].size for l in range(L)]
    lap_off = np.concatenate([[0], np.cumsum(lap_sizes)]).astype(np.int64)
    return {
        "widths": widths, "w_off": w_off, "u_off": u_off, "h_off": h_off,
        "lap_off": lap_off,
        "w_flat": np.concatenate([w.ravel() for w in model.weights]),
        "b_flat": np.concatenate(model.biases),
        "theta": np.concatenate(model.theta),
        "theta_w": np.concatenate([t.ravel() for t in model.theta_w]),
        "mom_w": np.concatenate([m.ravel() for m in model.mom_w]),
        "mom_b": np.concatenate(model.mom_b),
        "lap_flat": np.concatenate([lp.ravel() for lp in model.laplacians]),
    }


def _unpack(model: GatedModel, packed):
    widths = model.architecture.layer_widths
    L = model.architecture.n_layers
    w_off, u_off, lap_off = (packed["w_off"], packed["u_off"], packed["lap_off"])
    for l in range(L):
        shape = (widths[l + 1], widths[l])
        model.weights[l] = packed["w_flat"][w_off[l]:w_off[l + 1]].reshape(shape).copy()
        model.theta_w[l] = packed["theta_w"][w_off[l]:w_off[l + 1]].reshape(shape).copy()
        model.mom_w[l] = packed["mom_w"][w_off[l]:w_off[l + 1]].reshape(shape).copy()
        model.biases[l] = packed["b_flat"][u_off[l]:u_off[l + 1]].copy()
        model.theta[l] = packed["theta"][u_off[l]:u_off[l + 1]].copy()
        model.mom_b[l] = packed["mom_b"][u_off[l]:u_off[l + 1]].copy()


def _train_epoch_numpy(model, X, y, order, chat, start_t, gated,
                       sample_aligned):
    n_rows = chat.shape[0] if chat is not None else 1
    loss_sum = 0.0
    for s, idx in enumerate(order):
        x = X[idx]
        yhat, acts = forward(model, x)
        yc = min(max(yhat, _CLAMP), 1.0 - _CLAMP)
        ys = float(y[idx])
        loss_sum += -(ys * np.log(yc) + (1.0 - ys) * np.log(1.0 - yc))
        gates = None
        if gated:
            row_idx = (idx % n_rows) if sample_aligned else ((start_t + s) % n_rows)
            row = chat[row_idx] if chat is not None else None
            gates = compute_gates(model, acts, yhat, ys, row)
        deltas = backprop(model, x, ys, acts)
        gated_update(model, deltas, acts, gates)
    return loss_sum


def train(dataset, architecture: MlpArchitecture, gate: GateConfig = None,
          hypers: Hyperparams = None, epochs=100, seed=0, mode="gated",
          signal_stream=None, eval_set=None, sample_aligned_signal=False,
          initial_model=None):
    """Train by per-sample updates; returns (model, per-epoch metrics).

    mode "gated" applies the calcium gate, threshold dynamics, and Laplacian
    coupling; "baseline" runs the identical loop with lambda_m = xi = 0 and
    never touches ``signal_stream``. The same seed yields the same weight
    init and shuffle order in both modes.
    """
    if mode not in ("gated", "baseline"):
        raise ValueError("mode must be 'gated' or 'baseline'")
    X, y = _as_xy(dataset)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a nonempty (n, d) matrix")
    y = y.astype(np.float64)
    gate = gate or GateConfig()
    hypers = hypers or Hyperparams()
    gated = mode == "gated"
    if gated:
        if signal_stream is not None:
            signal_stream = np.asarray(signal_stream, dtype=np.float64)
            if signal_stream.ndim != 2 or signal_stream.shape[0] < 1:
                raise ValueError("signal stream must be a nonempty 2D array")
            if signal_stream.shape[1] != architecture.total_units:
                raise ValueError(
                    f"signal stream has {signal_stream.shape[1]} columns, "
                    f"model has {architecture.total_units} units")
        elif gate.eps_ca != 0.0:
            raise ValueError(
                "gated training with eps_ca != 0 requires a signal stream")
    else:
        hypers = replace(hypers, lambda_m=0.0, xi=0.0)
        signal_stream = None

    ss = np.random.SeedSequence(seed).spawn(2)
    init_rng_seed, shuffle_seed = ss[0], ss[1]
    if initial_model is not None:
        model = initial_model
    else:
        model = GatedModel.initialize(architecture, gate, hypers,
                                      seed=init_rng_seed)
    model.gate = gate
    model.hypers = hypers
    shuffle_rng = np.random.default_rng(shuffle_seed)

    chat = signal_stream
    use_numba = using_numba()
    n = X.shape[0]
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    metrics = []
    start_t = 0
    packed = _pack(model) if use_numba else None
    if use_numba:
        total_units = int(packed["u_off"][-1])
        total_w = int(packed["w_off"][-1])
        bufs = (np.zeros(int(packed["h_off"][-1]) + model.architecture.layer_widths[-1]),
                np.zeros(total_units), np.zeros(total_units),
                np.zeros(max(total_units, total_w)), np.zeros(total_units),
                np.zeros(total_w))
        chat_arr = chat if chat is not None else np.zeros((1, total_units))
        g = model.gate
        hp = model.hypers
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n).astype(np.int64)
        if use_numba:
            loss_sum = _kernels.train_epoch_numba(
                packed["widths"], packed["w_flat"], packed["w_off"],
                packed["b_flat"], packed["theta"], packed["theta_w"],
                packed["mom_w"], packed["mom_b"], packed["lap_flat"],
                packed["lap_off"], packed["u_off"], packed["h_off"],
                Xc, y, order, chat_arr,
                hp.eta, hp.lambda_m, hp.lambda_w, hp.xi, hp.mu_momentum,
                g.alpha, g.beta, g.gamma, g.delta,
                g.eps_ca if chat is not None else 0.0,
                g.k_steep, g.eta_theta,
                1 if gated else 0,
                0 if g.granularity == "unit" else 1,
                1 if hp.simplified_output_delta else 0,
                _ACT_CODES[model.architecture.hidden_activation],
                1 if sample_aligned_signal else 0,
                start_t, *bufs)
            if not np.all(np.isfinite(packed["w_flat"])):
                raise FloatingPointError("non-finite weights during training")
            _unpack(model, packed)
        else:
            loss_sum = _train_epoch_numpy(model, Xc, y, order, chat, start_t,
                                          gated, sample_aligned_signal)
        start_t += n
        ev = evaluate(model, eval_set if eval_set is not None else (X, y))
        metrics.append(EpochMetrics(
            epoch=epoch, loss=loss_sum / n, accuracy=ev.accuracy,
            tp=ev.tp, fp=ev.fp, tn=ev.tn, fn=ev.fn,
            weight_digest=model.weight_digest()))
    return model, metrics
