"""Hierarchical run configuration with layered overrides.

Precedence: CLI ``--set key.path=value`` > ``ASTROGATE_*`` environment
variables > config file (JSON) > built-in defaults. Unknown keys are
rejected with their full path. The fully resolved document (defaults
materialized) goes into every manifest.

Environment variables map double underscores to path separators:
``ASTROGATE_SIM__PARAMS__DT=0.01`` sets ``sim.params.dt``. Values parse as
JSON scalars, falling back to plain strings. ``ASTROGATE_BACKEND`` is owned
by backend selection and is not a config key.
"""

import copy
import json
import os

ENV_PREFIX = "ASTROGATE_"
ENV_SKIP = {"ASTROGATE_BACKEND"}

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/out",
    "jobs": 1,
    "sim": {
        "dims": [3, 3, 6],
        "spacing_h": 1.0,
        "params": {
            "v_ip3": 0.05, "k1": 0.3, "hill_n": 2.0, "k_i": 0.3, "hill_m": 2.0,
            "v_serca": 0.05, "k2": 0.4, "hill_p": 2.0, "kappa_o": 0.01,
            "kappa_f": 0.02, "v_plc": 0.05, "k_p": 0.3, "kappa_d": 0.08,
            "kappa_diff": 0.40, "noise_sigma": 0.027, "dt": 0.05,
            "g_max": 1.0, "rho_half": 0.5, "a0": 1.0, "a1": 0.5, "a2": 0.2,
        },
        "init": {"c0": 0.1, "e0": 2.0, "ip3_0": 0.1},
        "run_index": None,
        "long_tx": False,
        "t_sim": 400.0,
        "tx_cell": None,
        "tx_start_frac": 0.25,
        "tx_duration": 120.0,
        "amplification": 0.0013,
        "conc": 1.0,
        "delta_c_step": 2.0,
        "sample_stride": 1,
        "sampled_conductance": False,
        "n_runs": 1,
        "cache_format": "binary",
    },
    "signals": {
        "n_synapses": None,
        "tau_s": 5.0,
        "tau_rho": None,
        "epsilon": 1e-6,
        "map_mode": "round_robin",
    },
    "model": {
        "hidden": [16],
        "hidden_activation": "logistic",
    },
    "train": {
        "epochs": 100,
        "mode": "gated",
        "eta": 0.05,
        "lambda_m": 0.5,
        "lambda_w": 1e-4,
        "xi": 1e-3,
        "mu_momentum": 0.9,
        "k_neighbors": 2,
        "simplified_output_delta": False,
        "gate": {
            "alpha": 1.2, "beta": 0.2, "gamma": 1.2, "delta": 1.0,
            "eps_ca": 1.0, "k_steep": 1.0, "eta_theta": 0.01,
            "granularity": "unit",
        },
        "no_ca": False,
        "signal_alignment": "step",
    },
    "data": {
        "source": "synthetic",
        "feature_columns": ["Dur", "Proto", "TotBytes", "TotPkts", "SrcBytes"],
        "label_column": "Label",
        "positive_label_markers": ["Botnet"],
        "normalization": "zscore",
        "n_train": 8000,
        "n_test": 8000,
        "ratio": None,
        "stratify": False,
        "delimiter": ",",
        "n_samples": 16000,
        "n_features": 8,
        "class_sep": 6.0,
        "label_noise": 0.0,
        "positive_fraction": 0.5,
        "write_cache": False,
    },
    "mi": {
        "h": 1.0,
        "tau_rx": 2.0,
        "delta_max": 50,
        "receiver_cell": 9,
        "epsilon": 1e-9,
    },
    "sweep": {
        "grid": {
            "alpha": [0.0, 0.5, 1.2, 2.0],
            "beta": [0.0, 0.2],
            "gamma": [0.0, 0.7, 1.2],
            "delta": [0.0, 1.0],
            "eps_ca": [1.0],
        },
        "epochs": 10,
        "n_seeds": 1,
    },
}


class ConfigError(ValueError):
    pass


# tables with free-form keys: overrides replace them wholesale
FREEFORM_TABLES = {"sweep.grid"}


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base, override, path=""):
    """Merge ``override`` into ``base`` in place, rejecting unknown keys."""
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict) and here in FREEFORM_TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a table")
            base[key] = value
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a table")
            _merge(base[key], value, here)
        else:
            base[key] = value
    return base


def _set_path(cfg, dotted: str, value):
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    if isinstance(node[parts[-1]], dict):
        if dotted in FREEFORM_TABLES and isinstance(value, dict):
            node[parts[-1]] = value
            return
        raise ConfigError(f"{dotted}: refers to a table, not a value")
    node[parts[-1]] = value


def _env_overrides(environ):
    pairs = []
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX) or name in ENV_SKIP:
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        pairs.append((dotted, _parse_scalar(raw)))
    return pairs


def load_config(config_file=None, sets=(), environ=None) -> dict:
    """Resolve the full config document from all override layers."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_file is not None:
        with open(config_file) as fh:
            doc = json.load(fh)
        # a manifest is accepted directly: its resolved config is embedded
        if "config" in doc and "command" in doc:
            doc = doc["config"]
        _merge(cfg, doc)
    for dotted, value in _env_overrides(environ if environ is not None
                                        else os.environ):
        _set_path(cfg, dotted, value)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        _set_path(cfg, dotted.strip(), _parse_scalar(raw.strip()))
    return cfg
