"""Batch CLI: simulate, signals, train, eval, mi, sweep, pipeline.

Every command resolves one config document (defaults < file < env < --set,
with a few dedicated flags on top), writes its artifacts into --output-dir,
and emits a manifest.json with the resolved config and per-file sha256
digests. Re-running a command from its manifest reproduces byte-identical
outputs. Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cache
from .backend import active_backend
from .config import ConfigError, load_config
from .data import DatasetSpec, build_dataset
from .learner import (
    GateConfig,
    GatedModel,
    Hyperparams,
    MlpArchitecture,
    evaluate,
    train,
)
from .lattice import build_lattice
from .mi import bin_trajectory, distance_decay, lagged_mi
from .signals import build_default_map, build_signal_stream
from .simulate import (
    NetworkState,
    NumericDivergenceError,
    SimParams,
    TransmitterSchedule,
    make_schedule,
    run_simulation,
)
from .sweep import run_sweep, top_coefficient


class CliError(ValueError):
    """Validation failure: bad flags, bad config, missing inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _seed_for(cfg, subsystem: str) -> int:
    codes = {"sim": 0, "data": 1, "init": 2, "synth": 3, "map": 4}
    ss = np.random.SeedSequence([int(cfg["seed"]), codes[subsystem]])
    return int(ss.generate_state(1)[0])


def _build_graph(cfg):
    return build_lattice(cfg["sim"]["dims"], cfg["sim"]["spacing_h"])


def _sim_params(cfg) -> SimParams:
    return SimParams(**cfg["sim"]["params"])


def _schedule(cfg, graph):
    sim = cfg["sim"]
    return make_schedule(
        graph,
        run_index=sim["run_index"] if isinstance(sim["run_index"], int) else None,
        long_tx=sim["long_tx"],
        tx_cell=sim["tx_cell"],
        t_sim=sim["t_sim"],
        delta_c_step=sim["delta_c_step"],
        amplification=sim["amplification"],
        conc=sim["conc"],
        tx_start_frac=sim["tx_start_frac"],
        tx_duration=sim["tx_duration"],
    )


def _architecture(cfg, d: int) -> MlpArchitecture:
    widths = (d, *cfg["model"]["hidden"], 1)
    return MlpArchitecture(widths, cfg["model"]["hidden_activation"])


def _gate(cfg) -> GateConfig:
    return GateConfig(**cfg["train"]["gate"])


def _hypers(cfg) -> Hyperparams:
    t = cfg["train"]
    return Hyperparams(eta=t["eta"], lambda_m=t["lambda_m"],
                       lambda_w=t["lambda_w"], xi=t["xi"],
                       mu_momentum=t["mu_momentum"],
                       k_neighbors=t["k_neighbors"],
                       simplified_output_delta=t["simplified_output_delta"])


def _dataset_spec(cfg) -> DatasetSpec:
    d = cfg["data"]
    return DatasetSpec(
        source=d["source"],
        feature_columns=tuple(d["feature_columns"]),
        label_column=d["label_column"],
        positive_label_markers=tuple(d["positive_label_markers"]),
        normalization=d["normalization"],
        n_train=d["n_train"] if d["ratio"] is None else None,
        n_test=d["n_test"] if d["ratio"] is None else None,
        ratio=d["ratio"],
        stratify=d["stratify"],
        delimiter=d["delimiter"],
        n_samples=d["n_samples"],
        n_features=d["n_features"],
        class_sep=d["class_sep"],
        label_noise=d["label_noise"],
        positive_fraction=d["positive_fraction"],
    )


def _run_indices(cfg):
    ri = cfg["sim"]["run_index"]
    if ri is None:
        return [None]
    if isinstance(ri, int):
        return [ri]
    return list(ri)


def _run_tag(run_index, seed):
    return (f"traj_i{run_index}_s{seed}" if run_index is not None
            else f"traj_s{seed}")


def cmd_simulate(cfg, out_dir: Path):
    graph = _build_graph(cfg)
    params = _sim_params(cfg)
    sim = cfg["sim"]
    init = NetworkState.uniform(graph, **sim["init"])
    jobs = []
    for run_index in _run_indices(cfg):
        run_cfg = dict(sim, run_index=run_index)
        for k in range(sim["n_runs"]):
            jobs.append((run_index, int(cfg["seed"]) + k))

    def one(job):
        run_index, seed = job
        local = dict(sim, run_index=run_index)
        schedule, t_sim = make_schedule(
            graph, run_index=run_index, long_tx=local["long_tx"],
            tx_cell=local["tx_cell"], t_sim=local["t_sim"],
            delta_c_step=local["delta_c_step"],
            amplification=local["amplification"], conc=local["conc"],
            tx_start_frac=local["tx_start_frac"],
            tx_duration=local["tx_duration"])
        traj = run_simulation(graph, params, schedule, t_sim=t_sim, seed=seed,
                              sample_stride=local["sample_stride"],
                              initial_state=init,
                              sampled_conductance=local["sampled_conductance"])
        base = out_dir / _run_tag(run_index, seed)
        paths = cache.write_trajectory(traj, base, fmt=local["cache_format"])
        return {"run_index": run_index, "seed": seed,
                "base": base.name, "t_sim": t_sim,
                "schedule": schedule.to_dict(),
                "trajectory_digest": traj.digest(),
                "files": [p.name for p in paths]}, paths

    n_workers = max(1, int(cfg["jobs"]))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    runs = [r for r, _ in results]
    files = [p for _, paths in results for p in paths]
    cache.write_manifest(out_dir, "simulate", cfg, files, extra={
        "backend": active_backend(),
        "version": __version__,
        "graph_digest": graph.digest(),
        "params_digest": params.digest(),
        "runs": runs,
    })
    print(f"simulate: wrote {len(files)} trajectory file(s) to {out_dir}")
    return 0


def _load_sim_runs(input_dir: Path):
    manifest_path = Path(input_dir) / "manifest.json"
    if not manifest_path.exists():
        raise CliError(
            f"no manifest at {manifest_path}; run `astrogate simulate` first")
    manifest = cache.read_json(manifest_path)
    if "runs" not in manifest:
        raise CliError(f"{manifest_path} is not a simulate manifest")
    runs = []
    for run in manifest["runs"]:
        traj = cache.read_trajectory(Path(input_dir) / run["base"],
                                     meta={"schedule": run["schedule"]})
        runs.append((run, traj))
    return manifest, runs


def _total_units(cfg, d_features=None) -> int:
    n = cfg["signals"]["n_synapses"]
    if n is not None:
        return int(n)
    return sum(cfg["model"]["hidden"]) + 1


def cmd_signals(cfg, out_dir: Path, input_dir: Path):
    manifest, runs = _load_sim_runs(input_dir)
    sig = cfg["signals"]
    n_cells = runs[0][1].n_cells  # trust the cache, not the current config
    qmap = build_default_map(_total_units(cfg), n_cells,
                             seed=_seed_for(cfg, "map"), mode=sig["map_mode"])
    files = []
    entries = []
    for run, traj in runs:
        stream, _ = build_signal_stream(traj, qmap, tau_s=sig["tau_s"],
                                        tau_rho=sig["tau_rho"],
                                        epsilon=sig["epsilon"])
        name = run["base"].replace("traj", "signals") + ".csv"
        files.append(cache.write_signal_stream(stream, out_dir / name))
        entries.append({"base": run["base"], "signals": name,
                        "seed": run["seed"], "run_index": run["run_index"]})
    cache.write_manifest(out_dir, "signals", cfg, files, extra={
        "backend": active_backend(),
        "version": __version__,
        "map_digest": qmap.digest(),
        "source_manifest": str(Path(input_dir) / "manifest.json"),
        "streams": entries,
    })
    print(f"signals: wrote {len(files)} stream(s) to {out_dir}")
    return 0


def _load_signal_stream(cfg, signals_path):
    t = cfg["train"]
    gate = _gate(cfg)
    if t["no_ca"] or gate.eps_ca == 0.0:
        return None
    if signals_path is None:
        raise CliError(
            "gated training needs a calcium signal cache: run "
            "`astrogate simulate` then `astrogate signals` and pass "
            "--signals <stream.csv>, or use --no-ca")
    path = Path(signals_path)
    if not path.exists():
        raise CliError(f"signal cache {path} not found; run `astrogate signals`")
    return cache.read_signal_stream(path)


def _dataset_provenance(train_set, test_set, stats) -> dict:
    return {
        "normalization": {
            "kind": stats["kind"],
            "center": [float(v) for v in stats["center"]],
            "scale": [float(v) for v in stats["scale"]],
        },
        "train_digest": train_set.digest(),
        "test_digest": test_set.digest(),
        "n_train": train_set.n,
        "n_test": test_set.n,
    }


def _write_dataset_cache(out_dir: Path, train_set, test_set):
    files = []
    for name, ds in (("dataset_train", train_set), ("dataset_test", test_set)):
        header = [f"f{i}" for i in range(ds.d)] + ["label"]
        rows = [list(map(float, x)) + [int(yv)] for x, yv in zip(ds.X, ds.y)]
        files.append(cache.write_rows_csv(out_dir / f"{name}.csv", header, rows))
    return files


def cmd_train(cfg, out_dir: Path, signals_path):
    t = cfg["train"]
    train_set, test_set, stats = build_dataset(_dataset_spec(cfg),
                                               seed=_seed_for(cfg, "data"))
    arch = _architecture(cfg, train_set.d)
    gate = _gate(cfg)
    if t["no_ca"]:
        gate = replace(gate, eps_ca=0.0)
    hypers = _hypers(cfg)
    modes = ["gated", "baseline"] if t["mode"] == "both" else [t["mode"]]
    files = []
    summary = {"modes": {}, "backend": active_backend(), "version": __version__}
    for mode in modes:
        stream = _load_signal_stream(cfg, signals_path) if mode == "gated" else None
        model, metrics = train(
            train_set, arch, gate, hypers, epochs=t["epochs"],
            seed=int(cfg["seed"]), mode=mode, signal_stream=stream,
            eval_set=test_set,
            sample_aligned_signal=t["signal_alignment"] == "sample")
        files.append(cache.write_metrics_csv(
            metrics, out_dir / f"metrics_{mode}.csv"))
        files.append(cache.write_json(
            model.to_dict(), out_dir / f"checkpoint_{mode}.json"))
        final = evaluate(model, test_set)
        summary["modes"][mode] = {
            "final": final.to_dict(),
            "epochs": t["epochs"],
            "final_loss": metrics[-1].loss,
            "weight_digest": model.weight_digest(),
        }
    files.append(cache.write_json(summary, out_dir / "summary.json"))
    if cfg["data"]["write_cache"]:
        files.extend(_write_dataset_cache(out_dir, train_set, test_set))
    cache.write_manifest(out_dir, "train", cfg, files, extra={
        "dataset": _dataset_provenance(train_set, test_set, stats)})
    for mode, res in summary["modes"].items():
        print(f"train[{mode}]: accuracy {res['final']['accuracy']:.4f} "
              f"(tp={res['final']['tp']} fp={res['final']['fp']} "
              f"tn={res['final']['tn']} fn={res['final']['fn']})")
    return 0


def cmd_eval(cfg, out_dir: Path, checkpoint: str):
    if checkpoint is None:
        raise CliError("--checkpoint is required for eval")
    path = Path(checkpoint)
    if not path.exists():
        raise CliError(f"checkpoint {path} not found")
    model = GatedModel.from_dict(cache.read_json(path))
    _, test_set, _ = build_dataset(_dataset_spec(cfg), seed=_seed_for(cfg, "data"))
    metrics = evaluate(model, test_set)
    files = [cache.write_json({"metrics": metrics.to_dict(),
                               "checkpoint": str(path)}, out_dir / "eval.json")]
    cache.write_manifest(out_dir, "eval", cfg, files)
    print(f"eval: accuracy {metrics.accuracy:.4f} f1 {metrics.f1:.4f} "
          f"fpr {metrics.fpr:.4f}")
    return 0


def _parse_tau_range(text):
    """'2.0' -> [2.0]; '1.5..2.5:0.25' -> [1.5, 1.75, ..., 2.5]."""
    if ".." not in text:
        return [float(text)]
    span, _, step = text.partition(":")
    lo, _, hi = span.partition("..")
    lo, hi = float(lo), float(hi)
    step = float(step) if step else 0.25
    if step <= 0 or hi < lo:
        raise CliError(f"bad tau-rx range {text!r}")
    n = int(round((hi - lo) / step))
    return [lo + k * step for k in range(n + 1)]


def cmd_mi(cfg, out_dir: Path, input_dir: Path, tau_rx_text=None, decay=False):
    manifest, runs = _load_sim_runs(input_dir)
    mi_cfg = cfg["mi"]
    taus = (_parse_tau_range(tau_rx_text) if tau_rx_text
            else [mi_cfg["tau_rx"]])
    # a single --tau-rx value overrides the profile threshold; a range only
    # drives the sensitivity table
    profile_tau = taus[0] if len(taus) == 1 else mi_cfg["tau_rx"]
    # hop distances must match the lattice the cache was produced on
    sim_dims = manifest.get("config", {}).get("sim", {}).get("dims",
                                                             cfg["sim"]["dims"])
    graph = build_lattice(sim_dims, cfg["sim"]["spacing_h"])
    files = []
    profiles = []
    for run, traj in runs:
        schedule = TransmitterSchedule(
            tx_cell=run["schedule"]["tx_cell"],
            on_intervals=tuple(tuple(p) for p in run["schedule"]["on_intervals"]),
            injection_conc=run["schedule"]["injection_conc"],
            amplification=run["schedule"]["amplification"],
            delta_c_step=run["schedule"]["delta_c_step"])
        series = bin_trajectory(traj, schedule, mi_cfg["receiver_cell"],
                                h=mi_cfg["h"], tau_rx=profile_tau,
                                epsilon=mi_cfg["epsilon"])
        prof = lagged_mi(series, mi_cfg["delta_max"])
        name = run["base"].replace("traj", "mi_profile") + ".csv"
        files.append(cache.write_rows_csv(
            out_dir / name, ["delta", "mi_bits"],
            [[d, float(v)] for d, v in enumerate(prof.i_of_delta)]))
        profiles.append({"base": run["base"], "seed": run["seed"],
                         "delta_star": prof.delta_star,
                         "i_star": prof.i_star})
        if len(taus) > 1:
            sens = []
            for trx in taus:
                s = bin_trajectory(traj, schedule, mi_cfg["receiver_cell"],
                                   h=mi_cfg["h"], tau_rx=trx,
                                   epsilon=mi_cfg["epsilon"])
                p = lagged_mi(s, mi_cfg["delta_max"])
                sens.append([float(trx), p.delta_star, float(p.i_star)])
            name = run["base"].replace("traj", "mi_sensitivity") + ".csv"
            files.append(cache.write_rows_csv(
                out_dir / name, ["tau_rx", "delta_star", "i_star"], sens))
    if decay:
        # hop-grouped decay pools every receiver over all runs
        sched0 = runs[0][0]["schedule"]
        schedule = TransmitterSchedule(
            tx_cell=sched0["tx_cell"],
            on_intervals=tuple(tuple(p) for p in sched0["on_intervals"]),
            injection_conc=sched0["injection_conc"],
            amplification=sched0["amplification"],
            delta_c_step=sched0["delta_c_step"])
        rows = distance_decay([traj for _, traj in runs], graph, schedule,
                              h=mi_cfg["h"], tau_rx=profile_tau,
                              delta_max=mi_cfg["delta_max"])
        files.append(cache.write_rows_csv(
            out_dir / "mi_decay.csv",
            ["hop", "mean_i_star", "ci_low", "ci_high", "n"],
            [[r["hop"], r["mean_i_star"], r["ci_low"], r["ci_high"], r["n"]]
             for r in rows]))
    files.append(cache.write_json({"profiles": profiles}, out_dir / "mi_summary.json"))
    cache.write_manifest(out_dir, "mi", cfg, files)
    print(f"mi: analyzed {len(runs)} run(s); outputs in {out_dir}")
    return 0


def cmd_sweep(cfg, out_dir: Path, signals_path=None):
    sw = cfg["sweep"]
    train_set, test_set, _ = build_dataset(_dataset_spec(cfg),
                                           seed=_seed_for(cfg, "data"))
    arch = _architecture(cfg, train_set.d)
    stream = None
    if signals_path is not None:
        stream = cache.read_signal_stream(Path(signals_path))
    base_gate = _gate(cfg)
    if stream is None:
        base_gate = replace(base_gate, eps_ca=0.0)
        grid = {k: v for k, v in sw["grid"].items() if k != "eps_ca"}
    else:
        grid = sw["grid"]
    result = run_sweep(train_set, test_set, arch, grid, base_gate,
                       _hypers(cfg), epochs=sw["epochs"], seed=int(cfg["seed"]),
                       signal_stream=stream,
                       sample_aligned_signal=cfg["train"]["signal_alignment"] == "sample",
                       jobs=max(1, int(cfg["jobs"])))
    header = ["alpha", "beta", "gamma", "delta", "eps_ca", "accuracy"]
    files = [cache.write_rows_csv(
        out_dir / "sweep.csv", header,
        [[c["alpha"], c["beta"], c["gamma"], c["delta"], c["eps_ca"],
          c["accuracy"]] for c in result["cells"]])]
    summary = {
        "correlations": result["correlations"],
        "standardized_coefficients": result["standardized_coefficients"],
        "top_coefficient": top_coefficient(result["standardized_coefficients"]),
    }
    files.append(cache.write_json(summary, out_dir / "sweep_summary.json"))
    cache.write_manifest(out_dir, "sweep", cfg, files)
    print(f"sweep: {len(result['cells'])} cells; "
          f"top coefficient {summary['top_coefficient']}")
    return 0


def cmd_pipeline(cfg, out_dir: Path):
    sim_dir = out_dir / "sim"
    sig_dir = out_dir / "signals"
    train_dir = out_dir / "train"
    mi_dir = out_dir / "mi"
    cmd_simulate(cfg, sim_dir)
    cmd_signals(cfg, sig_dir, sim_dir)
    sig_manifest = cache.read_json(sig_dir / "manifest.json")
    stream_name = sig_manifest["streams"][0]["signals"]
    train_cfg = dict(cfg)
    train_cfg["train"] = dict(cfg["train"], mode="both")
    cmd_train(train_cfg, train_dir, sig_dir / stream_name)
    cmd_mi(cfg, mi_dir, sim_dir, decay=True)
    print(f"pipeline: artifacts under {out_dir}")
    return 0


def make_parser() -> _Parser:
    parser = _Parser(prog="astrogate", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (or a manifest.json)")
        p.add_argument("--output-dir", help="artifact directory")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--jobs", type=int, help="parallel workers for fan-out")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="config override, e.g. --set sim.params.dt=0.01")

    p = sub.add_parser("simulate", help="run calcium-field simulations")
    common(p)
    p.add_argument("--run-index", help="scaled run index i (int or a,b,c)")
    p.add_argument("--long-tx", action="store_true",
                   help="scale transmitter duration as 20*i ms")
    p.add_argument("--t-sim", type=float, help="simulation length (ms)")
    p.add_argument("--n-runs", type=int, help="seeds per run index")

    p = sub.add_parser("signals", help="build synapse signal caches")
    common(p)
    p.add_argument("--input", required=True, help="simulate output directory")

    p = sub.add_parser("train", help="train gated and/or baseline classifiers")
    common(p)
    p.add_argument("--mode", choices=["gated", "baseline", "both"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--signals", help="signal cache CSV from `astrogate signals`")
    p.add_argument("--no-ca", action="store_true",
                   help="train the gate without the multicellular signal")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint JSON from train")

    p = sub.add_parser("mi", help="mutual-information profiles and decay")
    common(p)
    p.add_argument("--input", required=True, help="simulate output directory")
    p.add_argument("--tau-rx", help="threshold, or range lo..hi:step")
    p.add_argument("--decay", action="store_true",
                   help="hop-grouped distance decay over all receivers")

    p = sub.add_parser("sweep", help="gate-coefficient sensitivity sweep")
    common(p)
    p.add_argument("--signals", help="signal cache CSV (optional)")

    p = sub.add_parser("pipeline", help="simulate + signals + train + mi")
    common(p)
    return parser


def _resolve(args) -> dict:
    cfg = load_config(args.config, sets=args.set)
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "run_index", None) is not None:
        text = args.run_index
        cfg["sim"]["run_index"] = ([int(v) for v in text.split(",")]
                                   if "," in text else int(text))
    if getattr(args, "long_tx", False):
        cfg["sim"]["long_tx"] = True
    if getattr(args, "t_sim", None) is not None:
        cfg["sim"]["t_sim"] = args.t_sim
    if getattr(args, "n_runs", None) is not None:
        cfg["sim"]["n_runs"] = args.n_runs
    if getattr(args, "mode", None) is not None:
        cfg["train"]["mode"] = args.mode
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "no_ca", False):
        cfg["train"]["no_ca"] = True
    return cfg


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        out_dir = Path(cfg["output_dir"])
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "signals":
            return cmd_signals(cfg, out_dir, Path(args.input))
        if args.command == "train":
            return cmd_train(cfg, out_dir, args.signals)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.checkpoint)
        if args.command == "mi":
            return cmd_mi(cfg, out_dir, Path(args.input),
                          tau_rx_text=args.tau_rx, decay=args.decay)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, signals_path=args.signals)
        if args.command == "pipeline":
            return cmd_pipeline(cfg, out_dir)
        raise CliError(f"unknown command {args.command}")
    except (CliError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericDivergenceError, FloatingPointError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
