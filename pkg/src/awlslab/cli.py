"""Command-line entry point.

Subcommands: gen-data, train, partition, enumerate, solve-lower,
solve-awls, eval. Options come from an optional JSON config file plus
command-line flags (flags win). Every run writes its artifacts and a
manifest.json (config hash, seed, artifact checksums) into the output
directory. Exit codes: 0 success, 1 validation/usage error, 2 solver limit.

Environment overrides (the only ones): AWLSLAB_OUTPUT_DIR for the default
output directory, AWLSLAB_JOBS for the default job count.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .grid import (CaseError, LoadProfile, Topology, enumerate_budget_set,
                   load_case)
from .metrics import kendall_tau, spearman_rho
from .partition import (Partition, budget_neurons, build_block_sparse_net,
                        build_laplacian, spectral_partition, PartitionError)
from .pipelines import (BANDS, Dataset, PipelineError, awls_config,
                        enumerate_benchmark, gen_dataset, lower_config,
                        realized_shed, run_awls_experiment, sample_profiles)
from .qcmodel import ModelError
from .surrogate import ReluNet, TrainConfig, dense_net, split_dataset, train

EXIT_OK, EXIT_USAGE, EXIT_SOLVER_LIMIT = 0, 1, 2


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: str | None, defaults: dict, args: dict) -> dict:
    """defaults < config file < explicit flags; unknown config keys rejected."""
    cfg = dict(defaults)
    if path:
        doc = json.loads(Path(path).read_text())
        unknown = set(doc) - set(defaults)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for k, v in args.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict,
                    artifacts: list[Path]) -> None:
    blob = json.dumps({"command": command, **cfg}, sort_keys=True)
    manifest = {
        "schema": "manifest/1",
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _read_lines_file(path: str) -> list[int]:
    doc = json.loads(Path(path).read_text())
    return [int(x) for x in doc["lines"]]


def _stage(msg: str) -> None:
    print(msg)


# -- subcommand implementations ---------------------------------------------


def cmd_gen_data(cfg: dict) -> int:
    case = load_case(cfg["case"])
    lines = _read_lines_file(cfg["lines"])
    out = _out_dir(cfg)
    ds = gen_dataset(case, lines, cfg["k"], cfg["profiles"],
                     cfg["topologies"], cfg["seed"],
                     sample_cap=cfg["sample_cap"], jobs=cfg["jobs"])
    path = out / "dataset.jsonl"
    path.write_text(ds.to_jsonl())
    _write_manifest(out, "gen-data", cfg, [path])
    _stage(f"gen-data: {len(ds.samples)} samples -> {path}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    case = load_case(cfg["case"])
    ds = Dataset.from_jsonl(Path(cfg["dataset"]).read_text())
    out = _out_dir(cfg)
    X, y = ds.matrix()
    hidden = tuple(int(h) for h in str(cfg["hidden"]).split(",") if h)
    tc = TrainConfig(epochs=cfg["epochs"], lr=cfg["lr"], seed=cfg["seed"],
                     lr_final=cfg["lr_final"],
                     batch_size=cfg["batch_size"],
                     train_fraction=cfg["train_fraction"])
    artifacts = []
    if cfg["arch"] == "dense":
        net = dense_net(len(case.branches), len(case.buses), hidden,
                        seed=cfg["seed"])
    elif cfg["arch"] == "multi":
        lap = build_laplacian(case)
        part = spectral_partition(lap, cfg["areas"], seed=cfg["seed"])
        # per-area label variability (scaled by the area's demand share)
        # steers the neuron budget toward areas carrying more shed signal
        bus_pos = {b.id: i for i, b in enumerate(case.buses)}
        shed_share = [
            [sum(s.pd[bus_pos[b]] for b in part.areas[a]) * s.label
             for s in ds.samples] for a in range(len(part.areas))]
        budgets = budget_neurons(shed_share, hidden[0] * len(part.areas),
                                 h_min=cfg["h_min"])
        net = build_block_sparse_net(case, part, budgets, seed=cfg["seed"],
                                     n_layers=len(hidden))
        ppath = out / "partition.json"
        ppath.write_text(part.to_json())
        artifacts.append(ppath)
    else:
        raise CliError(f"unknown arch {cfg['arch']!r}")
    tr_idx, te_idx = split_dataset(len(y), tc)
    trace = train(net, X[tr_idx], y[tr_idx], tc)
    npath = out / "net.json"
    npath.write_text(net.to_json())
    tpath = out / "loss_trace.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_mse"])
    for e, v in enumerate(trace):
        w.writerow([e, f"{v:.9g}"])
    tpath.write_text(buf.getvalue())
    artifacts += [npath, tpath]
    _write_manifest(out, "train", cfg, artifacts)
    _stage(f"train: {cfg['arch']} net, final train MSE {trace[-1]:.3g} "
           f"-> {npath}")
    return EXIT_OK


def cmd_partition(cfg: dict) -> int:
    case = load_case(cfg["case"])
    out = _out_dir(cfg)
    part = spectral_partition(build_laplacian(case), cfg["areas"],
                              seed=cfg["seed"])
    path = out / "partition.json"
    path.write_text(part.to_json())
    _write_manifest(out, "partition", cfg, [path])
    _stage(f"partition: {len(part.areas)} areas, "
           f"{len(part.tie_lines)} tie lines -> {path}")
    return EXIT_OK


def cmd_enumerate(cfg: dict) -> int:
    case = load_case(cfg["case"])
    lines = _read_lines_file(cfg["lines"])
    out = _out_dir(cfg)
    if cfg["profile_seed"] is None:
        load = LoadProfile.nominal(case)
    else:
        load = sample_profiles(case, 1, cfg["profile_seed"])[0]
    bench = enumerate_benchmark(case, load, lines, cfg["k"], lower_config())
    path = out / "benchmark.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topology", "eta"])
    for t, v in zip(bench.topologies, bench.values):
        w.writerow([t.to_json(), f"{v:.9f}"])
    path.write_text(buf.getvalue())
    _write_manifest(out, "enumerate", cfg, [path])
    _stage(f"enumerate: {len(bench.values)} topologies, "
           f"max eta {bench.best_value:.6f} -> {path}")
    return EXIT_OK


def cmd_solve_lower(cfg: dict) -> int:
    case = load_case(cfg["case"])
    out = _out_dir(cfg)
    if cfg["topology"]:
        status = tuple(int(s) for s in str(cfg["topology"]).split(","))
    else:
        status = tuple(1 for _ in case.branches)
    topo = Topology(status)
    load = LoadProfile.nominal(case)
    eta = realized_shed(case, load, topo, lower_config())
    path = out / "lower.json"
    path.write_text(json.dumps({"schema": "lower/1",
                                "topology": list(status),
                                "eta": eta}, indent=1) + "\n")
    _write_manifest(out, "solve-lower", cfg, [path])
    _stage(f"solve-lower: eta = {eta:.6f} -> {path}")
    return EXIT_OK


def cmd_solve_awls(cfg: dict) -> int:
    case = load_case(cfg["case"])
    lines = _read_lines_file(cfg["lines"])
    net = ReluNet.from_json(Path(cfg["net"]).read_text())
    out = _out_dir(cfg)
    profiles = sample_profiles(case, cfg["profiles"], cfg["seed"])
    methods = {"pcnn": ("pcnn",), "direct": ("direct-nn",),
               "both": ("direct-nn", "pcnn")}.get(cfg["surrogate"])
    if methods is None:
        raise CliError(f"unknown surrogate mode {cfg['surrogate']!r}")
    report = run_awls_experiment(
        case, net, lines, cfg["k"], profiles, lam=cfg["lam"],
        methods=methods, config=awls_config(), lower=lower_config())
    cpath = out / "report.csv"
    cpath.write_text(report.to_csv())
    jpath = out / "report.json"
    jpath.write_text(report.to_json() + "\n")
    _write_manifest(out, "solve-awls", cfg, [cpath, jpath])
    agg = report.aggregate()["methods"]
    summary = "; ".join(
        f"{m}: avg gap {d['gap_avg']:.3f}%" if d["gap_avg"] is not None
        else f"{m}: gap undefined" for m, d in agg.items())
    _stage(f"solve-awls: {len(profiles)} profiles; {summary} -> {cpath}")
    if any(r.status == "iteration-limit" for r in report.rows):
        return EXIT_SOLVER_LIMIT
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    case = load_case(cfg["case"])
    ds = Dataset.from_jsonl(Path(cfg["dataset"]).read_text())
    net = ReluNet.from_json(Path(cfg["net"]).read_text())
    out = _out_dir(cfg)
    X, y = ds.matrix()
    tc = TrainConfig(seed=cfg["seed"], train_fraction=cfg["train_fraction"])
    _, te_idx = split_dataset(len(y), tc)
    pred = net.forward_batch(X[te_idx])
    truth = y[te_idx]
    floor = cfg["error_floor"] * sum(b.pd + b.qd for b in case.buses)
    mask = truth >= floor
    rel = (np.abs(pred[mask] - truth[mask]) / truth[mask] * 100.0
           if mask.any() else np.array([]))
    doc = {
        "schema": "eval/1",
        "test_samples": int(len(truth)),
        "scored_samples": int(mask.sum()),
        "error_floor_pu": floor,
        "median_rel_error_pct": float(np.median(rel)) if rel.size else None,
        "max_rel_error_pct": float(np.max(rel)) if rel.size else None,
        "mse": float(np.mean((pred - truth) ** 2)),
        "kendall_tau": kendall_tau(truth, pred),
        "spearman_rho": spearman_rho(truth, pred),
    }
    path = out / "eval.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    _write_manifest(out, "eval", cfg, [path])
    _stage(f"eval: median err "
           f"{doc['median_rel_error_pct'] if rel.size else float('nan'):.3f}%"
           f" over {doc['scored_samples']} scored samples -> {path}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    env_out = os.environ.get("AWLSLAB_OUTPUT_DIR", "out")
    env_jobs = int(os.environ.get("AWLSLAB_JOBS", "1"))
    p = argparse.ArgumentParser(prog="awlslab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--case", help="case file path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gen-data", help="generate a labeled dataset")
    common(sp)
    sp.add_argument("--lines", help="candidate-lines JSON file")
    sp.add_argument("--k", type=int)
    sp.add_argument("--profiles", type=int)
    sp.add_argument("--topologies", type=int)
    sp.add_argument("--sample-cap", dest="sample_cap", type=int)
    sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("train", help="train a surrogate")
    common(sp)
    sp.add_argument("--dataset")
    sp.add_argument("--arch", choices=["dense", "multi"])
    sp.add_argument("--hidden")
    sp.add_argument("--areas", type=int)
    sp.add_argument("--h-min", dest="h_min", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-final", dest="lr_final", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--train-fraction", dest="train_fraction", type=float)

    sp = sub.add_parser("partition", help="spectral area partition")
    common(sp)
    sp.add_argument("--areas", type=int)

    sp = sub.add_parser("enumerate", help="enumerate the budget set")
    common(sp)
    sp.add_argument("--lines")
    sp.add_argument("--k", type=int)
    sp.add_argument("--profile-seed", dest="profile_seed", type=int)

    sp = sub.add_parser("solve-lower", help="single lower-level solve")
    common(sp)
    sp.add_argument("--topology", help="comma-separated 0/1 statuses")

    sp = sub.add_parser("solve-awls", help="attack solves + report")
    common(sp)
    sp.add_argument("--net")
    sp.add_argument("--lines")
    sp.add_argument("--k", type=int)
    sp.add_argument("--surrogate", choices=["pcnn", "direct", "both"])
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--profiles", type=int)

    sp = sub.add_parser("eval", help="score a net against a dataset")
    common(sp)
    sp.add_argument("--net")
    sp.add_argument("--dataset")
    sp.add_argument("--train-fraction", dest="train_fraction", type=float)
    sp.add_argument("--error-floor", dest="error_floor", type=float)

    p.set_defaults(env_out=env_out, env_jobs=env_jobs)
    return p


_DEFAULTS = {
    "gen-data": {"case": None, "lines": None, "k": 3, "profiles": 100,
                 "topologies": 50, "sample_cap": None, "seed": 0,
                 "jobs": None, "out": None},
    "train": {"case": None, "dataset": None, "arch": "dense",
              "hidden": "50,50", "areas": 5, "h_min": 4, "epochs": 2000,
              "lr": 5e-3, "lr_final": 5e-5, "batch_size": 256,
              "train_fraction": 0.9,
              "seed": 0, "out": None},
    "partition": {"case": None, "areas": 5, "seed": 0, "out": None},
    "enumerate": {"case": None, "lines": None, "k": 3, "profile_seed": None,
                  "seed": 0, "out": None},
    "solve-lower": {"case": None, "topology": None, "seed": 0, "out": None},
    "solve-awls": {"case": None, "net": None, "lines": None, "k": 3,
                   "surrogate": "pcnn", "lam": 10.0, "profiles": 5,
                   "seed": 0, "out": None},
    "eval": {"case": None, "net": None, "dataset": None,
             "train_fraction": 0.9, "error_floor": 0.01, "seed": 0,
             "out": None},
}

_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "partition": cmd_partition,
    "enumerate": cmd_enumerate,
    "solve-lower": cmd_solve_lower,
    "solve-awls": cmd_solve_awls,
    "eval": cmd_eval,
}


def run(argv: list[str] | None = None) -> int:
    parser = _parser()
    ns = parser.parse_args(argv)
    command = ns.command
    flags = {k: v for k, v in vars(ns).items()
             if k not in ("command", "config", "env_out", "env_jobs")}
    try:
        cfg = _load_config(ns.config, _DEFAULTS[command], flags)
        if cfg.get("out") is None:
            cfg["out"] = ns.env_out
        if cfg.get("jobs") is None:
            cfg["jobs"] = ns.env_jobs
        for key in ("case",):
            if cfg.get(key) is None:
                raise CliError(f"--{key} is required")
            if not Path(cfg[key]).exists():
                raise CliError(f"{key} path does not exist: {cfg[key]}")
        return _HANDLERS[command](cfg)
    except (CliError, CaseError, ModelError, PartitionError, PipelineError,
            ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
