"""Command line entry point: ``feddct run|divide|cost|compare``.

Exit codes: 0 success, 2 configuration or clustering error, 3 aborted round.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .costs import (CommParams, comm_cost_main, comm_cost_proxy, comm_cost_total, cost_table, fedavg_comm_cost,
                    memory_estimate)
from .data import load_csv, make_clients, partition_iid, partition_noniid, synth_blobs, train_test_split
from .division import division_report, load_model_spec
from .nn import checkpoint
from .orchestration import ClusteringError, FedAvgTrainer, FedDCTTrainer, RoundAborted
from .protocol import Network

EXIT_OK, EXIT_CONFIG, EXIT_ABORTED = 0, 2, 3
METRIC_COLUMNS = ["round", "algorithm", "S", "K", "test_accuracy", "train_loss", "cot_loss", "bytes_per_client",
                  "wall_time"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- experiment plumbing ---------------------------------------------------------------
def load_data(cfg: ExperimentConfig):
    d = cfg.dataset
    if d.kind == "blobs":
        ds = synth_blobs(d.n_samples, d.classes, d.dim, seed=cfg.seed, separation=d.separation)
    else:
        ds = load_csv(d.path)
    if d.n_test >= len(ds):
        raise ConfigError(f"dataset.n_test={d.n_test} leaves no training data ({len(ds)} samples)")
    train, test = train_test_split(ds, d.n_test, seed=cfg.seed)
    split = partition_iid if d.partition == "iid" else partition_noniid
    partition = split(train, cfg.training.n_clients, seed=cfg.seed)
    return train, test, partition


def make_trainer(cfg: ExperimentConfig, algorithm: str, train, partition, network: Network):
    clients = make_clients(train, partition)
    arch = cfg.architecture(train.X.shape[1], train.class_count)
    if algorithm == "feddct":
        return FedDCTTrainer(arch, clients, cfg.round_config(), cut_layer=cfg.model.cut_layer, network=network)
    return FedAvgTrainer(arch, clients, cfg.round_config(split_factor=1), network=network)


def run_algorithm(cfg: ExperimentConfig, algorithm: str, trace_path=None, on_row=None):
    """Train for ``cfg.training.rounds`` rounds; yields metric rows to ``on_row``."""
    train, test, partition = load_data(cfg)
    network = Network(trace_path)
    trainer = make_trainer(cfg, algorithm, train, partition, network)
    rows = []
    try:
        for _ in range(cfg.training.rounds):
            res = trainer.run_round()
            acc = float(np.mean(trainer.predict_proba(test.X).argmax(axis=1) == test.y))
            row = {"round": res.round, "algorithm": algorithm, "S": trainer.cfg.split_factor,
                   "K": trainer.cfg.n_clients, "test_accuracy": acc, "train_loss": res.train_loss,
                   "cot_loss": res.cot_loss, "bytes_per_client": res.bytes_per_client, "wall_time": res.wall_time}
            rows.append(row)
            if on_row is not None:
                on_row(row)
    finally:
        network.close()
    return trainer, rows, partition


def checkpoint_state(trainer) -> dict:
    out = {}
    for k, state in enumerate(trainer.states()):
        for pid, value in state.items():
            out[f"sub{k}/{pid}"] = value
    return out


class _CsvSink:
    def __init__(self, path: Path):
        self.handle = open(path, "w", newline="")
        self.writer = csv.writer(self.handle)
        self.writer.writerow(METRIC_COLUMNS)

    def __call__(self, row):
        self.writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
        self.handle.flush()

    def close(self):
        self.handle.close()


def _write_manifest(cfg: ExperimentConfig, path: Path, outputs: dict, partition) -> None:
    manifest = {
        "package": "feddct",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "partition_sizes": partition.sizes(),
        "outputs": outputs,
        "command": sys.argv,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _experiment(cfg: ExperimentConfig, algorithms: list[str], metrics_name: str) -> int:
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / metrics_name
    sink = _CsvSink(metrics_path)
    outputs = {"metrics": str(metrics_path)}
    partition = None
    try:
        for algorithm in algorithms:
            trace = None
            if cfg.output.trace:
                trace = out_dir / (cfg.output.trace if len(algorithms) == 1 else f"{algorithm}-{cfg.output.trace}")
                outputs[f"trace/{algorithm}"] = str(trace)
            trainer, rows, partition = run_algorithm(cfg, algorithm, trace, sink)
            ckpt_name = cfg.output.checkpoint if len(algorithms) == 1 else f"{algorithm}-{cfg.output.checkpoint}"
            ckpt = out_dir / ckpt_name
            checkpoint.save(ckpt, checkpoint_state(trainer))
            outputs[f"checkpoint/{algorithm}"] = {"path": str(ckpt), "sha256": _sha256(ckpt)}
            last = rows[-1]
            print(f"{algorithm}: {len(rows)} rounds, test accuracy {last['test_accuracy']:.4f}, "
                  f"{last['bytes_per_client']:.0f} bytes per client in the last round")
    finally:
        sink.close()
        if partition is not None:
            _write_manifest(cfg, out_dir / cfg.output.manifest, outputs, partition)
    print(f"metrics written to {metrics_path}")
    return EXIT_OK


# -- subcommands -----------------------------------------------------------------------
def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"dir": args.out_dir})})
    if cfg.algorithm == "feddct":
        cfg.round_config().validate()
    return _experiment(cfg, [cfg.algorithm], cfg.output.metrics)


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"dir": args.out_dir})})
    cfg.round_config().validate()
    return _experiment(cfg, ["feddct", "fedavg"], "compare.csv")


def _division_table(report: dict) -> str:
    lines = [f"model {report['model']}  S={report['split_factor']}",
             f"{'layer':<12}{'kernel':>7}{'c_in':>12}{'c_out':>12}{'groups':>10}{'params':>20}"]
    for r in report["layers"]:
        lines.append(f"{r['name']:<12}{r['kernel']:>7}{'%d->%d' % tuple(r['c_in']):>12}"
                     f"{'%d->%d' % tuple(r['c_out']):>12}{'%d->%d' % tuple(r['groups']):>10}"
                     f"{'%d->%d' % tuple(r['params']):>20}")
    p0, p1 = report["total_params"]
    ratio = report["param_ratio"]
    lines.append(f"total params {p0} -> {p1} per sub-model"
                 + (f" (ratio {ratio:.4f}, ensemble {report['ensemble_params']})" if ratio is not None else ""))
    if "stage_widths" in report:
        tag = "published" if report["tabulated"] else "generic rule, not tabulated"
        lines.append(f"stage widths {report['stage_widths']} ({tag})")
    return "\n".join(lines)


def cmd_divide(args) -> int:
    try:
        spec = load_model_spec(args.spec)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{args.spec}: {exc}") from None
    if args.split_factor < 1:
        raise ConfigError(f"split factor must be >= 1, got {args.split_factor}")
    report = division_report(spec, args.split_factor)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(_division_table(report))
    return EXIT_OK


def _trace_bytes(path: Path, rnd: int = 0) -> dict[int, dict[str, int]]:
    per_client: dict[int, dict[str, int]] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["round"] != rnd or rec["local"]:
                continue
            for node in (rec["sender"], rec["receiver"]):
                if node < 0:
                    continue
                acc = per_client.setdefault(node, {"payload": 0, "modelled": 0, "headers": 0})
                acc["payload"] += sum(rec["categories"].values())
                acc["modelled"] += sum(v for k, v in rec["categories"].items()
                                       if k in ("model", "smashed", "cut_gradient"))
                acc["headers"] += rec["header_bytes"]
    return per_client


def cost_report(cfg: ExperimentConfig, trace: Path | None = None) -> dict:
    train, _, partition = load_data(cfg)
    S = cfg.training.split_factor
    arch = cfg.architecture(train.X.shape[1], train.class_count)
    sub = arch.divided(S)
    global_spec, sub_spec = arch.layer_specs(), sub.layer_specs()
    batch = cfg.training.batch_size
    template = sub.build()
    cut = cfg.model.cut_layer or sub.default_cut()
    lower, _ = template.split(cut)
    sub_params, lower_params = template.n_params(), lower.n_params()
    report = {
        "algorithm": cfg.algorithm,
        "split_factor": S,
        "layers": {"global": cost_table(global_spec), "sub_model": cost_table(sub_spec)},
        "division": division_report(global_spec, S) if S > 1 else None,
        "memory": {"global": memory_estimate(global_spec, batch).as_dict(),
                   "sub_model": memory_estimate(sub_spec, batch).as_dict()},
        "weights": {"global_params": arch.build().n_params(), "sub_model_params": sub_params,
                    "ensemble_params": S * sub_params, "lower_fraction": lower_params / sub_params},
    }
    sizes = partition.sizes()
    K = cfg.training.n_clients
    w = 8.0 * S * sub_params
    if S >= 2:
        per_sample = sub.activation_elements(cut)
        params = CommParams(S=S, K=K, p=float(cfg.training.local_epochs * sum(sizes)), Q=8.0 * per_sample * S,
                            beta=lower_params / sub_params, w_size=w)
        report["communication"] = {"p": params.p, "Q": params.Q, "beta": params.beta, "w": params.w_size,
                                   "main": comm_cost_main(params), "proxy": comm_cost_proxy(params),
                                   "total": comm_cost_total(params)}
    else:
        report["communication"] = {"w": 8.0 * arch.build().n_params(),
                                   "total": fedavg_comm_cost(8.0 * arch.build().n_params())}
    if trace is not None and trace.exists() and trace.stat().st_size > 0:
        measured = _trace_bytes(trace)
        predicted = report["communication"]["total"]
        report["trace"] = {
            str(c): {**m, "predicted_total": predicted,
                     "difference": m["modelled"] - predicted,
                     "header_overhead_bound": m["headers"] + (m["payload"] - m["modelled"])}
            for c, m in sorted(measured.items())
        }
    return report


def cmd_cost(args) -> int:
    cfg = load_config(args.config)
    if cfg.training.split_factor > 1:
        cfg.round_config().validate()
    trace = Path(args.trace) if args.trace else (
        Path(cfg.output.dir) / cfg.output.trace if cfg.output.trace else None)
    report = cost_report(cfg, trace)
    if args.json:
        print(json.dumps(report, indent=2))
        return EXIT_OK
    w = report["weights"]
    print(f"global model {w['global_params']} params; {report['split_factor']} sub-models of "
          f"{w['sub_model_params']} ({w['ensemble_params']} total), lower fraction {w['lower_fraction']:.4f}")
    for name in ("global", "sub_model"):
        m = report["memory"][name]
        print(f"memory {name:<10} model {m['mem_model']} B, optimizer {m['mem_optimizer']} B, "
              f"activations {m['mem_activation']} B, FLOPs {m['flops']}")
    comm = report["communication"]
    if "main" in comm:
        print(f"per-client bytes per round: main {comm['main']:.0f}, proxy {comm['proxy']:.0f}, "
              f"total {comm['total']:.0f}")
    else:
        print(f"per-client bytes per round: total {comm['total']:.0f}")
    if "trace" in report:
        print(f"{'client':>6}{'measured':>14}{'predicted':>14}{'difference':>14}{'overhead':>12}")
        for c, m in report["trace"].items():
            print(f"{c:>6}{m['modelled']:>14}{m['predicted_total']:>14.0f}{m['difference']:>14.0f}"
                  f"{m['header_overhead_bound']:>12}")
    else:
        print("no trace found: analytic report only")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feddct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"feddct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one algorithm from a JSON config")
    p.add_argument("config")
    p.add_argument("--out-dir", help="override output.dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="train feddct and fedavg on the same seed, joined CSV")
    p.add_argument("config")
    p.add_argument("--out-dir", help="override output.dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("divide", help="S-way width division report for a model spec")
    p.add_argument("spec")
    p.add_argument("split_factor", type=int)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_divide)

    p = sub.add_parser("cost", help="analytic cost report, compared with a trace when one exists")
    p.add_argument("config")
    p.add_argument("--trace", help="JSON-lines message trace of a previous run")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClusteringError as exc:
        print(f"clustering error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RoundAborted as exc:
        print(f"round aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
