"""Command-line entry point: ``gsidl <command> [<subcommand>] ...``.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 configuration
error, 4 network error, 5 input error, 6 training aborted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GsiDlError
from .graph import SensorLayout, build_matrices, load_network, load_network_csv, save_network
from .gsi import DEFAULT_ALPHA, DEFAULT_GAMMA_FLOOR, GraphStateInterpolator
from .hydraulics import LeakDataset, generate_dataset, load_dataset, save_dataset
from .localize import (DLParams, EnsembleConfig, GSIParams, GsiDlModel, accuracy, interpolate_residuals,
                       predict, predict_ensemble, select_virtual_sensors, train_ensemble,
                       train_from_interpolated)

log = logging.getLogger("gsidl")


def _ids(text):
    return [t for t in (text or "").split(",") if t]


def _floats(text):
    return [float(t) for t in _ids(text)]


def _dataset(graph, prefix) -> LeakDataset:
    ds = load_dataset(prefix)
    if ds.sensors is None:
        raise ConfigurationError("dataset has no sensor rows recorded; regenerate with --sensors")
    if max(ds.sensors) >= graph.n_nodes:
        raise ConfigurationError("dataset sensors do not fit this network")
    return ds


def _dl_params(args) -> DLParams:
    return DLParams(n_atoms=args.atoms, sparsity=args.sparsity, alpha=args.alpha_label, beta=args.beta,
                    iters=args.iters, normalize=args.normalize, seed=args.seed)


def _interpolated(graph, ds, args):
    matrices = build_matrices(graph)
    gsi = GSIParams(args.alpha, args.gamma_floor)
    data = interpolate_residuals(matrices, ds.F_leak, ds.F_nom, ds.labels, ds.sensors, gsi, ds.magnitudes, ds.days)
    return matrices, gsi, data


# -- command handlers ----------------------------------------------------------

def cmd_net_validate(args):
    graph = load_network(args.network)
    graph.validate()
    build_matrices(graph)
    print(f"ok: {len(graph.junctions)} junctions, {len(graph.reservoirs)} reservoirs, {graph.n_pipes} pipes")


def cmd_net_convert(args):
    graph = load_network_csv(args.nodes_csv, args.pipes_csv)
    save_network(graph, args.out)
    print(f"wrote {args.out}")


def cmd_sim_run(args):
    graph = load_network(args.network)
    sensors = [graph.node_index(i) for i in _ids(args.sensors)] or None
    leaks = [graph.node_index(i) for i in _ids(args.leak_nodes)]
    days = [int(d) for d in _ids(args.days)] or None
    ds = generate_dataset(graph, leaks, _floats(args.magnitudes), days, args.seed, sensors=sensors, steps=args.steps,
                          noise=args.noise, sensor_noise=args.sensor_noise, workers=args.workers)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}_leak.csv, {args.out}_nom.csv ({ds.F_leak.shape[0]} rows x {ds.n_columns} columns)")


def cmd_gsi_interpolate(args):
    graph = load_network(args.network)
    matrices = build_matrices(graph)
    sensors, values = [], []
    with open(args.measurements, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("node", "node_id", "id"):
                continue
            sensors.append(graph.node_index(row[0].strip()))
            values.append(float(row[1]))
    from .gsi import _dedupe

    sensors, vals = _dedupe(sensors, values)
    sol = GraphStateInterpolator(matrices, sensors, args.alpha, args.gamma_floor).solve(vals)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "head"])
        for nid, h in zip(graph.ids, sol.heads):
            w.writerow([nid, f"{h:.10f}"])
    diag = args.diagnostics or str(Path(args.out).with_suffix(".json"))
    Path(diag).write_text(json.dumps(sol.diagnostics(), indent=1))
    print(f"objective={sol.objective:.6g} gamma={sol.gamma:.3g} kkt={sol.kkt_residual:.2e} iterations={sol.iterations}")


def cmd_dl_train(args):
    graph = load_network(args.network)
    ds = _dataset(graph, args.dataset)
    layout = SensorLayout(ds.sensors, tuple(graph.node_index(i) for i in _ids(args.virtual)))
    layout.check(graph.n_nodes)
    _, gsi, data = _interpolated(graph, ds, args)
    model = train_from_interpolated(data, layout, _dl_params(args), gsi)
    model.save(args.out)
    print(f"wrote {args.out}: {model.D.shape[1]} atoms, {len(model.classes)} classes, rows {layout.size}")


def _write_predictions(path, graph, truth, pred):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "true_leak", "predicted_leak"])
        for j, (t, p) in enumerate(zip(truth, pred)):
            w.writerow([j, graph.ids[int(t)], graph.ids[int(p)]])


def cmd_dl_classify(args):
    graph = load_network(args.network)
    model = GsiDlModel.load(args.model)
    ds = _dataset(graph, args.dataset)
    if tuple(ds.sensors) != tuple(model.layout.physical):
        raise ConfigurationError("model physical sensors do not match the dataset sensor rows")
    model.layout.check(graph.n_nodes)
    args.alpha, args.gamma_floor = model.gsi.alpha, model.gsi.gamma_floor
    _, _, data = _interpolated(graph, ds, args)
    pred = predict(model, data)
    if args.out:
        _write_predictions(args.out, graph, ds.labels, pred)
    print(f"accuracy={100 * accuracy(pred, ds.labels):.2f}%")


def cmd_select_virtual(args):
    graph = load_network(args.network)
    ds = _dataset(graph, args.dataset)
    _, _, data = _interpolated(graph, ds, args)
    layout = SensorLayout(ds.sensors)
    cands = [graph.node_index(i) for i in _ids(args.candidates)] or \
        [j for j in graph.junctions if j not in set(ds.sensors)]
    ranking = select_virtual_sensors(data, layout, cands, _dl_params(args), args.folds, args.seed, args.workers)
    rows = [["None (baseline)", f"{100 * ranking.baseline:.2f}"]]
    rows += [[graph.ids[c.node], f"{100 * c.mean:.2f}"] for c in ranking.candidates]
    text = "candidate,validation_accuracy_pct\n" + "\n".join(",".join(r) for r in rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_ensemble_train(args):
    graph = load_network(args.network)
    ds = _dataset(graph, args.dataset)
    _, gsi, data = _interpolated(graph, ds, args)
    virtuals = [()] * args.classical + [(graph.node_index(i),) for i in _ids(args.virtual)]
    if not virtuals:
        raise ConfigurationError("empty ensemble: give --virtual and/or --classical")
    ens = train_ensemble(data, ds.sensors, virtuals, args.votes_per_member, _dl_params(args), gsi, args.seed,
                         args.workers)
    manifest = ens.save(args.out)
    print(f"wrote {manifest} ({len(virtuals)} members x {args.votes_per_member} dictionaries)")


def cmd_ensemble_classify(args):
    graph = load_network(args.network)
    ens = EnsembleConfig.load(args.manifest)
    ds = _dataset(graph, args.dataset)
    if tuple(ds.sensors) != tuple(ens.physical):
        raise ConfigurationError("ensemble physical sensors do not match the dataset sensor rows")
    gsi = ens.members[0].models[0].gsi
    args.alpha, args.gamma_floor = gsi.alpha, gsi.gamma_floor
    _, _, data = _interpolated(graph, ds, args)
    pred = predict_ensemble(ens, data)
    if args.out:
        _write_predictions(args.out, graph, ds.labels, pred)
    print(f"accuracy={100 * accuracy(pred, ds.labels):.2f}%")


def cmd_report(args):
    from .experiment import report_from_file

    for p in report_from_file(args.evaluation, args.out):
        print(p)


def cmd_run(args):
    from .experiment import ExperimentConfig, run_experiment, smoke_config

    if args.smoke:
        cfg = smoke_config(args.out or "results-smoke")
    elif args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.workers = args.workers
    ev = run_experiment(cfg)
    for row in ev["single_dictionary"]:
        print(f"{row['virtual']:>24s}  {100 * row['mean']:6.2f}%")
    print(f"reports in {cfg.output_dir}")


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    gsi_opts = argparse.ArgumentParser(add_help=False)
    gsi_opts.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="slack weight of the interpolation QP")
    gsi_opts.add_argument("--gamma-floor", type=float, default=DEFAULT_GAMMA_FLOOR, help="lower bound on the slack")

    dl_opts = argparse.ArgumentParser(add_help=False)
    dl_opts.add_argument("--atoms", type=int, default=None, help="dictionary size (default 8 per class)")
    dl_opts.add_argument("--sparsity", type=int, default=4)
    dl_opts.add_argument("--alpha-label", type=float, default=1.0)
    dl_opts.add_argument("--beta", type=float, default=1.0)
    dl_opts.add_argument("--iters", type=int, default=20)
    dl_opts.add_argument("--normalize", action="store_true", help="unit-normalise residual columns")

    p = argparse.ArgumentParser(prog="gsidl", description="Leak localisation with graph interpolation and dictionaries")
    sub = p.add_subparsers(dest="command", required=True)

    net = sub.add_parser("net", help="network files").add_subparsers(dest="sub", required=True)
    q = net.add_parser("validate", parents=[common])
    q.add_argument("network")
    q.set_defaults(fn=cmd_net_validate)
    q = net.add_parser("convert", parents=[common], help="nodes.csv + pipes.csv -> network JSON")
    q.add_argument("nodes_csv")
    q.add_argument("pipes_csv")
    q.add_argument("out")
    q.set_defaults(fn=cmd_net_convert)

    sim = sub.add_parser("sim", help="hydraulic simulation").add_subparsers(dest="sub", required=True)
    q = sim.add_parser("run", parents=[common])
    q.add_argument("network")
    q.add_argument("--leak-nodes", required=True, help="comma-separated node ids")
    q.add_argument("--magnitudes", required=True, help="comma-separated leak sizes, m3/h")
    q.add_argument("--days", default="", help="day index per magnitude (default 0,1,...)")
    q.add_argument("--sensors", default="", help="comma-separated sensor node ids (default all nodes)")
    q.add_argument("--steps", type=int, default=24)
    q.add_argument("--noise", type=float, default=0.05)
    q.add_argument("--sensor-noise", type=float, default=0.0)
    q.add_argument("--out", required=True, help="output prefix")
    q.set_defaults(fn=cmd_sim_run)

    gsi = sub.add_parser("gsi", help="graph-state interpolation").add_subparsers(dest="sub", required=True)
    q = gsi.add_parser("interpolate", parents=[common, gsi_opts])
    q.add_argument("network")
    q.add_argument("measurements", help="CSV of node id, head")
    q.add_argument("--out", required=True, help="full-head CSV")
    q.add_argument("--diagnostics", default=None, help="diagnostics JSON (default next to --out)")
    q.set_defaults(fn=cmd_gsi_interpolate)

    dl = sub.add_parser("dl", help="single dictionary").add_subparsers(dest="sub", required=True)
    q = dl.add_parser("train", parents=[common, gsi_opts, dl_opts])
    q.add_argument("network")
    q.add_argument("dataset", help="dataset prefix written by 'sim run'")
    q.add_argument("--virtual", default="", help="comma-separated virtual sensor ids")
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_dl_train)
    q = dl.add_parser("classify", parents=[common])
    q.add_argument("network")
    q.add_argument("model")
    q.add_argument("dataset")
    q.add_argument("--out", default=None, help="predictions CSV")
    q.set_defaults(fn=cmd_dl_classify)

    q = sub.add_parser("select-virtual", parents=[common, gsi_opts, dl_opts], help="rank virtual sensor candidates")
    q.add_argument("network")
    q.add_argument("dataset")
    q.add_argument("--candidates", default="", help="comma-separated ids (default all unmeasured junctions)")
    q.add_argument("--folds", type=int, default=5)
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_select_virtual)

    ens = sub.add_parser("ensemble", help="multiple dictionaries with voting").add_subparsers(dest="sub", required=True)
    q = ens.add_parser("train", parents=[common, gsi_opts, dl_opts])
    q.add_argument("network")
    q.add_argument("dataset")
    q.add_argument("--virtual", default="", help="one member per comma-separated virtual sensor id")
    q.add_argument("--classical", type=int, default=1, help="members without a virtual sensor")
    q.add_argument("--votes-per-member", type=int, default=3)
    q.add_argument("--out", required=True, help="output directory")
    q.set_defaults(fn=cmd_ensemble_train)
    q = ens.add_parser("classify", parents=[common])
    q.add_argument("network")
    q.add_argument("manifest")
    q.add_argument("dataset")
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_ensemble_classify)

    q = sub.add_parser("report", parents=[common], help="re-render CSV tables from evaluation.json")
    q.add_argument("evaluation")
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_report)

    q = sub.add_parser("run", help="full experiment")
    q.add_argument("config", nargs="?", default=None, help="experiment JSON (default: bundled grid settings)")
    q.add_argument("--smoke", action="store_true", help="tiny configuration for a quick check")
    q.add_argument("--out", default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("-v", "--verbose", action="store_true")
    q.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except GsiDlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
