"""End-to-end evaluation harness and report writers.

``run_experiment`` executes generate -> interpolate -> rank virtual sensors
-> single-dictionary table -> timing table -> multi-dictionary table, writes
``evaluation.json`` after every stage, and renders the CSV reports from it.
``write_reports`` is a pure function of that JSON, so reports can be
regenerated without recomputation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigurationError, GsiDlError
from .graph import NetworkGraph, SensorLayout, build_matrices, grid_network, load_network
from .hydraulics import generate_dataset
from .localize import (DLParams, EnsembleConfig, GSIParams, accuracy, interpolate_residuals, predict, predict_ensemble,
                       select_virtual_sensors, train_ensemble, train_from_interpolated)
from .seeding import derive_seed

log = logging.getLogger(__name__)

BUNDLED_NETWORK = Path(__file__).parent / "data" / "grid60.json"
CONFIG_SCHEMA = Path(__file__).parent / "data" / "experiment.schema.json"


@dataclass
class ExperimentConfig:
    output_dir: str = "results"
    network: str = "bundled"  # path, "bundled", or "grid" (generated from grid_params)
    grid_params: dict = field(default_factory=dict)
    physical_sensors: list | int = 4  # node ids, or a count of spread junctions (reservoirs always measured)
    leak_nodes: list | int = 5  # node ids, or a count picked by leak_layout
    leak_layout: str = "cluster"  # "cluster": one district around the network centre; "spread": far apart
    train_magnitudes: list = field(default_factory=lambda: [1.0, 3.0, 5.0, 7.0])
    train_days: list = field(default_factory=lambda: [0, 1, 2, 3])
    test_magnitudes: list = field(default_factory=lambda: [2.0, 4.0, 6.0])
    test_days: list = field(default_factory=lambda: [4, 5, 6])
    steps_per_day: int = 24
    roughness_noise: float = 0.05
    demand_noise: float = 0.03
    sensor_noise: float = 0.002
    gsi: dict = field(default_factory=dict)
    dl: dict = field(default_factory=lambda: {"sparsity": 2})  # few informative rows saturate larger s
    candidates: list | None = None  # node ids; default all unmeasured junctions
    folds: int = 5
    runs: int = 5
    single_top: int = 6
    single_worst: int = 2
    combined_counts: list = field(default_factory=lambda: [2, 3])
    max_dictionaries: int = 7
    votes_per_member: int = 3
    timing_virtual_counts: list = field(default_factory=lambda: [0, 0.25, 0.5, 1.0])
    timing_repeats: int = 5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if set(map(float, self.train_magnitudes)) & set(map(float, self.test_magnitudes)):
            raise ConfigurationError("train and test magnitudes must be disjoint")
        if len(self.train_magnitudes) != len(self.train_days) or len(self.test_magnitudes) != len(self.test_days):
            raise ConfigurationError("each magnitude needs exactly one day in the schedule")
        if self.leak_layout not in ("cluster", "spread"):
            raise ConfigurationError(f"leak_layout must be 'cluster' or 'spread', got {self.leak_layout!r}")
        if self.runs < 1 or self.folds < 1 or self.max_dictionaries < 1 or self.votes_per_member < 1:
            raise ConfigurationError("runs, folds, max_dictionaries and votes_per_member must be >= 1")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        try:
            jsonschema.validate(data, json.loads(CONFIG_SCHEMA.read_text()))
        except jsonschema.ValidationError as exc:
            raise ConfigurationError(f"invalid experiment config: {exc.message}") from None
        return cls(**data)


def smoke_config(output_dir) -> ExperimentConfig:
    """Tiny end-to-end configuration (9-node grid, 2 leaks, M=2, t=4)."""
    return ExperimentConfig(
        output_dir=str(output_dir), network="grid",
        grid_params={"rows": 3, "cols": 3, "n_reservoirs": 1, "drop_fraction": 0.0, "diameter": 0.08},
        physical_sensors=3, leak_nodes=2, train_magnitudes=[1.0, 5.0], train_days=[0, 1],
        test_magnitudes=[3.0], test_days=[4], steps_per_day=4, folds=2, runs=2, single_top=2,
        single_worst=1, combined_counts=[2], max_dictionaries=3, votes_per_member=2,
        timing_virtual_counts=[0, 1, 2, 3], timing_repeats=1, dl={"iters": 5, "sparsity": 2},
    )


def load_experiment_network(cfg: ExperimentConfig) -> NetworkGraph:
    if cfg.network == "bundled":
        return load_network(BUNDLED_NETWORK)
    if cfg.network == "grid":
        return grid_network(**cfg.grid_params)
    return load_network(cfg.network)


def spread_nodes(graph: NetworkGraph, k: int, exclude=(), seed: int = 0) -> list[int]:
    """``k`` junctions spread out by farthest-point sampling on pipe distance."""
    from scipy.sparse.csgraph import dijkstra

    pool = [j for j in graph.junctions if j not in set(exclude)]
    if k > len(pool):
        raise ConfigurationError(f"cannot pick {k} nodes from {len(pool)} available junctions")
    if k <= 0:
        return []
    dist = dijkstra(graph.length_matrix(), directed=False)
    rng = np.random.default_rng(seed)
    chosen = [pool[int(rng.integers(len(pool)))]]
    anchors = list(exclude) + chosen
    while len(chosen) < k:
        d = np.min(dist[np.ix_(anchors, pool)], axis=0)
        nxt = pool[int(np.argmax(d))]
        chosen.append(nxt)
        anchors.append(nxt)
    return sorted(chosen)


def cluster_nodes(graph: NetworkGraph, k: int, exclude=()) -> list[int]:
    """The ``k`` free junctions closest (pipe distance) to the most central free junction."""
    from scipy.sparse.csgraph import dijkstra

    pool = [j for j in graph.junctions if j not in set(exclude)]
    if k > len(pool):
        raise ConfigurationError(f"cannot pick {k} nodes from {len(pool)} available junctions")
    dist = dijkstra(graph.length_matrix(), directed=False)
    sub = dist[np.ix_(pool, pool)]
    centre = pool[int(np.argmin(sub.max(axis=1)))]
    return sorted(sorted(pool, key=lambda j: (dist[centre, j], j))[:k])


def _resolve_nodes(graph, spec, exclude, seed, layout="spread"):
    if isinstance(spec, int):
        if layout == "cluster":
            return cluster_nodes(graph, spec, exclude)
        return spread_nodes(graph, spec, exclude, seed)
    return [graph.node_index(i) for i in spec]


def _counts(spec, total):
    out = []
    for v in spec:
        out.append(int(round(v * total)) if isinstance(v, float) else min(int(v), total))
    return out


class _Stage:
    def __init__(self, evaluation: dict, name: str, path: Path, timing: dict):
        self.evaluation, self.name, self.path, self.timing = evaluation, name, path, timing

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing.setdefault("stages", {})[self.name] = time.perf_counter() - self.t0
        if exc is None:
            self.evaluation.setdefault("completed", []).append(self.name)
            self.path.write_text(json.dumps(self.evaluation, indent=1, sort_keys=True))
        else:
            self.evaluation["error"] = {"stage": self.name, "type": type(exc).__name__, "message": str(exc)}
            self.path.write_text(json.dumps(self.evaluation, indent=1, sort_keys=True))
            write_reports(self.evaluation, self.path.parent)  # keep whatever tables are complete
        return False


def _mean_runs(fn, runs):
    return _summary([fn(r) for r in range(runs)])


def _summary(accs):
    runs = len(accs)
    return {"mean": float(np.mean(accs)), "std": float(np.std(accs, ddof=1)) if runs > 1 else 0.0, "runs": accs}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every stage; returns the evaluation dict (also written as JSON)."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    # output location and worker count never influence results, so they stay out of the record
    ev: dict = {"config": {k: v for k, v in asdict(cfg).items() if k not in ("output_dir", "workers")}}
    ev_path = out / "evaluation.json"
    timing: dict = {}
    dl = DLParams(**cfg.dl)
    gsi = GSIParams(**cfg.gsi)

    with _Stage(ev, "generate", ev_path, timing):
        graph = load_experiment_network(cfg)
        graph.validate()
        matrices = build_matrices(graph)
        physical = sorted(graph.reservoirs) + _resolve_nodes(graph, cfg.physical_sensors, graph.reservoirs,
                                                               derive_seed(cfg.seed, "sensors"))
        physical = list(dict.fromkeys(physical))
        leaks = _resolve_nodes(graph, cfg.leak_nodes, physical, derive_seed(cfg.seed, "leaks"), cfg.leak_layout)
        common = dict(seed=derive_seed(cfg.seed, "simulate"), sensors=physical, steps=cfg.steps_per_day,
                      noise=cfg.roughness_noise, demand_noise=cfg.demand_noise, sensor_noise=cfg.sensor_noise,
                      workers=cfg.workers)
        train = generate_dataset(graph, leaks, cfg.train_magnitudes, cfg.train_days, **common)
        test = generate_dataset(graph, leaks, cfg.test_magnitudes, cfg.test_days, **common)
        ids = graph.ids
        ev["network"] = {"nodes": graph.n_nodes, "pipes": graph.n_pipes}
        ev["physical_sensors"] = [ids[i] for i in physical]
        ev["leak_nodes"] = [ids[i] for i in leaks]
        ev["train_columns"], ev["test_columns"] = train.n_columns, test.n_columns

    with _Stage(ev, "interpolate", ev_path, timing):
        t0 = time.perf_counter()
        dtr = interpolate_residuals(matrices, train.F_leak, train.F_nom, train.labels, physical, gsi,
                                    train.magnitudes, train.days)
        dte = interpolate_residuals(matrices, test.F_leak, test.F_nom, test.labels, physical, gsi,
                                    test.magnitudes, test.days)
        timing["interpolate_s"] = time.perf_counter() - t0
        ev["interpolation_failures"] = {"train": int(np.sum(~dtr.ok)), "test": int(np.sum(~dte.ok))}
        layout = SensorLayout(tuple(physical))

    with _Stage(ev, "select-virtual", ev_path, timing):
        if cfg.candidates is None:
            cands = [j for j in graph.junctions if j not in set(physical)]
        else:
            cands = [graph.node_index(i) for i in cfg.candidates]
        t0 = time.perf_counter()
        ranking = select_virtual_sensors(dtr, layout, cands, dl, cfg.folds, derive_seed(cfg.seed, "select"),
                                         cfg.workers)
        timing["select_s"] = time.perf_counter() - t0
        ev["ranking"] = {"baseline": ranking.baseline,
                         "candidates": [{"node": ids[c.node], "mean": c.mean, "scores": c.scores}
                                        for c in ranking.candidates]}
        ranked = [c.node for c in ranking.candidates]

    test_ok = dte.subset(dte.ok)

    def single_accuracy(virtual):
        def one(r):
            params = DLParams(**{**asdict(dl), "seed": derive_seed(cfg.seed, "single-run", r)})
            model = train_from_interpolated(dtr, layout.with_virtual(virtual), params, gsi, leaks)
            return accuracy(predict(model, test_ok), test_ok.labels)
        return _mean_runs(one, cfg.runs)

    with _Stage(ev, "single-dictionary", ev_path, timing):
        rows = [("None", ())]
        rows += [(ids[c], (c,)) for c in ranked[:cfg.single_top]]
        worst = [c for c in ranked[::-1][:cfg.single_worst] if c not in ranked[:cfg.single_top]]
        rows += [(ids[c], (c,)) for c in worst[::-1]]
        rows += [(", ".join(ids[c] for c in ranked[:k]), tuple(ranked[:k]))
                 for k in cfg.combined_counts if 1 < k <= len(ranked)]
        ev["single_dictionary"] = [{"virtual": name, "n_virtual": len(v), **single_accuracy(v)} for name, v in rows]
        by_magnitude = {}
        params = DLParams(**{**asdict(dl), "seed": derive_seed(cfg.seed, "single-run", 0)})
        base_model = train_from_interpolated(dtr, layout, params, gsi, leaks)
        pred = predict(base_model, test_ok)
        for mag in sorted(set(test_ok.magnitudes.tolist())):
            mask = test_ok.magnitudes == mag
            by_magnitude[str(mag)] = accuracy(pred[mask], test_ok.labels[mask])
        ev["dl_by_magnitude"] = by_magnitude

    with _Stage(ev, "timing", ev_path, timing):
        # mean over seeded trainings, interleaved so machine drift hits every configuration alike
        counts = _counts(cfg.timing_virtual_counts, len(ranked))
        layouts = [layout.with_virtual(tuple(ranked[:k])) for k in counts]
        spent = np.zeros(len(counts))
        for r in range(cfg.timing_repeats):
            params = DLParams(**{**asdict(dl), "seed": derive_seed(cfg.seed, "timing-run", r)})
            for i, lay in enumerate(layouts):
                t0 = time.perf_counter()
                train_from_interpolated(dtr, lay, params, gsi, leaks)
                spent[i] += time.perf_counter() - t0
        timing["training"] = [{"n_virtual": k, "n_rows": lay.size, "seconds": float(t / cfg.timing_repeats)}
                              for k, lay, t in zip(counts, layouts, spent)]

    with _Stage(ev, "multi-dictionary", ev_path, timing):
        # member seeds depend only on (member, vote), so the k-member ensemble is a prefix of the largest one
        kmax = cfg.max_dictionaries
        plans = {"MD-DL": [()] * kmax, "MD-GSI-DL": [()] + [(c,) for c in ranked[:kmax - 1]]}
        accs = {m: {} for m in plans}
        final = {}
        for method, virtuals in plans.items():
            for r in range(cfg.runs):
                ens = train_ensemble(dtr, physical, virtuals, cfg.votes_per_member, dl, gsi,
                                     derive_seed(cfg.seed, "ensemble-run", r), cfg.workers)
                for k in range(1, len(virtuals) + 1):
                    p = predict_ensemble(EnsembleConfig(ens.members[:k], ens.voting), test_ok)
                    accs[method].setdefault(k, []).append(accuracy(p, test_ok.labels))
                    if k == kmax and r == 0:
                        final[method] = p
        md_rows = []
        for k in range(1, kmax + 1):
            row = {"dictionaries": k}
            for method in plans:
                if k in accs[method]:
                    row[method] = _summary(accs[method][k])
            md_rows.append(row)
        ev["multi_dictionary"] = md_rows
        best_pred = final.get("MD-GSI-DL", pred)
        ev["per_node"] = {ids[z]: accuracy(best_pred[test_ok.labels == z], test_ok.labels[test_ok.labels == z])
                          for z in leaks}
        labels_idx = {z: i for i, z in enumerate(leaks)}
        conf = np.zeros((len(leaks), len(leaks)), dtype=int)
        for t, p in zip(test_ok.labels, best_pred):
            conf[labels_idx[int(t)], labels_idx[int(p)]] += 1
        ev["confusion"] = conf.tolist()

    ev_path.write_text(json.dumps(ev, indent=1, sort_keys=True))
    write_reports(ev, out)
    write_timing(timing, out)
    ev["timing"] = timing
    return ev


# -- reports -------------------------------------------------------------------

def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _pct(x) -> str:
    return f"{100.0 * x:.2f}"


def render_reports(ev: dict) -> dict[str, str]:
    """CSV report texts keyed by file name, computed from ``evaluation.json`` only."""
    files = {}
    if "single_dictionary" in ev:
        files["single_dictionary.csv"] = _csv(
            [[r["virtual"], _pct(r["mean"]), _pct(r["std"])] for r in ev["single_dictionary"]],
            ["virtual_nodes", "test_accuracy_pct", "std_pct"])
    if "ranking" in ev:
        files["virtual_sensor_ranking.csv"] = _csv(
            [["None (baseline)", _pct(ev["ranking"]["baseline"])]] +
            [[c["node"], _pct(c["mean"])] for c in ev["ranking"]["candidates"]],
            ["candidate", "validation_accuracy_pct"])
    if "dl_by_magnitude" in ev:
        files["accuracy_by_magnitude.csv"] = _csv(
            [[m, _pct(a)] for m, a in ev["dl_by_magnitude"].items()], ["leak_m3h", "test_accuracy_pct"])
    if "multi_dictionary" in ev:
        rows = [[r["dictionaries"], _pct(r["MD-DL"]["mean"]) if "MD-DL" in r else "",
                 _pct(r["MD-GSI-DL"]["mean"]) if "MD-GSI-DL" in r else ""] for r in ev["multi_dictionary"]]
        files["multi_dictionary.csv"] = _csv(rows, ["dictionaries", "MD-DL_pct", "MD-GSI-DL_pct"])
        dl_single = ev["single_dictionary"][0]["mean"] if "single_dictionary" in ev else float("nan")
        gsi_single = max(r["mean"] for r in ev["single_dictionary"] if r["n_virtual"] == 1) if "single_dictionary" in ev else float("nan")
        files["method_comparison.csv"] = _csv(
            [[r[0], _pct(dl_single), _pct(gsi_single), r[1], r[2]] for r in rows],
            ["dictionaries", "DL_pct", "GSI-DL_best_single_pct", "MD-DL_pct", "MD-GSI-DL_pct"])
    if "per_node" in ev:
        files["accuracy_by_leak_node.csv"] = _csv([[k, _pct(v)] for k, v in ev["per_node"].items()],
                                                  ["leak_node", "test_accuracy_pct"])
    if "confusion" in ev:
        names = ev.get("leak_nodes", [str(i) for i in range(len(ev["confusion"]))])
        files["confusion_matrix.csv"] = _csv([[n] + row for n, row in zip(names, ev["confusion"])],
                                             ["true\\predicted"] + names)
    return files


def write_reports(ev: dict, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in render_reports(ev).items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths


def write_timing(timing: dict, out) -> None:
    """Wall-clock measurements; the only output that differs between reruns."""
    out = Path(out)
    rows = [[r["n_virtual"], r["n_rows"], f"{r['seconds']:.4f}"] for r in timing.get("training", [])]
    (out / "training_time.csv").write_text(_csv(rows, ["n_virtual_sensors", "signal_rows", "training_seconds"]))
    (out / "timing.json").write_text(json.dumps(timing, indent=1))


def report_from_file(evaluation_json, out=None) -> list[Path]:
    path = Path(evaluation_json)
    ev = json.loads(path.read_text())
    if "error" in ev:
        log.warning("evaluation stopped at stage %s: %s", ev["error"]["stage"], ev["error"]["message"])
    return write_reports(ev, out or path.parent)


__all__ = ["ExperimentConfig", "run_experiment", "render_reports", "write_reports", "report_from_file",
           "smoke_config", "spread_nodes", "GsiDlError"]
