"""Leak localisation by interpolated residuals and label-consistent dictionaries.

Training (per model): interpolate nominal and leaky sensor columns to full
head vectors, take residuals ``nominal - leak``, keep the physical sensor rows
followed by the chosen virtual sensor rows, and fit LC-KSVD on the labelled
result.  Classification repeats the same assembly for one sample pair, codes
it with OMP and picks ``argmax(W x)``.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dictionary import classify_batch, lcksvd_train, normalize_columns
from .errors import ConfigurationError, DegenerateDatasetError, TrainingAbortedError
from .graph import SensorLayout, StructuralMatrices
from .gsi import DEFAULT_ALPHA, DEFAULT_GAMMA_FLOOR, GraphStateInterpolator
from .omp import omp
from .seeding import derive_seed, parallel_map

log = logging.getLogger(__name__)

MODEL_SCHEMA = "gsidl-model/1"
ENSEMBLE_SCHEMA = "gsidl-ensemble/1"
NO_LEAK_THRESHOLD = 1e-3  # m, on the assembled residual norm
MAX_EXCLUDED_FRACTION = 0.10


@dataclass
class DLParams:
    n_atoms: int | None = None  # default 8 atoms per class
    sparsity: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    iters: int = 20
    normalize: bool = False
    seed: int = 0

    def atoms_for(self, n_classes: int) -> int:
        return self.n_atoms if self.n_atoms is not None else 8 * n_classes


@dataclass
class GSIParams:
    alpha: float = DEFAULT_ALPHA
    gamma_floor: float = DEFAULT_GAMMA_FLOOR


@dataclass
class GsiDlModel:
    D: np.ndarray
    W: np.ndarray
    A: np.ndarray
    classes: list[int]  # leak node index per classifier row
    layout: SensorLayout
    dl: DLParams
    gsi: GSIParams = field(default_factory=GSIParams)
    history: list[float] = field(default_factory=list)
    excluded: int = 0

    @property
    def sparsity(self) -> int:
        return min(self.dl.sparsity, self.D.shape[0], self.D.shape[1])

    def predict_residuals(self, Y_rv: np.ndarray) -> np.ndarray:
        """Leak node for every column of an assembled residual matrix."""
        if Y_rv.shape[0] != self.layout.size:
            raise ConfigurationError(f"residual rows {Y_rv.shape[0]} do not match the model layout ({self.layout.size})")
        if self.dl.normalize:
            Y_rv = normalize_columns(Y_rv)
        idx = classify_batch(Y_rv, self.D, self.W, self.sparsity)
        return np.asarray(self.classes)[idx]

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "D": self.D.tolist(), "W": self.W.tolist(), "A": self.A.tolist(),
                "classes": [int(c) for c in self.classes],
                "layout": {"physical": list(self.layout.physical), "virtual": list(self.layout.virtual)},
                "dl": asdict(self.dl), "gsi": asdict(self.gsi), "history": self.history, "excluded": self.excluded}

    @classmethod
    def from_dict(cls, d: dict) -> "GsiDlModel":
        if d.get("schema") != MODEL_SCHEMA:
            raise ConfigurationError(f"unsupported model schema {d.get('schema')!r}")
        return cls(np.array(d["D"], float), np.array(d["W"], float), np.array(d["A"], float), list(d["classes"]),
                   SensorLayout(tuple(d["layout"]["physical"]), tuple(d["layout"]["virtual"])),
                   DLParams(**d["dl"]), GSIParams(**d["gsi"]), list(d.get("history", [])), int(d.get("excluded", 0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "GsiDlModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- residuals -----------------------------------------------------------------

@dataclass
class ResidualDataset:
    Y: np.ndarray  # assembled rows: physical then virtual
    labels: np.ndarray
    layout: SensorLayout


@dataclass
class InterpolatedResiduals:
    """Full-network residuals ``F_nom - F_leak`` after interpolating both sides."""

    Y: np.ndarray  # (n_nodes, psi)
    labels: np.ndarray
    ok: np.ndarray  # columns whose two interpolations both solved optimally
    physical: tuple[int, ...]
    magnitudes: np.ndarray | None = None
    days: np.ndarray | None = None

    def assemble(self, layout: SensorLayout, columns=None) -> ResidualDataset:
        if tuple(layout.physical) != tuple(self.physical):
            raise ConfigurationError("layout physical sensors differ from the interpolated data")
        cols = slice(None) if columns is None else columns
        return ResidualDataset(self.Y[list(layout.rows)][:, cols], self.labels[cols], layout)

    def subset(self, mask) -> "InterpolatedResiduals":
        pick = lambda a: None if a is None else a[mask]
        return InterpolatedResiduals(self.Y[:, mask], self.labels[mask], self.ok[mask], self.physical,
                                     pick(self.magnitudes), pick(self.days))


def interpolate_readings(matrices: StructuralMatrices, readings: np.ndarray, physical, gsi: GSIParams | None = None,
                         warm_start: bool = True):
    gsi = gsi or GSIParams()
    solver = GraphStateInterpolator(matrices, physical, gsi.alpha, gsi.gamma_floor)
    return solver.solve_many(readings, warm_start=warm_start)


def residuals(F_nom: np.ndarray, F_leak: np.ndarray) -> np.ndarray:
    return np.asarray(F_nom, float) - np.asarray(F_leak, float)


def interpolate_residuals(matrices: StructuralMatrices, F_leak, F_nom, labels, physical,
                          gsi: GSIParams | None = None, magnitudes=None, days=None) -> InterpolatedResiduals:
    F_leak = np.asarray(F_leak, float)
    F_nom = np.asarray(F_nom, float)
    if F_leak.shape != F_nom.shape:
        raise ConfigurationError("leak and nominal readings must be column-aligned")
    if F_leak.shape[0] != len(physical):
        raise ConfigurationError(f"readings have {F_leak.shape[0]} rows for {len(physical)} physical sensors")
    full_nom, ok_nom = interpolate_readings(matrices, F_nom, physical, gsi)
    full_leak, ok_leak = interpolate_readings(matrices, F_leak, physical, gsi)
    return InterpolatedResiduals(residuals(full_nom, full_leak), np.asarray(labels), ok_nom & ok_leak,
                                 tuple(int(p) for p in physical),
                                 None if magnitudes is None else np.asarray(magnitudes),
                                 None if days is None else np.asarray(days))


# -- training / classification -------------------------------------------------

def train_on_residuals(data: ResidualDataset, dl: DLParams, classes: Sequence[int] | None = None,
                       gsi: GSIParams | None = None, excluded: int = 0) -> GsiDlModel:
    Y = data.Y
    if not np.any(np.abs(Y) > 0):
        raise DegenerateDatasetError("degenerate dataset: all residuals are zero")
    if dl.normalize:
        Y = normalize_columns(Y)
    classes = sorted(set(np.asarray(data.labels).tolist())) if classes is None else list(classes)
    n = dl.atoms_for(len(classes))
    s = min(dl.sparsity, Y.shape[0], n)
    res = lcksvd_train(Y, data.labels, n, s, dl.iters, dl.alpha, dl.beta, dl.seed, classes)
    return GsiDlModel(res.D, res.W, res.A, [int(c) for c in res.classes], data.layout, dl, gsi or GSIParams(),
                      res.history, excluded)


def _usable(data: InterpolatedResiduals) -> np.ndarray:
    bad = int(np.sum(~data.ok))
    if bad:
        log.warning("%d of %d columns failed interpolation and are excluded", bad, len(data.ok))
    if bad > MAX_EXCLUDED_FRACTION * len(data.ok):
        raise TrainingAbortedError(f"{bad} of {len(data.ok)} columns failed interpolation (> 10 %)")
    return data.ok


def train_from_interpolated(data: InterpolatedResiduals, layout: SensorLayout, dl: DLParams,
                            gsi: GSIParams | None = None, classes=None) -> GsiDlModel:
    ok = _usable(data)
    assembled = data.assemble(layout, ok)
    return train_on_residuals(assembled, dl, classes, gsi, int(np.sum(~ok)))


def train_gsi_dl(F_leak, F_nom, labels, layout: SensorLayout, matrices: StructuralMatrices,
                 dl: DLParams | None = None, gsi: GSIParams | None = None) -> GsiDlModel:
    """Interpolate both training sets, build residuals, assemble rows and fit LC-KSVD."""
    dl = dl or DLParams()
    gsi = gsi or GSIParams()
    layout.check(matrices.n_nodes)
    data = interpolate_residuals(matrices, F_leak, F_nom, labels, layout.physical, gsi)
    return train_from_interpolated(data, layout, dl, gsi)


def classify_gsi_dl(f_leak, f_nom, model: GsiDlModel, matrices: StructuralMatrices) -> int:
    """Leak node for one (leaky, nominal) sensor-reading pair."""
    f_leak = np.asarray(f_leak, float)
    f_nom = np.asarray(f_nom, float)
    k = len(model.layout.physical)
    if f_leak.shape != (k,) or f_nom.shape != (k,):
        raise ConfigurationError(f"model expects {k} physical readings, got {f_leak.shape} and {f_nom.shape}")
    model.layout.check(matrices.n_nodes)
    solver = GraphStateInterpolator(matrices, model.layout.physical, model.gsi.alpha, model.gsi.gamma_floor)
    y = residuals(solver.solve(f_nom).heads, solver.solve(f_leak).heads)
    y_rv = y[list(model.layout.rows)]
    nrm = np.linalg.norm(y_rv)
    if nrm < NO_LEAK_THRESHOLD:
        warnings.warn(f"no leak suspected: residual norm {nrm:.2e} m is below {NO_LEAK_THRESHOLD} m", stacklevel=2)
    if model.dl.normalize and nrm > 0:
        y_rv = y_rv / nrm
    x = omp(y_rv, model.D, model.sparsity).dense(model.D.shape[1])
    return int(model.classes[int(np.argmax(model.W @ x))])


def predict(model: GsiDlModel, data: InterpolatedResiduals) -> np.ndarray:
    return model.predict_residuals(data.Y[list(model.layout.rows)])


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float(np.mean(pred == truth)) if truth.size else float("nan")


# -- virtual sensor selection ----------------------------------------------------

@dataclass
class CandidateScore:
    node: int
    mean: float
    scores: list[float]


@dataclass
class Ranking:
    baseline: float
    baseline_scores: list[float]
    candidates: list[CandidateScore]

    def top(self, k: int = 1) -> list[int]:
        return [c.node for c in self.candidates[:k]]


def _fold_masks(data: InterpolatedResiduals, folds: int, seed: int):
    """(train, validation) column masks; one held-out day per fold when possible."""
    n = len(data.labels)
    days = np.unique(data.days) if data.days is not None else np.array([])
    out = []
    for k in range(folds):
        if days.size > 1:
            val = data.days == days[k % days.size]
        else:
            rng = np.random.default_rng(derive_seed(seed, "fold-split", k))
            val = np.zeros(n, dtype=bool)
            val[rng.permutation(n)[: max(1, n // 5)]] = True
        out.append((~val, val))
    return out


def _score_task(args):
    data, layout, dl, train, val = args
    model = train_from_interpolated(data.subset(train), layout, dl)
    return accuracy(predict(model, data.subset(val)), data.labels[val])


def select_virtual_sensors(data: InterpolatedResiduals, layout: SensorLayout, candidates: Sequence[int],
                           dl: DLParams | None = None, folds: int = 5, seed: int = 0, workers: int = 1) -> Ranking:
    """Rank single virtual sensors by mean validation accuracy over ``folds`` runs.

    Every candidate in a fold is trained with the same derived seed and split,
    so rankings do not depend on the order of ``candidates``.
    """
    dl = dl or DLParams()
    keep = []
    for c in candidates:
        c = int(c)
        if c in layout.physical:
            warnings.warn(f"candidate {c} is a physical sensor; skipped", stacklevel=2)
        elif c not in keep:
            keep.append(c)
    masks = _fold_masks(data, folds, seed)
    tasks = []
    for node in [None] + keep:
        lay = layout.with_virtual(() if node is None else (node,))
        for k, (tr, va) in enumerate(masks):
            params = DLParams(**{**asdict(dl), "seed": derive_seed(seed, "select-fold", k)})
            tasks.append((data, lay, params, tr, va))
    scores = np.array(parallel_map(_score_task, tasks, workers)).reshape(len(keep) + 1, folds)
    ranked = [CandidateScore(node, float(scores[i + 1].mean()), scores[i + 1].tolist()) for i, node in enumerate(keep)]
    ranked.sort(key=lambda cs: (-cs.mean, cs.node))
    return Ranking(float(scores[0].mean()), scores[0].tolist(), ranked)


# -- voting and ensembles ----------------------------------------------------------

def vote(predictions: Sequence, classes: Sequence | None = None):
    """Plurality winner; ties go to the lowest class (position in ``classes``, else sorted order)."""
    if len(predictions) == 0:
        raise ValueError("cannot vote on an empty list")
    counts = Counter(predictions)
    best = max(counts.values())
    tied = [p for p, k in counts.items() if k == best]
    if classes is not None:
        rank = {c: i for i, c in enumerate(classes)}
        return min(tied, key=lambda p: rank.get(p, len(rank)))
    return min(tied)


@dataclass
class EnsembleMember:
    virtual: tuple[int, ...]
    models: list[GsiDlModel]

    def __post_init__(self):
        if len(self.virtual) > 1:
            raise ConfigurationError("each ensemble member carries at most one virtual sensor")
        if not self.models:
            raise ConfigurationError("ensemble member without models")


@dataclass
class EnsembleConfig:
    members: list[EnsembleMember]
    voting: str = "plurality"

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("empty ensemble")
        if self.voting != "plurality":
            raise ConfigurationError(f"unsupported voting rule {self.voting!r}")
        phys = {tuple(m.layout.physical) for mem in self.members for m in mem.models}
        if len(phys) != 1:
            raise ConfigurationError("all ensemble models must share the physical sensors")

    @property
    def classes(self) -> list[int]:
        return self.members[0].models[0].classes

    @property
    def physical(self) -> tuple[int, ...]:
        return self.members[0].models[0].layout.physical

    def save(self, directory) -> Path:
        """Write one JSON per model plus ``ensemble.json`` manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        members = []
        for i, mem in enumerate(self.members):
            files = []
            for v, model in enumerate(mem.models):
                name = f"member{i:02d}_dict{v:02d}.json"
                model.save(directory / name)
                files.append(name)
            members.append({"virtual": list(mem.virtual), "models": files})
        manifest = directory / "ensemble.json"
        manifest.write_text(json.dumps({"schema": ENSEMBLE_SCHEMA, "voting": self.voting,
                                        "votes_per_member": max(len(m.models) for m in self.members),
                                        "members": members}, indent=1))
        return manifest

    @classmethod
    def load(cls, manifest) -> "EnsembleConfig":
        manifest = Path(manifest)
        d = json.loads(manifest.read_text())
        if d.get("schema") != ENSEMBLE_SCHEMA:
            raise ConfigurationError(f"unsupported ensemble schema {d.get('schema')!r}")
        members = [EnsembleMember(tuple(m["virtual"]), [GsiDlModel.load(manifest.parent / f) for f in m["models"]])
                   for m in d["members"]]
        return cls(members, d.get("voting", "plurality"))


def member_params(dl: DLParams, n_classes: int, seed: int, member: int, vote_idx: int) -> DLParams:
    """Low-level diversity: derived seed and atom count cycling through 8c, 9c, 10c."""
    base = dl.atoms_for(n_classes)
    return DLParams(**{**asdict(dl), "n_atoms": base + (vote_idx % 3) * n_classes,
                       "seed": derive_seed(seed, "ensemble", member, vote_idx)})


def _member_task(args):
    data, layout, params, gsi, classes = args
    return train_from_interpolated(data, layout, params, gsi, classes)


def train_ensemble(data: InterpolatedResiduals, physical, virtuals: Sequence[Sequence[int]], votes_per_member: int = 3,
                   dl: DLParams | None = None, gsi: GSIParams | None = None, seed: int = 0,
                   workers: int = 1) -> EnsembleConfig:
    """One member per entry of ``virtuals`` (empty tuple = classical DL member)."""
    dl = dl or DLParams()
    classes = sorted(set(np.asarray(data.labels).tolist()))
    tasks = []
    for i, v in enumerate(virtuals):
        layout = SensorLayout(tuple(physical), tuple(v))
        for k in range(votes_per_member):
            tasks.append((data, layout, member_params(dl, len(classes), seed, i, k), gsi, classes))
    models = parallel_map(_member_task, tasks, workers)
    members = [EnsembleMember(tuple(v), models[i * votes_per_member:(i + 1) * votes_per_member])
               for i, v in enumerate(virtuals)]
    return EnsembleConfig(members)


def ensemble_votes(ensemble: EnsembleConfig, data: InterpolatedResiduals) -> np.ndarray:
    """(members x psi) member-level votes, each the plurality of that member's dictionaries."""
    classes = ensemble.classes
    out = []
    for mem in ensemble.members:
        low = np.stack([predict(m, data) for m in mem.models])
        out.append([vote(low[:, j].tolist(), classes) for j in range(low.shape[1])])
    return np.array(out)


def predict_ensemble(ensemble: EnsembleConfig, data: InterpolatedResiduals) -> np.ndarray:
    votes = ensemble_votes(ensemble, data)
    classes = ensemble.classes
    return np.array([vote(votes[:, j].tolist(), classes) for j in range(votes.shape[1])])


def classify_ensemble(f_leak, f_nom, ensemble: EnsembleConfig, matrices: StructuralMatrices) -> int:
    """Two-level plurality vote for one (leaky, nominal) reading pair."""
    classes = ensemble.classes
    member_votes = []
    for mem in ensemble.members:
        low = [classify_gsi_dl(f_leak, f_nom, m, matrices) for m in mem.models]
        member_votes.append(vote(low, classes))
    return vote(member_votes, classes)
