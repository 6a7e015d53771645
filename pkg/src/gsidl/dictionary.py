"""K-SVD and label-consistent K-SVD dictionary learning.

LC-KSVD is solved through the usual stacking trick: K-SVD runs on
``[Y; sqrt(alpha) H; sqrt(beta) Q]`` with dictionary ``[D; sqrt(alpha) W;
sqrt(beta) A]``, and the three blocks are split apart at the end.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .omp import omp, omp_batch
from .seeding import stage_rng

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


def normalize_columns(D: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(D, axis=0)
    norms[norms < NORM_FLOOR] = 1.0
    return D / norms


def _random_unit(m: int, rng) -> np.ndarray:
    v = rng.standard_normal(m)
    return v / np.linalg.norm(v)


def _atoms_from_columns(Y: np.ndarray, k: int, rng) -> np.ndarray:
    """``k`` unit atoms drawn from the columns of ``Y`` (random fill for zero columns)."""
    m, N = Y.shape
    pick = rng.choice(N, size=k, replace=N < k)
    D = Y[:, pick].copy()
    for j in range(k):
        nrm = np.linalg.norm(D[:, j])
        D[:, j] = D[:, j] / nrm if nrm >= NORM_FLOOR else _random_unit(m, rng)
    return D


def init_dictionary(Y: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    return _atoms_from_columns(np.asarray(Y, float), n, stage_rng(seed, "dictionary-init"))


def class_blocks(n: int, c: int) -> list[np.ndarray]:
    """Split ``n`` atoms into ``c`` contiguous blocks whose sizes differ by at most one."""
    if n < c:
        raise InputError(f"need at least one atom per class (n={n}, c={c})")
    sizes = [n // c + (1 if k < n % c else 0) for k in range(c)]
    edges = np.cumsum([0] + sizes)
    return [np.arange(edges[k], edges[k + 1]) for k in range(c)]


def label_matrices(label_idx: np.ndarray, c: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """One-hot ``H`` (c x N) and block-discriminative ``Q`` (n x N)."""
    N = len(label_idx)
    H = np.zeros((c, N))
    H[label_idx, np.arange(N)] = 1.0
    blocks = class_blocks(n, c)
    Q = np.zeros((n, N))
    for k, blk in enumerate(blocks):
        Q[np.ix_(blk, np.where(label_idx == k)[0])] = 1.0
    return H, Q


def init_dictionary_by_class(Y: np.ndarray, label_idx: np.ndarray, c: int, n: int, seed: int = 0) -> np.ndarray:
    """Seed each class's atom block from that class's own training columns."""
    rng = stage_rng(seed, "dictionary-init")
    D = np.zeros((Y.shape[0], n))
    for k, blk in enumerate(class_blocks(n, c)):
        D[:, blk] = _atoms_from_columns(Y[:, label_idx == k], len(blk), rng)
    return D


@dataclass
class KSVDResult:
    D: np.ndarray
    X: np.ndarray
    history: list[float]
    replaced: int = 0
    norm_history: list[float] = field(default_factory=list, repr=False)


def _canonical_sign(d, x):
    k = int(np.argmax(np.abs(d)))
    if d[k] < 0:
        return -d, -x
    return d, x


def _ksvd(Y: np.ndarray, D: np.ndarray, s: int, iters: int, rng) -> KSVDResult:
    """Core alternating loop; ``D`` must already have unit-norm columns.

    Sparse coding keeps a signal's previous code when the new OMP code is
    worse, so with the exact rank-1 atom updates the objective never increases.
    """
    Y = np.asarray(Y, float)
    D = np.array(D, dtype=float)
    n = D.shape[1]
    X = None
    history: list[float] = []
    norm_dev: list[float] = []
    replaced = 0
    for _ in range(iters):
        X_new = omp_batch(Y, D, s)
        if X is not None:
            err_new = np.sum((Y - D @ X_new) ** 2, axis=0)
            err_old = np.sum((Y - D @ X) ** 2, axis=0)
            keep = err_old < err_new
            X_new[:, keep] = X[:, keep]
        X = X_new
        E = Y - D @ X
        taken: set[int] = set()
        for j in range(n):
            omega = np.flatnonzero(X[j])
            if omega.size == 0:
                # unused atom: swap in the worst-represented signal
                res = np.sum(E ** 2, axis=0)
                res[list(taken)] = -1.0
                w = int(np.argmax(res))
                if res[w] > NORM_FLOOR ** 2:
                    D[:, j] = E[:, w] / np.sqrt(res[w])
                    taken.add(w)
                else:
                    D[:, j] = _random_unit(D.shape[0], rng)
                replaced += 1
                continue
            Ew = E[:, omega] + np.outer(D[:, j], X[j, omega])
            U, S, Vt = np.linalg.svd(Ew, full_matrices=False)
            d, x = _canonical_sign(U[:, 0], S[0] * Vt[0])
            D[:, j] = d
            X[j, omega] = x
            E[:, omega] = Ew - np.outer(d, x)
        history.append(float(np.sum((Y - D @ X) ** 2)))
        norm_dev.append(float(np.max(np.abs(np.linalg.norm(D, axis=0) - 1.0))))
    if X is None:
        X = np.zeros((n, Y.shape[1]))
    return KSVDResult(D, X, history, replaced, norm_dev)


def ksvd_train(Y, n: int, s: int, iters: int = 20, seed: int = 0, init: np.ndarray | None = None) -> KSVDResult:
    """Learn an ``n``-atom dictionary minimising ``||Y - DX||_F^2`` with s-sparse codes."""
    Y = np.asarray(Y, float)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if Y.shape[1] < n:
        warnings.warn(f"{Y.shape[1]} signals for {n} atoms; dictionary is under-determined", stacklevel=2)
    D0 = init_dictionary(Y, n, seed) if init is None else normalize_columns(np.array(init, float))
    return _ksvd(Y, D0, s, iters, stage_rng(seed, "atom-replacement"))


@dataclass
class LCKSVDResult:
    D: np.ndarray
    W: np.ndarray
    A: np.ndarray
    X: np.ndarray
    classes: list
    history: list[float]
    alpha: float
    beta: float
    sparsity: int


def _ridge(T, X, lam=1.0):
    n = X.shape[0]
    return T @ X.T @ np.linalg.inv(X @ X.T + lam * np.eye(n))


def lcksvd_train(Y, labels, n: int, s: int, iters: int = 20, alpha: float = 1.0, beta: float = 1.0,
                 seed: int = 0, classes=None) -> LCKSVDResult:
    """Jointly learn dictionary ``D``, classifier ``W`` and label transform ``A``.

    ``classes`` fixes the label order (default: sorted unique labels); class
    ``k`` owns the ``k``-th contiguous atom block of ``Q``.
    """
    Y = np.asarray(Y, float)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist())) if classes is None else list(classes)
    pos = {c: k for k, c in enumerate(classes)}
    unknown = sorted(set(labels.tolist()) - set(classes))
    if unknown:
        raise InputError(f"labels outside the class list: {unknown}")
    label_idx = np.array([pos[l] for l in labels.tolist()], dtype=int)
    counts = np.bincount(label_idx, minlength=len(classes))
    missing = [classes[k] for k in np.flatnonzero(counts == 0)]
    if missing:
        raise InputError(f"classes without training columns: {missing}")
    c = len(classes)
    if n < c:
        raise InputError(f"need n >= number of classes ({n} < {c})")
    if alpha < 0 or beta < 0:
        raise InputError("alpha and beta must be non-negative")
    H, Q = label_matrices(label_idx, c, n)
    D0 = init_dictionary_by_class(Y, label_idx, c, n, seed)
    X0 = omp_batch(Y, D0, s)
    W0 = _ridge(H, X0)
    A0 = _ridge(Q, X0)
    sa, sb = np.sqrt(alpha), np.sqrt(beta)
    Yaug = np.vstack([Y, sa * H, sb * Q])
    Daug = normalize_columns(np.vstack([D0, sa * W0, sb * A0]))
    res = _ksvd(Yaug, Daug, s, iters, stage_rng(seed, "atom-replacement"))
    m = Y.shape[0]
    D = res.D[:m].copy()
    W = np.zeros((c, n))
    A = np.zeros((n, n))
    X = res.X.copy()
    norms = np.linalg.norm(D, axis=0)
    E = Y - D @ X
    for j in range(n):
        if norms[j] < NORM_FLOOR:
            resid = np.sum(E ** 2, axis=0)
            w = int(np.argmax(resid))
            D[:, j] = E[:, w] / np.sqrt(resid[w]) if resid[w] > 0 else _random_unit(m, stage_rng(seed, "floor", j))
            X[j] = 0.0
            continue
        D[:, j] /= norms[j]
        X[j] *= norms[j]
        if alpha > 0:
            W[:, j] = res.D[m:m + c, j] / sa / norms[j]
        if beta > 0:
            A[:, j] = res.D[m + c:, j] / sb / norms[j]
    return LCKSVDResult(D, W, A, X, classes, res.history, alpha, beta, s)


def classify(y, D, W, s: int) -> int:
    """Class index ``argmax(W x)`` for ``x = omp(y, D, s)``; lowest index on ties."""
    x = omp(y, D, s).dense(D.shape[1])
    return int(np.argmax(W @ x))


def classify_batch(Y, D, W, s: int) -> np.ndarray:
    X = omp_batch(Y, D, s)
    return np.argmax(W @ X, axis=0)
