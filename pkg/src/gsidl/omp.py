"""Orthogonal matching pursuit, single-signal and batched."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RESIDUAL_TOL = 1e-12


@dataclass
class SparseCode:
    support: np.ndarray  # atom indices, in selection order
    coefficients: np.ndarray

    def dense(self, n_atoms: int) -> np.ndarray:
        x = np.zeros(n_atoms)
        x[self.support] = self.coefficients
        return x


def omp(y, D, s: int) -> SparseCode:
    """Greedy s-sparse code of ``y`` over the unit-norm columns of ``D``.

    Each step adds the atom most correlated (in absolute value) with the
    residual, lowest index on ties, then refits all selected coefficients by
    least squares.  Stops early once the residual norm drops below 1e-12.
    """
    y = np.asarray(y, dtype=float)
    D = np.asarray(D, dtype=float)
    m, n = D.shape
    if y.shape != (m,):
        raise ValueError(f"signal has shape {y.shape}, dictionary rows {m}")
    if not 1 <= s <= min(m, n):
        raise ValueError(f"sparsity {s} outside [1, {min(m, n)}]")
    support: list[int] = []
    coef = np.zeros(0)
    r = y.copy()
    for _ in range(s):
        if np.linalg.norm(r) < RESIDUAL_TOL:
            break
        corr = np.abs(D.T @ r)
        corr[support] = -1.0
        k = int(np.argmax(corr))
        if corr[k] <= RESIDUAL_TOL:
            break
        support.append(k)
        coef = np.linalg.lstsq(D[:, support], y, rcond=None)[0]
        r = y - D[:, support] @ coef
    return SparseCode(np.array(support, dtype=int), coef)


def omp_batch(Y, D, s: int) -> np.ndarray:
    """OMP on every column of ``Y``; returns the dense (n_atoms x N) code matrix.

    Same selection rule and stopping test as :func:`omp`, vectorised across
    signals through the Gram matrix.
    """
    Y = np.asarray(Y, dtype=float)
    D = np.asarray(D, dtype=float)
    m, n = D.shape
    if Y.ndim != 2 or Y.shape[0] != m:
        raise ValueError(f"signals have shape {Y.shape}, dictionary rows {m}")
    if not 1 <= s <= min(m, n):
        raise ValueError(f"sparsity {s} outside [1, {min(m, n)}]")
    N = Y.shape[1]
    X = np.zeros((n, N))
    if N == 0:
        return X
    gram = D.T @ D
    DtY = D.T @ Y
    sel = np.zeros((N, s), dtype=int)
    active = np.ones(N, dtype=bool)
    R = Y.copy()
    for step in range(s):
        active &= np.linalg.norm(R, axis=0) >= RESIDUAL_TOL
        idx = np.where(active)[0]
        if idx.size == 0:
            break
        corr = np.abs(D.T @ R[:, idx])
        if step:
            corr[sel[idx, :step].T, np.arange(idx.size)[None, :]] = -1.0
        best = np.argmax(corr, axis=0)
        good = corr[best, np.arange(idx.size)] > RESIDUAL_TOL
        active[idx[~good]] = False
        idx, best = idx[good], best[good]
        if idx.size == 0:
            break
        sel[idx, step] = best
        S = sel[idx, : step + 1]
        G_ss = gram[S[:, :, None], S[:, None, :]]
        rhs = DtY[S, idx[:, None]]
        try:
            coef = np.linalg.solve(G_ss, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            coef = np.stack([np.linalg.lstsq(D[:, S[i]], Y[:, j], rcond=None)[0] for i, j in enumerate(idx)])
        X[:, idx] = 0.0
        X[S, idx[:, None]] = coef
        R[:, idx] = Y[:, idx] - D @ X[:, idx]
    return X
