"""Primal active-set method for strictly convex inequality-constrained QPs.

    minimise  0.5 z'Gz + c'z   subject to  A z <= b

``G`` is factorised once (Cholesky) and reused for every right-hand side, so
one solver instance can process many problems that differ only in ``c`` and
``b``; this is the situation when interpolating many timesteps on a fixed
sensor layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per inequality, zero off the working set
    working_set: tuple[int, ...]
    iterations: int
    optimal: bool
    kkt: dict

    @property
    def kkt_residual(self) -> float:
        return max(self.kkt.values())


class ActiveSetQP:
    def __init__(self, G: np.ndarray, A: np.ndarray, max_iter: int | None = None):
        self.G = np.asarray(G, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.factor = cho_factor(self.G)
        self.max_iter = max_iter if max_iter is not None else 50 * max(1, self.A.shape[0])

    def _eqp(self, x, c, W):
        """Step and multipliers of the QP restricted to the working set."""
        g = self.G @ x + c
        Gi_g = cho_solve(self.factor, g)
        if not W:
            return -Gi_g, np.zeros(0)
        Aw = self.A[W]
        V = cho_solve(self.factor, Aw.T)
        S = Aw @ V
        lam = np.linalg.solve(S, -Aw @ Gi_g)
        p = -Gi_g - V @ lam
        return p, lam

    def _equality_point(self, c, b, W):
        """Minimiser with the constraints in ``W`` held as equalities."""
        x = np.zeros(self.G.shape[0])
        Aw = self.A[W]
        V = cho_solve(self.factor, Aw.T)
        x0 = -cho_solve(self.factor, c)
        lam = np.linalg.solve(Aw @ V, Aw @ x0 - b[W])
        return x0 - V @ lam

    def solve(self, c: np.ndarray, b: np.ndarray, x0: np.ndarray, working_set=()) -> QPResult:
        """Solve from the feasible point ``x0``.

        ``working_set`` is an optional warm start: if the equality-constrained
        minimiser on those constraints is feasible it replaces ``x0``.
        """
        c = np.asarray(c, dtype=float)
        b = np.asarray(b, dtype=float)
        x = np.array(x0, dtype=float)
        W: list[int] = []
        if working_set:
            ws = sorted(set(int(i) for i in working_set))
            try:
                xw = self._equality_point(c, b, ws)
                if np.all(self.A @ xw - b <= 1e-10 * (1 + np.abs(b))):
                    x, W = xw, ws
            except np.linalg.LinAlgError:
                pass
        lam = np.zeros(0)
        optimal = False
        it = 0
        scale = 1.0 + np.max(np.abs(x))
        while it < self.max_iter:
            it += 1
            try:
                p, lam = self._eqp(x, c, W)
            except np.linalg.LinAlgError:
                # dependent working set: drop the newest constraint
                W.pop()
                continue
            if np.max(np.abs(p)) <= 1e-11 * scale:
                if not W or lam.min() >= -1e-12 * scale:
                    optimal = True
                    break
                W.pop(int(np.argmin(lam)))
                continue
            Ap = self.A @ p
            slack = b - self.A @ x
            step, block = 1.0, -1
            inW = np.zeros(len(b), dtype=bool)
            inW[W] = True
            cand = np.where((Ap > 1e-14 * scale) & ~inW)[0]
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / Ap[cand]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    step, block = float(ratios[k]), int(cand[k])
            x = x + step * p
            if block >= 0:
                W.append(block)
        full = np.zeros(self.A.shape[0])
        if W and lam.size == len(W):
            full[W] = lam
        return QPResult(x, full, tuple(W), it, optimal, self.kkt(x, c, b, full))

    def kkt(self, x, c, b, lam) -> dict:
        r = self.A @ x - b
        return {
            "stationarity": float(np.max(np.abs(self.G @ x + c + self.A.T @ lam))),
            "primal": float(max(0.0, np.max(r))) if r.size else 0.0,
            "dual": float(max(0.0, -np.min(lam))) if lam.size else 0.0,
            "complementarity": float(np.max(np.abs(lam * r))) if r.size else 0.0,
        }
