"""Graph-state interpolation of hydraulic heads from sparse sensors.

The full head vector ``f`` is estimated by

    min  0.5 * (f' L Phi^-2 L f + alpha * gamma^2)
    s.t. B f <= gamma (per edge),  gamma >= gamma_floor,  f[sensors] = readings

The pinned heads are substituted out, leaving a strictly convex QP over the
unmeasured heads and ``gamma`` that is solved by :class:`ActiveSetQP`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .graph import StructuralMatrices
from .qp import ActiveSetQP

DEFAULT_ALPHA = 10.0
DEFAULT_GAMMA_FLOOR = 1e-6


@dataclass(frozen=True)
class InterpolationProblem:
    matrices: StructuralMatrices
    sensors: tuple[int, ...]
    measurements: np.ndarray
    alpha_slack: float = DEFAULT_ALPHA
    gamma_floor: float = DEFAULT_GAMMA_FLOOR

    def __post_init__(self):
        if not self.alpha_slack > 0 or not self.gamma_floor > 0:
            raise InputError("alpha_slack and gamma_floor must be positive")
        if len(self.sensors) == 0:
            raise InputError("need at least one measurement")
        if len(self.sensors) != len(np.atleast_1d(self.measurements)):
            raise InputError("one measurement per sensor required")


@dataclass
class InterpolationSolution:
    heads: np.ndarray
    gamma: float
    objective: float
    kkt_residual: float
    iterations: int
    optimal: bool = True
    working_set: tuple[int, ...] = field(default=(), repr=False)
    kkt: dict = field(default_factory=dict, repr=False)

    def diagnostics(self) -> dict:
        return {"objective": self.objective, "gamma": self.gamma, "kkt_residual": self.kkt_residual,
                "iterations": self.iterations, "optimal": self.optimal, "kkt": self.kkt}


def _dedupe(sensors, values):
    sensors = [int(s) for s in sensors]
    values = np.atleast_1d(np.asarray(values, dtype=float))
    seen: dict[int, float] = {}
    for s, v in zip(sensors, values):
        if s in seen and seen[s] != v:
            raise InputError(f"conflicting measurements for node {s}: {seen[s]} vs {v}")
        seen[s] = v
    return tuple(seen), np.array(list(seen.values()))


class GraphStateInterpolator:
    """Reusable solver for one (matrices, sensor set, alpha) combination."""

    def __init__(self, matrices: StructuralMatrices, sensors, alpha: float = DEFAULT_ALPHA,
                 gamma_floor: float = DEFAULT_GAMMA_FLOOR):
        if not alpha > 0 or not gamma_floor > 0:
            raise InputError("alpha and gamma_floor must be positive")
        self.matrices = matrices
        self.sensors = tuple(dict.fromkeys(int(s) for s in sensors))
        if not self.sensors:
            raise InputError("need at least one measurement")
        n = matrices.n_nodes
        if any(not 0 <= s < n for s in self.sensors):
            raise InputError("sensor index out of range")
        self.alpha = float(alpha)
        self.gamma_floor = float(gamma_floor)
        self.free = np.array([i for i in range(n) if i not in set(self.sensors)], dtype=int)
        self.pinned = np.array(self.sensors, dtype=int)
        M = matrices.laplacian / matrices.phi[:, None]  # Phi^-1 L
        self.hessian = M.T @ M
        H = self.hessian
        nu = len(self.free)
        G = np.zeros((nu + 1, nu + 1))
        G[:nu, :nu] = H[np.ix_(self.free, self.free)]
        G[nu, nu] = self.alpha
        self._H_fp = H[np.ix_(self.free, self.pinned)]
        B = matrices.incidence
        self._B_p = B[:, self.pinned]
        n_edges = B.shape[0]
        A = np.zeros((n_edges + 1, nu + 1))
        A[:n_edges, :nu] = B[:, self.free]
        A[:n_edges, nu] = -1.0
        A[n_edges, nu] = -1.0
        self.qp = ActiveSetQP(G, A)
        self._warm: tuple[int, ...] = ()

    @property
    def n_free(self) -> int:
        return len(self.free)

    def _objective(self, f, gamma):
        return 0.5 * (f @ self.hessian @ f + self.alpha * gamma ** 2)

    def solve(self, values, warm_start: bool = False) -> InterpolationSolution:
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.sensors),):
            raise InputError(f"expected {len(self.sensors)} measurements, got {values.shape}")
        n = self.matrices.n_nodes
        f = np.zeros(n)
        f[self.pinned] = values
        nu = self.n_free
        if nu == 0:
            Bf = self.matrices.incidence @ f
            gamma = max(self.gamma_floor, float(Bf.max()) if Bf.size else 0.0)
            return InterpolationSolution(f, gamma, self._objective(f, gamma), 0.0, 0, True)
        c = np.zeros(nu + 1)
        c[:nu] = self._H_fp @ values
        b = np.empty(self.qp.A.shape[0])
        b[:-1] = -self._B_p @ values
        b[-1] = -self.gamma_floor
        # feasible start: unconstrained heads, gamma large enough for every edge
        fu = -np.linalg.solve(self.qp.G[:nu, :nu], c[:nu])
        f[self.free] = fu
        Bf = self.matrices.incidence @ f
        x0 = np.append(fu, max(self.gamma_floor, float(Bf.max()) if Bf.size else 0.0))
        res = self.qp.solve(c, b, x0, self._warm if warm_start else ())
        if warm_start:
            self._warm = res.working_set
        f[self.free] = res.x[:nu]
        gamma = float(res.x[nu])
        return InterpolationSolution(f, gamma, self._objective(f, gamma), res.kkt_residual, res.iterations,
                                     res.optimal, res.working_set, res.kkt)

    def solve_many(self, readings: np.ndarray, warm_start: bool = True):
        """Interpolate every column of ``readings`` (sensors x N).

        Returns the (n_nodes x N) head matrix and a boolean mask of columns
        whose QP terminated optimally.
        """
        readings = np.asarray(readings, dtype=float)
        out = np.zeros((self.matrices.n_nodes, readings.shape[1]))
        ok = np.zeros(readings.shape[1], dtype=bool)
        self._warm = ()
        for j in range(readings.shape[1]):
            sol = self.solve(readings[:, j], warm_start=warm_start)
            out[:, j] = sol.heads
            ok[j] = sol.optimal and np.all(np.isfinite(sol.heads))
        return out, ok


def interpolate(problem: InterpolationProblem) -> InterpolationSolution:
    sensors, values = _dedupe(problem.sensors, problem.measurements)
    solver = GraphStateInterpolator(problem.matrices, sensors, problem.alpha_slack, problem.gamma_floor)
    return solver.solve(values)


def local_estimate(matrices: StructuralMatrices, heads, i: int) -> float:
    """Degree-normalised neighbour average ``(1/phi_i) * omega_i . f``."""
    phi = matrices.phi[i]
    if phi <= 0:
        raise InputError(f"node {i} is isolated (zero degree)")
    return float(matrices.omega[i] @ np.asarray(heads, dtype=float) / phi)


def alpha_sweep(matrices: StructuralMatrices, sensors, values, alphas, gamma_floor: float = DEFAULT_GAMMA_FLOOR):
    """Objective decomposition across slack weights, for tuning ``alpha``."""
    rows = []
    for a in alphas:
        solver = GraphStateInterpolator(matrices, sensors, a, gamma_floor)
        sol = solver.solve(np.asarray(values, dtype=float))
        smooth = 0.5 * sol.heads @ solver.hessian @ sol.heads
        rows.append({"alpha": float(a), "gamma": sol.gamma, "smoothness": float(smooth),
                     "slack": 0.5 * a * sol.gamma ** 2, "objective": sol.objective})
    return rows
