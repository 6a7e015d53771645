"""Steady-state Hazen-Williams network solver and leak dataset generator.

This is a desk-scale stand-in for an EPANET model: junction heads are found
per timestep by damped Newton iteration on nodal mass balance, with
reservoirs at fixed head and a leak modelled as extra demand at one node.
Flows and demands are in m^3/h, heads and lengths in metres.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .graph import NetworkGraph
from .seeding import derive_seed, parallel_map

log = logging.getLogger(__name__)

HW_EXPONENT = 1.852
FLOW_EXPONENT = 1.0 / HW_EXPONENT
LINEAR_ZONE = 1e-4  # m; flow law is linearised below this head difference
MAX_ITER = 100
HEAD_TOL = 1e-8
DAMPING = 0.5


@dataclass
class ScenarioSpec:
    base_demand: np.ndarray  # (n_nodes,) m^3/h
    multipliers: np.ndarray  # (t,) or (n_nodes, t)
    leak_node: int | None = None
    leak_magnitude: float = 0.0
    step_minutes: float = 60.0
    noise: float = 0.05

    def __post_init__(self):
        self.base_demand = np.asarray(self.base_demand, dtype=float)
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        if (self.leak_node is None) != (self.leak_magnitude == 0):
            raise ConfigurationError("leak_magnitude must be > 0 exactly when a leak node is given")
        if self.leak_magnitude < 0:
            raise ConfigurationError("leak magnitude must be non-negative")
        if self.multipliers.ndim == 0 or self.multipliers.shape[-1] < 1:
            raise ConfigurationError("need at least one timestep")
        if not 0.0 <= self.noise <= 0.2:
            raise ConfigurationError("noise must lie in [0, 0.2]")
        if np.any(self.base_demand < 0):
            raise InputError("demands must be non-negative")

    @property
    def timesteps(self) -> int:
        return self.multipliers.shape[-1]

    def demands(self) -> np.ndarray:
        """(n_nodes, t) demand matrix including the leak."""
        mult = self.multipliers if self.multipliers.ndim == 2 else self.multipliers[None, :]
        d = self.base_demand[:, None] * mult
        if self.leak_node is not None:
            d = d.copy()
            d[self.leak_node] += self.leak_magnitude
        return d


@dataclass
class SimulationResult:
    heads: np.ndarray  # (n_nodes, t)
    flows: np.ndarray  # (n_pipes, t), positive start -> end
    converged: np.ndarray
    iterations: np.ndarray
    conductance: np.ndarray = field(repr=False, default=None)


def hw_resistance(length, diameter, roughness):
    """SI Hazen-Williams resistance ``r`` in ``h = r q^1.852`` (q in m^3/s)."""
    return 10.67 * length / (roughness ** HW_EXPONENT * diameter ** 4.8704)


def pipe_conductances(graph: NetworkGraph, noise: float = 0.0, rng=None) -> np.ndarray:
    """Per-edge ``K`` in ``q = K sign(dh) |dh|^0.54`` with q in m^3/h.

    Each merged segment's resistance is perturbed by ``Uniform[1-noise, 1+noise]``;
    parallel segment conductances add.
    """
    out = np.zeros(graph.n_pipes)
    for k, p in enumerate(graph.pipes):
        for length, diam, rough in p.segments:
            r = hw_resistance(length, diam, rough)
            if noise > 0:
                r *= rng.uniform(1.0 - noise, 1.0 + noise)
            out[k] += 3600.0 * r ** (-FLOW_EXPONENT)
    return out


def _flow(K, dh):
    a = np.abs(dh)
    lin = a < LINEAR_ZONE
    q = np.where(lin, K * LINEAR_ZONE ** (FLOW_EXPONENT - 1) * dh, K * np.sign(dh) * np.maximum(a, LINEAR_ZONE) ** FLOW_EXPONENT)
    dq = np.where(lin, K * LINEAR_ZONE ** (FLOW_EXPONENT - 1), FLOW_EXPONENT * K * np.maximum(a, LINEAR_ZONE) ** (FLOW_EXPONENT - 1))
    return q, dq


class _Network:
    """Index arrays for vectorised mass balance on one graph."""

    def __init__(self, graph: NetworkGraph, K: np.ndarray):
        self.n = graph.n_nodes
        self.start = np.array([p.start for p in graph.pipes], dtype=int)
        self.end = np.array([p.end for p in graph.pipes], dtype=int)
        self.K = K
        self.fixed = np.array(graph.reservoirs, dtype=int)
        self.free = np.array(graph.junctions, dtype=int)
        self.fixed_head = np.array([graph.nodes[i].elevation for i in self.fixed])
        n = self.n
        self._jac_index = np.concatenate([self.end * n + self.start, self.end * n + self.end,
                                          self.start * n + self.end, self.start * n + self.start])

    def balance(self, h, demand):
        """Net inflow minus demand at every node, and the Jacobian wrt heads."""
        q, dq = _flow(self.K, h[self.start] - h[self.end])
        n = self.n
        F = np.bincount(self.end, q, n) - np.bincount(self.start, q, n) - demand
        J = np.bincount(self._jac_index, np.concatenate([dq, -dq, dq, -dq]), n * n).reshape(n, n)
        return F, J, q

    def initial_guess(self, demand):
        # linear flow law with unit head loss scale
        h = np.zeros(self.n)
        h[self.fixed] = self.fixed_head
        if len(self.free) == 0:
            return h
        Lw = np.zeros((self.n, self.n))
        np.add.at(Lw, (self.start, self.end), -self.K)
        np.add.at(Lw, (self.end, self.start), -self.K)
        np.add.at(Lw, (self.start, self.start), self.K)
        np.add.at(Lw, (self.end, self.end), self.K)
        A = Lw[np.ix_(self.free, self.free)]
        b = -demand[self.free] - Lw[np.ix_(self.free, self.fixed)] @ self.fixed_head
        h[self.free] = np.linalg.solve(A, b)
        return h

    def solve(self, demand, h0=None):
        h = self.initial_guess(demand) if h0 is None else h0.copy()
        h[self.fixed] = self.fixed_head
        F, J, q = self.balance(h, demand)
        fnorm = np.max(np.abs(F[self.free])) if len(self.free) else 0.0
        scale = max(1.0, float(np.sum(np.abs(demand))))
        for it in range(1, MAX_ITER + 1):
            if len(self.free) == 0:
                return h, q, True, 0
            A = J[np.ix_(self.free, self.free)]
            try:
                step = np.linalg.solve(A, -F[self.free])
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A, -F[self.free], rcond=None)[0]
            t = 1.0
            while True:
                trial = h.copy()
                trial[self.free] += t * step
                F_t, J_t, q_t = self.balance(trial, demand)
                tnorm = np.max(np.abs(F_t[self.free]))
                if tnorm <= fnorm or t < 1e-6:
                    break
                t *= DAMPING
            h, F, J, q, fnorm = trial, F_t, J_t, q_t, tnorm
            # residual floor: what head rounding allows on very conductive pipes
            floor = 16 * np.finfo(float).eps * np.max(np.abs(h)) * np.max(np.abs(np.diag(J)))
            if np.max(np.abs(t * step)) < HEAD_TOL and fnorm < max(1e-10 * scale, floor):
                return h, q, True, it
        return h, q, bool(fnorm < 1e-8), MAX_ITER


def simulate(graph: NetworkGraph, spec: ScenarioSpec, seed: int = 0) -> SimulationResult:
    """Solve every timestep of one scenario.

    ``seed`` drives the per-scenario roughness draw, so two scenarios with the
    same seed see identical pipes.  Non-converged timesteps are flagged, not
    raised.
    """
    graph.validate()
    if not graph.reservoirs:
        raise ConfigurationError("simulation needs at least one reservoir")
    if spec.base_demand.shape != (graph.n_nodes,):
        raise ConfigurationError("base_demand must have one entry per node")
    rng = np.random.default_rng(seed)
    K = pipe_conductances(graph, spec.noise, rng)
    net = _Network(graph, K)
    D = spec.demands()
    D[net.fixed] = 0.0
    t = D.shape[1]
    heads = np.zeros((graph.n_nodes, t))
    flows = np.zeros((graph.n_pipes, t))
    conv = np.zeros(t, dtype=bool)
    iters = np.zeros(t, dtype=int)
    h_prev = None
    for k in range(t):
        # consecutive timesteps are close, so the last converged state is a good start
        h, q, ok, it = net.solve(D[:, k], h_prev)
        h_prev = h if ok else None
        if not ok:
            log.warning("timestep %d did not converge", k)
        heads[:, k], flows[:, k], conv[k], iters[k] = h, q, ok, it
    return SimulationResult(heads, flows, conv, iters, K)


def mass_balance(graph: NetworkGraph, result: SimulationResult, spec: ScenarioSpec) -> np.ndarray:
    """Junction mass-balance error (m^3/h) per node and timestep."""
    net = _Network(graph, result.conductance)
    D = spec.demands()
    err = np.zeros_like(result.heads)
    for k in range(result.heads.shape[1]):
        err[:, k] = net.balance(result.heads[:, k], D[:, k])[0]
    return err[net.free]


# -- demand template ----------------------------------------------------------

def daily_pattern(steps: int, step_minutes: float | None = None) -> np.ndarray:
    """Default 24-hour demand multiplier: morning and evening peaks, night low."""
    step_minutes = 1440.0 / steps if step_minutes is None else step_minutes
    hours = (np.arange(steps) * step_minutes / 60.0) % 24.0
    return 1.0 + 0.35 * np.sin(2 * np.pi * (hours - 7.0) / 24.0) + 0.15 * np.sin(4 * np.pi * (hours - 4.0) / 24.0)


def default_base_demand(graph: NetworkGraph, seed: int = 0, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = np.zeros(graph.n_nodes)
    d[graph.junctions] = rng.uniform(low, high, size=len(graph.junctions))
    return d


# -- datasets -------------------------------------------------------------------

@dataclass
class LeakDataset:
    """Column-aligned leak and nominal sensor readings.

    Columns are ordered leak node -> magnitude -> timestep; column ``j`` of
    ``F_nom`` shares demands, time of day and roughness draw with column ``j``
    of ``F_leak``.
    """

    F_leak: np.ndarray
    F_nom: np.ndarray
    labels: np.ndarray  # leak node index per column
    magnitudes: np.ndarray
    days: np.ndarray
    steps: np.ndarray
    sensors: tuple[int, ...] | None = None
    converged: np.ndarray | None = None

    @property
    def n_columns(self) -> int:
        return self.F_leak.shape[1]

    def subset(self, mask) -> "LeakDataset":
        conv = None if self.converged is None else self.converged[mask]
        return LeakDataset(self.F_leak[:, mask], self.F_nom[:, mask], self.labels[mask], self.magnitudes[mask],
                           self.days[mask], self.steps[mask], self.sensors, conv)

    def metadata(self) -> dict:
        return {"labels": self.labels.tolist(), "magnitudes": self.magnitudes.tolist(), "days": self.days.tolist(),
                "steps": self.steps.tolist(), "sensors": None if self.sensors is None else list(self.sensors)}


def _scenario_task(args, graph, base_demand, steps, noise, demand_noise, sensor_noise, master):
    node, magnitude, day = args
    seed = derive_seed(master, "scenario", node, day)
    rng = np.random.default_rng(derive_seed(master, "demand", node, day))
    mult = daily_pattern(steps)[None, :] * (1.0 + demand_noise * rng.standard_normal((graph.n_nodes, steps)))
    mult = np.maximum(mult, 0.0)
    nominal = ScenarioSpec(base_demand, mult, None, 0.0, 1440.0 / steps, noise)
    nom = simulate(graph, nominal, seed)
    if magnitude > 0:
        leaky = ScenarioSpec(base_demand, mult, node, magnitude, 1440.0 / steps, noise)
        leak = simulate(graph, leaky, seed)
    else:
        leak = nom
    h_nom, h_leak = nom.heads, leak.heads
    if sensor_noise > 0:
        srng = np.random.default_rng(derive_seed(master, "sensor", node, day))
        h_nom = h_nom + sensor_noise * srng.standard_normal(h_nom.shape)
        h_leak = h_leak + sensor_noise * srng.standard_normal(h_leak.shape) if magnitude > 0 else h_nom
    return h_leak, h_nom, nom.converged & leak.converged


def generate_dataset(graph: NetworkGraph, leak_nodes, magnitudes, days=None, seed: int = 0, *,
                     sensors=None, steps: int = 24, base_demand=None, noise: float = 0.05,
                     demand_noise: float = 0.03, sensor_noise: float = 0.0, workers: int = 1) -> LeakDataset:
    """Simulate every (leak node, magnitude) scenario with a matched nominal run.

    ``days[k]`` is the day on which magnitude ``k`` is applied; it keys the
    demand noise and roughness draw, so leak and nominal runs of the same
    column share boundary conditions.  With ``sensors`` given, only those rows
    are returned.
    """
    leak_nodes = [int(z) for z in leak_nodes]
    magnitudes = [float(m) for m in magnitudes]
    days = list(range(len(magnitudes))) if days is None else [int(d) for d in days]
    if not leak_nodes:
        raise ConfigurationError("need at least one leak node")
    if not magnitudes:
        raise ConfigurationError("need at least one leak magnitude")
    if len(days) != len(magnitudes):
        raise ConfigurationError(f"{len(magnitudes)} magnitudes but {len(days)} days in the schedule")
    junctions = set(graph.junctions)
    if any(z not in junctions for z in leak_nodes):
        raise ConfigurationError("leak nodes must be junctions")
    if base_demand is None:
        base_demand = default_base_demand(graph, derive_seed(seed, "base-demand"))
    tasks = [(z, m, d) for z in leak_nodes for m, d in zip(magnitudes, days)]
    fn = partial(_scenario_task, graph=graph, base_demand=np.asarray(base_demand, float), steps=steps,
                 noise=noise, demand_noise=demand_noise, sensor_noise=sensor_noise, master=seed)
    results = parallel_map(fn, tasks, workers)
    rows = slice(None) if sensors is None else list(sensors)
    F_leak = np.concatenate([r[0][rows] for r in results], axis=1)
    F_nom = np.concatenate([r[1][rows] for r in results], axis=1)
    conv = np.concatenate([r[2] for r in results])
    labels = np.repeat([z for z, _, _ in tasks], steps)
    mags = np.repeat([m for _, m, _ in tasks], steps)
    dys = np.repeat([d for _, _, d in tasks], steps)
    stp = np.tile(np.arange(steps), len(tasks))
    return LeakDataset(F_leak, F_nom, labels, mags, dys, stp, None if sensors is None else tuple(sensors), conv)


def save_dataset(ds: LeakDataset, prefix) -> None:
    """Write ``<prefix>_leak.csv``, ``<prefix>_nom.csv`` and ``<prefix>.json``."""
    prefix = Path(prefix)
    np.savetxt(f"{prefix}_leak.csv", ds.F_leak, delimiter=",", fmt="%.10f")
    np.savetxt(f"{prefix}_nom.csv", ds.F_nom, delimiter=",", fmt="%.10f")
    Path(f"{prefix}.json").write_text(json.dumps(ds.metadata()))


def load_dataset(prefix) -> LeakDataset:
    meta = json.loads(Path(f"{prefix}.json").read_text())
    F_leak = np.loadtxt(f"{prefix}_leak.csv", delimiter=",", ndmin=2)
    F_nom = np.loadtxt(f"{prefix}_nom.csv", delimiter=",", ndmin=2)
    sensors = None if meta.get("sensors") is None else tuple(meta["sensors"])
    return LeakDataset(F_leak, F_nom, np.array(meta["labels"]), np.array(meta["magnitudes"], float),
                       np.array(meta["days"]), np.array(meta["steps"]), sensors)
