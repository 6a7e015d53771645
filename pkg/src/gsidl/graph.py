"""Water network graphs and the structural matrices used by interpolation.

Nodes are stored in canonical order: reservoirs first, then junctions, each
group sorted by id.  Matrix rows/columns follow that order, so layouts are
stable across runs and file round-trips.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import ConfigurationError, NetworkError

JUNCTION = "junction"
RESERVOIR = "reservoir"
NETWORK_SCHEMA = "gsidl-network/1"

DEFAULT_DIAMETER = 0.3  # m
DEFAULT_ROUGHNESS = 130.0  # Hazen-Williams C


@dataclass(frozen=True)
class Node:
    id: str
    kind: str = JUNCTION
    elevation: float = 0.0  # total head for reservoirs
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in (JUNCTION, RESERVOIR):
            raise NetworkError(f"node {self.id!r}: unknown kind {self.kind!r}")

    @property
    def sort_key(self) -> tuple[int, str]:
        return (0 if self.kind == RESERVOIR else 1, self.id)


@dataclass(frozen=True)
class Pipe:
    """An edge between two node indices.

    ``segments`` lists the hydraulic ``(length, diameter, roughness)`` of every
    physical pipe merged into this edge; ``length`` is the equivalent length
    whose inverse is the summed conductance ``sum(1 / length_k)``.
    """

    id: str
    start: int
    end: int
    length: float
    segments: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if not self.segments:
            object.__setattr__(self, "segments", ((self.length, DEFAULT_DIAMETER, DEFAULT_ROUGHNESS),))

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        idx = {}
        for i, node in enumerate(self.nodes):
            if node.id in idx:
                raise NetworkError(f"duplicate node id {node.id!r}")
            idx[node.id] = i
        object.__setattr__(self, "index", idx)
        n = len(self.nodes)
        seen = set()
        for p in self.pipes:
            if not (0 <= p.start < n and 0 <= p.end < n):
                raise NetworkError(f"pipe {p.id!r} references a missing node")
            if p.start == p.end:
                raise NetworkError(f"pipe {p.id!r} is a self-loop")
            if not (p.length > 0 and np.isfinite(p.length)):
                raise NetworkError(f"pipe {p.id!r} has non-positive length {p.length}")
            key = frozenset(p.endpoints)
            if key in seen:
                raise NetworkError(f"parallel pipes between {sorted(key)} must be merged first")
            seen.add(key)

    @classmethod
    def from_records(cls, nodes: Iterable[Node], pipes: Iterable[dict], canonical: bool = True) -> "NetworkGraph":
        """Build a graph from node records and pipe dicts keyed by node id.

        Pipe dicts need ``id``, ``from``, ``to``, ``length`` and may carry
        ``diameter`` and ``roughness``.  Parallel pipes are merged so their
        conductances ``1/length`` add.
        """
        nodes = list(nodes)
        if canonical:
            nodes.sort(key=lambda nd: nd.sort_key)
        idx = {nd.id: i for i, nd in enumerate(nodes)}
        merged: dict[frozenset, dict] = {}
        order = []
        for rec in pipes:
            try:
                a, b = idx[str(rec["from"])], idx[str(rec["to"])]
            except KeyError as exc:
                raise NetworkError(f"pipe {rec.get('id')!r} references unknown node {exc.args[0]!r}") from None
            length = float(rec["length"])
            if not length > 0:
                raise NetworkError(f"pipe {rec.get('id')!r} has non-positive length {length}")
            if a == b:
                raise NetworkError(f"pipe {rec.get('id')!r} is a self-loop")
            seg = (length, float(rec.get("diameter") or DEFAULT_DIAMETER), float(rec.get("roughness") or DEFAULT_ROUGHNESS))
            key = frozenset((a, b))
            if key in merged:
                merged[key]["segments"].append(seg)
            else:
                merged[key] = {"id": str(rec["id"]), "ends": (a, b), "segments": [seg]}
                order.append(key)
        out = []
        for key in order:
            m = merged[key]
            a, b = m["ends"]
            if canonical and a > b:
                a, b = b, a
            conductance = sum(1.0 / s[0] for s in m["segments"])
            out.append(Pipe(m["id"], a, b, 1.0 / conductance, tuple(m["segments"])))
        if canonical:
            out.sort(key=lambda p: (p.start, p.end))
        return cls(tuple(nodes), tuple(out))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_pipes(self) -> int:
        return len(self.pipes)

    @property
    def ids(self) -> list[str]:
        return [nd.id for nd in self.nodes]

    @property
    def reservoirs(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if nd.kind == RESERVOIR]

    @property
    def junctions(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if nd.kind == JUNCTION]

    def node_index(self, node_id: str) -> int:
        try:
            return self.index[str(node_id)]
        except KeyError:
            raise ConfigurationError(f"unknown node id {node_id!r}") from None

    def length_matrix(self) -> csr_matrix:
        rows = [p.start for p in self.pipes] + [p.end for p in self.pipes]
        cols = [p.end for p in self.pipes] + [p.start for p in self.pipes]
        vals = [p.length for p in self.pipes] * 2
        return csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    def unreachable_nodes(self) -> list[str]:
        """Ids of nodes not connected to any reservoir (or to node 0 without reservoirs)."""
        if self.n_nodes == 0:
            return []
        _, comp = connected_components(self.length_matrix(), directed=False)
        roots = self.reservoirs or [0]
        good = {comp[r] for r in roots}
        return [nd.id for nd, c in zip(self.nodes, comp) if c not in good]

    def validate(self) -> None:
        if self.n_nodes == 0:
            raise NetworkError("network has no nodes")
        bad = self.unreachable_nodes()
        if bad:
            raise NetworkError(f"disconnected network; unreachable nodes: {', '.join(bad)}", unreachable=bad)


@dataclass(frozen=True)
class StructuralMatrices:
    omega: np.ndarray
    phi: np.ndarray
    laplacian: np.ndarray
    incidence: np.ndarray
    orientation: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class SensorLayout:
    physical: tuple[int, ...]
    virtual: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "physical", tuple(int(i) for i in self.physical))
        object.__setattr__(self, "virtual", tuple(int(i) for i in self.virtual))
        if not self.physical:
            raise ConfigurationError("sensor layout needs at least one physical sensor")
        if len(set(self.physical)) != len(self.physical) or len(set(self.virtual)) != len(self.virtual):
            raise ConfigurationError("duplicate sensor in layout")
        if set(self.physical) & set(self.virtual):
            raise ConfigurationError("virtual sensors must be disjoint from physical sensors")

    @property
    def rows(self) -> tuple[int, ...]:
        return self.physical + self.virtual

    @property
    def size(self) -> int:
        return len(self.physical) + len(self.virtual)

    def check(self, n_nodes: int) -> None:
        if any(not 0 <= i < n_nodes for i in self.rows):
            raise ConfigurationError(f"sensor index out of range for a {n_nodes}-node network")

    def with_virtual(self, virtual: Sequence[int]) -> "SensorLayout":
        return SensorLayout(self.physical, tuple(virtual))

    def selection_matrix(self, n_nodes: int) -> np.ndarray:
        s = np.zeros((n_nodes, n_nodes))
        s[list(self.physical), list(self.physical)] = 1.0
        return s

    def to_ids(self, graph: NetworkGraph) -> dict:
        return {"physical": [graph.nodes[i].id for i in self.physical],
                "virtual": [graph.nodes[i].id for i in self.virtual]}

    @classmethod
    def from_ids(cls, graph: NetworkGraph, physical: Sequence[str], virtual: Sequence[str] = ()) -> "SensorLayout":
        layout = cls(tuple(graph.node_index(i) for i in physical), tuple(graph.node_index(i) for i in virtual))
        layout.check(graph.n_nodes)
        return layout


def _shortest_path_dag(dist: np.ndarray, graph: NetworkGraph, rtol: float = 1e-9):
    """Directed edges (u, v) lying on some shortest path from the source."""
    scale = rtol * max(1.0, float(np.max(dist[np.isfinite(dist)])))
    succ = [[] for _ in range(graph.n_nodes)]
    for k, p in enumerate(graph.pipes):
        for u, v in (p.endpoints, p.endpoints[::-1]):
            if abs(dist[u] + p.length - dist[v]) <= scale:
                succ[u].append((v, k))
    return succ


def crossing_counts(graph: NetworkGraph) -> np.ndarray:
    """Count, per pipe, shortest-path traversals in each direction.

    Returns an ``(n_pipes, 2)`` integer array: column 0 counts traversals
    ``start -> end``, column 1 ``end -> start``, summed over every shortest
    path from every reservoir to every junction.  All tied shortest paths are
    counted; the counting is done on the shortest-path DAG (paths through an
    edge = paths into its tail times paths out of its head) so it equals
    explicit enumeration without materialising the paths.
    """
    res = graph.reservoirs
    if not res:
        raise ConfigurationError("edge orientation needs at least one reservoir")
    is_junction = np.array([nd.kind == JUNCTION for nd in graph.nodes])
    dists = dijkstra(graph.length_matrix(), directed=False, indices=res)
    counts = np.zeros((graph.n_pipes, 2), dtype=object)
    counts[:] = 0
    for r, dist in zip(res, np.atleast_2d(dists)):
        succ = _shortest_path_dag(dist, graph)
        order = [i for i in np.argsort(dist, kind="stable") if np.isfinite(dist[i])]
        into = [0] * graph.n_nodes  # shortest paths r -> u
        into[r] = 1
        for u in order:
            for v, _ in succ[u]:
                into[v] += into[u]
        out = [0] * graph.n_nodes  # shortest-path continuations u -> any junction
        for u in reversed(order):
            out[u] = int(is_junction[u]) + sum(out[v] for v, _ in succ[u])
        for u in order:
            for v, k in succ[u]:
                col = 0 if graph.pipes[k].start == u else 1
                counts[k, col] += into[u] * out[v]
    return counts


def orient_edges(graph: NetworkGraph) -> list[tuple[int, int]]:
    """Assumed flow direction ``(upstream, downstream)`` for each pipe.

    The direction with more shortest-path crossings wins.  On equal counts the
    edge points from the node with the smaller canonical key (reservoirs
    before junctions, then by id) to the larger one.
    """
    counts = crossing_counts(graph)
    out = []
    for p, (fwd, bwd) in zip(graph.pipes, counts):
        a, b = p.start, p.end
        if fwd > bwd:
            out.append((a, b))
        elif bwd > fwd:
            out.append((b, a))
        elif graph.nodes[a].sort_key <= graph.nodes[b].sort_key:
            out.append((a, b))
        else:
            out.append((b, a))
    return out


def build_matrices(graph: NetworkGraph, orientation: Sequence[tuple[int, int]] | None = None) -> StructuralMatrices:
    """Weighted adjacency, degrees, Laplacian and signed incidence matrix.

    ``omega[i, j] = 1 / length`` for adjacent nodes.  Incidence row ``e`` has
    ``+1`` at the downstream node and ``-1`` at the upstream node, so
    ``(B f)_e`` is the head *rise* along the assumed flow direction.
    """
    graph.validate()
    n = graph.n_nodes
    omega = np.zeros((n, n))
    for p in graph.pipes:
        omega[p.start, p.end] = omega[p.end, p.start] = 1.0 / p.length
    phi = omega.sum(axis=1)
    lap = np.diag(phi) - omega
    if orientation is None:
        orientation = orient_edges(graph)
    inc = np.zeros((graph.n_pipes, n))
    for e, (up, down) in enumerate(orientation):
        inc[e, up] = -1.0
        inc[e, down] = 1.0
    return StructuralMatrices(omega, phi, lap, inc, tuple((int(u), int(d)) for u, d in orientation))


# -- file formats -----------------------------------------------------------

def network_to_dict(graph: NetworkGraph) -> dict:
    nodes = []
    for nd in graph.nodes:
        rec = {"id": nd.id, "kind": nd.kind, "elevation": nd.elevation}
        if nd.position is not None:
            rec["position"] = list(nd.position)
        nodes.append(rec)
    pipes = []
    for p in graph.pipes:
        for k, (length, diam, rough) in enumerate(p.segments):
            pid = p.id if k == 0 else f"{p.id}#{k}"
            pipes.append({"id": pid, "from": graph.nodes[p.start].id, "to": graph.nodes[p.end].id,
                          "length": length, "diameter": diam, "roughness": rough})
    return {"schema": NETWORK_SCHEMA, "nodes": nodes, "pipes": pipes}


def network_from_dict(data: dict) -> NetworkGraph:
    import jsonschema

    schema = json.loads((Path(__file__).parent / "data" / "network.schema.json").read_text())
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        raise NetworkError(f"invalid network file: {exc.message}") from None
    nodes = [Node(str(r["id"]), r.get("kind", JUNCTION), float(r.get("elevation", 0.0)),
                  tuple(r["position"]) if r.get("position") is not None else None)
             for r in data["nodes"]]
    return NetworkGraph.from_records(nodes, data["pipes"])


def load_network(path) -> NetworkGraph:
    path = Path(path)
    if path.is_dir():
        return load_network_csv(path / "nodes.csv", path / "pipes.csv")
    return network_from_dict(json.loads(path.read_text()))


def save_network(graph: NetworkGraph, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(graph), indent=1))


def load_network_csv(nodes_csv, pipes_csv) -> NetworkGraph:
    """Read the minimal CSV pair.

    ``nodes.csv``: ``id,kind,elevation[,x,y]``; ``pipes.csv``:
    ``id,from,to,length[,diameter,roughness]``.
    """
    with open(nodes_csv, newline="") as fh:
        nodes = []
        for r in csv.DictReader(fh):
            pos = None
            if r.get("x") not in (None, "") and r.get("y") not in (None, ""):
                pos = [float(r["x"]), float(r["y"])]
            rec = {"id": r["id"], "kind": r.get("kind") or JUNCTION, "elevation": float(r.get("elevation") or 0.0)}
            if pos is not None:
                rec["position"] = pos
            nodes.append(rec)
    with open(pipes_csv, newline="") as fh:
        pipes = []
        for r in csv.DictReader(fh):
            rec = {"id": r["id"], "from": r["from"], "to": r["to"], "length": float(r["length"])}
            for opt in ("diameter", "roughness"):
                if r.get(opt) not in (None, ""):
                    rec[opt] = float(r[opt])
            pipes.append(rec)
    return network_from_dict({"schema": NETWORK_SCHEMA, "nodes": nodes, "pipes": pipes})


# -- synthetic networks -----------------------------------------------------

def grid_network(rows: int = 6, cols: int = 10, spacing: float = 100.0, seed: int = 0,
                 n_reservoirs: int = 2, reservoir_head: float = 60.0, drop_fraction: float = 0.1,
                 diameter: float = 0.08) -> NetworkGraph:
    """A looped grid of junctions fed by reservoirs at opposite corners.

    Pipe lengths are jittered by +-30 %, a fraction of grid links is removed
    (never disconnecting the grid) and elevations follow a gentle random slope.
    """
    rng = np.random.default_rng(seed)
    nodes = []
    slope = rng.uniform(-0.02, 0.02, size=2)
    for r in range(rows):
        for c in range(cols):
            x, y = c * spacing, r * spacing
            elev = 10.0 + slope[0] * x + slope[1] * y + rng.normal(0, 0.5)
            nodes.append(Node(f"J{r:02d}{c:02d}", JUNCTION, float(round(elev, 3)), (x, y)))
    links = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                links.append(((r, c), (r, c + 1)))
            if r + 1 < rows:
                links.append(((r, c), (r + 1, c)))
    rng.shuffle(links)
    n_drop = int(drop_fraction * len(links))
    kept = list(links)
    dropped = 0
    for link in links:
        if dropped >= n_drop:
            break
        trial = [l for l in kept if l != link]
        if _grid_connected(trial, rows, cols):
            kept = trial
            dropped += 1
    kept.sort()
    pipes = []
    for (a, b) in kept:
        length = spacing * rng.uniform(0.7, 1.3)
        pipes.append({"id": f"P{a[0]:02d}{a[1]:02d}-{b[0]:02d}{b[1]:02d}", "from": f"J{a[0]:02d}{a[1]:02d}",
                      "to": f"J{b[0]:02d}{b[1]:02d}", "length": round(length, 2),
                      "diameter": diameter, "roughness": DEFAULT_ROUGHNESS})
    corners = [(0, 0), (rows - 1, cols - 1), (0, cols - 1), (rows - 1, 0)]
    for k in range(n_reservoirs):
        r, c = corners[k % len(corners)]
        rid = f"R{k + 1}"
        nodes.append(Node(rid, RESERVOIR, reservoir_head - 1.0 * k, (c * spacing - 50.0, r * spacing - 50.0)))
        pipes.append({"id": f"P{rid}", "from": rid, "to": f"J{r:02d}{c:02d}", "length": 50.0,
                      "diameter": 2 * diameter, "roughness": DEFAULT_ROUGHNESS})
    return NetworkGraph.from_records(nodes, pipes)


def _grid_connected(links, rows, cols) -> bool:
    n = rows * cols
    a = [r * cols + c for (r, c), _ in links]
    b = [r * cols + c for _, (r, c) in links]
    m = csr_matrix((np.ones(len(links)), (a, b)), shape=(n, n))
    return connected_components(m, directed=False)[0] == 1
