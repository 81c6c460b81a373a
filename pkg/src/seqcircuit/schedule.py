"""Level-by-level propagation planning for cyclic sequential netlists.

FF outputs are treated as level-0 sources, which makes the remaining graph
acyclic and yields a topological level order.  Feedback shows up as strongly
connected components of the full graph; each becomes a cyclic region with
its own internal level order so that consumers can re-sweep it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .circuit import CircuitGraph, CircuitError, NodeKind, validate


@dataclass(frozen=True)
class CyclicRegion:
    """A feedback-affected sub-circuit: its FFs, node set, and inner schedule."""

    ffs: tuple[int, ...]
    nodes: frozenset[int]
    internal_levels: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class PropagationPlan:
    levels: tuple[tuple[int, ...], ...]
    ff_update_points: tuple[int, ...]
    cyclic_regions: tuple[CyclicRegion, ...]

    def node_level(self) -> dict[int, int]:
        return {v: i for i, lvl in enumerate(self.levels) for v in lvl}

    def to_json(self) -> str:
        doc = {
            "levels": [list(l) for l in self.levels],
            "ff_update_points": list(self.ff_update_points),
            "cyclic_regions": [
                {"ffs": list(r.ffs), "nodes": sorted(r.nodes),
                 "internal_levels": [list(l) for l in r.internal_levels]}
                for r in self.cyclic_regions
            ],
        }
        return json.dumps(doc, indent=2)


def _check_clean(g: CircuitGraph):
    bad = validate(g)
    if bad:
        raise CircuitError("graph fails validation: " + "; ".join(map(str, bad)))


def _source_level(g, levels, u):
    # FF outputs and PIs feed consumers at level 0 regardless of their own
    # scheduled update level.
    if g.kinds[u] in (NodeKind.PI, NodeKind.FF):
        return 0
    return levels[u]


def levelize(g: CircuitGraph) -> PropagationPlan:
    """Build the full propagation plan (levels, FF order, cyclic regions)."""
    _check_clean(g)
    n = g.n
    level = [0] * n
    indeg = [0] * n
    for v in range(n):
        if g.kinds[v] in (NodeKind.AND, NodeKind.NOT):
            indeg[v] = sum(1 for u in g.fanins[v]
                           if g.kinds[u] in (NodeKind.AND, NodeKind.NOT))
    ready = sorted(v for v in range(n) if g.kinds[v] in (NodeKind.AND, NodeKind.NOT)
                   and indeg[v] == 0)
    order = []
    head = 0
    queue = ready
    while head < len(queue):
        v = queue[head]
        head += 1
        order.append(v)
        level[v] = 1 + max(_source_level(g, level, u) for u in g.fanins[v])
        for w in g.fanouts[v]:
            if g.kinds[w] in (NodeKind.AND, NodeKind.NOT):
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
    if len(order) != sum(1 for k in g.kinds if k in (NodeKind.AND, NodeKind.NOT)):
        raise CircuitError("combinational loop survived validation")
    for v in g.ffs:
        level[v] = 1 + max(_source_level(g, level, u) for u in g.fanins[v])

    max_level = max((level[v] for v in range(n) if g.kinds[v] != NodeKind.PI),
                    default=0)
    buckets: list[list[int]] = [[] for _ in range(max_level + 1)]
    for v in range(n):
        if g.kinds[v] == NodeKind.PI:
            buckets[0].append(v)
        else:
            buckets[level[v]].append(v)
    levels = tuple(tuple(sorted(b)) for b in buckets)

    ffs_sorted = tuple(sorted(g.ffs, key=lambda f: (level[f], f)))
    regions = detect_cycles(g)
    regions = tuple(sorted(regions,
                           key=lambda r: (min(level[v] for v in r.nodes),
                                          min(r.nodes))))
    return PropagationPlan(levels=levels, ff_update_points=ffs_sorted,
                           cyclic_regions=regions)


def _tarjan_sccs(n, succ):
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            for j in range(pi, len(succ[v])):
                w = succ[v][j]
                if index[w] == -1:
                    work[-1] = (v, j + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                p = work[-1][0]
                low[p] = min(low[p], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
    return sccs


def detect_cycles(g: CircuitGraph) -> list[CyclicRegion]:
    """One region per multi-node strongly connected component of the full graph."""
    _check_clean(g)
    sccs = _tarjan_sccs(g.n, g.fanouts)
    regions = []
    for comp in sccs:
        if len(comp) < 2:
            continue
        ffs = tuple(sorted(v for v in comp if g.kinds[v] == NodeKind.FF))
        if not ffs:
            continue  # unreachable for validate-clean graphs
        nodes = frozenset(comp)
        regions.append(CyclicRegion(ffs=ffs, nodes=nodes,
                                    internal_levels=_region_levels(g, nodes)))
    regions.sort(key=lambda r: min(r.nodes))
    return regions


def _region_levels(g: CircuitGraph, nodes: frozenset[int]):
    """Levelize a region: member FF outputs and external fanins count as level 0."""
    level: dict[int, int] = {}
    gates = [v for v in sorted(nodes) if g.kinds[v] != NodeKind.FF]
    indeg = {v: sum(1 for u in g.fanins[v]
                    if u in nodes and g.kinds[u] != NodeKind.FF)
             for v in gates}

    def src_level(u):
        if u not in nodes or g.kinds[u] in (NodeKind.PI, NodeKind.FF):
            return 0
        return level[u]

    queue = sorted(v for v in gates if indeg[v] == 0)
    head = 0
    while head < len(queue):
        v = queue[head]
        head += 1
        level[v] = 1 + max(src_level(u) for u in g.fanins[v])
        for w in g.fanouts[v]:
            if w in indeg and g.kinds[w] != NodeKind.FF:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
    for v in sorted(nodes):
        if g.kinds[v] == NodeKind.FF:
            level[v] = 1 + max(src_level(u) for u in g.fanins[v])
    top = max(level.values(), default=0)
    buckets: list[list[int]] = [[] for _ in range(top)]
    for v, l in level.items():
        buckets[l - 1].append(v)
    return tuple(tuple(sorted(b)) for b in buckets)
