"""Relatedness and connectivity of branches induced by a structure set.

Two branches are related at depth one when some triple ties them directly;
depth ``n`` means the shortest chain of ties between them has ``n`` links.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidArgument
from .model import StructureSet, StructureTriple


@dataclass(frozen=True)
class AdjacencyView:
    m: int
    edges: frozenset

    def neighbours(self, d: int) -> list[int]:
        out = []
        for e in self.edges:
            if d in e:
                (other,) = e - {d}
                out.append(other)
        return sorted(out)


def adjacency(s: StructureSet) -> AdjacencyView:
    edges = frozenset(frozenset((t.d, t.k)) for t in s.triples if t.d != t.k)
    return AdjacencyView(s.m, edges)


def _check_pair(s: StructureSet, d: int, k: int):
    for idx in (d, k):
        if not (1 <= idx <= s.m):
            raise InvalidArgument(f"branch {idx} not in 1..{s.m}")
    if d == k:
        raise InvalidArgument("relation is only defined between distinct branches")


def _distances(s: StructureSet, root: int) -> dict[int, int]:
    view = adjacency(s)
    dist = {root: 0}
    queue = deque([root])
    while queue:
        q = queue.popleft()
        for r in view.neighbours(q):
            if r not in dist:
                dist[r] = dist[q] + 1
                queue.append(r)
    return dist


def relation_depth(s: StructureSet, d: int, k: int) -> Optional[int]:
    """Least ``n`` such that ``d`` and ``k`` are related at depth ``n``, else None."""
    _check_pair(s, d, k)
    return _distances(s, d).get(k)


def related(s: StructureSet, d: int, k: int) -> bool:
    return relation_depth(s, d, k) is not None


def is_connected(s: StructureSet) -> bool:
    if s.m <= 1:
        return True
    return len(_distances(s, 1)) == s.m


def components(s: StructureSet) -> list[list[int]]:
    seen, out = set(), []
    for d in range(1, s.m + 1):
        if d not in seen:
            comp = sorted(_distances(s, d))
            seen.update(comp)
            out.append(comp)
    return out


@dataclass(frozen=True)
class PropagationOrder:
    """Breadth-first cover of ``root``'s component.

    Each step is ``(target, witness)``: the witness triple links ``target``
    to a branch covered earlier.
    """

    root: int
    steps: tuple

    @property
    def covered(self) -> list[int]:
        return [self.root] + [t for t, _ in self.steps]

    def depth(self) -> dict[int, int]:
        out = {self.root: 0}
        for target, w in self.steps:
            prev = w.k if w.d == target else w.d
            out[target] = out[prev] + 1
        return out


def propagation_order(s: StructureSet, root: int) -> PropagationOrder:
    """BFS from ``root``; neighbours in ascending index, first listed triple wins."""
    if not (1 <= root <= s.m):
        raise InvalidArgument(f"root {root} not in 1..{s.m}")
    witness: dict[tuple[int, int], StructureTriple] = {}
    for t in s.triples:
        if t.d == t.k:
            continue
        witness.setdefault((t.d, t.k), t)
        witness.setdefault((t.k, t.d), t)
    view = adjacency(s)
    visited = {root}
    queue = deque([root])
    steps = []
    while queue:
        q = queue.popleft()
        for r in view.neighbours(q):
            if r not in visited:
                visited.add(r)
                steps.append((r, witness[(q, r)]))
                queue.append(r)
    return PropagationOrder(root, tuple(steps))
