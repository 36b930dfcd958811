"""Causal structure discovery from intervention observations.

Intervention parents (IPA) are read straight off the observations: ``k`` is an
intervention parent of ``j`` when some mutation of ``k`` changed ``j``.  The
Markovian parents are then pruned out of IPA by iterated conditional
independence tests, farthest candidate first, restarting whenever a
candidate is dropped.  A final pass removes edges that would close a cycle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from .minilang import (Assign, FunctionDef, GlobalDecl, If, NodeTable, Program, Read, Return,
                       While, _walk_stmts, called_functions, used_variables, walk_expr)
from .observations import TOL, ObservationSet

log = logging.getLogger(__name__)


@dataclass
class CausalStructure:
    nodes: list
    parents: dict  # child -> sorted tuple of Markovian parents
    diagnostics: dict = field(default_factory=dict)

    @property
    def edges(self) -> list:
        return sorted((p, c) for c, ps in self.parents.items() for p in ps)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def parents_of(self, j) -> tuple:
        return tuple(self.parents.get(j, ()))

    def to_edge_list(self) -> str:
        return "".join(f"{p} {c}\n" for p, c in self.edges)

    @classmethod
    def from_edge_list(cls, text: str, nodes) -> "CausalStructure":
        parents = {n: [] for n in nodes}
        for line in text.splitlines():
            if line.strip():
                p, c = (int(x) for x in line.split())
                parents[c].append(p)
        return cls(list(nodes), {c: tuple(sorted(ps)) for c, ps in parents.items()})


def intervention_parents(obs: ObservationSet, j: int) -> set:
    """Nodes whose mutation changed ``j`` in at least one observation."""
    hit = obs.col(j) & (obs.mutated != j)
    return {int(k) for k in np.unique(obs.mutated[hit])}


# --------------------------------------------------------------------------
# Distance order


@dataclass
class DistanceOrder:
    """Candidate order for one child, farthest first."""

    child: int
    ranking: list  # node indices, farthest first

    def farthest(self, remain) -> int:
        for k in self.ranking:
            if k in remain:
                return k
        # candidates unknown to the ranking go last, smallest index first
        return min(remain)


def distance_order(child: int, traces, candidates=None) -> DistanceOrder:
    """Rank nodes by how long before ``child`` they last executed.

    ``traces`` are oracle event sequences (node indices in execution order)
    of the inputs covering ``child``.  Per trace, a node's distance is the
    gap between its last execution before the child's first execution and
    that first execution; nodes that did not run before the child get 0.
    Distances are averaged over traces; ties go to the smaller index.
    """
    totals: dict = {}
    count = 0
    for events in traces:
        try:
            first = events.index(child)
        except ValueError:
            continue
        count += 1
        last = {}
        for pos in range(first):
            last[events[pos]] = pos
        for k, pos in last.items():
            totals[k] = totals.get(k, 0) + (first - pos)
    pool = set(candidates) if candidates is not None else set(totals) | set()
    pool.discard(child)
    mean = {k: totals.get(k, 0) / max(count, 1) for k in pool}
    ranking = sorted(pool, key=lambda k: (-mean[k], k))
    return DistanceOrder(child, ranking)


# --------------------------------------------------------------------------
# Markovian parents (iterated conditional independence pruning)


def _group_masses(obs: ObservationSet, base, j, d, others):
    """Per realization of ``others``: masses of (d=0), (d=0,j=1), (d=1), (d=1,j=1)."""
    rows = np.flatnonzero(base)
    w = obs.w[rows]
    dcol = obs.col(d)[rows]
    jcol = obs.col(j)[rows]
    if others:
        sub = obs.matrix[np.ix_(rows, [k - 1 for k in others])]
        keys, inverse = np.unique(sub.astype(np.uint8), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        keys, inverse = np.zeros((1, 0), dtype=np.uint8), np.zeros(len(rows), dtype=np.int64)

    def mass(mask):
        out = np.zeros(len(keys), dtype=w.dtype)
        np.add.at(out, inverse[mask], w[mask])
        return out

    return keys, mass(~dcol), mass(~dcol & jcol), mass(dcol), mass(dcol & jcol)


def _ratio(num, den) -> Optional[float]:
    return None if den == 0 else num / den


def independent_given(obs: ObservationSet, j: int, d: int, others, base=None) -> bool:
    """True when S_j is independent of S_d for every observed realization of ``others``.

    Only realizations where both conditionals are defined can witness a
    dependence; a realization where either side has zero mass carries no
    evidence and is skipped.
    """
    if base is None:
        base = obs.excluding([j])
    others = sorted(others)
    keys, m0, m0j, m1, m1j = _group_masses(obs, base, j, d, others)
    for g in range(len(keys)):
        if m0[g] + m1[g] == 0:
            continue
        p0, p1 = _ratio(m0j[g], m0[g]), _ratio(m1j[g], m1[g])
        if p0 is None or p1 is None:
            continue
        if abs(p0 - p1) > TOL:
            return False
    return True


def markovian_parents(ipa, dist: DistanceOrder, obs: ObservationSet, j: Optional[int] = None,
                      trace: Optional[list] = None) -> set:
    """Prune ``ipa`` down to the Markovian parents of ``dist.child``.

    ``obs`` should hold only observations from inputs covering the child.
    """
    j = dist.child if j is None else j
    base = obs.excluding([j])
    pa: list = []
    cand = set(ipa)
    while cand and cand != set(pa):
        remain = cand - set(pa)
        d = dist.farthest(remain)
        others = cand - {d}
        # a single candidate is tested unconditionally (others is empty)
        is_parent = not independent_given(obs, j, d, others, base)
        if trace is not None:
            trace.append((d, tuple(sorted(others)), is_parent))
        if is_parent:
            pa.append(d)
        else:
            cand.discard(d)
            pa = []
    return set(pa)


def brute_force_parents(ipa, obs: ObservationSet, j: int):
    """Smallest subsets T of ``ipa`` with P(S_j|t) = P(S_j|ipa) at every observed ipa.

    Exponential; meant as an independent check on small structures.
    Returns the list of all minimum-size subsets satisfying the condition.
    """
    from itertools import combinations

    ipa = sorted(ipa)
    base = obs.excluding([j])
    full = obs.realizations(ipa, base)

    def cond(assign):
        return obs.prob_event({j: 1}, assign)

    full_p = {r: cond(dict(zip(ipa, r))) for r in full}
    for size in range(len(ipa) + 1):
        found = []
        for subset in combinations(ipa, size):
            ok = True
            for r, p in full_p.items():
                if p is None:
                    continue
                sub = {k: v for k, v in zip(ipa, r) if k in subset}
                q = cond(sub)
                if q is None or abs(q - p) > TOL:
                    ok = False
                    break
            if ok:
                found.append(set(subset))
        if found:
            return found
    return [set(ipa)]


# --------------------------------------------------------------------------
# Safe parents


def _node_uses(table: NodeTable):
    """Map node index -> (variables read, functions called) by its defining expression."""
    uses = {}
    program = table.program

    def expr_uses(e):
        return used_variables(e), called_functions(e)

    for item in program.items:
        if isinstance(item, GlobalDecl):
            uses[table.site(item, "lhs")] = expr_uses(item.value)
        elif isinstance(item, FunctionDef):
            for p in item.params:
                uses[table.site(item, ("param", p))] = (set(), set())
            for s in _walk_stmts(item.body):
                if isinstance(s, Assign):
                    uses[table.site(s, "lhs")] = expr_uses(s.value)
                elif isinstance(s, If):
                    uses[table.site(s, "pred")] = expr_uses(s.cond)
                elif isinstance(s, While):
                    uses[table.site(s, "pred")] = expr_uses(s.cond)
                    uses[table.site(s, "pred-back")] = expr_uses(s.cond)
                elif isinstance(s, Return) and s.value is not None:
                    uses[table.site(s, "ret")] = expr_uses(s.value)
                if isinstance(s, (Assign, If, While, Return)):
                    exprs = {Assign: lambda x: x.value, If: lambda x: x.cond,
                             While: lambda x: x.cond, Return: lambda x: x.value}
                    e = exprs[type(s)](s)
                    if e is None:
                        continue
                    for sub in walk_expr(e):
                        if isinstance(sub, Read) and sub.target is not None:
                            uses[table.site(sub, "read")] = (set(), set())
                            if isinstance(s, While):
                                uses[table.site(sub, "read-back")] = (set(), set())
    return uses


def call_graph(program: Program) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(f.name for f in program.functions)
    names = set(g.nodes)
    for f in program.functions:
        for s in _walk_stmts(f.body):
            for attr in ("value", "cond"):
                e = getattr(s, attr, None)
                if e is not None:
                    for callee in called_functions(e) & names:
                        g.add_edge(f.name, callee)
    return g


def safe_parents(table: NodeTable, j: int) -> set:
    """Superset filter on candidate parents, from program structure alone.

    * every node of j's own function, plus parameters of functions calling it
      (for a parameter node: every node of the calling functions, since the
      argument is computed there);
    * if j's expression calls ``f``: the return nodes of ``f``;
    * if j's expression reads a global ``g``: every node assigning ``g``.
    """
    program = table.program
    node = table[j]
    cg = call_graph(program)
    by_fn = {}
    for n in table:
        by_fn.setdefault(n.function, []).append(n)
    spa = {n.index for n in by_fn.get(node.function, [])}
    callers = set(cg.predecessors(node.function)) if node.function in cg else set()
    for caller in callers:
        for n in by_fn.get(caller, []):
            if n.kind == "parameter" or node.kind == "parameter":
                spa.add(n.index)
    uses = _node_uses(table).get(j, (set(), set()))
    variables, calls = uses
    if node.kind == "output":
        # the printed sequence depends on whatever the printing functions compute
        variables = set()
        spa |= {n.index for n in table if n.function == node.function}
    for f in calls:
        spa |= {n.index for n in by_fn.get(f, []) if n.kind == "return"}
    globals_ = {g.name for g in program.globals}
    for g in variables & globals_:
        spa |= {n.index for n in table if n.variable == g and n.kind == "assign-lhs"}
    spa.discard(j)
    return spa


# --------------------------------------------------------------------------
# Whole structure


def covering_tests(oracles: dict, j: int) -> list:
    return [t for t, res in oracles.items() if res.covered(j)]


def _dependence_gap(obs: ObservationSet, i, j) -> float:
    p1 = obs.cond_prob_change(j, {i: 1})
    p0 = obs.cond_prob_change(j, {i: 0})
    return abs((p1 or 0.0) - (p0 or 0.0))


def build_structure(table: NodeTable, obs: ObservationSet, oracles: dict,
                    use_safe_parents: bool = True) -> CausalStructure:
    """Markovian parents of every node, then cycle elimination.

    ``oracles`` maps test id -> oracle :class:`RunResult` (with events).
    """
    nodes = [n.index for n in table]
    ipa = {j: intervention_parents(obs, j) for j in nodes}
    parents = {}
    traces = {}
    for j in nodes:
        cover = covering_tests(oracles, j)
        cand = set(ipa[j])
        if use_safe_parents:
            cand &= safe_parents(table, j)
        if not cand or not cover:
            parents[j] = set()
            continue
        o_j = obs.for_tests(cover)
        dist = distance_order(j, [oracles[t].events for t in cover], cand)
        steps = []
        parents[j] = markovian_parents(cand, dist, o_j, j, trace=steps)
        traces[j] = steps

    removed_mutual = []
    for i in nodes:
        for j in nodes:
            if i in parents[j] and j in ipa[i]:
                removed_mutual.append((i, j))
    for i, j in removed_mutual:
        parents[j].discard(i)

    removed_cycle = []
    g = nx.DiGraph()
    g.add_nodes_from(nodes)
    g.add_edges_from((p, c) for c, ps in parents.items() for p in ps)
    while True:
        try:
            cycle = nx.find_cycle(g)
        except nx.NetworkXNoCycle:
            break
        cycle_edges = [(u, v) for u, v in cycle]
        cover_obs = {}

        def gap(e):
            u, v = e
            if v not in cover_obs:
                cover_obs[v] = obs.for_tests(covering_tests(oracles, v))
            return (_dependence_gap(cover_obs[v], u, v), e)

        weakest = min(cycle_edges, key=gap)
        g.remove_edge(*weakest)
        parents[weakest[1]].discard(weakest[0])
        removed_cycle.append(weakest)

    diag = {
        "intervention_parents": {j: sorted(v) for j, v in ipa.items()},
        "mutual_edges_removed": removed_mutual,
        "cycle_edges_removed": removed_cycle,
    }
    return CausalStructure(nodes, {j: tuple(sorted(parents[j])) for j in nodes}, diag)
