"""Interventional quantities over change observations.

``causal_effect`` estimates P(S_j = 1 | do(x)) with the adjustment formula over
the Markovian parents of the intervened nodes.  Causal dependence (CD) is the
difference of two such estimates; direct dependence (DD) is the natural direct
effect along a structure edge, reduced to a sum over mediator-free strata and
averaged over the inputs that cover the child.

A second, independent route is provided for checking: conditional tables are
fitted per node and P(S_j | do(x)) is obtained by summing the truncated
factorization over the ancestors of ``j``.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discovery import CausalStructure
from .observations import ObservationSet


@dataclass
class DependenceScore:
    source: int
    target: int
    kind: str  # causal | direct
    value: float
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if abs(self.value) > 1 + 1e-9:
            raise ValueError(f"dependence {self.value} outside [-1, 1]")


def _marginal(obs: ObservationSet, assignment: dict) -> float:
    """P(assignment) over the whole set (plain weighted frequency)."""
    total = obs.total()
    if total == 0:
        return 0.0
    return obs.mass(obs.condition_mask(assignment)) / total


def _realizations(obs: ObservationSet, nodes) -> list:
    nodes = sorted(nodes)
    return [dict(zip(nodes, r)) for r in obs.realizations(nodes)]


def causal_effect(obs: ObservationSet, structure: CausalStructure, x: dict, j: int) -> Optional[float]:
    """P(S_j = 1 | do(x)), or ``None`` when no stratum has any mass."""
    if not x:
        raise ValueError("intervention must assign at least one node")
    if j in x:
        raise ValueError("target must not be intervened on")
    pa_j = set(structure.parents_of(j))
    if pa_j and pa_j == set(x):
        # intervening on exactly the parents: do() and conditioning coincide
        return obs.cond_prob_change(j, x)
    adjust = set()
    for k in x:
        adjust |= set(structure.parents_of(k))
    adjust -= set(x) | {j}
    if not adjust:
        return obs.cond_prob_change(j, x)
    acc, defined = 0.0, False
    for pa in _realizations(obs, adjust):
        p = obs.cond_prob_change(j, {**x, **pa})
        if p is None:
            continue
        defined = True
        acc += p * _marginal(obs, pa)
    return acc if defined else None


def causal_dependence(obs: ObservationSet, structure: CausalStructure, i: int, j: int) -> DependenceScore:
    """CD(i -> j) = P(S_j=1 | do(S_i=1)) - P(S_j=1 | do(S_i=0)); undefined operands count as 0."""
    if i == j:
        raise ValueError("causal dependence needs two distinct nodes")
    flags = []
    p1 = causal_effect(obs, structure, {i: 1}, j)
    p0 = causal_effect(obs, structure, {i: 0}, j)
    if p1 is None:
        flags.append("undefined-do1")
    if p0 is None:
        flags.append("undefined-do0")
    return DependenceScore(i, j, "causal", (p1 or 0.0) - (p0 or 0.0), flags)


def _prob_z_do_i0(obs: ObservationSet, structure: CausalStructure, i: int, z: dict) -> Optional[float]:
    """P(z | do(S_i = 0)) = sum over pa_i of P(z | S_i=0, pa_i) P(pa_i)."""
    pa_i = set(structure.parents_of(i)) - set(z)
    if not pa_i:
        return obs.prob_event(z, {i: 0})
    acc, defined = 0.0, False
    for pa in _realizations(obs, pa_i):
        p = obs.prob_event(z, {i: 0, **pa})
        if p is None:
            continue
        defined = True
        acc += p * _marginal(obs, pa)
    return acc if defined else None


def natural_direct_effect(obs: ObservationSet, structure: CausalStructure, i: int, j: int):
    """Reduced NDE of S_i on S_j within one observation set; returns (value, flags)."""
    mediators = sorted(set(structure.parents_of(j)) - {i})
    flags = []
    if not mediators:
        p1 = obs.cond_prob_change(j, {i: 1})
        p0 = obs.cond_prob_change(j, {i: 0})
        if p1 is None or p0 is None:
            return 0.0, ["undefined-stratum"]
        return p1 - p0, flags
    acc = 0.0
    for z in _realizations(obs, mediators):
        p1 = obs.cond_prob_change(j, {i: 1, **z})
        p0 = obs.cond_prob_change(j, {i: 0, **z})
        if p1 is None or p0 is None:
            flags.append("undefined-stratum")
            continue
        pz = _prob_z_do_i0(obs, structure, i, z)
        if pz is None:
            flags.append("undefined-mediator")
            continue
        acc += (p1 - p0) * pz
    return acc, sorted(set(flags))


def direct_dependence(per_input: dict, structure: CausalStructure, i: int, j: int,
                      covering=None) -> DependenceScore:
    """Mean NDE of edge i -> j over the inputs covering j.

    ``per_input`` maps test id -> that test's observations; ``covering`` lists
    the test ids whose oracle run executes j (default: all of ``per_input``).
    """
    if i not in structure.parents_of(j):
        raise ValueError(f"{i} is not a Markovian parent of {j}")
    tests = list(per_input) if covering is None else [t for t in covering if t in per_input]
    if not tests:
        return DependenceScore(i, j, "direct", 0.0, ["no-covering-input"])
    values, flags = [], set()
    for t in tests:
        obs = per_input[t]
        if len(obs) == 0:
            values.append(0.0)
            continue
        v, f = natural_direct_effect(obs, structure, i, j)
        values.append(v)
        flags.update(f)
    return DependenceScore(i, j, "direct", float(np.mean(values)), sorted(flags))


# --------------------------------------------------------------------------
# Second route: fitted conditional tables and the truncated factorization


@dataclass
class ConditionalTable:
    node: int
    parents: tuple
    rows: dict  # parent realization (tuple of 0/1) -> P(S_node = 1)

    def p_change(self, parent_values) -> float:
        # strata never observed carry no evidence of change
        return self.rows.get(tuple(int(v) for v in parent_values), 0.0)


def fit_tables(obs: ObservationSet, structure: CausalStructure, nodes=None) -> dict:
    """P(S_k = 1 | pa_k) per node; roots get the plain change frequency."""
    tables = {}
    for k in (structure.nodes if nodes is None else nodes):
        pa = tuple(structure.parents_of(k))
        rows = {}
        if not pa:
            rows[()] = _marginal(obs, {k: 1})
        else:
            for r in obs.realizations(pa):
                p = obs.cond_prob_change(k, dict(zip(pa, r)))
                if p is not None:
                    rows[tuple(r)] = p
        tables[k] = ConditionalTable(k, pa, rows)
    return tables


def _ancestral_closure(structure: CausalStructure, nodes, stop=()) -> list:
    """``nodes`` and their ancestors; the parents of ``stop`` nodes are not followed."""
    seen, stack = set(), list(nodes)
    while stack:
        k = stack.pop()
        if k in seen:
            continue
        seen.add(k)
        if k not in stop:
            stack.extend(structure.parents_of(k))
    return sorted(seen)


def _joint(tables: dict, variables: list, x: dict) -> tuple:
    """All 0/1 assignments of ``variables`` with their truncated-product probabilities."""
    m = len(variables)
    if m > 22:
        raise ValueError("too many variables for exhaustive enumeration")
    grid = np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.int8).reshape(-1, m)
    col = {v: c for c, v in enumerate(variables)}
    prob = np.ones(len(grid))
    for v in variables:
        if v in x:
            continue
        t = tables[v]
        if t.parents:
            pa_cols = grid[:, [col[p] for p in t.parents]]
            p1 = np.array([t.p_change(row) for row in pa_cols])
        else:
            p1 = np.full(len(grid), t.p_change(()))
        prob *= np.where(grid[:, col[v]] == 1, p1, 1.0 - p1)
    consistent = np.ones(len(grid), dtype=bool)
    for v, val in x.items():
        if v in col:
            consistent &= grid[:, col[v]] == val
    prob = np.where(consistent, prob, 0.0)
    return grid, prob, col


def do_probability(tables: dict, structure: CausalStructure, x: dict, j: int) -> float:
    """P(S_j = 1 | do(x)) by summing the truncated factorization over j's ancestors.

    Intervened nodes are fixed, so their own ancestors cannot influence ``j``
    through them and are left out of the enumeration; every other factor
    outside the closure sums to one.
    """
    if j in x:
        raise ValueError("target must not be intervened on")
    variables = _ancestral_closure(structure, [j], stop=set(x))
    grid, prob, col = _joint(tables, variables, {k: v for k, v in x.items() if k in variables})
    return float(prob[grid[:, col[j]] == 1].sum())


def verify_truncated_factorization(structure: CausalStructure, tables: dict, x: dict, nodes=None) -> dict:
    """Check that the truncated product is a distribution that respects ``x``."""
    variables = sorted(structure.nodes if nodes is None else nodes)
    grid, prob, col = _joint(tables, variables, {})
    # recompute with the intervened factors removed
    grid, trunc, col = _joint(tables, variables, x)
    inconsistent = np.zeros(len(grid), dtype=bool)
    for v, val in x.items():
        inconsistent |= grid[:, col[v]] != val
    total = float(trunc.sum())
    leak = float(trunc[inconsistent].sum())
    return {"total": total, "inconsistent_mass": leak,
            "ok": abs(total - 1.0) <= 1e-9 and leak == 0.0}


# --------------------------------------------------------------------------


def scores_csv(scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "target", "kind", "value", "diagnostics"])
    for s in sorted(scores, key=lambda s: (s.kind, s.source, s.target)):
        w.writerow([s.source, s.target, s.kind, repr(float(s.value)), ";".join(s.flags)])
    return buf.getvalue()
