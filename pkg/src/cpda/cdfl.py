"""Fault localization: causal-dependence scores and an Ochiai baseline.

CDFL scores a node by how much more it causally drives the output node on
failing inputs than on passing ones.  SBFL (Ochiai) scores statements from
coverage alone.  Ranks of the faulty element are computed under four
tiebreak policies so the two can be compared on equal terms.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discovery import CausalStructure
from .effects import causal_dependence
from .minilang import NodeTable

POLICIES = ("avg", "min", "max", "line-order")
TIE_TOL = 1e-12


@dataclass
class RankEntry:
    element: int  # node index (cdfl) or source line (sbfl)
    score: float
    line: int


@dataclass
class SuspiciousnessRanking:
    entries: list  # RankEntry, score descending then element ascending
    method: str
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: (-e.score, e.element))

    def score(self, element) -> float:
        for e in self.entries:
            if e.element == element:
                return e.score
        raise KeyError(element)

    def position(self, element) -> int:
        """1-based position after the deterministic index tiebreak."""
        for pos, e in enumerate(self.entries, 1):
            if e.element == element:
                return pos
        raise KeyError(element)

    def tied_with(self, element) -> list:
        s = self.score(element)
        return [e.element for e in self.entries if e.element != element and abs(e.score - s) <= TIE_TOL]

    def tie_groups(self) -> list:
        groups, current = [], []
        for e in self.entries:
            if current and abs(current[-1].score - e.score) <= TIE_TOL:
                current.append(e)
            else:
                if len(current) > 1:
                    groups.append([x.element for x in current])
                current = [e]
        if len(current) > 1:
            groups.append([x.element for x in current])
        return groups

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "node", "line", "score", "method"])
        for pos, e in enumerate(self.entries, 1):
            w.writerow([pos, e.element, e.line, repr(float(e.score)), self.method])
        return buf.getvalue()


@dataclass
class FaultSpec:
    nodes: tuple  # faulty node indices
    description: str = ""

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("a fault must name at least one node")

    def lines(self, table: NodeTable) -> set:
        return {table[k].line for k in self.nodes}


def select_output_node(table: NodeTable, override: Optional[int] = None) -> int:
    """The node whose change stands for a change of outcome.

    Default: the single return node of the entry function; if the entry
    function returns nothing, the synthetic node of the printed output.
    """
    if override is not None:
        if not 1 <= override <= len(table):
            raise ValueError(f"output node {override} does not exist")
        return override
    entry = table.program.entry
    rets = [n.index for n in table if n.kind == "return" and n.function == entry]
    if len(rets) == 1:
        return rets[0]
    if len(rets) > 1:
        raise ValueError(f"{entry} has {len(rets)} return sites; choose one with an override")
    if table.output_index is not None:
        return table.output_index
    raise ValueError("program has no return in its entry function and no print")


def cdfl_scores(per_input: dict, structure: CausalStructure, out: int, failing, passing,
                table: Optional[NodeTable] = None) -> SuspiciousnessRanking:
    """susp(i) = mean CD(i -> out) over failing inputs - mean over passing inputs."""
    failing, passing = list(failing), list(passing)
    if not failing:
        raise ValueError("CDFL needs at least one failing input")
    flags = set()

    def mean_cd(i, tests):
        if not tests:
            return 0.0
        vals = []
        for t in tests:
            score = causal_dependence(per_input[t], structure, i, out)
            flags.update(f"{f}:{i}" for f in score.flags)
            vals.append(score.value)
        return float(np.mean(vals))

    entries = []
    for i in structure.nodes:
        if i == out:
            continue
        susp = mean_cd(i, failing) - mean_cd(i, passing)
        line = table[i].line if table is not None else 0
        entries.append(RankEntry(i, susp, line))
    return SuspiciousnessRanking(entries, "cdfl", sorted(flags))


def line_scores(ranking: SuspiciousnessRanking) -> SuspiciousnessRanking:
    """Collapse a node ranking to statement lines (best node per line)."""
    best: dict = {}
    for e in ranking.entries:
        if e.line not in best or e.score > best[e.line]:
            best[e.line] = e.score
    return SuspiciousnessRanking([RankEntry(line, s, line) for line, s in best.items()],
                                 ranking.method + "-lines", list(ranking.flags))


def ochiai(ef: int, ep: int, nf: int) -> float:
    den = math.sqrt((ef + nf) * (ef + ep))
    return ef / den if den else 0.0


def sbfl_ochiai(coverage: dict, verdicts: dict, elements=None) -> SuspiciousnessRanking:
    """Ochiai over statements; ``coverage`` maps test id -> set of covered lines."""
    if elements is None:
        elements = set()
        for lines in coverage.values():
            elements |= set(lines)
    total_fail = sum(1 for t in coverage if verdicts[t] == "fail")
    entries = []
    for line in sorted(elements):
        ef = sum(1 for t, c in coverage.items() if line in c and verdicts[t] == "fail")
        ep = sum(1 for t, c in coverage.items() if line in c and verdicts[t] == "pass")
        entries.append(RankEntry(line, ochiai(ef, ep, total_fail - ef), line))
    return SuspiciousnessRanking(entries, "sbfl")


def apply_tiebreaker(ranking: SuspiciousnessRanking, policy: str, fault_elements) -> float:
    """Rank of the best faulty element when ties are resolved by ``policy``."""
    if policy not in POLICIES:
        raise ValueError(f"unknown tie policy {policy!r}")
    present = [e for e in ranking.entries if e.element in set(fault_elements)]
    if not present:
        raise ValueError("faulty element absent from ranking")
    best = math.inf
    for f in present:
        higher = sum(1 for e in ranking.entries if e.score > f.score + TIE_TOL)
        tied = [e for e in ranking.entries if abs(e.score - f.score) <= TIE_TOL]
        if policy == "min":
            rank = higher + 1
        elif policy == "max":
            rank = higher + len(tied)
        elif policy == "avg":
            rank = higher + (len(tied) + 1) / 2
        else:
            rank = higher + 1 + sum(1 for e in tied if (e.line, e.element) < (f.line, f.element))
        best = min(best, rank)
    return best


def acc_at_n(ranks, n: int) -> int:
    return sum(1 for r in ranks if r <= n)
