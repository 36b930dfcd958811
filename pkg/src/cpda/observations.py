"""Weighted change-observations and the probabilities built on them.

An observation is one (mutated node, mutation value, test) run reduced to a
boolean vector: entry ``i`` is set when node ``i``'s trajectory differs from
the oracle.  Each observation carries weight ``1 / k`` where ``k`` is the
number of values sampled for the mutated node, so nodes with few possible
mutations (booleans, small ranges) are not under-represented.

Weights are exact rationals.  Internally they are scaled to integers by a
common denominator so that every mass is an exact integer sum.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from .runtime import RunResult, _same_seq

TOL = 1e-9


def diff_trajectories(oracle: RunResult, mutant: RunResult) -> tuple:
    """Per-node change flags (index 0 is node 1)."""
    if len(oracle.trajectories) != len(mutant.trajectories):
        raise ValueError("results cover different node sets")
    return tuple(not _same_seq(a, b) for a, b in zip(oracle.trajectories[1:], mutant.trajectories[1:]))


@dataclass(frozen=True)
class Observation:
    mutated: int
    ordinal: int
    test_id: str
    changed: tuple  # bools, one per node
    weight: Fraction

    def __post_init__(self):
        if not (0 < self.weight <= 1):
            raise ValueError("observation weight must lie in (0, 1]")

    def bits(self):
        return "".join("1" if c else "0" for c in self.changed)


class UndefinedProbability(Exception):
    """Raised where a probability over an empty observation set is requested."""


def probs_equal(a: Optional[float], b: Optional[float]) -> bool:
    """Equality with ``None`` standing for an undefined (zero-mass) value."""
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= TOL


class ObservationSet:
    def __init__(self, observations: Iterable[Observation], n_nodes: int, scope: str = "all-inputs"):
        self.observations = tuple(observations)
        self.n_nodes = n_nodes
        self.scope = scope
        for o in self.observations:
            if len(o.changed) != n_nodes:
                raise ValueError("observation vector length differs from node count")
        m = len(self.observations)
        self.matrix = np.zeros((m, n_nodes), dtype=bool)
        for r, o in enumerate(self.observations):
            self.matrix[r] = o.changed
        self.mutated = np.array([o.mutated for o in self.observations], dtype=np.int64)
        self.test_ids = np.array([o.test_id for o in self.observations], dtype=object)
        denom = 1
        for o in self.observations:
            denom = math.lcm(denom, o.weight.denominator)
        self.denominator = denom
        ints = [o.weight.numerator * (denom // o.weight.denominator) for o in self.observations]
        if max(ints, default=0) * max(m, 1) < 2 ** 62:
            self.w = np.array(ints, dtype=np.int64)
        else:  # pragma: no cover - exotic sample counts
            self.w = np.array(ints, dtype=object)

    def __len__(self):
        return len(self.observations)

    # -- views --------------------------------------------------------------
    def _subset(self, rows, scope):
        return ObservationSet([self.observations[r] for r in np.flatnonzero(rows)], self.n_nodes, scope)

    def tests(self) -> list:
        seen = []
        for o in self.observations:
            if o.test_id not in seen:
                seen.append(o.test_id)
        return seen

    def for_test(self, test_id) -> "ObservationSet":
        return self._subset(self.test_ids == test_id, f"per-input({test_id})")

    def for_tests(self, test_ids) -> "ObservationSet":
        wanted = set(test_ids)
        rows = np.array([t in wanted for t in self.test_ids], dtype=bool)
        return self._subset(rows, "all-inputs" if wanted >= set(self.tests()) else "subset")

    def per_input(self) -> dict:
        return {t: self.for_test(t) for t in self.tests()}

    def col(self, node):
        return self.matrix[:, node - 1]

    # -- masses -------------------------------------------------------------
    def excluding(self, targets) -> np.ndarray:
        """Row mask of O*: observations that mutate none of ``targets``."""
        keep = np.ones(len(self), dtype=bool)
        for t in targets:
            keep &= self.mutated != t
        return keep

    def condition_mask(self, condition: dict, base=None) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool) if base is None else base.copy()
        for node, value in condition.items():
            col = self.col(node)
            mask &= col if value else ~col
        return mask

    def mass(self, mask) -> int:
        return int(self.w[mask].sum())

    def total(self) -> int:
        return int(self.w.sum())

    # -- probabilities ------------------------------------------------------
    def prob_change(self, i) -> float:
        """Weighted fraction of observations in which node ``i`` changed."""
        total = self.total()
        if total == 0:
            raise UndefinedProbability("empty observation set")
        return self.mass(self.col(i)) / total

    def prob_event(self, event: dict, condition: dict) -> Optional[float]:
        """P(event | condition) over observations that mutate no node of ``event``.

        Returns ``None`` when the conditioning mass is zero.
        """
        base = self.excluding(event.keys())
        cmask = self.condition_mask(condition, base)
        den = self.mass(cmask)
        if den == 0:
            return None
        return self.mass(self.condition_mask(event, cmask)) / den

    def cond_prob_change(self, j, condition: dict) -> Optional[float]:
        """P(S_j = 1 | condition) computed over O*, the observations not mutating ``j``."""
        if not condition:
            raise ValueError("condition must assign at least one node")
        return self.prob_event({j: 1}, condition)

    def realizations(self, nodes, base_mask=None) -> list:
        """Distinct observed 0/1 assignments of ``nodes`` with positive mass, sorted."""
        nodes = list(nodes)
        if not nodes:
            return [()]
        mask = np.ones(len(self), dtype=bool) if base_mask is None else base_mask
        mask = mask & (self.w > 0)
        if not mask.any():
            return []
        sub = self.matrix[np.ix_(mask, [n - 1 for n in nodes])]
        uniq = np.unique(sub.astype(np.uint8), axis=0)
        return [tuple(int(x) for x in row) for row in uniq]

    # -- persistence --------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mutated_node", "ordinal", "test_id", "weight", "changed"])
        for o in self.observations:
            w.writerow([o.mutated, o.ordinal, o.test_id, str(o.weight), o.bits()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, scope="all-inputs") -> "ObservationSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:5] != ["mutated_node", "ordinal", "test_id", "weight", "changed"]:
            raise ValueError("not an observation CSV")
        obs = [Observation(int(m), int(k), t, tuple(c == "1" for c in bits), Fraction(w))
               for m, k, t, w, bits in rows[1:]]
        n = len(obs[0].changed) if obs else 0
        return cls(obs, n, scope)


def metadata_jsonl(records) -> str:
    """One JSON object per observation (mutation value, run status, ...)."""
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
