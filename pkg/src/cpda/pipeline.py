"""Observation collection: oracle runs, mutation sampling, mutant runs.

Every (node, mutation ordinal, test) triple is one mutant run.  Runs are
independent, so they can be spread over a process pool; results are merged
back in (node, ordinal, test) order so the output never depends on the
worker count.  A small on-disk cache keyed by the content hash of
(program, test, mutation, seed) lets repeated analyses skip mutant runs.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .minilang import NodeTable, Program, parse
from .observations import Observation, ObservationSet, diff_trajectories
from .runtime import (OK, STEP_BUDGET, TIMEOUT, MutationSpec, RunResult, TestInput, _encode_scalar,
                      run_key, run_mutant, run_oracle, sample_mutations)

log = logging.getLogger(__name__)


class RunCache:
    """Append-only JSON-lines cache: run key -> (change bits, status)."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.entries: dict = {}
        self.hits = 0
        self.misses = 0
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self.entries[rec["key"]] = (rec["bits"], rec["status"])
        self._pending = []

    def get(self, key):
        hit = self.entries.get(key)
        if hit is None:
            self.misses += 1
        else:
            self.hits += 1
        return hit

    def put(self, key, bits, status):
        if key not in self.entries:
            self.entries[key] = (bits, status)
            self._pending.append({"key": key, "bits": bits, "status": status})

    def flush(self):
        if self.path and self._pending:
            with open(self.path, "a", encoding="utf-8") as fh:
                for rec in self._pending:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._pending = []


@dataclass
class Collection:
    table: NodeTable
    tests: list
    oracles: dict  # test id -> RunResult (with events)
    samples: dict  # node index -> list of MutationSpec
    observations: ObservationSet
    metadata: list = field(default_factory=list)
    status_counts: dict = field(default_factory=dict)
    cache_hits: int = 0

    def per_input(self) -> dict:
        return {t.id: self.observations.for_test(t.id) for t in self.tests}


def pooled_values(table: NodeTable, oracles: dict, tests) -> dict:
    """Oracle values of every node concatenated over the suite, in test order."""
    pooled = {n.index: [] for n in table}
    for t in tests:
        res = oracles[t.id]
        for n in table:
            pooled[n.index].extend(res.trajectories[n.index])
    return pooled


def sample_all(table: NodeTable, pooled: dict, nmpn: int, seed: int) -> dict:
    samples = {}
    for n in table:
        values = pooled[n.index]
        if n.kind == "output":
            samples[n.index] = []  # printed output is observed, never overwritten
            continue
        if not values and (n.domain is None or n.domain.kind not in ("bool", "bounded-int")):
            # never executed: any mutation is vacuous, and Gaussian sampling is undefined
            samples[n.index] = []
            continue
        samples[n.index] = sample_mutations(n, values, nmpn, seed)
    return samples


def _bits(changed) -> str:
    return "".join("1" if c else "0" for c in changed)


def _run_chunk(args):
    """Worker entry point: all mutations of one node against one test."""
    source, test, mutations, budget = args
    program = parse(source)
    table = NodeTable(program)
    oracle = run_oracle(program, test, table, budget)
    out = []
    for m in mutations:
        res = run_mutant(program, test, m, table, budget)
        out.append((_bits(diff_trajectories(oracle, res)), res.status))
    return out


def collect(source: str, tests, nmpn: int, seed: int, jobs: int = 1,
            cache: Optional[RunCache] = None, step_budget: int = STEP_BUDGET,
            nodes=None, keep_timeouts: bool = False) -> Collection:
    """Run the oracle and all sampled mutants; return weighted observations.

    ``nodes`` restricts which nodes are mutated (default: all).  Runs that hit
    the step budget are listed in the metadata but, unless ``keep_timeouts``,
    contribute no observation: where a non-terminating run stops is an
    artifact of the budget, not behavior of the program.
    """
    if nmpn < 1:
        raise ValueError("N_mpn must be at least 1")
    program = parse(source)
    table = NodeTable(program)
    oracles = {t.id: run_oracle(program, t, table, step_budget) for t in tests}
    for t in tests:
        if oracles[t.id].status != OK:
            log.warning("oracle run on test %s ended with %s", t.id, oracles[t.id].status)
    pooled = pooled_values(table, oracles, tests)
    samples = sample_all(table, pooled, nmpn, seed)
    targets = [n.index for n in table] if nodes is None else sorted(nodes)

    # one chunk per (node, test); results keyed for a deterministic merge
    chunks, chunk_keys = [], []
    results: dict = {}
    hits_before = cache.hits if cache else 0
    for k in targets:
        specs = samples[k]
        if not specs:
            continue
        for t in tests:
            keys = [run_key(source, t, m, seed) for m in specs]
            cached = [cache.get(key) if cache else None for key in keys]
            if all(c is not None for c in cached):
                results[(k, t.id)] = cached
                continue
            chunks.append((source, t, specs, step_budget))
            chunk_keys.append((k, t.id, keys))

    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_run_chunk, chunks, chunksize=max(1, len(chunks) // (4 * jobs))))
    else:
        outs = [_run_chunk(c) for c in chunks]
    for (k, tid, keys), out in zip(chunk_keys, outs):
        results[(k, tid)] = out
        if cache is not None:
            for key, (bits, status) in zip(keys, out):
                cache.put(key, bits, status)
    if cache is not None:
        cache.flush()

    observations, metadata = [], []
    status_counts: dict = {}
    for k in targets:
        specs = samples[k]
        if not specs:
            continue
        weight = Fraction(1, len(specs))
        for ordinal, m in enumerate(specs):
            for t in tests:
                bits, status = results[(k, t.id)][ordinal]
                used = keep_timeouts or status != TIMEOUT
                if used:
                    observations.append(Observation(k, ordinal, t.id, tuple(b == "1" for b in bits), weight))
                metadata.append({
                    "mutated_node": k, "ordinal": ordinal, "test_id": t.id,
                    "value": "!neg" if m.negate else _encode_scalar(m.value), "status": status,
                    "used": used,
                })
                status_counts[status] = status_counts.get(status, 0) + 1
    obs = ObservationSet(observations, len(table))
    return Collection(table, list(tests), oracles, samples, obs, metadata, status_counts,
                      (cache.hits - hits_before) if cache else 0)


# --------------------------------------------------------------------------
# Whole analyses


@dataclass
class Analysis:
    collection: Collection
    structure: object  # CausalStructure
    model: object  # CPDM
    dd: dict  # edge -> DependenceScore
    diagnostics: dict


def covering_tests(col: Collection, j: int, test_ids=None) -> list:
    ids = [t.id for t in col.tests] if test_ids is None else list(test_ids)
    return [t for t in ids if col.oracles[t].covered(j)]


def model_for_tests(col: Collection, test_ids=None, provenance=None) -> Analysis:
    """Structure, direct dependences and CPDM from the observations of ``test_ids``."""
    from .cpdm import build_cpdm
    from .discovery import build_structure
    from .effects import direct_dependence

    ids = [t.id for t in col.tests] if test_ids is None else list(test_ids)
    obs = col.observations.for_tests(ids)
    oracles = {t: col.oracles[t] for t in ids}
    structure = build_structure(col.table, obs, oracles)
    per = {t: obs.for_test(t) for t in ids}
    dd = {(i, j): direct_dependence(per, structure, i, j, covering_tests(col, j, ids))
          for i, j in structure.edges}
    labels = {n.index: n.label for n in col.table}
    model = build_cpdm(structure, dd, labels, provenance)
    undefined = sorted(f"{i}->{j}:{f}" for (i, j), s in dd.items() for f in s.flags)
    diagnostics = {
        "tests": ids,
        "observations": len(obs),
        "run_status": dict(sorted(col.status_counts.items())),
        "timeouts_dropped": sum(1 for m in col.metadata if not m.get("used", True)),
        "mutual_edges_removed": structure.diagnostics["mutual_edges_removed"],
        "cycle_edges_removed": structure.diagnostics["cycle_edges_removed"],
        "undefined_terms": undefined,
        "negative_direct_dependence": sorted(f"{i}->{j}" for (i, j), s in dd.items() if s.value < 0),
    }
    return Analysis(col, structure, model, dd, diagnostics)


def analyze(source: str, tests, nmpn: int, seed: int, jobs: int = 1,
            cache: Optional[RunCache] = None, suite_id: str = "", keep_timeouts: bool = False) -> Analysis:
    import hashlib

    col = collect(source, tests, nmpn, seed, jobs=jobs, cache=cache, keep_timeouts=keep_timeouts)
    provenance = {
        "suite": suite_id,
        "nmpn": nmpn,
        "seed": seed,
        "program_sha256": hashlib.sha256(source.encode()).hexdigest(),
        "tests": len(tests),
    }
    return model_for_tests(col, None, provenance)


@dataclass
class Localization:
    out_node: int
    verdicts: dict
    cdfl: object  # SuspiciousnessRanking over nodes
    sbfl: object  # SuspiciousnessRanking over lines
    structure: object
    collection: Collection
    fault_ranks: dict = field(default_factory=dict)  # method -> rank of the fault
    cdfl_ties: list = field(default_factory=list)  # nodes sharing the faulty node's raw score


def localize(source: str, tests, nmpn: int, seed: int, out_node: Optional[int] = None,
             fault=None, jobs: int = 1, cache: Optional[RunCache] = None,
             keep_timeouts: bool = False) -> Localization:
    """CDFL and Ochiai rankings for one program; ranks of ``fault`` when given."""
    from .cdfl import apply_tiebreaker, cdfl_scores, sbfl_ochiai, select_output_node
    from .discovery import build_structure
    from .runtime import resolve_verdicts

    program = parse(source)
    table = NodeTable(program)
    verdicts = resolve_verdicts(program, tests, table)
    missing = [t.id for t in tests if t.id not in verdicts]
    if missing:
        raise ValueError(f"tests without verdict or expected output: {missing}")
    failing = [t.id for t in tests if verdicts[t.id] == "fail"]
    passing = [t.id for t in tests if verdicts[t.id] == "pass"]
    if not failing:
        raise NoFailingTests("no failing test: nothing to localize")
    out = select_output_node(table, out_node)
    col = collect(source, tests, nmpn, seed, jobs=jobs, cache=cache, keep_timeouts=keep_timeouts)
    structure = build_structure(col.table, col.observations, col.oracles)
    per = col.per_input()
    cdfl = cdfl_scores(per, structure, out, failing, passing, table)
    statement_lines = statement_lines_of(program)
    coverage = {t.id: col.oracles[t.id].lines & statement_lines for t in tests}
    sbfl = sbfl_ochiai(coverage, verdicts, statement_lines)
    loc = Localization(out, verdicts, cdfl, sbfl, structure, col)
    if fault is not None:
        nodes = [k for k in fault.nodes if k != out]
        loc.fault_ranks["cdfl"] = min(cdfl.position(k) for k in nodes)
        best = min(nodes, key=cdfl.position)
        loc.cdfl_ties = cdfl.tied_with(best)
        lines = fault.lines(table)
        for policy in ("avg", "min", "max", "line-order"):
            loc.fault_ranks[f"sbfl-{policy}"] = apply_tiebreaker(sbfl, policy, lines)
    return loc


class NoFailingTests(Exception):
    pass


def statement_lines_of(program: Program) -> set:
    from .minilang import _walk_stmts

    lines = {g.pos.line for g in program.globals}
    for fn in program.functions:
        lines |= {s.pos.line for s in _walk_stmts(fn.body)}
    return lines


def load_manifest(path: str) -> list:
    """Corpus entries with program/suite paths resolved against the manifest."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for e in doc["programs"]:
        entries.append({
            "name": e["name"],
            "program": os.path.join(base, e["program"]),
            "suite": os.path.join(base, e["suite"]),
            "fault_nodes": tuple(e["fault"]["nodes"]),
            "description": e["fault"].get("description", ""),
        })
    return entries


def run_corpus(manifest_path: str, nmpn: int, seed: int) -> dict:
    from .cdfl import FaultSpec, acc_at_n
    from .runtime import parse_suite

    report = {"nmpn": nmpn, "seed": seed, "entries": []}
    for e in load_manifest(manifest_path):
        with open(e["program"], encoding="utf-8") as fh:
            source = fh.read()
        with open(e["suite"], encoding="utf-8") as fh:
            tests = parse_suite(fh.read())
        fault = FaultSpec(e["fault_nodes"], e["description"])
        try:
            loc = localize(source, tests, nmpn, seed, fault=fault)
        except NoFailingTests:
            report["entries"].append({"name": e["name"], "skipped": True})
            continue
        report["entries"].append({
            "name": e["name"],
            "failing": sorted(t for t, v in loc.verdicts.items() if v == "fail"),
            "ranks": loc.fault_ranks,
            "cdfl_ties_with_fault": loc.cdfl_ties,
            "cdfl_tie_groups": loc.cdfl.tie_groups(),
        })
    used = [x for x in report["entries"] if not x.get("skipped")]
    report["acc"] = {
        m: {str(n): acc_at_n([x["ranks"][m] for x in used], n) for n in (1, 3, 5, 10)}
        for m in ("cdfl", "sbfl-avg", "sbfl-min", "sbfl-max", "sbfl-line-order")
    }
    return report
