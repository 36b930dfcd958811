import re
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpda.cpdm import CPDM, build_cpdm, diff_models, export_dot, filter_band, pen_class
from cpda.discovery import CausalStructure
from cpda.effects import DependenceScore
from cpda.pipeline import analyze
from cpda.runtime import parse_suite


def model(weights, nodes=None, labels=None):
    nodes = nodes or sorted({k for e in weights for k in e})
    parents = {k: tuple(sorted(p for p, c in weights if c == k)) for k in nodes}
    return build_cpdm(CausalStructure(nodes, parents), dict(weights), labels)


@st.composite
def models(draw):
    n = draw(st.integers(2, 6))
    pairs = [(p, c) for c in range(1, n + 1) for p in range(1, c)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    weights = {e: draw(st.floats(-0.3, 1.0)) for e in edges}
    return model(weights, list(range(1, n + 1)))


def test_empty_model():
    m = build_cpdm(CausalStructure([], {}), {})
    assert m.edges == [] and m.weights == {}
    assert export_dot(m) == 'digraph "cpdm" {\n  node [shape=box, fontname="Helvetica"];\n}\n'


def test_missing_weight_is_an_error():
    s = CausalStructure([1, 2], {2: (1,)})
    with pytest.raises(ValueError):
        build_cpdm(s, {})
    with pytest.raises(ValueError):
        CPDM(s, {(1, 2): 0.5, (2, 1): 0.1})


def test_scores_and_negative_flags():
    s = CausalStructure([1, 2, 3], {2: (1,), 3: (2,)})
    m = build_cpdm(s, {(1, 2): DependenceScore(1, 2, "direct", 0.5, ["undefined-stratum"]), (2, 3): -0.25})
    assert m.weights == {(1, 2): 0.5, (2, 3): -0.25}
    assert m.flags == {(1, 2): ["undefined-stratum"], (2, 3): ["negative-estimate"]}


def test_chain_program_weights():
    src = "def main() {\n    a = read()\n    b = a\n    c = b\n}\n"
    tests = parse_suite("t1 in: 1\nt2 in: 5\nt3 in: -2\n")
    an = analyze(src, tests, 10, 0)
    obs = an.collection.observations
    assert an.model.edges == [(1, 2), (2, 3)]
    for i, j in an.model.edges:
        # no mediators: mean over tests of P(S_j | S_i changed) - P(S_j | S_i unchanged);
        # a test where either side has no support contributes 0 and is flagged
        diffs, undefined = [], False
        for t in obs.tests():
            rows = [o for o in obs.for_test(t).observations if o.mutated != j]

            def p(v):
                sel = [o for o in rows if o.changed[i - 1] == v]
                total = sum(o.weight for o in sel)
                return sum(o.weight for o in sel if o.changed[j - 1]) / total if total else None

            p1, p0 = p(True), p(False)
            undefined |= p1 is None or p0 is None
            diffs.append(Fraction(0) if p1 is None or p0 is None else p1 - p0)
        assert an.model.weights[(i, j)] == pytest.approx(float(sum(diffs) / len(diffs)), abs=1e-12)
        assert ("undefined-stratum" in an.model.flags.get((i, j), [])) == undefined


def test_wc_full_model(wc_models):
    m = wc_models["full"].model
    assert m.nodes == list(range(1, 21))
    assert set(m.weights) == set(m.edges)
    assert m.label(5) == "<5>_pred1"
    assert m.provenance == {} or "nmpn" in m.provenance


# --------------------------------------------------------------------------
# Bands


def test_band_identity():
    m = model({(1, 2): 0.0, (2, 3): 0.5, (1, 3): 1.0})
    assert filter_band(m, 0, 1 + 1e-6, lo_inclusive=True).weights == m.weights


def test_band_bounds_exclusive_by_default():
    m = model({(1, 2): 0.2, (2, 3): 0.8, (1, 3): 0.5})
    assert set(filter_band(m, 0.2, 0.8).weights) == {(1, 3)}
    assert set(filter_band(m, 0.2, 0.8, lo_inclusive=True, hi_inclusive=True).weights) == set(m.weights)


def test_band_clamps_negative_weights():
    m = model({(1, 2): -0.3, (2, 3): 0.1})
    assert set(filter_band(m, 0, 0.2, lo_inclusive=True).weights) == {(1, 2), (2, 3)}
    assert set(filter_band(m, 0, 0.2).weights) == {(2, 3)}


@pytest.mark.parametrize("lo, hi", [(-0.1, 0.5), (0.5, 0.5), (0.8, 0.2), (0.0, 1.5)])
def test_invalid_band(lo, hi):
    with pytest.raises(ValueError):
        filter_band(model({(1, 2): 0.5}), lo, hi)


@settings(max_examples=60, deadline=None)
@given(models())
def test_bands_partition_edges(m):
    low = set(filter_band(m, 0, 0.2, lo_inclusive=True, hi_inclusive=True).edges)
    mid = set(filter_band(m, 0.2, 0.8).edges)
    high = set(filter_band(m, 0.8, 1.0, lo_inclusive=True, hi_inclusive=True).edges)
    assert low | mid | high == set(m.edges)
    assert not (low & mid) and not (low & high) and not (mid & high)
    assert filter_band(m, 0, 1 + 1e-6, lo_inclusive=True).weights == m.weights


def test_wc_high_band(wc_models):
    edges = set(filter_band(wc_models["full"].model, 0.8, 1.0, hi_inclusive=True).edges)
    # the character-reading cluster and the character counter
    assert {(5, 15), (15, 16)} <= edges
    assert (1, 7) in edges


def test_wc_middle_band(wc_models):
    edges = set(filter_band(wc_models["full"].model, 0.2, 0.8).edges)
    assert {(20, 10), (14, 11)} <= edges


# --------------------------------------------------------------------------
# Diffs


def test_diff_identity():
    m = model({(1, 2): 0.5, (2, 3): 0.9})
    d = diff_models(m, m)
    assert d.only_a == {} and d.only_b == {}
    assert d.both == {(1, 2): (0.5, 0.5), (2, 3): (0.9, 0.9)}


def test_diff_mismatched_universe():
    with pytest.raises(ValueError):
        diff_models(model({(1, 2): 0.5}), model({(1, 3): 0.5}))


@settings(max_examples=60, deadline=None)
@given(models(), models())
def test_diff_antisymmetric_and_partitions(a, b):
    if set(a.nodes) != set(b.nodes):
        return
    ab, ba = diff_models(a, b), diff_models(b, a)
    assert set(ab.only_a) == set(ba.only_b) and set(ab.only_b) == set(ba.only_a)
    assert set(ab.both) == set(ba.both)
    union = set(a.edges) | set(b.edges)
    parts = [set(ab.only_a), set(ab.only_b), set(ab.both)]
    assert set().union(*parts) == union
    assert sum(len(p) for p in parts) == len(union)


def test_wc_group_diffs(wc_models):
    d = diff_models(wc_models["oneword"].model, wc_models["onechar"].model)
    sources = {p for p, _ in d.only_a}
    assert {13, 15, 16} <= sources
    d = diff_models(wc_models["multiline"].model, wc_models["oneline"].model)
    assert (15, 8) in d.only_b
    assert {(16, 8), (8, 9), (2, 9)} <= set(d.only_a)


# --------------------------------------------------------------------------
# Export


def _penwidths(text):
    return [float(x) for x in re.findall(r"penwidth=([0-9.]+)", text)]


def test_single_edge_max_pen_width():
    text = export_dot(model({(1, 2): 0.9}))
    edges = [line for line in text.splitlines() if "->" in line]
    assert len(edges) == 1
    assert _penwidths(text) == [5.0]
    assert 'color="gray8"' in edges[0]


def test_pen_class_bins():
    assert [pen_class(w) for w in (-1, 0, 0.19, 0.2, 0.5, 0.79, 0.8, 1.0, 2)] == [0, 0, 0, 1, 2, 3, 4, 4, 4]


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_pen_width_and_gray_monotone(a, b):
    lo, hi = sorted((a, b))
    text = export_dot(model({(1, 2): lo, (1, 3): hi}))
    w_lo, w_hi = _penwidths(text)
    assert w_lo <= w_hi
    gray = [int(g) for g in re.findall(r'color="gray(\d+)"', text)]
    assert gray[0] >= gray[1]  # darker means a smaller gray level


@settings(max_examples=30, deadline=None)
@given(models())
def test_export_is_stable(m):
    again = CPDM.from_json(m.to_json())
    assert export_dot(m) == export_dot(again)
    assert again.to_json() == m.to_json()


def test_diff_styling():
    a = model({(1, 2): 0.9, (2, 3): 0.5}, [1, 2, 3])
    b = model({(2, 3): 0.4, (1, 3): 0.3}, [1, 2, 3])
    text = export_dot(diff_models(a, b), title="a-b")
    lines = [line.strip() for line in text.splitlines() if "->" in line]
    assert lines == [
        'n1 -> n2 [color="red", style="solid", penwidth=5.0];',
        'n1 -> n3 [color="blue", style="dashed", penwidth=2.0];',
        'n2 -> n3 [color="gray60", style="solid", penwidth=3.0];',
    ]
    assert text.startswith('digraph "a-b" {')


def test_json_schema_checked():
    with pytest.raises(ValueError):
        CPDM.from_json('{"schema": "other", "nodes": [], "edges": []}')


def test_json_round_trip_keeps_everything():
    m = model({(1, 2): 0.25, (2, 3): -0.5}, labels={1: "<1>a"})
    m.provenance.update({"nmpn": 5, "seed": 1})
    again = CPDM.from_json(m.to_json())
    assert again.weights == m.weights and again.labels[1] == "<1>a"
    assert again.flags == m.flags and again.provenance == m.provenance
