"""Causal program dependence models: weighted structures, bands, diffs, export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .discovery import CausalStructure

SCHEMA = "cpdm/1"
PEN_WIDTHS = (1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass
class CPDM:
    structure: CausalStructure
    weights: dict  # (parent, child) -> direct dependence
    labels: dict = field(default_factory=dict)  # node -> display label
    provenance: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)  # edge -> list of diagnostics

    def __post_init__(self):
        edges = set(self.structure.edges)
        if set(self.weights) != edges:
            missing = sorted(edges - set(self.weights))
            extra = sorted(set(self.weights) - edges)
            raise ValueError(f"weights must cover exactly the edges (missing {missing}, extra {extra})")

    @property
    def nodes(self) -> list:
        return list(self.structure.nodes)

    @property
    def edges(self) -> list:
        return self.structure.edges

    def label(self, k) -> str:
        return self.labels.get(k, f"<{k}>")

    def to_json(self) -> str:
        doc = {
            "schema": SCHEMA,
            "nodes": [{"index": k, "label": self.label(k)} for k in sorted(self.nodes)],
            "edges": [{"source": p, "target": c, "weight": self.weights[(p, c)],
                       "flags": list(self.flags.get((p, c), []))} for p, c in self.edges],
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CPDM":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        nodes = [n["index"] for n in doc["nodes"]]
        parents = {k: [] for k in nodes}
        weights, flags = {}, {}
        for e in doc["edges"]:
            parents[e["target"]].append(e["source"])
            weights[(e["source"], e["target"])] = e["weight"]
            if e.get("flags"):
                flags[(e["source"], e["target"])] = e["flags"]
        structure = CausalStructure(nodes, {k: tuple(sorted(v)) for k, v in parents.items()})
        labels = {n["index"]: n["label"] for n in doc["nodes"]}
        return cls(structure, weights, labels, doc.get("provenance", {}), flags)


def build_cpdm(structure: CausalStructure, dd: dict, labels=None, provenance=None) -> CPDM:
    """Attach direct dependences to the structure; ``dd`` maps edge -> score or float."""
    weights, flags = {}, {}
    for e in structure.edges:
        if e not in dd:
            raise ValueError(f"no direct dependence for edge {e}")
        score = dd[e]
        value = getattr(score, "value", score)
        weights[e] = float(value)
        f = list(getattr(score, "flags", []))
        if value < 0:
            f.append("negative-estimate")
        if f:
            flags[e] = f
    return CPDM(structure, weights, dict(labels or {}), dict(provenance or {}), flags)


def _clamp(w: float) -> float:
    return min(max(w, 0.0), 1.0)


def filter_band(m: CPDM, lo: float, hi: float, lo_inclusive: bool = False,
                hi_inclusive: bool = False) -> CPDM:
    """Keep edges whose (clamped) weight lies between ``lo`` and ``hi``.

    Bounds are exclusive by default; either end can be made inclusive.
    Nodes are kept so that filtered models stay comparable.
    """
    if not (0.0 <= lo < hi <= 1.0 + 1e-6):
        raise ValueError(f"invalid band ({lo}, {hi})")

    def keep(w):
        w = _clamp(w)
        above = w >= lo if lo_inclusive else w > lo
        below = w <= hi if hi_inclusive else w < hi
        return above and below

    kept = {e: w for e, w in m.weights.items() if keep(w)}
    parents = {k: tuple(sorted(p for p, c in kept if c == k)) for k in m.nodes}
    structure = CausalStructure(m.nodes, parents)
    flags = {e: f for e, f in m.flags.items() if e in kept}
    return CPDM(structure, kept, dict(m.labels), dict(m.provenance), flags)


@dataclass
class ModelDiff:
    only_a: dict  # edge -> weight in A
    only_b: dict  # edge -> weight in B
    both: dict  # edge -> (weight in A, weight in B)
    labels: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list)


def diff_models(a: CPDM, b: CPDM) -> ModelDiff:
    if set(a.nodes) != set(b.nodes):
        raise ValueError("models are over different node sets")
    ea, eb = set(a.edges), set(b.edges)
    return ModelDiff(
        {e: a.weights[e] for e in sorted(ea - eb)},
        {e: b.weights[e] for e in sorted(eb - ea)},
        {e: (a.weights[e], b.weights[e]) for e in sorted(ea & eb)},
        {**b.labels, **a.labels},
        sorted(a.nodes),
    )


def pen_class(w: float) -> int:
    """0..4: five equal-width weight bins over [0, 1]."""
    return min(4, int(_clamp(w) * 5))


def _gray(w: float) -> str:
    # gray0 is black; heavier edges are darker
    return f"gray{int(round(85 - 85 * _clamp(w)))}"


def _dot_label(text: str) -> str:
    return json.dumps(text)


def export_dot(m, title: Optional[str] = None) -> str:
    """DOT text for a CPDM or a ModelDiff; output order is fully sorted."""
    name = json.dumps(title or ("cpdm_diff" if isinstance(m, ModelDiff) else "cpdm"))
    lines = [f"digraph {name} {{", '  node [shape=box, fontname="Helvetica"];']
    if isinstance(m, ModelDiff):
        labels, nodes = m.labels, m.nodes
    else:
        labels, nodes = m.labels, sorted(m.nodes)
    for k in nodes:
        lines.append(f"  n{k} [label={_dot_label(labels.get(k, f'<{k}>'))}];")
    if isinstance(m, ModelDiff):
        styled = [(e, w, 'color="red", style="solid"') for e, w in m.only_a.items()]
        styled += [(e, w, 'color="blue", style="dashed"') for e, w in m.only_b.items()]
        styled += [(e, max(wa, wb), 'color="gray60", style="solid"') for e, (wa, wb) in m.both.items()]
        for (p, c), w, style in sorted(styled):
            lines.append(f"  n{p} -> n{c} [{style}, penwidth={PEN_WIDTHS[pen_class(w)]}];")
    else:
        for p, c in m.edges:
            w = m.weights[(p, c)]
            lines.append(
                f'  n{p} -> n{c} [penwidth={PEN_WIDTHS[pen_class(w)]}, color="{_gray(w)}", '
                f'label="{w:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
