"""Command line interface: ``cpda analyze | export | localize | corpus``.

Exit codes: 0 success, 1 usage or configuration error, 2 analysis error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources

from .cdfl import acc_at_n
from .cpdm import CPDM, diff_models, export_dot, filter_band
from .effects import scores_csv
from .minilang import MiniSyntaxError
from .observations import metadata_jsonl
from .pipeline import NoFailingTests, RunCache, analyze, localize, run_corpus
from .runtime import parse_suite

log = logging.getLogger("cpda")

EXIT_OK, EXIT_USAGE, EXIT_ANALYSIS = 0, 1, 2
DEFAULTS = {"nmpn": 20, "seed": 0, "jobs": 1, "output_dir": "cpda-out", "band": None}


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; keys use the flag names (``output-dir``)."""
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            conf[key.replace("-", "_")] = value
    return conf


def parse_band(text):
    if text is None:
        return None
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"band must look like LO:HI, got {text!r}")
    if not (0.0 <= lo < hi <= 1.0 + 1e-6):
        raise UsageError(f"invalid band {text!r}: need 0 <= LO < HI <= 1")
    return lo, hi


def _settings(args) -> dict:
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    out = dict(DEFAULTS)
    out.update(conf)
    for key, value in vars(args).items():
        if value is not None and key != "config":
            out[key] = value
    for key in ("nmpn", "seed", "jobs", "out_node"):
        if out.get(key) is not None:
            try:
                out[key] = int(out[key])
            except (TypeError, ValueError):
                raise UsageError(f"{key} must be an integer")
    if out["nmpn"] < 1:
        raise UsageError("--nmpn must be at least 1")
    if out["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    if os.environ.get("CI") and "seed" not in conf and args.seed is None:
        raise UsageError("a seed is required in CI mode (--seed)")
    return out


def _read(path, what):
    if not path:
        raise UsageError(f"missing --{what}")
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise UsageError(f"cannot read {what} {path}: {e.strerror}")


def _write(directory, name, text):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _load_inputs(s):
    source = _read(s.get("program"), "program")
    suite_text = _read(s.get("suite"), "suite")
    try:
        tests = parse_suite(suite_text)
    except ValueError as e:
        raise StageError("suite", e)
    return source, tests


def cmd_analyze(s) -> int:
    source, tests = _load_inputs(s)
    out_dir = s["output_dir"]
    cache = None if s.get("no_cache") else RunCache(os.path.join(out_dir, "runs.cache.jsonl"))
    os.makedirs(out_dir, exist_ok=True)
    try:
        result = analyze(source, tests, s["nmpn"], s["seed"], jobs=s["jobs"], cache=cache,
                         suite_id=os.path.basename(s["suite"]))
    except MiniSyntaxError as e:
        raise StageError("parse", e)
    col = result.collection
    _write(out_dir, "observations.csv", col.observations.to_csv())
    _write(out_dir, "observations.meta.jsonl", metadata_jsonl(col.metadata))
    _write(out_dir, "structure.edges", result.structure.to_edge_list())
    _write(out_dir, "model.json", result.model.to_json())
    _write(out_dir, "scores.csv", scores_csv(result.dd.values()))
    _write(out_dir, "model.dot", export_dot(result.model))
    diag = dict(result.diagnostics)
    diag["cache_hits"] = col.cache_hits
    _write(out_dir, "diagnostics.json", json.dumps(diag, indent=2, sort_keys=True) + "\n")
    print(f"{len(result.structure.nodes)} nodes, {len(result.structure.edges)} edges, "
          f"{len(col.observations)} observations -> {out_dir}")
    return EXIT_OK


def _load_model(path) -> CPDM:
    text = _read(path, "model")
    try:
        return CPDM.from_json(text)
    except (ValueError, KeyError) as e:
        raise StageError("model", e)


def cmd_export(s) -> int:
    model = _load_model(s.get("model"))
    band = parse_band(s.get("band"))
    lo_inc = bool(s.get("lo_inclusive"))
    hi_inc = bool(s.get("hi_inclusive"))
    if band:
        model = filter_band(model, *band, lo_inclusive=lo_inc, hi_inclusive=hi_inc)
    if s.get("diff"):
        other = _load_model(s["diff"])
        if band:
            other = filter_band(other, *band, lo_inclusive=lo_inc, hi_inclusive=hi_inc)
        try:
            text = export_dot(diff_models(model, other))
        except ValueError as e:
            raise StageError("diff", e)
    else:
        text = export_dot(model)
    if s.get("output"):
        _write(os.path.dirname(s["output"]) or ".", os.path.basename(s["output"]), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_localize(s) -> int:
    source, tests = _load_inputs(s)
    out_dir = s["output_dir"]
    try:
        loc = localize(source, tests, s["nmpn"], s["seed"], out_node=s.get("out_node"), jobs=s["jobs"])
    except NoFailingTests as e:
        print(f"skipped: {e}")
        return EXIT_OK
    except (MiniSyntaxError, ValueError) as e:
        raise StageError("localize", e)
    _write(out_dir, "ranking.cdfl.csv", loc.cdfl.to_csv())
    _write(out_dir, "ranking.sbfl.csv", loc.sbfl.to_csv())
    diag = {"out_node": loc.out_node, "verdicts": loc.verdicts,
            "cdfl_raw_tie_groups": loc.cdfl.tie_groups(), "undefined_terms": loc.cdfl.flags}
    _write(out_dir, "diagnostics.json", json.dumps(diag, indent=2, sort_keys=True) + "\n")
    print(f"output node {loc.out_node}; top CDFL nodes:")
    for pos, e in enumerate(loc.cdfl.entries[:5], 1):
        print(f"  {pos}. node {e.element} (line {e.line}) {e.score:+.3f}")
    return EXIT_OK


def cmd_corpus(s) -> int:
    manifest = s.get("manifest")
    if manifest is None:
        manifest = str(resources.files("cpda") / "data" / "corpus" / "manifest.json")
    try:
        report = run_corpus(manifest, s["nmpn"], s["seed"])
    except (OSError, ValueError) as e:
        raise StageError("corpus", e)
    out_dir = s["output_dir"]
    _write(out_dir, "corpus.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    methods = ["cdfl", "sbfl-avg", "sbfl-min", "sbfl-max", "sbfl-line-order"]
    print("method           acc@1 acc@3 acc@5 acc@10")
    for m in methods:
        ranks = [e["ranks"][m] for e in report["entries"] if not e.get("skipped")]
        print(f"{m:<16} " + " ".join(f"{acc_at_n(ranks, n):>5}" for n in (1, 3, 5, 10)))
    skipped = [e["name"] for e in report["entries"] if e.get("skipped")]
    if skipped:
        print("skipped (no failing test): " + ", ".join(skipped))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpda", description="Causal program dependence analysis and fault localization.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, program=True):
        sp.add_argument("--config", help="key = value file; flags override it")
        if program:
            sp.add_argument("--program")
            sp.add_argument("--suite")
        sp.add_argument("--nmpn", type=int, help="mutations sampled per node (default 20)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--output-dir")

    a = sub.add_parser("analyze", help="build the dependence model")
    common(a)
    a.add_argument("--no-cache", action="store_true", default=None)

    e = sub.add_parser("export", help="render a model (or a diff of two) as DOT")
    e.add_argument("--config")
    e.add_argument("--model")
    e.add_argument("--band", help="LO:HI, exclusive unless --lo-inclusive/--hi-inclusive")
    e.add_argument("--lo-inclusive", action="store_true", default=None)
    e.add_argument("--hi-inclusive", action="store_true", default=None)
    e.add_argument("--diff", help="second model; edges only in the first are red, only in this one blue")
    e.add_argument("--output")

    loc = sub.add_parser("localize", help="rank fault suspects with CDFL and Ochiai")
    common(loc)
    loc.add_argument("--out-node", type=int)

    c = sub.add_parser("corpus", help="run the seeded-fault corpus")
    common(c, program=False)
    c.add_argument("--manifest")
    return p


COMMANDS = {"analyze": cmd_analyze, "export": cmd_export, "localize": cmd_localize, "corpus": cmd_corpus}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = _settings(args)
        return COMMANDS[args.command](settings)
    except UsageError as e:
        print(f"cpda: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        print(f"cpda: {e.stage} failed: {e}", file=sys.stderr)
        return EXIT_ANALYSIS
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # any other failure is an analysis error, not a crash
        print(f"cpda: analysis failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
