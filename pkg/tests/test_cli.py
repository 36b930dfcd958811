import json
import os

import pytest

from conftest import DATA

from cpda.cli import main, parse_band, read_config, UsageError
from cpda.cpdm import CPDM

CHAIN = "def main() {\n    a = read()\n    b = a * 2\n    c = b + 1\n    return c\n}\n"
CHAIN_SUITE = "t1 in: 1 out: 3\nt2 in: 4 out: 9\nt3 in: 0 out: 1\n"
ARTIFACTS = ["observations.csv", "observations.meta.jsonl", "structure.edges", "model.json",
             "scores.csv", "model.dot", "diagnostics.json"]


@pytest.fixture
def chain(tmp_path):
    prog = tmp_path / "chain.mini"
    suite = tmp_path / "chain.suite"
    prog.write_text(CHAIN)
    suite.write_text(CHAIN_SUITE)
    return str(prog), str(suite)


def read_all(directory, names=ARTIFACTS):
    return {n: open(os.path.join(directory, n), encoding="utf-8").read() for n in names}


def test_analyze_writes_artifacts(chain, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["analyze", "--program", chain[0], "--suite", chain[1], "--nmpn", "5",
                 "--seed", "3", "--output-dir", str(out)])
    assert code == 0
    files = read_all(out)
    model = CPDM.from_json(files["model.json"])
    assert model.edges == [(1, 2), (2, 3), (3, 4)]
    assert model.provenance["nmpn"] == 5 and model.provenance["seed"] == 3
    assert files["structure.edges"] == "1 2\n2 3\n3 4\n"
    assert files["observations.csv"].startswith("mutated_node,ordinal,test_id,weight,changed\n")
    diag = json.loads(files["diagnostics.json"])
    assert {"undefined_terms", "mutual_edges_removed", "timeouts_dropped", "run_status"} <= set(diag)
    assert "4 nodes, 3 edges" in capsys.readouterr().out


def test_cache_hit_reuses_runs(chain, tmp_path):
    out = tmp_path / "out"
    args = ["analyze", "--program", chain[0], "--suite", chain[1], "--nmpn", "4", "--output-dir", str(out)]
    assert main(args) == 0
    first = read_all(out)
    assert json.loads(first["diagnostics.json"])["cache_hits"] == 0
    assert main(args) == 0
    second = read_all(out)
    assert json.loads(second["diagnostics.json"])["cache_hits"] > 0
    for name in ARTIFACTS[:-1]:
        assert first[name] == second[name]


def test_jobs_do_not_change_results(chain, tmp_path):
    outs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"out{jobs}"
        assert main(["analyze", "--program", chain[0], "--suite", chain[1], "--nmpn", "4", "--no-cache",
                     "--jobs", jobs, "--output-dir", str(out)]) == 0
        outs.append(read_all(out))
    assert outs[0] == outs[1]


def test_usage_errors(chain, tmp_path, capsys):
    assert main(["analyze", "--program", chain[0], "--suite", chain[1], "--nmpn", "0"]) == 1
    assert main(["analyze", "--program", str(tmp_path / "missing.mini"), "--suite", chain[1]]) == 1
    assert main(["analyze", "--suite", chain[1]]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["analyze", "--program", chain[0], "--suite", chain[1], "--jobs", "0"]) == 1
    err = capsys.readouterr().err
    assert "nmpn" in err and "cannot read program" in err


def test_parse_error_is_analysis_error(tmp_path, chain, capsys):
    bad = tmp_path / "bad.mini"
    bad.write_text("def main() { x = }\n")
    assert main(["analyze", "--program", str(bad), "--suite", chain[1], "--output-dir",
                 str(tmp_path / "o")]) == 2
    assert "parse failed" in capsys.readouterr().err


def test_config_file_and_flag_precedence(chain, tmp_path):
    conf = tmp_path / "run.conf"
    out = tmp_path / "from-config"
    conf.write_text(f"# analysis settings\nprogram = {chain[0]}\nsuite = {chain[1]}\nnmpn = 3\n"
                    f"seed = 9\noutput-dir = {out}\n")
    assert main(["analyze", "--config", str(conf), "--seed", "4", "--no-cache"]) == 0
    prov = CPDM.from_json((out / "model.json").read_text()).provenance
    assert prov["nmpn"] == 3 and prov["seed"] == 4


def test_config_syntax(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("nmpn 3\n")
    with pytest.raises(UsageError):
        read_config(str(conf))


def test_seed_required_in_ci(chain, tmp_path, monkeypatch):
    monkeypatch.setenv("CI", "1")
    base = ["analyze", "--program", chain[0], "--suite", chain[1], "--nmpn", "2", "--no-cache",
            "--output-dir", str(tmp_path / "o")]
    assert main(base) == 1
    assert main(base + ["--seed", "1"]) == 0


def test_band_parsing():
    assert parse_band("0.2:0.8") == (0.2, 0.8)
    assert parse_band(None) is None
    for text in ("0.8:0.2", "x:1", "0.5", "-1:0.5"):
        with pytest.raises(UsageError):
            parse_band(text)


# --------------------------------------------------------------------------
# export


@pytest.fixture
def two_models(tmp_path):
    a = {"schema": "cpdm/1", "provenance": {},
         "nodes": [{"index": k, "label": f"<{k}>"} for k in (1, 2, 3)],
         "edges": [{"source": 1, "target": 2, "weight": 0.9, "flags": []},
                   {"source": 2, "target": 3, "weight": 0.5, "flags": []}]}
    b = dict(a, edges=[{"source": 1, "target": 3, "weight": 0.3, "flags": []},
                       {"source": 2, "target": 3, "weight": 0.4, "flags": []}])
    other = dict(a, nodes=[{"index": 1, "label": "<1>"}], edges=[])
    paths = []
    for name, doc in (("a", a), ("b", b), ("other", other)):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(doc))
        paths.append(str(path))
    return paths


def test_export_band(two_models, capsys):
    assert main(["export", "--model", two_models[0], "--band", "0.8:1", "--hi-inclusive"]) == 0
    text = capsys.readouterr().out
    assert "n1 -> n2" in text and "n2 -> n3" not in text


def test_export_diff_to_file(two_models, tmp_path):
    out = tmp_path / "diff.dot"
    assert main(["export", "--model", two_models[0], "--diff", two_models[1], "--output", str(out)]) == 0
    text = out.read_text()
    assert 'n1 -> n2 [color="red"' in text
    assert 'n1 -> n3 [color="blue", style="dashed"' in text
    assert 'n2 -> n3 [color="gray60"' in text


def test_export_errors(two_models, tmp_path):
    assert main(["export", "--model", two_models[0], "--band", "0.9:0.1"]) == 1
    assert main(["export", "--model", str(tmp_path / "nope.json")]) == 1
    assert main(["export", "--model", two_models[0], "--diff", two_models[2]]) == 2


# --------------------------------------------------------------------------
# localize and corpus


def test_localize_table1(tmp_path, capsys):
    out = tmp_path / "loc"
    code = main(["localize", "--program", str(DATA / "table1.mini"), "--suite", str(DATA / "table1.suite"),
                 "--output-dir", str(out)])
    assert code == 0
    rows = (out / "ranking.cdfl.csv").read_text().splitlines()
    assert rows[0] == "rank,node,line,score,method"
    assert [r.split(",")[1] for r in rows[1:]] == ["3", "1", "2"]
    assert (out / "ranking.sbfl.csv").exists()
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["out_node"] == 4 and diag["verdicts"] == {"t1": "fail"}
    assert "1. node 3" in capsys.readouterr().out


def test_localize_all_passing_skips(chain, tmp_path, capsys):
    assert main(["localize", "--program", chain[0], "--suite", chain[1], "--output-dir",
                 str(tmp_path / "o")]) == 0
    assert "skipped" in capsys.readouterr().out
    assert not (tmp_path / "o" / "ranking.cdfl.csv").exists()


def test_localize_bad_output_node(tmp_path):
    code = main(["localize", "--program", str(DATA / "table1.mini"), "--suite", str(DATA / "table1.suite"),
                 "--out-node", "99", "--output-dir", str(tmp_path / "o")])
    assert code == 2


def test_corpus_command(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["corpus", "--output-dir", str(out)]) == 0
    report = json.loads((out / "corpus.json").read_text())
    assert len(report["entries"]) == 10 and report["nmpn"] == 20
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["method", "acc@1", "acc@3", "acc@5", "acc@10"]
    assert text.splitlines()[1].split()[0] == "cdfl"
