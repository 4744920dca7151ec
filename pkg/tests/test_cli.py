from __future__ import annotations

import json

import pytest

from conftest import APPENDIX, FIXTURES, MINI
from cod.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_OK, EXIT_REPLAY_MISS, main
from cod.lexicon import load_lexicon


def translate(tmp_path, *extra):
    return main(["translate", "--config", str(MINI / "run.toml"), "--out", str(tmp_path / "run.jsonl"), *extra])


def test_build_dict_replay(tmp_path, capsys):
    out = tmp_path / "lex.jsonl"
    code = main([
        "build-dict",
        "--corpus", str(FIXTURES / "build10" / "corpus.txt"),
        "--langs", "fra_Latn,deu_Latn",
        "--cache-dir", str(FIXTURES / "build10" / "cache"),
        "--out", str(out),
    ])
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("21 entries (21/25 verified)")
    assert len(load_lexicon(out)) == 21


def test_build_dict_drop_stopwords(tmp_path):
    out = tmp_path / "lex.jsonl"
    args = [
        "build-dict",
        "--corpus", str(FIXTURES / "build10" / "corpus.txt"),
        "--langs", "fra_Latn,deu_Latn",
        "--cache-dir", str(FIXTURES / "build10" / "cache"),
        "--out", str(out),
        "--drop-stopwords",
    ]
    assert main(args) == EXIT_OK
    assert len(load_lexicon(out)) <= 21


def test_translate_writes_report_and_summary(tmp_path, capsys):
    assert translate(tmp_path, "--summary", str(tmp_path / "s.md")) == EXIT_OK
    lines = (tmp_path / "run.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["type"] == "run"
    assert sum(json.loads(l)["type"] == "sentence" for l in lines) == 48
    assert (tmp_path / "s.md").read_text(encoding="utf-8") == capsys.readouterr().out


def test_translate_variant_and_chain_flags(tmp_path):
    ita = ("--directions", "eng_Latn-ita_Latn")
    # fra,deu builds the same chains as length 4; the reversed order was never recorded
    assert translate(tmp_path, "--chain", "fra_Latn,deu_Latn", *ita) == EXIT_OK
    assert translate(tmp_path, "--chain", "deu_Latn,fra_Latn", *ita) == EXIT_REPLAY_MISS
    assert translate(tmp_path, "--variant", "bilingual", *ita) == EXIT_OK


def test_translate_without_output(tmp_path):
    assert main(["translate", "--config", str(MINI / "run.toml")]) == EXIT_CONFIG


def test_score(tmp_path, capsys):
    (tmp_path / "h").write_text("the cat sat\n", encoding="utf-8")
    (tmp_path / "r").write_text("the cat sat\n", encoding="utf-8")
    assert main(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == EXIT_OK
    assert capsys.readouterr().out == "chrf++\t100.0000\n"
    assert main(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r"), "--metric", "bleu"]) == EXIT_OK
    (tmp_path / "r").write_text("a\nb\n", encoding="utf-8")
    assert main(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == EXIT_CONFIG


def test_report_on_score_files(tmp_path, capsys):
    code = main([
        "report",
        "--baseline", str(APPENDIX / "enx_chrfpp_gpt.tsv"),
        "--system", str(APPENDIX / "enx_chrfpp_cod.tsv"),
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("## Changes in chrF++")
    assert "| eng_Latn-srp_Cyrl | 3.08 | 42.63 | +39.55 | +>20 |" in out


def test_report_on_runs(tmp_path):
    assert translate(tmp_path) == EXIT_OK
    out = tmp_path / "cmp.jsonl"
    assert main(["report", "--baseline", str(tmp_path / "run.jsonl"), "--system", str(tmp_path / "run.jsonl"),
                 "--format", "jsonl", "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text(encoding="utf-8"))["buckets"]["ties"] == 4


def test_report_metric_mismatch():
    assert main([
        "report", "--baseline", str(APPENDIX / "enx_bleu_gpt.tsv"), "--system", str(APPENDIX / "enx_bleu_cod.tsv"),
    ]) == EXIT_CONFIG


# -- exit codes -----------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [
        ["translate", "--config", "nowhere.toml", "--out", "x"],
        ["build-dict", "--corpus", "c.txt", "--langs", "xyz_Latn", "--out", "o"],
        ["frobnicate"],
        [],
    ],
)
def test_config_errors_exit_2(argv):
    assert main(argv) == EXIT_CONFIG


def test_replay_miss_exit_3(tmp_path):
    (tmp_path / "empty").mkdir()
    assert translate(tmp_path, "--cache-dir", str(tmp_path / "empty")) == EXIT_REPLAY_MISS


def test_backend_failure_exit_4(tmp_path, monkeypatch):
    # nothing listens on the discard port, so every request fails fast
    monkeypatch.setenv("COD_API_URL", "http://127.0.0.1:9/v1")
    assert translate(tmp_path, "--mode", "live", "--directions", "eng_Latn-ita_Latn") == EXIT_BACKEND
    lines = (tmp_path / "run.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[1])["failures"]["count"] == 12


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("cod ")
