import json
import math

import pytest

import scriptorium as sc

SMALL = """[corpus]
source = synthetic
[synthetic]
base_words = 300
seed_words = 20000
train_words = 30000
paragraphs = 20
paragraph_words = 100
[detection]
instances = 20
h0 = 0
h1 = 0
"""


def test_normalize_keeps_words_and_comparison_forms():
    n = sc.normalize("Ὁ ἀνὴρ λέγει.")
    assert n["words"] == ["Ὁ", "ἀνὴρ", "λέγει"]
    assert n["comparison"] == n["words"]
    c = sc.normalize("Ὁ ἀνὴρ λέγει.", strip_diacritics=True, case_fold=True)
    assert c["words"] == n["words"]
    assert c["comparison"] == ["ο", "ανηρ", "λεγει"]


def test_scribal_distance():
    assert sc.scribal_distance("βιβλιον", "βυβλιον") == pytest.approx(0.5)
    assert sc.scribal_distance("βιβλιον", "βυβλιον", costs="unit") == 1.0
    assert sc.scribal_distance("αβγ", "αβγ") == 0.0
    with pytest.raises(sc.ConfigError) as e:
        sc.scribal_distance("α", "β", costs="[costs]\nitacism = -1\n")
    assert e.value.field.startswith("costs.")
    assert e.value.exit_code == 3


def test_small_helpers():
    assert abs(sc.dkw_epsilon(0.01, 615) - 0.0656) <= 1e-4
    assert sc.count_letters("ἀνὴρ, λέγει") == 9
    assert sc.canonical_fill("Λόγον ,") == sc.canonical_fill("λογον,")


def test_ngram_model_flags_the_odd_word():
    texts = ["ὁ ἀνὴρ λέγει τὸν λόγον. ὁ παῖς λέγει τὸν λόγον."] * 20
    model = sc.NgramModel(texts, costs="unit")
    assert model.model_id.startswith("ngram")
    records = model.flag("ὁ ἀνὴρ λέγει τὸν λόγων.", k=1.0)
    assert [r["word"] for r in records] == ["ο", "ανηρ", "λεγει", "τον", "λογων"]
    worst = min(records, key=lambda r: r["rho"])
    assert worst["word"] == "λογων"
    assert worst["suggestions"][0]["word"] == "λογον"
    assert all(0.0 <= r["rho"] <= 1.0 or math.isinf(r["rho"]) for r in records)


def test_config_errors_name_the_field(tmp_path):
    assert sc.check_config("[run]\nseed = 4\n", str(tmp_path))["seed"] == 4
    with pytest.raises(sc.ConfigError) as e:
        sc.check_config("[run]\nseeed = 1\n")
    assert e.value.field == "run.seeed"


def test_run_and_replay(tmp_path):
    r = sc.run("simulate-errors", SMALL, str(tmp_path), out=str(tmp_path / "run"))
    summary = r["summary"]
    assert summary["instances"] + summary["skipped"] == 20
    assert summary["rho"]["top1"] <= summary["rho"]["top5"] <= summary["rho"]["top10"]
    assert (tmp_path / "run" / "manifest.json").exists()
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["run_id"] == r["run_id"]
    again = sc.replay(str(tmp_path / "run" / "manifest.json"), str(tmp_path / "again"))
    assert again["identical"]
    assert again["mismatches"] == []


def test_error_kinds(tmp_path, fixtures):
    with pytest.raises(sc.CapabilityError) as e:
        sc.run("attn-eval", "", str(tmp_path))
    assert e.value.exit_code == 2
    with pytest.raises(sc.ConfigError):
        sc.run("no-such-command")
    assert "eval" in sc.commands()
    r = sc.run(
        "eval",
        f"[corpus]\nmanifest = {fixtures / 'corpus' / 'manifest.tsv'}\ntest_fraction = 0.34\n[detection]\ninstances = 20\n",
        str(tmp_path),
        out=str(tmp_path / "eval"),
    )
    assert r["summary"]["rho"]["top1"] >= r["summary"]["chance"]["top1"]
