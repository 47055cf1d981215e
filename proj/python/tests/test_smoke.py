import json
import pathlib

import pytest

import factgen

DATA = pathlib.Path(__file__).resolve().parents[2] / "data"


def test_tokenize_and_sentences():
    assert factgen.tokenize("Hello, World!") == ["hello", ",", "world", "!"]
    assert factgen.split_sentences("One. Two? Three") == ["One.", "Two?", "Three"]


def test_metrics():
    assert factgen.bleu(["the cat sat on the mat"], ["the cat sat on the mat"]) == pytest.approx(1.0)
    assert factgen.richness("Iran met Iran in Switzerland") == 2
    assert factgen.consistency([("solar power grows", "solar power grows fast")]) == 1.0
    with pytest.raises(factgen.ValidationError):
        factgen.bleu(["a", "b"], ["a"])


def test_nucleus_and_retrieval():
    assert factgen.nucleus_filter([0.5, 0.3, 0.15, 0.05], 0.9) == [0, 1, 2]
    docs = [("a", "The cat sat. A dog ran."), ("b", "Birds fly south.")]
    facts = factgen.retrieve(docs, "the cat", k1=2, k2=1)
    assert facts[0]["text"] == "The cat sat."
    assert facts[0]["doc_id"] == "a"


def test_cli_pipeline(tmp_path):
    out = tmp_path / "run"
    code, _, err = factgen.run(["--help"])
    assert code == 0
    code, _, err = factgen.run([
        "train", "--corpus", str(DATA / "toy_corpus_10.jsonl"), "--out-dir", str(out),
        "--d-model", "16", "--ffn-dim", "32", "--d-cr", "16", "--epochs-1", "1", "--epochs-2", "1",
        "--pretrain-psa-epochs", "1", "--pretrain-cr-epochs", "1",
    ])
    assert code == 0, err
    code, _, err = factgen.run([
        "generate", "--out-dir", str(out), "--claim-file", str(DATA / "toy_heldout.jsonl"), "--max-length", "10",
    ])
    assert code == 0, err
    rows = [json.loads(line) for line in (out / "generations.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    code, _, err = factgen.run(["evaluate", "--out-dir", str(out), "--references", str(DATA / "toy_heldout.jsonl")])
    assert code == 0, err
    assert "bleu" in json.loads((out / "report.json").read_text())
    code, _, err = factgen.run(["build-index", "--out-dir", str(out)])
    assert code == 1 and "--corpus" in err
