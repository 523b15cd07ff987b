import json

import pytest

from dualsource.cli import main
from dualsource.recycler import write_records
from dualsource.synthetic import explode, extraction_corpus, split_corpus

TINY = ["model_dim=16", "heads=2", "ffn_dim=32", "depth=1", "max_steps=20", "validation_interval=10",
        "vocab_size=300", "warmup=0", "lr=0.003"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    recs = extraction_corpus(24, seed=5)
    write_records(root / "train.jsonl", recs[:18])
    write_records(root / "test.jsonl", recs[18:])
    code = main(["train", *TINY, "--train", str(root / "train.jsonl"), "--valid", str(root / "test.jsonl"),
                 "--outdir", str(root / "run")])
    assert code == 0
    return root


def test_train_outputs(trained):
    run_dir = trained / "run"
    for name in ("tokenizer.json", "summary.json", "resolved_config.json", "best.bin", "train_log.jsonl"):
        assert (run_dir / name).exists(), name
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["model_config"]["model_dim"] == 16
    assert resolved["train_config"]["max_steps"] == 20
    assert "tool_version" in resolved
    assert json.loads((run_dir / "summary.json").read_text())["steps"] == 20


def test_decode_and_evaluate_chain(trained, capsys):
    pred = trained / "pred.jsonl"
    code, _, _ = run(capsys, "decode", "--checkpoint", trained / "run" / "best.bin",
                     "--input", trained / "test.jsonl", "--output", pred, "--beam", 2, "--max-len", 24)
    assert code == 0
    rows = [json.loads(line) for line in pred.read_text().splitlines()]
    assert len(rows) == 6
    for row in rows:
        assert set(row) == {"id", "properties", "score", "flags"}
        assert isinstance(row["properties"], dict) and isinstance(row["flags"], list)
    code, out, _ = run(capsys, "evaluate", "--gold", trained / "test.jsonl", "--pred", pred,
                       "--output", trained / "report.json")
    assert code == 0 and "Mean-MultiLabel-F1" in out
    report = json.loads((trained / "report.json").read_text())
    assert 0.0 <= report["mean_multilabel_f1"] <= 1.0


def test_ensemble_of_identical_checkpoints_matches_single(trained, capsys):
    ckpt = trained / "run" / "best.bin"
    outs = []
    for extra in (["--checkpoint", ckpt], ["--ensemble", ckpt, ckpt]):
        path = trained / f"ens{len(extra)}.jsonl"
        assert run(capsys, "decode", *extra, "--input", trained / "test.jsonl", "--output", path,
                   "--beam", 2, "--max-len", 24)[0] == 0
        outs.append([json.loads(line)["properties"] for line in path.read_text().splitlines()])
    assert outs[0] == outs[1]


def test_unknown_setting_is_usage_error(trained, capsys):
    code, _, err = run(capsys, "train", "bogus=1", "--train", trained / "train.jsonl", "--outdir", trained / "x")
    assert code == 2
    assert error_of(err)["code"] == 2


def test_argparse_errors_are_json(capsys):
    code, _, err = run(capsys, "decode")
    assert code == 2 and error_of(err)["error"] == "usage"


def test_missing_and_malformed_inputs_exit_3(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", "--gold", tmp_path / "nope.jsonl", "--pred", tmp_path / "nope.jsonl")
    assert code == 3 and error_of(err)["code"] == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n')
    code, _, err = run(capsys, "evaluate", "--gold", bad, "--pred", bad)
    assert code == 3


def test_split_reruns_are_identical_and_tampering_fails_audit(tmp_path, capsys):
    write_records(tmp_path / "corpus.jsonl", split_corpus(1500, 30, seed=1))
    outputs = []
    for run_id in ("a", "b"):
        code, _, _ = run(capsys, "split", "--input", tmp_path / "corpus.jsonl", "--outdir", tmp_path / run_id,
                         "--seed", 3, "--scale", 0.03)
        assert code == 0
        outputs.append({f: (tmp_path / run_id / f).read_bytes()
                        for f in ("train.jsonl", "validation.jsonl", "test.jsonl", "partition.json", "blocks.json")})
    assert outputs[0] == outputs[1]
    assert json.loads((tmp_path / "a" / "audit.json").read_text())["ok"]
    assert run(capsys, "audit-split", "--dir", tmp_path / "a")[0] == 0
    # copy one test article into train
    leak = (tmp_path / "a" / "test.jsonl").read_text().splitlines()[0]
    with open(tmp_path / "a" / "train.jsonl", "a") as fh:
        fh.write(leak + "\n")
    code, _, err = run(capsys, "audit-split", "--dir", tmp_path / "a")
    assert code == 4 and error_of(err)["code"] == 4


def test_split_with_too_few_articles_exits_3(tmp_path, capsys):
    write_records(tmp_path / "small.jsonl", split_corpus(40, 30, seed=1))
    code, _, err = run(capsys, "split", "--input", tmp_path / "small.jsonl", "--outdir", tmp_path / "o")
    assert code == 3


def test_build_recycled_and_tags(tmp_path, capsys):
    recs = extraction_corpus(5)
    with open(tmp_path / "single.jsonl", "w") as fh:
        for inst in explode(recs):
            fh.write(json.dumps(inst.to_json()) + "\n")
    assert run(capsys, "build-recycled", "--input", tmp_path / "single.jsonl", "--output", tmp_path / "multi.jsonl")[0] == 0
    merged = [json.loads(line) for line in (tmp_path / "multi.jsonl").read_text().splitlines()]
    assert [m["properties"] for m in merged] == [r.properties for r in recs]
    assert run(capsys, "tag-em-in", "--input", tmp_path / "multi.jsonl", "--output", tmp_path / "tags.jsonl",
               "--jobs", 2)[0] == 0
    tags = [json.loads(line) for line in (tmp_path / "tags.jsonl").read_text().splitlines()]
    assert {t["tag"] for t in tags} <= {"EM", "IN"}
    assert len(tags) == sum(len(v) for r in recs for v in r.properties.values())


def test_tokenizer_train(tmp_path, capsys):
    write_records(tmp_path / "r.jsonl", extraction_corpus(10))
    code, _, _ = run(capsys, "tokenizer-train", "--input", tmp_path / "r.jsonl", "--output", tmp_path / "tok.json",
                     "--vocab-size", 300, "--truecaser", tmp_path / "tc.json")
    assert code == 0 and (tmp_path / "tok.json").exists() and (tmp_path / "tc.json").exists()


def test_grad_check_failure_exits_5(tmp_path, capsys):
    code, _, err = run(capsys, "grad-check", "--seeds", 1, "--tol", 0, "--output", tmp_path / "g.json")
    assert code == 5 and error_of(err)["code"] == 5
