"""Command line entry point: ``dualsource <subcommand> ...``.

Exit codes: 0 ok, 2 usage, 3 data/schema, 4 audit failure, 5 numeric failure.
Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .decoding import average_checkpoints
from .metrics import evaluate
from .pipeline import (
    fit_tokenizer,
    fit_truecaser,
    predict_basic,
    predict_dual,
    train_basic,
    train_dual,
    vocab_fingerprint,
)
from .recycler import (
    DEFAULT_PROPORTIONS,
    InsufficientArticles,
    LabelPartition,
    SingleInstance,
    apply_annotation_filter,
    audit_splits,
    draft_splits,
    merge,
    partition_labels,
    read_jsonl,
    read_records,
    scaled_block_sizes,
    tag_em_in,
    write_jsonl,
    write_records,
)
from .seq2seq import SEQ2SEQ_PRESETS, BasicSeq2Seq, seq2seq_config_from_dict
from .tokenize import SubwordModel, Truecaser, train_subword, truecase_train
from .training import TRAIN_PRESETS, TrainingDiverged
from .transformer import PRESETS, DualSourceModel, config_from_dict

logger = logging.getLogger("dualsource")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_AUDIT, EXIT_NUMERIC = 0, 2, 3, 4, 5

PRESET_CONSTANTS = {
    "desk": {"vocab_size": 800, "beam": 8, "block_scale": 0.1},
    "paper": {"vocab_size": 32000, "beam": 8, "block_scale": 1.0},
}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _data_error(msg: str) -> CliError:
    return CliError(EXIT_DATA, "data", msg)


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise _data_error(f"missing file: {p}")
    return p


def write_resolved_config(outdir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["tool_version"] = __version__
    if extra:
        cfg.update(extra)
    (outdir / "resolved_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True, default=str) + "\n")


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(EXIT_USAGE, "usage", f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _load_records(path):
    try:
        return read_records(_require(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise _data_error(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_tokenizer_train(args) -> int:
    lines = []
    for path in args.input:
        p = _require(path)
        if p.suffix == ".jsonl":
            from .pipeline import tokenizer_corpus
            lines.extend(tokenizer_corpus(_load_records(p), lowercase=args.lowercase))
        else:
            lines.extend(p.read_text(encoding="utf-8").splitlines())
    if not lines:
        raise _data_error("empty tokenizer corpus")
    vocab = args.vocab_size or PRESET_CONSTANTS[args.preset]["vocab_size"]
    sp = train_subword(lines, vocab)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    sp.save(out)
    if args.truecaser:
        truecase_train(lines).save(args.truecaser)
    write_resolved_config(out.parent, args, {"learned_vocab_size": sp.vocab_size})
    print(json.dumps({"vocab_size": sp.vocab_size, "merges": len(sp.merges)}))
    return EXIT_OK


def cmd_build_recycled(args) -> int:
    fields = dict(parse_overrides(args.field))
    warnings: dict = {}
    try:
        instances = [SingleInstance.from_json(o, fields) for o in read_jsonl(_require(args.input))]
    except (KeyError, TypeError, ValueError) as exc:
        raise _data_error(f"{args.input}: {exc}") from None
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_records(out, merge(instances, warnings))
    write_resolved_config(out.parent, args)
    print(json.dumps({"instances": len(instances), "records": n, **warnings}))
    return EXIT_OK


def cmd_split(args) -> int:
    records = _load_records(args.input)
    props = sorted({k for r in records for k in r.properties})
    proportions = tuple(float(x) for x in args.proportions.split(","))
    try:
        partition = partition_labels(props, proportions, args.seed)
    except ValueError as exc:
        raise _data_error(str(exc)) from None
    scale = args.scale if args.scale is not None else PRESET_CONSTANTS[args.preset]["block_scale"]
    sizes = scaled_block_sizes(scale)
    sizes.update({k: int(v) for k, v in parse_overrides(args.blocks).items()})
    try:
        plan = draft_splits(records, partition, sizes, args.seed)
    except InsufficientArticles as exc:
        raise _data_error(str(exc)) from None
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    test = plan.test
    if args.annotation_filter:
        test, stats = apply_annotation_filter(test, list(read_jsonl(_require(args.annotation_filter))))
        (outdir / "filter_stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    write_records(outdir / "train.jsonl", plan.train)
    write_records(outdir / "validation.jsonl", plan.validation)
    write_records(outdir / "test.jsonl", test)
    (outdir / "partition.json").write_text(partition.to_json())
    (outdir / "blocks.json").write_text(json.dumps(plan.blocks, indent=1, sort_keys=True) + "\n")
    (outdir / "audit.json").write_text(json.dumps(plan.audit, indent=1, sort_keys=True) + "\n")
    write_resolved_config(outdir, args, {"block_sizes": sizes})
    print(json.dumps({"ok": plan.audit["ok"], **plan.audit["sizes"]}, sort_keys=True))
    if not plan.audit["ok"]:
        raise CliError(EXIT_AUDIT, "audit", f"split audit failed; see {outdir / 'audit.json'}")
    return EXIT_OK


def _tag_rows(records):
    rows = []
    for rec in records:
        for (k, v), tag in tag_em_in(rec).items():
            rows.append({"id": rec.article_id, "property": k, "value": v, "tag": tag})
    return rows


def cmd_tag_em_in(args) -> int:
    records = _load_records(args.input)
    shards = [records[i::args.jobs] for i in range(args.jobs)] if args.jobs > 1 else [records]
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        parts = list(pool.map(_tag_rows, shards))
    rows = sorted((r for part in parts for r in part), key=lambda r: (r["id"], r["property"], r["value"]))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, rows)
    write_resolved_config(out.parent, args)
    counts = {t: sum(r["tag"] == t for r in rows) for t in ("EM", "IN")}
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def _split_overrides(overrides: dict, model: str):
    model_fields = (
        set(config_from_dict({}).__dataclass_fields__) if model == "dual"
        else set(seq2seq_config_from_dict({}).__dataclass_fields__)
    )
    train_fields = set(TRAIN_PRESETS[("dual", "desk")].__dataclass_fields__)
    mcfg, tcfg = {}, {}
    for k, v in overrides.items():
        if k in model_fields:
            mcfg[k] = v
        elif k in train_fields:
            tcfg[k] = v
        else:
            raise CliError(EXIT_USAGE, "usage", f"unknown setting {k!r}")
    return mcfg, tcfg


def cmd_train(args) -> int:
    settings = {}
    if args.config:
        settings.update(json.loads(_require(args.config).read_text()))
    settings.update(parse_overrides(args.overrides))
    model_kind = settings.pop("model", args.model)
    mode = settings.pop("mode", args.mode)
    preset = settings.pop("preset", args.preset)
    ablate = bool(settings.pop("ablate", args.ablate))
    seed = int(settings.pop("seed", args.seed))
    if model_kind not in ("dual", "basic") or mode not in ("single", "multi") or preset not in ("desk", "paper"):
        raise CliError(EXIT_USAGE, "usage", f"bad model/mode/preset: {model_kind}/{mode}/{preset}")
    if model_kind == "basic" and mode != "single":
        mode = "single"
    train = _load_records(args.train)
    valid = _load_records(args.valid) if args.valid else train
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mcfg, tcfg_over = _split_overrides(settings, model_kind)
    tcfg = replace(TRAIN_PRESETS[(model_kind, preset)], seed=seed, **tcfg_over)

    if args.tokenizer:
        sp = SubwordModel.load(_require(args.tokenizer))
    else:
        vocab = int(mcfg.get("vocab_size", PRESET_CONSTANTS[preset]["vocab_size"]))
        sp = fit_tokenizer(train, vocab, lowercase=model_kind == "basic")
    sp.save(outdir / "tokenizer.json")
    mcfg["vocab_size"] = sp.vocab_size

    try:
        if model_kind == "dual":
            cfg = replace(PRESETS[preset], **mcfg)
            model, result = train_dual(train, valid, sp, cfg, tcfg, mode, ablate, outdir, seed)
        else:
            cfg = replace(SEQ2SEQ_PRESETS[preset], **mcfg)
            tcfg = replace(tcfg, validation_interval=cfg.validation_interval, patience=cfg.patience)
            model, result = train_basic(train, valid, sp, cfg, tcfg, outdir, seed)
            fit_truecaser(train).save(outdir / "truecaser.json")
    except TrainingDiverged as exc:
        raise CliError(EXIT_NUMERIC, "numeric", str(exc)) from None
    summary = {
        "model": model_kind, "mode": mode, "preset": preset, "ablate": ablate,
        "steps": result.steps, "stop_reason": result.stop_reason,
        "best_step": result.best.step, "best_valid_loss": result.best.valid_loss,
        "checkpoints": [s.path.name for s in result.snapshots if s.path is not None],
        "nan_steps": result.nan_steps,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    write_resolved_config(outdir, args, {
        "model": model_kind, "mode": mode, "preset": preset, "ablate": ablate, "seed": seed,
        "model_config": cfg.to_dict(), "train_config": tcfg.to_dict(), "vocab": vocab_fingerprint(sp),
    })
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def load_model(path: Path):
    arrays, header = T.load_checkpoint(path)
    meta = header.get("meta", {})
    if meta.get("model") == "dual":
        model = DualSourceModel(config_from_dict(meta["config"]))
    elif meta.get("model") == "basic":
        model = BasicSeq2Seq(seq2seq_config_from_dict(meta["config"]))
    else:
        raise _data_error(f"{path}: checkpoint lacks model metadata")
    model.load_state(arrays)
    return model, meta, arrays


def cmd_decode(args) -> int:
    paths = [_require(p) for p in ([args.checkpoint] if args.checkpoint else []) + (args.ensemble or [])]
    if not paths:
        raise CliError(EXIT_USAGE, "usage", "decode needs --checkpoint or --ensemble")
    loaded = [load_model(p) for p in paths]
    metas = [m for _, m, _ in loaded]
    if len({m.get("vocab") for m in metas}) != 1 or len({m.get("model") for m in metas}) != 1:
        raise _data_error("ensemble members differ in vocabulary or model type")
    models = [m for m, _, _ in loaded]
    if args.average and len(models) > 1:
        avg = average_checkpoints([a for _, _, a in loaded])
        models[0].load_state(avg)
        models = models[:1]
    tok_path = Path(args.tokenizer) if args.tokenizer else paths[0].parent / "tokenizer.json"
    sp = SubwordModel.load(_require(tok_path))
    if vocab_fingerprint(sp) != metas[0].get("vocab"):
        raise _data_error(f"{tok_path} does not match the checkpoint vocabulary")
    records = _load_records(args.input)
    meta = metas[0]
    beam = args.beam

    def run(shard):
        if meta["model"] == "dual":
            return predict_dual(models, sp, shard, meta["mode"], beam, args.max_len, meta.get("ablate_article", False))
        tc_path = paths[0].parent / "truecaser.json"
        tc = Truecaser.load(tc_path) if tc_path.exists() else None
        return predict_basic(models, sp, shard, tc, beam, args.max_len)

    jobs = max(1, args.jobs)
    shards = [records[i::jobs] for i in range(jobs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(run, shards))
    preds = {k: v for part in parts for k, v in part.items()}
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, (
        {"id": r.article_id, "properties": preds[r.article_id].properties,
         "score": preds[r.article_id].score, "flags": preds[r.article_id].flags}
        for r in records
    ))
    write_resolved_config(out.parent, args, {"members": [str(p) for p in paths]})
    print(json.dumps({"decoded": len(records), "members": len(models)}))
    return EXIT_OK


def _read_property_maps(path) -> dict:
    out = {}
    try:
        for obj in read_jsonl(_require(path)):
            props = obj["properties"]
            if not isinstance(props, dict) or not all(isinstance(v, list) for v in props.values()):
                raise ValueError(f"record {obj.get('id')!r}: properties must map names to lists")
            out[str(obj["id"])] = {k: [str(x) for x in v] for k, v in props.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise _data_error(f"{path}: {exc}") from None
    return out


def cmd_evaluate(args) -> int:
    golds = _read_property_maps(args.gold)
    preds = _read_property_maps(args.pred)
    tags = None
    if args.tags:
        tags = {(str(o["id"]), o["property"], o["value"]): o["tag"] for o in read_jsonl(_require(args.tags))}
    try:
        report = evaluate(preds, golds, tags)
    except (KeyError, ValueError) as exc:
        raise _data_error(str(exc).strip('"')) from None
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        out.with_suffix(".txt").write_text(report.to_table())
        write_resolved_config(out.parent, args)
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_model_checks

    report = run_model_checks(seeds=args.seeds, tol=args.tol)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        write_resolved_config(out.parent, args)
    print(json.dumps({"passed": report["passed"], "worst": report["worst"]}, sort_keys=True))
    if not report["passed"]:
        raise CliError(EXIT_NUMERIC, "numeric", f"worst relative error {report['worst']:.3g} above tol {args.tol}")
    return EXIT_OK


def cmd_audit_split(args) -> int:
    d = Path(args.dir)
    partition = LabelPartition.from_json(_require(d / "partition.json").read_text())
    audit = audit_splits(
        _load_records(d / "train.jsonl"),
        _load_records(d / "validation.jsonl"),
        _load_records(d / "test.jsonl"),
        partition,
    )
    text = json.dumps(audit, indent=1, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    if not audit["ok"]:
        raise CliError(EXIT_AUDIT, "audit", f"split audit failed for {d}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualsource", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dualsource {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--preset", choices=["desk", "paper"], default="desk")
        sp.add_argument("--jobs", type=int, default=1)
        sp.set_defaults(func=func)
        return sp

    s = add("tokenizer-train", cmd_tokenizer_train, "train a BPE subword model")
    s.add_argument("--input", nargs="+", required=True, help="text files or record JSONL")
    s.add_argument("--output", required=True)
    s.add_argument("--vocab-size", type=int)
    s.add_argument("--lowercase", action="store_true")
    s.add_argument("--truecaser", help="also write a truecaser JSON here")

    s = add("build-recycled", cmd_build_recycled, "merge per-property instances into per-article records")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--field", nargs="*", help="schema renames, e.g. id=article_id values=answer")

    s = add("split", cmd_split, "partition labels and draft train/validation/test")
    s.add_argument("--input", required=True)
    s.add_argument("--outdir", required=True)
    s.add_argument("--proportions", default=",".join(str(x) for x in DEFAULT_PROPORTIONS))
    s.add_argument("--scale", type=float, help="multiplier on the 1k/1k/2k/2k/2k/2k block sizes")
    s.add_argument("--blocks", nargs="*", help="explicit block sizes, e.g. A=10 C=20")
    s.add_argument("--annotation-filter", help="JSONL of removals applied to the test split")

    s = add("tag-em-in", cmd_tag_em_in, "tag gold values as exact-match or inferable")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)

    s = add("train", cmd_train, "train the dual-source or basic seq2seq model")
    s.add_argument("overrides", nargs="*", help="key=value settings (model, mode, preset, lr, ...)")
    s.add_argument("--train", required=True)
    s.add_argument("--valid")
    s.add_argument("--outdir", required=True)
    s.add_argument("--tokenizer")
    s.add_argument("--config", help="JSON file of settings; command-line overrides win")
    s.add_argument("--model", choices=["dual", "basic"], default="dual")
    s.add_argument("--mode", choices=["single", "multi"], default="multi")
    s.add_argument("--ablate", action="store_true", help="replace the article by a PAD token")

    s = add("decode", cmd_decode, "beam-search predictions from one checkpoint or an ensemble")
    s.add_argument("--checkpoint")
    s.add_argument("--ensemble", nargs="+")
    s.add_argument("--average", action="store_true", help="average ensemble weights instead")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--tokenizer")
    s.add_argument("--beam", type=int, default=8)
    s.add_argument("--max-len", type=int, default=96)

    s = add("evaluate", cmd_evaluate, "score predictions against gold records")
    s.add_argument("--gold", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--tags")
    s.add_argument("--output")

    s = add("grad-check", cmd_grad_check, "finite-difference check of both toy models")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--output")

    s = add("audit-split", cmd_audit_split, "re-check leakage invariants of a split directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--output")
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": " ".join(message.split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (TrainingDiverged, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
