"""Command-line entry point: ``prepare``, ``train``, ``eval``, ``select``, ``synth``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import ChanceSelector, TfIdfModel, TfIdfSelector
from .config import TrainConfig
from .corpus import (CorpusError, SelectionSample, Vocab, document_seed, extract_samples,
                     load_documents, parse_annotated_document, parse_document, read_samples,
                     read_word_vectors, sample_token_lists, write_samples)
from .evalkit import SynthSpec, evaluate, generate_synthetic
from .model import Model
from .trainer import train

MODELS = ("sirnn", "dynamic", "recent_tfidf", "direct_recent_tfidf", "chance")
RUN_FILE = "run.json"
TFIDF_FILE = "tfidf.json"
SPLITS = ("train", "dev", "test")

log = logging.getLogger("sirnn")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config resolution
# --------------------------------------------------------------------------

def resolve(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """Config file values overridden by flags that were given explicitly."""
    run: dict = {}
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        run.update(json.loads(p.read_text()))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            run[k] = v
    return run


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def _workers(run: dict) -> int:
    w = run.get("workers") or os.cpu_count() or 1
    return max(1, int(w))


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------

def _prepare_one(job):
    doc_id, text, annotated, T, n_cand, seed, max_tokens = job
    doc = parse_annotated_document(text, doc_id) if annotated else parse_document(text, doc_id)
    samples = extract_samples(doc, T, n_cand, document_seed(seed, doc_id), doc_id, max_tokens)
    return doc_id, len(doc), samples


def _split_of(run: dict, doc_ids: list[str], seed: int) -> dict[str, str]:
    if run.get("split_manifest"):
        manifest = json.loads(_require_file(run["split_manifest"]).read_text())
        out = {}
        for split in SPLITS:
            for d in manifest.get(split, []):
                out[d] = split
        unknown = sorted(set(out) - set(doc_ids))
        if unknown:
            raise UsageError(f"split manifest names documents not in the input: {unknown[:5]}")
        return out
    # no manifest: seeded 80/10/10 split over sorted document ids
    order = np.random.default_rng(seed).permutation(len(doc_ids))
    n_dev = len(doc_ids) // 10
    n_test = len(doc_ids) // 10
    out = {}
    for rank, k in enumerate(order):
        out[doc_ids[k]] = "dev" if rank < n_dev else "test" if rank < n_dev + n_test else "train"
    return out


def cmd_prepare(args) -> int:
    run = resolve(args, ("raw", "out", "split_manifest", "annotated", "seed", "workers",
                         "context_length", "res_cand", "max_tokens"))
    run.setdefault("seed", 0)
    run.setdefault("context_length", 15)
    run.setdefault("res_cand", 2)
    run.setdefault("max_tokens", 20)
    run.setdefault("annotated", False)
    if not run.get("raw") or not run.get("out"):
        raise UsageError("prepare needs --raw and --out")
    docs = load_documents(run["raw"])
    if not docs:
        raise UsageError(f"no documents in {run['raw']}")
    split = _split_of(run, [d for d, _ in docs], run["seed"])
    jobs = [(d, text, run["annotated"], run["context_length"], run["res_cand"], run["seed"],
             run["max_tokens"]) for d, text in docs]
    workers = _workers(run)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_prepare_one, jobs))
    else:
        results = [_prepare_one(j) for j in jobs]

    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    stats = {s: {"docs": 0, "utterances": 0, "samples": 0} for s in SPLITS}
    buckets: dict[str, list[SelectionSample]] = {s: [] for s in SPLITS}
    for doc_id, n_lines, samples in results:
        s = split.get(doc_id)
        if s is None:
            continue
        stats[s]["docs"] += 1
        stats[s]["utterances"] += n_lines
        stats[s]["samples"] += len(samples)
        buckets[s].extend(samples)
    for s in SPLITS:
        write_samples(out / f"{s}.jsonl", buckets[s])
    stats["total"] = {k: sum(stats[s][k] for s in SPLITS) for k in ("docs", "utterances", "samples")}
    _write_json(out / "stats.json", stats)
    run["workers"] = workers
    _write_json(out / RUN_FILE, run)
    print(f"{'split':<8}{'docs':>8}{'utters':>10}{'samples':>10}")
    for s in (*SPLITS, "total"):
        print(f"{s:<8}{stats[s]['docs']:>8}{stats[s]['utterances']:>10}{stats[s]['samples']:>10}")
    return 0


# --------------------------------------------------------------------------
# train / eval / select
# --------------------------------------------------------------------------

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


def _train_config(run: dict) -> TrainConfig:
    cfg = dict(run)
    if run.get("model") in ("sirnn", "dynamic"):
        cfg["mode"] = run["model"]
    return TrainConfig.from_dict(cfg)


def cmd_train(args) -> int:
    run = resolve(args, ("model", "train", "dev", "out", "word_vectors", "seed", "workers",
                         "context_length", "res_cand", "shared_igrus", "no_joint_selection",
                         "max_epochs", "batch_size", "d_w", "d_s", "d_u", "learning_rate",
                         "patience", "dtype"))
    run.setdefault("model", "sirnn")
    if run["model"] not in MODELS:
        raise UsageError(f"unknown model {run['model']!r}")
    if not run.get("train") or not run.get("out"):
        raise UsageError("train needs --train and --out")
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    train_samples = read_samples(_require_file(run["train"]))
    dev_samples = read_samples(_require_file(run["dev"])) if run.get("dev") else []
    kind = run["model"]

    if kind in ("recent_tfidf", "direct_recent_tfidf"):
        TfIdfModel.from_samples(train_samples).save(out / TFIDF_FILE)
    elif kind in ("sirnn", "dynamic"):
        config = _train_config(run)
        wv = read_word_vectors(_require_file(run["word_vectors"])) if run.get("word_vectors") else None
        vocab = Vocab.build(sample_token_lists(train_samples), config.d_w, config.seed, wv)
        result = train(config, train_samples, dev_samples, vocab, log_path=out / "train_log.jsonl",
                       on_epoch=lambda e: print(json.dumps(e), flush=True))
        result.model.save(out)
        run["best_epoch"] = result.best_epoch
        run["stopped_early"] = result.stopped_early
        run.update({k: v for k, v in config.to_dict().items() if k not in run})
    _write_json(out / RUN_FILE, run)
    print(f"saved {kind} to {out}")
    return 0


def load_selector(model_dir: str | None, kind: str | None, seed: int = 0):
    if model_dir:
        d = Path(model_dir)
        if not d.is_dir():
            raise UsageError(f"model directory not found: {d}")
        meta = json.loads(_require_file(d / RUN_FILE).read_text())
        kind = meta.get("model", kind)
        if kind in ("sirnn", "dynamic"):
            return Model.load(d)
        if kind in ("recent_tfidf", "direct_recent_tfidf"):
            return TfIdfSelector(TfIdfModel.load(_require_file(d / TFIDF_FILE)),
                                 direct=kind == "direct_recent_tfidf")
        seed = meta.get("seed", seed)
    if kind == "chance":
        return ChanceSelector(seed)
    raise UsageError("need --model-dir, or --model chance")


def cmd_eval(args) -> int:
    run = resolve(args, ("model_dir", "model", "data", "report", "seed"))
    if not run.get("data"):
        raise UsageError("eval needs --data")
    samples = read_samples(_require_file(run["data"]))
    selector = load_selector(run.get("model_dir"), run.get("model"), run.get("seed", 0))
    report = evaluate(selector, samples)
    if run.get("report"):
        report.write(run["report"])
        _write_json(Path(run["report"]).with_suffix(".config.json"), run)
    print(report.to_text())
    return 0


def cmd_select(args) -> int:
    run = resolve(args, ("model_dir", "model", "sample", "seed"))
    if not run.get("sample"):
        raise UsageError("select needs --sample")
    text = sys.stdin.read() if run["sample"] == "-" else _require_file(run["sample"]).read_text()
    sample = SelectionSample.from_json(json.loads(text))
    selector = load_selector(run.get("model_dir"), run.get("model"), run.get("seed", 0))
    pred = selector.predict([sample])[0] if hasattr(selector, "predict") else selector(sample)
    print(json.dumps(pred.to_json(), sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    run = resolve(args, ("out", "n_samples", "n_speakers", "n_subconvs", "context_length",
                         "res_cand", "vocab_size", "seed", "distance_probs", "blank_rate"))
    if not run.get("out"):
        raise UsageError("synth needs --out")
    spec_keys = {f.name for f in fields(SynthSpec) if f.init}
    spec = SynthSpec(**{k: v for k, v in run.items() if k in spec_keys})
    samples = generate_synthetic(spec)
    out = Path(run["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_samples(out, samples)
    _write_json(out.with_suffix(".config.json"), spec.to_json())
    print(f"wrote {len(samples)} samples to {out}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _probs(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON file with flat keys; flags override it")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--workers", type=int, help="parallel processes (default: all CPUs)")
    shared.add_argument("--context-length", dest="context_length", type=int, choices=(5, 10, 15))
    shared.add_argument("--res-cand", dest="res_cand", type=int, choices=(2, 10))
    shared.add_argument("--model", choices=MODELS)
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sirnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", parents=[shared], help="raw logs to sample JSONL")
    sp.add_argument("--raw", help="directory of raw log files")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--split-manifest", dest="split_manifest",
                    help='JSON {"train": [...], "dev": [...], "test": [...]} of file names')
    sp.add_argument("--annotated", action="store_true",
                    help="inputs are time/sender/addressee/utterance TSV")
    sp.add_argument("--max-tokens", dest="max_tokens", type=int)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", parents=[shared], help="train a model or fit a baseline")
    sp.add_argument("--train", help="training samples JSONL")
    sp.add_argument("--dev", help="dev samples JSONL for early stopping")
    sp.add_argument("--out", help="model directory")
    sp.add_argument("--word-vectors", dest="word_vectors", help="text word-vector file")
    sp.add_argument("--shared-igrus", dest="shared_igrus", action="store_true")
    sp.add_argument("--no-joint-selection", dest="no_joint_selection", action="store_true")
    sp.add_argument("--max-epochs", dest="max_epochs", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--d-w", dest="d_w", type=int)
    sp.add_argument("--d-s", dest="d_s", type=int)
    sp.add_argument("--d-u", dest="d_u", type=int)
    sp.add_argument("--dtype", choices=("float32", "float64"))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[shared], help="score a model on samples")
    sp.add_argument("--model-dir", dest="model_dir")
    sp.add_argument("--data", help="samples JSONL")
    sp.add_argument("--report", help="JSON report path (.txt and .csv written alongside)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("select", parents=[shared], help="pick an addressee and response for one sample")
    sp.add_argument("--model-dir", dest="model_dir")
    sp.add_argument("--sample", help="sample JSON file, or - for stdin")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("synth", parents=[shared], help="generate a synthetic corpus")
    sp.add_argument("--out", help="output JSONL")
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--n-speakers", dest="n_speakers", type=int)
    sp.add_argument("--n-subconvs", dest="n_subconvs", type=int)
    sp.add_argument("--vocab-size", dest="vocab_size", type=int)
    sp.add_argument("--blank-rate", dest="blank_rate", type=float)
    sp.add_argument("--distance-probs", dest="distance_probs", type=_probs,
                    help="comma-separated P(distance = 1..T)")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CorpusError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
