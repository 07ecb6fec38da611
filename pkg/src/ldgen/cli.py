"""Command-line entry point: ``ldgen <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Reports are printed
as ``[section]`` blocks of ``key<TAB>value`` lines; figures go to the paths
given with ``--plot``.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import captions as cap
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import LDGenError
from .evaluation import evaluate_alignment
from .features import FeatureSequence, Space, save_feature_batch
from .gradsuite import TOLERANCE, run_suite
from .teacher import load_pair_dataset, mixed_language_pairs, save_pair_dataset, \
    synth_conditioned_latents
from .training import (EVAL_START, build_joint_models, denoising_eval_set, evaluate_denoising,
                       train_adapter, train_joint, write_metrics)


def _emit(section: str, rows, out=None) -> None:
    out = out or sys.stdout
    print(f"[{section}]", file=out)
    for key, value in rows:
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}\t{value}", file=out)
    print(file=out)


def _run_config(args, stage: str) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {"stage": stage}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "output_dir", None):
        changes["output_dir"] = args.output_dir
    if getattr(args, "steps", None) is not None:
        changes["optimizer"] = replace(cfg.optimizer, steps=args.steps)
    return replace(cfg, **changes)


def _print_metric(m) -> None:
    print(json.dumps(m.to_record(), sort_keys=True), file=sys.stderr)


# -- commands --------------------------------------------------------------------

def cmd_train_adapter(args) -> int:
    cfg = _run_config(args, "align")
    ckpt, metrics = train_adapter(cfg, _print_metric if args.verbose else None)
    out = Path(cfg.output_dir) / "adapter.ldgn"
    save_checkpoint(ckpt, out)
    if args.metrics_out:
        write_metrics(args.metrics_out, metrics)
    last = metrics[-1]
    rows = [("checkpoint", out), ("config_digest", cfg.digest()), ("steps", last.step),
            ("coefficient", ckpt.coefficient), ("total", last.total), ("cosine", last.cosine),
            ("mse", last.mse), ("batch_mean_cosine", last.mean_cosine),
            ("wall_ms", last.wall_ms)]
    if args.plot:
        from .plotting import plot_training_curves
        rows.append(("plot", plot_training_curves(metrics, args.plot, "adapter alignment")))
    _emit("train-adapter", rows)
    return 0


def cmd_train_joint(args) -> int:
    cfg = _run_config(args, "joint")
    init = load_checkpoint(args.init)
    ckpt, metrics = train_joint(cfg, init, _print_metric if args.verbose else None)
    out = Path(cfg.output_dir) / "joint.ldgn"
    save_checkpoint(ckpt, out)
    if args.metrics_out:
        write_metrics(args.metrics_out, metrics)
    rows = [("checkpoint", out), ("config_digest", cfg.digest()), ("steps", metrics[-1].step),
            ("condition_mode", cfg.condition_mode), ("eps_loss_first", metrics[0].eps_loss),
            ("eps_loss_last", metrics[-1].eps_loss), ("wall_ms", metrics[-1].wall_ms)]
    if args.plot:
        from .plotting import plot_training_curves
        rows.append(("plot", plot_training_curves(metrics, args.plot, "joint eps-prediction")))
    _emit("train-joint", rows)
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_dict(ckpt.config)
    teacher = cfg.build_teacher()
    if args.dataset:
        ds = Path(args.dataset)
        if not ds.is_file():
            raise FileNotFoundError(f"dataset not found: {ds}")
        pairs, languages, _ = load_pair_dataset(ds)
    else:
        pairs, languages = mixed_language_pairs(teacher, args.n, start=EVAL_START)
    report = evaluate_alignment(ckpt, pairs, languages, teacher if not args.dataset else None,
                                cfg)
    rows = [("checkpoint", ckpt_path), ("samples", report.count),
            ("mean_cosine", report.mean_cosine), ("p5_cosine", report.p5_cosine),
            ("p50_cosine", report.p50_cosine), ("p95_cosine", report.p95_cosine),
            ("mse", report.mse)]
    for lang, st in report.per_language.items():
        rows += [(f"{lang}.count", st.count), (f"{lang}.mean_cosine", st.mean_cosine),
                 (f"{lang}.mse", st.mse)]
    if report.cross_language_cosine is not None:
        rows.append(("cross_language_cosine", report.cross_language_cosine))
    if ckpt.subset("dit"):
        models = build_joint_models(cfg, ckpt)
        ev = denoising_eval_set(cfg)
        true = evaluate_denoising(cfg, models, ev, "true")
        shuffled = evaluate_denoising(cfg, models, ev, "shuffled")
        rows += [("eps_loss_true", true), ("eps_loss_shuffled", shuffled),
                 ("eps_ratio", true / shuffled)]
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True)
                                         + "\n", encoding="utf-8")
        rows.append(("report", args.report_out))
    if args.plot:
        from .plotting import plot_cosine_histogram
        rows.append(("plot", plot_cosine_histogram(report.sample_cosines, args.plot)))
    _emit("eval", rows)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed or 0, eps=args.eps)
    _emit("gradcheck", [(r.name, f"{r.max_rel_error:.3e}\t{'pass' if r.passed else 'FAIL'}"
                         f"\t{r.seconds:.2f}s") for r in results]
          + [("tolerance", TOLERANCE)])
    return 0 if all(r.passed for r in results) else 1


def cmd_captions_sample(args) -> int:
    records = cap.load_caption_corpus(args.corpus)
    if not records:
        raise LDGenError(f"{args.corpus}: corpus is empty")
    rng = np.random.default_rng(args.seed or 0)
    counts = Counter()
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        for i in range(args.draws):
            rec = records[i % len(records)]
            level, text = cap.sample_caption_level(rec, rng)
            counts[level] += 1
            if out:
                out.write(json.dumps({"id": rec.id, "level": level, "caption": text},
                                     ensure_ascii=False) + "\n")
    finally:
        if out:
            out.close()
    freq = [counts[k] for k in range(cap.NUM_LEVELS)]
    rows = [("draws", args.draws)] + [(f"level{k}", f / args.draws) for k, f in enumerate(freq)]
    if args.plot:
        from .plotting import plot_level_frequencies
        rows.append(("plot", plot_level_frequencies(freq, args.plot)))
    _emit("captions-sample", rows)
    return 0


def cmd_captions_apply(args) -> int:
    registry = cap.load_templates(args.templates)
    if args.template not in registry:
        raise LDGenError(f"unknown template {args.template!r}; known: {sorted(registry)}")
    tpl = registry[args.template]
    records = cap.load_caption_corpus(args.corpus)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for rec in records:
            for level, text in enumerate(rec.levels):
                out.write(json.dumps({"id": rec.id, "level": level, "template": tpl.id,
                                      "prompt": cap.apply_instruction_template(tpl, text)},
                                     ensure_ascii=False) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_captions_score(args) -> int:
    registry = cap.load_templates(args.templates)
    records = cap.load_caption_corpus(args.corpus)
    responses = cap.load_caption_corpus(args.responses) if args.responses else None
    ids = args.template or sorted(registry)
    reports = [cap.score_template(records, registry[i], responses) for i in ids]
    if args.out:
        cap.write_reports(args.out, reports)
    rows = [(r.template_id, " ".join(f"{s:.4f}" for s in r.level_scores)) for r in reports]
    if args.plot:
        from .plotting import plot_template_scores
        rows.append(("plot", plot_template_scores(reports, args.plot)))
    _emit("captions-score", rows)
    return 0


def cmd_synth(args) -> int:
    cfg = _run_config(args, "align")
    teacher = cfg.build_teacher()
    if args.kind == "pairs":
        pairs, langs = mixed_language_pairs(teacher, args.n, start=args.start)
        save_pair_dataset(args.out, pairs, langs, teacher, args.start)
    else:
        data = synth_conditioned_latents(teacher, args.n, start=args.start)
        seqs = []
        for cond, x0 in data:
            seqs += [cond, FeatureSequence.full(x0, Space.LATENT)]
        save_feature_batch(args.out, seqs)
    _emit("synth", [("kind", args.kind), ("count", args.n), ("start", args.start),
                    ("teacher_seed", teacher.seed), ("path", args.out)])
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, training=True):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="override the config seed")
        if training:
            p.add_argument("--steps", type=int, help="override optimizer.steps")
            p.add_argument("--output-dir", help="override the config output_dir")
            p.add_argument("--metrics-out", help="write JSON-lines metrics here")
            p.add_argument("--plot", help="write a training-curve figure here")
            p.add_argument("-v", "--verbose", action="store_true",
                           help="print logged metrics to stderr")

    p = sub.add_parser("train-adapter", help="stage 1: align LLM features with T5 targets")
    common(p)
    p.set_defaults(func=cmd_train_adapter)

    p = sub.add_parser("train-joint", help="stage 2: refiner + toy DiT on noise prediction")
    common(p)
    p.add_argument("--init", required=True, help="checkpoint with adapter parameters")
    p.set_defaults(func=cmd_train_joint)

    p = sub.add_parser("eval", help="alignment report for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", help="LDFS pair dataset (default: held-out teacher pairs)")
    p.add_argument("--n", type=int, default=256, help="held-out pairs when no dataset is given")
    p.add_argument("--report-out", help="write the full report as JSON")
    p.add_argument("--plot", help="write a cosine histogram here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("captions", help="hierarchical caption pipeline")
    csub = p.add_subparsers(dest="captions_command", metavar="action")
    p.set_defaults(func=None, parser=p)
    s = csub.add_parser("sample", help="draw caption levels")
    s.add_argument("corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--draws", type=int, default=60000)
    s.add_argument("--out", help="write the draws as JSON lines")
    s.add_argument("--plot", help="write a level-frequency figure here")
    s.set_defaults(func=cmd_captions_sample)
    s = csub.add_parser("apply", help="wrap every caption in an instruction template")
    s.add_argument("corpus")
    s.add_argument("--template", default="ours")
    s.add_argument("--templates", help="JSON template file extending the built-in registry")
    s.add_argument("--out")
    s.set_defaults(func=cmd_captions_apply)
    s = csub.add_parser("score", help="proxy alignment scores per template")
    s.add_argument("corpus")
    s.add_argument("--template", action="append", help="template id (repeatable; default all)")
    s.add_argument("--templates")
    s.add_argument("--responses", help="corpus of rewritten captions to compare against")
    s.add_argument("--out", help="write ProxyScoreReport JSON lines")
    s.add_argument("--plot")
    s.set_defaults(func=cmd_captions_score)

    p = sub.add_parser("synth", help="dump synthetic teacher datasets in LDFS")
    common(p, training=False)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("pairs", "latents"), default="pairs")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--start", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.func is None:
        args.parser.print_usage(sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (LDGenError, OSError, ValueError) as exc:
        print(f"ldgen {args.command}: error: {exc}", file=sys.stderr)
        return 1


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
