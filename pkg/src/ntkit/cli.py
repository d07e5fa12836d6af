"""Command line front end.

Subcommands:

* ``synth``   write a train/eval dataset pair from one config
* ``train``   fit one training stage, write checkpoint + metrics log
* ``decode``  emit hypothesis files, one per blank-penalty value
* ``eval``    score a decode file against a dataset manifest
* ``ablate``  run the architecture/pruning/warmup/penalty grid

Every run copies its fully resolved config into the output directory;
re-running from that copy reproduces the run. Errors exit nonzero with a
single ``error<TAB>type<TAB>message`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import config as cfgmod
from .decode import (greedy_decode, beam_search, streaming_decode,
                     read_decode_file, write_decode_file)
from .metrics import EvalReport, bleu, length_ratio, rtf, wer
from .model import HierarchicalModel, checkpoint_load, checkpoint_save
from .synthdata import gen_dataset, load_dataset, read_manifest
from .tensor import ContractError, set_precision
from .train import train_run


def _fmt(x):
    return "%g" % x


def _emit_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.dump_config(cfg))


def _load_cfg(args, **extra):
    cfg = cfgmod.load_config(args.config, seed=args.seed,
                             precision=args.precision, **extra)
    set_precision(cfg.precision)
    return cfg


def _build_model(cfg, ckpt=None, init_st=False):
    model = HierarchicalModel(cfgmod.model_config(cfg), seed=cfg.seed)
    if ckpt is not None:
        checkpoint_load(model, ckpt, init_missing=init_st)
    return model


def _decode_corpus(model, data, task, bp, cfg):
    """Returns (rows, seconds, frames): one (id, logp, tokens) row per utterance."""
    heads = model.heads(task)
    rows, seconds, frames = [], 0.0, 0
    for ex in data:
        begin = time.perf_counter()
        if cfg.streaming:
            hyp, timings = streaming_decode(ex.frames, model,
                                            cfgmod.chunk_config(cfg),
                                            bp=bp, task=task)
            seconds += sum(timings)
        else:
            f = model.enc_asr_forward(ex.frames)
            if task == "st":
                f = model.enc_st_forward(f)
            if cfg.beam > 1:
                hyp = beam_search(f, heads, beam=cfg.beam, bp=bp,
                                  max_sym_per_frame=cfg.max_sym_per_frame)
            else:
                hyp = greedy_decode(f, heads, bp=bp,
                                    max_sym_per_frame=cfg.max_sym_per_frame)
            seconds += time.perf_counter() - begin
        frames += ex.frames.shape[0]
        rows.append((ex.uid, hyp.logp, hyp.tokens))
    return rows, seconds, frames


def cmd_synth(args):
    cfg = _load_cfg(args)
    _emit_config(cfg, args.out)
    scfg = cfgmod.synth_config(cfg)
    gen_dataset(scfg, cfg.n_train, os.path.join(args.out, "train"), split=0)
    gen_dataset(scfg, cfg.n_eval, os.path.join(args.out, "eval"), split=1)
    print(f"wrote {cfg.n_train} train / {cfg.n_eval} eval examples under {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    if args.init_st and args.init is None:
        raise ContractError("--init-st requires --init CHECKPOINT")
    _emit_config(cfg, args.out)
    data = load_dataset(args.data, cfg.feat_dim)
    model = _build_model(cfg, ckpt=args.init, init_st=args.init_st)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    with open(os.path.join(args.out, "metrics.log"), "w", encoding="utf-8") as fh:
        logs = train_run(cfgmod.train_config(cfg), data, model, log_fh=fh)
    names = model.asr_param_names() if cfg.stage == "asr_pretrain" else None
    checkpoint_save(model, ckpt_path, names=names)
    last = [v for s, n, v in logs if n == "loss"]
    tail = f", final loss {last[-1]:.6g}" if last else ""
    print(f"trained {cfg.steps} steps ({cfg.stage}){tail}; checkpoint {ckpt_path}")
    return 0


def cmd_decode(args):
    cfg = _load_cfg(args)
    _emit_config(cfg, args.out)
    bps = cfgmod.split_list(args.bp, float) if args.bp else [cfg.bp]
    data = load_dataset(args.data, cfg.feat_dim)
    model = _build_model(cfg, ckpt=args.ckpt)
    timing_rows = []
    for bp in bps:
        rows, seconds, frames = _decode_corpus(model, data, cfg.task, bp, cfg)
        path = os.path.join(args.out, f"decode_bp{_fmt(bp)}.tsv")
        write_decode_file(path, rows)
        timing_rows.append((bp, rtf(seconds, frames)))
        print(f"wrote {path}")
    with open(os.path.join(args.out, "rtf.tsv"), "w", encoding="utf-8") as fh:
        for bp, value in timing_rows:
            fh.write(f"{_fmt(bp)}\t{value:.6g}\n")
    return 0


def _score(refs_all, hyps, task):
    side = {"asr": 0, "st": 1}.get(task)
    if side is None:
        raise ContractError(f"unknown task {task!r}")
    refs = {}
    for uid in hyps:
        if uid not in refs_all:
            raise ContractError(f"utterance {uid!r} missing from reference manifest")
        refs[uid] = refs_all[uid][side]
    hyp_tokens = {uid: hyps[uid][1] for uid in hyps}
    report = EvalReport(metrics={
        "token_error_rate": wer(refs, hyp_tokens),
        "bleu": bleu(refs, hyp_tokens),
        "length_ratio": length_ratio(refs, hyp_tokens),
    })
    for uid in sorted(hyps):
        if refs[uid]:
            report.per_utterance.append(
                (uid, "ter", wer({uid: refs[uid]}, {uid: hyp_tokens[uid]})))
    return report


def cmd_eval(args):
    cfg = _load_cfg(args)
    _emit_config(cfg, args.out)
    report = _score(read_manifest(args.refs), read_decode_file(args.hyps), cfg.task)
    with open(os.path.join(args.out, "report.tsv"), "w", encoding="utf-8") as fh:
        report.write(fh)
    for name in sorted(report.metrics):
        print(f"{name}\t{report.metrics[name]:.6g}")
    return 0


ABLATE_COLUMNS = ("architecture", "prune_s", "warmup_steps", "bp",
                  "asr_ter", "st_bleu", "st_length_ratio", "rtf", "status")


def _ablate_combo(payload):
    """One grid combo: train once, decode/score per blank penalty.

    Runs in a worker process under --jobs; must stay picklable and
    re-establish numeric precision itself.
    """
    cfg_items, data_dir, combo_dir, label, bps = payload
    cfg = cfgmod.ExperimentConfig(**cfg_items)
    set_precision(cfg.precision)
    rows = []
    try:
        train_data = load_dataset(os.path.join(data_dir, "train"), cfg.feat_dim)
        eval_data = load_dataset(os.path.join(data_dir, "eval"), cfg.feat_dim)
        refs_all = read_manifest(os.path.join(data_dir, "eval", "manifest.tsv"))
        _emit_config(cfg, combo_dir)
        model = _build_model(cfg)
        with open(os.path.join(combo_dir, "metrics.log"), "w", encoding="utf-8") as fh:
            train_run(cfgmod.train_config(cfg), train_data, model, log_fh=fh)
        checkpoint_save(model, os.path.join(combo_dir, "model.ckpt"))

        asr_rows, _, _ = _decode_corpus(model, eval_data, "asr", 0.0, cfg)
        ter = _score(refs_all, {u: (lp, t) for u, lp, t in asr_rows},
                     "asr").metrics["token_error_rate"]
        # streamed translation on a slice gives the latency column
        stream_cfg = dataclasses.replace(cfg, streaming=True)
        _, seconds, frames = _decode_corpus(model, eval_data[:20], "st", 0.0, stream_cfg)
        combo_rtf = rtf(seconds, frames)
        for bp in bps:
            st_rows, _, _ = _decode_corpus(model, eval_data, "st", bp, cfg)
            path = os.path.join(combo_dir, f"decode_st_bp{_fmt(bp)}.tsv")
            write_decode_file(path, st_rows)
            report = _score(refs_all, {u: (lp, t) for u, lp, t in st_rows}, "st")
            rows.append((label, str(cfg.prune_s), str(cfg.warmup_steps), _fmt(bp),
                         "%.4f" % ter, "%.2f" % report.metrics["bleu"],
                         "%.4f" % report.metrics["length_ratio"],
                         "%.4g" % combo_rtf, "ok"))
    except Exception as exc:  # cell failure must not kill the grid
        rows = [(label, str(cfg.prune_s), str(cfg.warmup_steps), _fmt(bp),
                 "-", "-", "-", "-", f"{type(exc).__name__}: {exc}")
                for bp in bps]
    return rows


def cmd_ablate(args):
    cfg = _load_cfg(args)
    _emit_config(cfg, args.out)
    arch_labels = cfgmod.split_list(cfg.ablate_architectures)
    prunes = cfgmod.split_list(cfg.ablate_prune_s, int)
    warmups = cfgmod.split_list(cfg.ablate_warmup, int)
    bps = cfgmod.split_list(cfg.ablate_bp, float)
    payloads = []
    for label, prune_s, warmup in itertools.product(arch_labels, prunes, warmups):
        arch = label[:-3] if label.endswith("+cr") else label
        combo = dataclasses.replace(cfg, architecture=arch,
                                    cr_enabled=label.endswith("+cr"),
                                    stage="joint_finetune", prune_s=prune_s,
                                    warmup_steps=warmup)
        name = f"{label}_s{prune_s}_w{warmup}"
        payloads.append((dataclasses.asdict(combo), args.data,
                         os.path.join(args.out, "cells", name), label, bps))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ablate_combo, payloads))
    else:
        results = [_ablate_combo(p) for p in payloads]
    table = os.path.join(args.out, "ablate.tsv")
    failures = 0
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("\t".join(ABLATE_COLUMNS) + "\n")
        for rows in results:
            for row in rows:
                failures += row[-1] != "ok"
                fh.write("\t".join(row) + "\n")
    print(f"wrote {table} ({sum(len(r) for r in results)} rows, {failures} failed)")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="ntkit",
                                     description="joint recognition/translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--precision", type=int, choices=(32, 64), default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage")
    common(p)
    p.add_argument("--data", required=True, help="dataset split directory")
    p.add_argument("--out", required=True)
    p.add_argument("--init", default=None, help="checkpoint to start from")
    p.add_argument("--init-st", action="store_true", dest="init_st",
                   help="allow a recognition-only checkpoint; missing arrays keep fresh init")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a dataset split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bp", default=None,
                   help="comma-separated blank penalties; one decode file each")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against a manifest")
    common(p)
    p.add_argument("--refs", required=True, help="manifest.tsv with references")
    p.add_argument("--hyps", required=True, help="decode output file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the configured grid")
    common(p)
    p.add_argument("--data", required=True, help="dataset dir with train/ and eval/")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error\t{type(exc).__name__}\t{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
