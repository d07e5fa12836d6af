"""Flat ``key = value`` experiment configuration.

One file drives every subcommand: data synthesis, training, decoding,
evaluation, and the ablation grid. Parsing is strict on purpose: unknown
keys and malformed values are rejected by name, so a typo cannot fall
back to a default silently. The resolved config (flags applied) is
copied into every output directory; re-running from that copy must
reproduce the run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .augment import AugmentConfig
from .decode import ChunkConfig
from .model import ModelConfig, preset
from .synthdata import SynthConfig
from .tensor import ContractError
from .train import LossWeights, TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    # global
    seed: int = 0
    precision: int = 32
    # data synthesis
    src_vocab: int = 30
    tgt_vocab: int = 30
    feat_dim: int = 16
    frames_lo: int = 2
    frames_hi: int = 4
    noise_std: float = 0.1
    reorder_mode: str = "swap_pairs"
    len_lo: int = 4
    len_hi: int = 10
    n_train: int = 600
    n_eval: int = 200
    # model
    architecture: str = "hier1"
    d: int = 64
    predictor_k: int = 2
    # training
    stage: str = "asr_pretrain"
    steps: int = 200
    lr: float = 3e-3
    warmup_steps: int = 200
    prune_s: int = 4
    batch_size: int = 8
    cr_enabled: bool = False
    w_asr: float = 1.0
    w_st: float = 1.0
    w_cr_asr: float = 0.05
    w_cr_st: float = 0.05
    w_ctc_asr: float = 0.1
    w_ctc_st: float = 0.1
    freq_mask_regions: int = 2
    freq_mask_max_width: int = 5
    time_mask_regions: int = 2
    time_mask_max_fraction: float = 0.08
    cr_scale: float = 2.5
    # decoding
    task: str = "asr"
    beam: int = 1
    bp: float = 0.0
    max_sym_per_frame: int = 20
    streaming: bool = False
    chunk_size: int = 8
    left_context: int = 16
    # ablation grid (comma-separated lists)
    ablate_architectures: str = "shared,hier1,hier2,hier2+cr"
    ablate_prune_s: str = "4"
    ablate_warmup: str = "200"
    ablate_bp: str = "0,2"


def _parse_bool(text):
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(text)


_CONVERT = {int: (int, "an integer"), float: (float, "a number"),
            bool: (_parse_bool, "true or false"), str: (str, "a string")}
_TYPES = {"int": int, "float": float, "bool": bool, "str": str}
_FIELDS = {f.name: f.type if isinstance(f.type, type) else _TYPES[f.type]
           for f in fields(ExperimentConfig)}


def parse_kv(text):
    """Raw key/value pairs from config text; `#` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ContractError(f"config key {key!r} appears twice")
        out[key] = value
    return out


def from_items(items):
    kwargs = {}
    for key, value in items.items():
        ftype = _FIELDS.get(key)
        if ftype is None:
            raise ContractError(f"unknown config key {key!r}")
        convert, want = _CONVERT[ftype]
        try:
            kwargs[key] = convert(value)
        except ValueError:
            raise ContractError(f"config key {key!r}: expected {want}, got {value!r}") from None
    return ExperimentConfig(**kwargs)


def load_config(path, **overrides):
    """Parse a config file; keyword overrides (seed=..., bp=...) win over it."""
    with open(path, encoding="utf-8") as fh:
        cfg = from_items(parse_kv(fh.read()))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def dump_config(cfg):
    """Render a config back to parseable text (full resolved state)."""
    lines = ["# resolved experiment config"]
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def split_list(text, convert=str):
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise ContractError(f"expected a comma-separated list, got {text!r}")
    try:
        return [convert(part) for part in items]
    except ValueError:
        raise ContractError(f"bad list element in {text!r}") from None


# builders: each module still validates its own invariants

def synth_config(cfg):
    return SynthConfig(src_vocab=cfg.src_vocab, tgt_vocab=cfg.tgt_vocab,
                       feat_dim=cfg.feat_dim, frames_lo=cfg.frames_lo,
                       frames_hi=cfg.frames_hi, noise_std=cfg.noise_std,
                       reorder_mode=cfg.reorder_mode, len_lo=cfg.len_lo,
                       len_hi=cfg.len_hi, seed=cfg.seed)


def model_config(cfg):
    # token id 0 is the blank, so model vocab is data vocab + 1
    base = preset(cfg.architecture, feat_dim=cfg.feat_dim,
                  src_vocab=cfg.src_vocab + 1, tgt_vocab=cfg.tgt_vocab + 1)
    return dataclasses.replace(base, d=cfg.d, predictor_k=cfg.predictor_k)


def loss_weights(cfg):
    return LossWeights(asr=cfg.w_asr, st=cfg.w_st, cr_asr=cfg.w_cr_asr,
                       cr_st=cfg.w_cr_st, ctc_asr=cfg.w_ctc_asr, ctc_st=cfg.w_ctc_st)


def augment_config(cfg):
    return AugmentConfig(freq_mask_regions=cfg.freq_mask_regions,
                         freq_mask_max_width=cfg.freq_mask_max_width,
                         time_mask_regions=cfg.time_mask_regions,
                         time_mask_max_fraction=cfg.time_mask_max_fraction,
                         cr_scale=cfg.cr_scale)


def train_config(cfg):
    return TrainConfig(stage=cfg.stage, steps=cfg.steps, lr=cfg.lr,
                       warmup_steps=cfg.warmup_steps, prune_s=cfg.prune_s,
                       batch_size=cfg.batch_size, seed=cfg.seed,
                       cr_enabled=cfg.cr_enabled, weights=loss_weights(cfg),
                       augment=augment_config(cfg))


def chunk_config(cfg):
    return ChunkConfig(chunk_size=cfg.chunk_size, left_context=cfg.left_context,
                       max_sym_per_frame=cfg.max_sym_per_frame)
