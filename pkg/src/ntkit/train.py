"""Objective assembly and the optimizer loop.

Transducer terms use the pruned loss blended with the cheap additive-joiner
loss early in training; the blend weight decays linearly over warmup_steps.
Consistency-regularized runs add per-task CTC terms averaged over two
augmented views plus a symmetric stop-gradient KL between the views, with
the transducer loss computed on view (a) only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, two_views
from .lattice import (
    compute_prune_bounds,
    cr_kl,
    ctc_min_frames,
    ctc_nll,
    pruned_transducer_nll,
    transducer_label_occupancy,
    transducer_nll,
)
from .tensor import ContractError, NumericError, Tape, Tensor, backward, mul


class TrainDivergence(ArithmeticError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class LossWeights:
    asr: float = 1.0
    st: float = 1.0
    cr_asr: float = 0.05
    cr_st: float = 0.05
    ctc_asr: float = 0.1
    ctc_st: float = 0.1

    def __post_init__(self):
        if min(self.asr, self.st, self.cr_asr, self.cr_st,
               self.ctc_asr, self.ctc_st) < 0:
            raise ContractError("loss weights must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "asr_pretrain"
    steps: int = 200
    lr: float = 3e-3
    warmup_steps: int = 200
    prune_s: int = 4
    batch_size: int = 8
    seed: int = 0
    cr_enabled: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.stage not in ("asr_pretrain", "joint_finetune"):
            raise ContractError(f"unknown stage {self.stage!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ContractError("steps must be >= 0 and batch_size >= 1")
        if self.prune_s < 2:
            raise ContractError("prune range S must be >= 2")


def warmup_blend(step, warmup_steps, l_simple, l_pruned):
    """0.5*max(0, 1 - step/warmup_steps) on the simple term, rest pruned."""
    if step < 0:
        raise ContractError("step must be >= 0")
    lam = 0.0 if warmup_steps <= 0 else 0.5 * max(0.0, 1.0 - step / warmup_steps)
    if lam == 0.0:
        return l_pruned
    return l_simple * lam + l_pruned * (1.0 - lam)


def _nt_task_loss(model, task, f, tokens, step, warmup_steps, prune_s):
    if not tokens:
        raise ContractError(f"missing target sequence for task {task!r}")
    heads = model.heads(task)
    sjoin = model.sjoin_asr if task == "asr" else model.sjoin_st
    g = heads.predictor.forward(tokens)
    z_simple = sjoin.lattice(f, g)
    l_simple = transducer_nll(z_simple, tokens)
    bounds = compute_prune_bounds(transducer_label_occupancy(z_simple, tokens), prune_s)
    l_pruned = pruned_transducer_nll(f, g, tokens, bounds, heads.joiner.rows)
    return warmup_blend(step, warmup_steps, l_simple, l_pruned)


def _encode_nt(model, example, weights, x, step, warmup_steps, prune_s,
               components, need_st):
    """Encode one view and assemble its weighted transducer terms.

    Returns (loss or None, f_s, f_t or None)."""
    f_s = model.enc_asr_forward(x)
    f_t = model.enc_st_forward(f_s) if (need_st or weights.st != 0.0) else None
    loss = None
    for task, f, tokens, weight in (
            ("asr", f_s, example.src_tokens, weights.asr),
            ("st", f_t, example.tgt_tokens, weights.st)):
        if weight == 0.0:
            continue
        term = _nt_task_loss(model, task, f, tokens, step, warmup_steps, prune_s)
        if components is not None:
            components[f"nt_{task}"] = term.item()
        term = term * weight
        loss = term if loss is None else loss + term
    return loss, f_s, f_t


def multitask_nt_loss(model, example, weights, step=0, warmup_steps=0,
                      prune_s=4, features=None, components=None):
    """Weighted sum of per-task transducer losses on one example.

    features overrides example.frames (an augmented view).  components, if
    given, collects the unweighted term values for logging."""
    x = example.frames if features is None else features
    loss, _, _ = _encode_nt(model, example, weights, x, step, warmup_steps,
                            prune_s, components, need_st=False)
    if loss is None:
        raise ContractError("all task weights are zero")
    return loss


def combined_loss(model, example, weights, views, step=0, warmup_steps=0,
                  prune_s=4, components=None):
    """Transducer loss on view (a) plus CR and CTC terms over both views.

    Per-task CTC is the mean over the two views; the CR term is the
    symmetric stop-gradient KL between the views' CTC posteriors.  CTC/CR
    terms are skipped for a task when the target cannot fit the downsampled
    frame count (rare repeat-heavy draws)."""
    xa, xb = views
    st_active = weights.st != 0.0 or weights.ctc_st != 0.0 or weights.cr_st != 0.0
    loss, f_s_a, f_t_a = _encode_nt(model, example, weights, xa, step,
                                    warmup_steps, prune_s, components,
                                    need_st=st_active)
    f_s_b = model.enc_asr_forward(xb)
    tasks = [("asr", model.ctc_asr, example.src_tokens, f_s_a, f_s_b,
              weights.ctc_asr, weights.cr_asr)]
    if st_active:
        tasks.append(("st", model.ctc_st, example.tgt_tokens,
                      f_t_a, model.enc_st_forward(f_s_b),
                      weights.ctc_st, weights.cr_st))
    for task, head, tokens, fa, fb, w_ctc, w_cr in tasks:
        if ctc_min_frames(tokens) > fa.shape[0]:
            continue
        lpa, lpb = head.log_probs(fa), head.log_probs(fb)
        if w_ctc != 0.0:
            term = (ctc_nll(lpa, tokens) + ctc_nll(lpb, tokens)) * 0.5
            if components is not None:
                components[f"ctc_{task}"] = term.item()
            term = term * w_ctc
            loss = term if loss is None else loss + term
        if w_cr != 0.0:
            term = cr_kl(lpa, lpb)
            if components is not None:
                components[f"cr_{task}"] = term.item()
            term = term * w_cr
            loss = term if loss is None else loss + term
    if loss is None:
        raise ContractError("all loss weights are zero")
    return loss


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.98), eps=1e-9, clip_norm=5.0):
        self.params = dict(params)
        self.lr, self.betas, self.eps, self.clip_norm = lr, betas, eps, clip_norm
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def grad_norm(self):
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def step(self):
        """Clip the global gradient norm, then apply one Adam update."""
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        scale = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.data = p.data - (self.lr * update).astype(p.data.dtype)
        return norm


def _stage_weights(cfg):
    w = cfg.weights
    if cfg.stage == "asr_pretrain":
        return LossWeights(asr=w.asr, st=0.0, cr_asr=w.cr_asr, cr_st=0.0,
                           ctc_asr=w.ctc_asr, ctc_st=0.0)
    return w


def train_run(cfg, data, model, log_fh=None):
    """Run cfg.steps optimizer steps over data; returns metrics rows.

    Metrics are (step, name, value) tuples, mirrored to log_fh as
    tab-separated lines flushed once per step."""
    if not data:
        raise ContractError("empty training set")
    weights = _stage_weights(cfg)
    opt = Adam(model.params(), lr=cfg.lr)
    metrics = []
    n = len(data)
    for step in range(cfg.steps):
        model.zero_grad()
        sums = {}
        try:
            for j in range(cfg.batch_size):
                ex = data[(step * cfg.batch_size + j) % n]
                comps = {}
                with Tape():
                    if cfg.cr_enabled:
                        views = two_views(ex.frames, cfg.augment.scaled_for_cr(),
                                          cfg.seed + step * cfg.batch_size + j)
                        loss = combined_loss(model, ex, weights, views, step=step,
                                             warmup_steps=cfg.warmup_steps,
                                             prune_s=cfg.prune_s, components=comps)
                    else:
                        loss = multitask_nt_loss(model, ex, weights, step=step,
                                                 warmup_steps=cfg.warmup_steps,
                                                 prune_s=cfg.prune_s, components=comps)
                    scaled = mul(loss, Tensor(1.0 / cfg.batch_size))
                backward(scaled)
                comps["loss"] = loss.item()
                for name, value in comps.items():
                    sums[name] = sums.get(name, 0.0) + value / cfg.batch_size
            grad_norm = opt.step()
        except NumericError as e:
            raise TrainDivergence(f"non-finite value at step {step}: {e}") from e
        sums["grad_norm"] = grad_norm
        for name in sorted(sums):
            metrics.append((step, name, sums[name]))
            if log_fh is not None:
                log_fh.write(f"{step}\t{name}\t{sums[name]:.6g}\n")
        if log_fh is not None:
            log_fh.flush()
    return metrics
