"""Greedy and beam transducer decoding, plus chunked streaming inference.

The blank penalty steers symbol selection and beam pruning only; reported
hypothesis scores always accumulate unpenalized log-probabilities, so a
tuned penalty changes what is searched, never how the model scores it.

Streaming runs the encoder on a growing prefix under the chunk attention
mask and greedily consumes newly completed frames.  Masked attention
weights are exact zeros outside each frame's window and the convolutions
are causal, so a completed frame's value never depends on later input;
prefix recomputation reproduces the fully-masked offline pass up to
summation-order rounding, and the emitted token sequence is identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor, log_softmax

BLANK = 0


@dataclass
class Hypothesis:
    """Emitted tokens (never blank) with accumulated log-probability <= 0."""
    tokens: list = field(default_factory=list)
    logp: float = 0.0

    def context(self, k):
        return tuple(self.tokens[-k:])


@dataclass(frozen=True)
class ChunkConfig:
    chunk_size: int = 64
    left_context: int = 128
    max_sym_per_frame: int = 20

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ContractError("chunk_size must be >= 1")
        if self.left_context < 0 or self.left_context % self.chunk_size != 0:
            raise ContractError("left_context must be a multiple of chunk_size")
        if self.max_sym_per_frame < 1:
            raise ContractError("max_sym_per_frame must be >= 1")


def apply_blank_penalty(logits, bp):
    """Subtract bp from the blank logit (index 0); all others bit-exact."""
    if bp == 0.0:
        return logits
    out = logits.data.copy()
    out[..., BLANK] -= bp
    return Tensor._wrap(out)


def _log_probs(joiner, f_row, g_row, bp):
    z = joiner.forward(f_row, g_row)
    lsm = log_softmax(z).data
    if bp == 0.0:
        return lsm, lsm
    plsm = log_softmax(apply_blank_penalty(z, bp)).data
    return lsm, plsm


class _GreedyState:
    def __init__(self, heads):
        self.heads = heads
        self.tokens = []
        self.logp = 0.0
        self.g = heads.predictor.step([])

    def consume(self, f_rows, bp, max_sym_per_frame):
        for t in range(f_rows.shape[0]):
            f_row = Tensor(f_rows[t])
            emitted = 0
            while True:
                lsm, plsm = _log_probs(self.heads.joiner, f_row, self.g, bp)
                if emitted >= max_sym_per_frame:
                    choice = BLANK  # forced advance
                else:
                    choice = int(np.argmax(plsm))
                self.logp += float(lsm[choice])
                if choice == BLANK:
                    break
                self.tokens.append(choice)
                self.g = self.heads.predictor.step(self.tokens)
                emitted += 1

    def hypothesis(self):
        return Hypothesis(list(self.tokens), self.logp)


def greedy_decode(f, heads, bp=0.0, max_sym_per_frame=20):
    """Frame-synchronous argmax decoding over encoder output f (T', d)."""
    state = _GreedyState(heads)
    state.consume(f.data, bp, max_sym_per_frame)
    return state.hypothesis()


def beam_search(f, heads, beam=20, bp=0.0, max_sym_per_frame=20):
    """Frame-synchronous beam search.

    Within a frame, hypotheses that took blank (waiting for the next frame)
    and hypotheses still emitting compete in one pool each expansion round;
    only the top `beam` by penalized score survive.  Discarding an
    out-ranked blank hypothesis is what makes beam=1 reproduce greedy
    decoding exactly.  Equal token sequences merge by logsumexp within a
    pool.  The returned hypothesis maximizes unpenalized logp."""
    if beam < 1:
        raise ContractError("beam must be >= 1")
    g_cache = {(): heads.predictor.step([])}

    def g_row(tokens):
        if tokens not in g_cache:
            g_cache[tokens] = heads.predictor.step(list(tokens))
        return g_cache[tokens]

    def merge(pool, tokens, logp, pscore):
        if tokens in pool:
            old_lp, old_ps = pool[tokens]
            pool[tokens] = (float(np.logaddexp(old_lp, logp)),
                            float(np.logaddexp(old_ps, pscore)))
        else:
            pool[tokens] = (logp, pscore)

    beam_hyps = {(): (0.0, 0.0)}  # tokens -> (logp, pscore)
    for t in range(f.shape[0]):
        f_row = Tensor(f.data[t])
        asleep = {}
        active = beam_hyps
        for round_ in range(max_sym_per_frame + 1):
            awake = {}
            for tokens, (logp, pscore) in active.items():
                lsm, plsm = _log_probs(heads.joiner, f_row, g_row(tokens), bp)
                # accumulate in python floats: scores must not narrow to f32
                merge(asleep, tokens, logp + float(lsm[BLANK]),
                      pscore + float(plsm[BLANK]))
                if round_ < max_sym_per_frame:
                    for v in range(1, heads.vocab):
                        merge(awake, tokens + (v,),
                              logp + float(lsm[v]), pscore + float(plsm[v]))
            pool = [("asleep", tok, lp, ps) for tok, (lp, ps) in asleep.items()]
            pool += [("awake", tok, lp, ps) for tok, (lp, ps) in awake.items()]
            pool.sort(key=lambda c: (-c[3], len(c[1]), c[1]))
            kept = pool[:beam]
            asleep = {tok: (lp, ps) for kind, tok, lp, ps in kept if kind == "asleep"}
            active = {tok: (lp, ps) for kind, tok, lp, ps in kept if kind == "awake"}
            if not active:
                break
        beam_hyps = asleep
    best = min(beam_hyps.items(), key=lambda kv: (-kv[1][0], len(kv[0]), kv[0]))
    return Hypothesis(list(best[0]), float(best[1][0]))


def streaming_decode(x, model, chunk_cfg, bp=0.0, task="asr"):
    """Chunked causal inference: returns (Hypothesis, per-chunk seconds).

    The encoder prefix is recomputed per chunk under the chunk attention
    mask; token output is identical to greedy decoding over the
    fully-masked offline forward."""
    T = x.shape[0]
    chunk, left = chunk_cfg.chunk_size, chunk_cfg.left_context
    state = _GreedyState(model.heads(task))
    timings = []
    done_out = 0  # encoder frames already consumed
    pos = 0
    while pos < T:
        pos = min(pos + chunk, T)
        begin = time.perf_counter()
        prefix = Tensor(x.data[:pos])
        f_s = model.enc_asr_forward(prefix, mask=(chunk, left))
        f = f_s if task == "asr" else model.enc_st_forward(f_s, mask=(chunk, left))
        state.consume(f.data[done_out:], bp, chunk_cfg.max_sym_per_frame)
        done_out = f.shape[0]
        timings.append(time.perf_counter() - begin)
    return state.hypothesis(), timings


def write_decode_file(path, rows):
    """rows: iterable of (utt_id, logp, tokens); one `id<TAB>logp<TAB>tokens` line each."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid, logp, tokens in rows:
            fh.write("%s\t%.6f\t%s\n" % (uid, logp, " ".join(str(t) for t in tokens)))


def read_decode_file(path):
    """Returns {utt_id: (logp, tokens)}."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            uid, logp, toks = line.rstrip("\n").split("\t")
            out[uid] = (float(logp), [int(t) for t in toks.split()] if toks else [])
    return out
