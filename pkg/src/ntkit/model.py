"""Encoder/predictor/joiner model with a hierarchical two-stage encoder.

The recognition encoder downsamples by 2 after its first block; the
translation encoder consumes the recognition encoder's output at the reduced
frame rate and adds no further downsampling.  A shared-encoder baseline is
the same class with zero translation blocks.

Checkpoints are flat binary files: magic "HENT1", then per-array records of
(u32 name length, UTF-8 name, u32 rank, u32 extents..., float32 LE data).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import (
    NEG_INF,
    ContractError,
    Tensor,
    add,
    conv1d,
    dtype,
    embedding_lookup,
    gather,
    layernorm,
    log_softmax,
    masked_attention,
    matmul,
    mul,
    relu,
    reshape,
    strided_mean_downsample,
    tanh,
)


class CheckpointError(ValueError):
    """Checkpoint file unreadable or incompatible with the model."""


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 16
    d: int = 64
    asr_blocks: int = 3
    st_blocks: int = 2
    ff_mult: float = 4.0
    st_ff_mult: float = 4.0
    predictor_k: int = 2
    src_vocab: int = 17
    tgt_vocab: int = 17


def preset(name, feat_dim=16, src_vocab=17, tgt_vocab=17):
    """Desk-scale architecture presets at matched parameter budget."""
    common = dict(feat_dim=feat_dim, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
    if name == "shared":
        return ModelConfig(asr_blocks=5, st_blocks=0, **common)
    if name == "hier1":
        return ModelConfig(asr_blocks=3, st_blocks=2, **common)
    if name == "hier2":
        return ModelConfig(asr_blocks=3, st_blocks=4, st_ff_mult=0.5, **common)
    raise ContractError(f"unknown architecture preset {name!r}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def chunk_attention_mask(T, chunk_size, left_context):
    """Additive (T, T) mask: each frame sees its own chunk plus
    left_context frames of completed chunks; everything else gets NEG_INF."""
    if chunk_size < 1:
        raise ContractError("chunk_size must be >= 1")
    if left_context < 0 or left_context % chunk_size != 0:
        raise ContractError("left_context must be a multiple of chunk_size")
    n_left = left_context // chunk_size
    c = np.arange(T) // chunk_size
    diff = c[:, None] - c[None, :]
    allowed = (diff >= 0) & (diff <= n_left)
    return np.where(allowed, 0.0, NEG_INF).astype(dtype())


class EncoderBlock:
    """Pre-norm single-head attention, causal conv (kernel 3), pre-norm FF."""

    def __init__(self, rng, d, ff_mult):
        fd = int(round(d * ff_mult))
        self.ln1_g, self.ln1_b = _ones(d), _zeros(d)
        self.wq = _uniform(rng, (d, d), d)
        self.wk = _uniform(rng, (d, d), d)
        self.wv = _uniform(rng, (d, d), d)
        self.wo = _uniform(rng, (d, d), d)
        self.conv_w = _uniform(rng, (3, d, d), 3 * d)
        self.conv_b = _zeros(d)
        self.ln2_g, self.ln2_b = _ones(d), _zeros(d)
        self.ff_w1 = _uniform(rng, (d, fd), d)
        self.ff_b1 = _zeros(fd)
        self.ff_w2 = _uniform(rng, (fd, d), fd)
        self.ff_b2 = _zeros(d)

    def forward(self, x, mask=None):
        h = add(mul(layernorm(x), self.ln1_g), self.ln1_b)
        att = masked_attention(matmul(h, self.wq), matmul(h, self.wk),
                               matmul(h, self.wv), mask)
        x = add(x, matmul(att, self.wo))
        x = add(x, add(conv1d(x, self.conv_w, causal=True), self.conv_b))
        h = add(mul(layernorm(x), self.ln2_g), self.ln2_b)
        ff = add(matmul(relu(add(matmul(h, self.ff_w1), self.ff_b1)), self.ff_w2),
                 self.ff_b2)
        return add(x, ff)

    def named(self, prefix):
        return [
            (prefix + ".ln1.g", self.ln1_g), (prefix + ".ln1.b", self.ln1_b),
            (prefix + ".attn.wq", self.wq), (prefix + ".attn.wk", self.wk),
            (prefix + ".attn.wv", self.wv), (prefix + ".attn.wo", self.wo),
            (prefix + ".conv.w", self.conv_w), (prefix + ".conv.b", self.conv_b),
            (prefix + ".ln2.g", self.ln2_g), (prefix + ".ln2.b", self.ln2_b),
            (prefix + ".ff.w1", self.ff_w1), (prefix + ".ff.b1", self.ff_b1),
            (prefix + ".ff.w2", self.ff_w2), (prefix + ".ff.b2", self.ff_b2),
        ]


class Predictor:
    """Stateless label encoder: embedding, causal conv of width K, relu,
    projection.  Row u of the output depends on emitted tokens
    max(0, u-K+1)..u only; row 0 sees just the BOS sentinel (embedding 0)."""

    def __init__(self, rng, vocab, d, k):
        self.vocab, self.k = vocab, k
        self.emb = _uniform(rng, (vocab, d), vocab)
        self.conv_w = _uniform(rng, (k, d, d), k * d)
        self.conv_b = _zeros(d)
        self.proj_w = _uniform(rng, (d, d), d)
        self.proj_b = _zeros(d)

    def forward(self, tokens):
        for t in tokens:
            if not 1 <= t < self.vocab:
                raise ContractError(f"predictor token {t} outside 1..{self.vocab - 1}")
        ids = np.concatenate(([0], np.asarray(tokens, dtype=np.int64)))
        h = embedding_lookup(self.emb, ids)
        h = relu(add(conv1d(h, self.conv_w, causal=True), self.conv_b))
        return add(matmul(h, self.proj_w), self.proj_b)

    def step(self, tokens):
        """Output row (d,) for the next joiner query given the emitted prefix."""
        g = self.forward(tokens)
        row = gather(g, np.array([len(tokens)]))
        return reshape(row, (g.shape[1],))

    def named(self, prefix):
        return [
            (prefix + ".emb", self.emb),
            (prefix + ".conv.w", self.conv_w), (prefix + ".conv.b", self.conv_b),
            (prefix + ".proj.w", self.proj_w), (prefix + ".proj.b", self.proj_b),
        ]


class Joiner:
    """Full joiner: linear(tanh(W_f f + W_g g + b)) -> V logits, blank at 0."""

    def __init__(self, rng, d, vocab):
        self.vocab = vocab
        self.wf = _uniform(rng, (d, d), d)
        self.wg = _uniform(rng, (d, d), d)
        self.b = _zeros(d)
        self.wo = _uniform(rng, (d, vocab), d)
        self.bo = _zeros(vocab)

    def rows(self, f_rows, g_rows):
        h = tanh(add(add(matmul(f_rows, self.wf), matmul(g_rows, self.wg)), self.b))
        return add(matmul(h, self.wo), self.bo)

    def forward(self, f_row, g_row):
        if f_row.shape != g_row.shape or f_row.data.ndim not in (1, 2):
            raise ContractError("joiner rows must both be (d,) or (n, d)")
        if f_row.data.ndim == 1:
            d = f_row.shape[0]
            out = self.rows(reshape(f_row, (1, d)), reshape(g_row, (1, d)))
            return reshape(out, (self.vocab,))
        return self.rows(f_row, g_row)

    def named(self, prefix):
        return [
            (prefix + ".wf", self.wf), (prefix + ".wg", self.wg),
            (prefix + ".b", self.b),
            (prefix + ".wo", self.wo), (prefix + ".bo", self.bo),
        ]


class SimpleJoiner:
    """Additive joiner used for pruning bounds and the simple loss term."""

    def __init__(self, rng, d, vocab):
        self.wf = _uniform(rng, (d, vocab), d)
        self.wg = _uniform(rng, (d, vocab), d)
        self.b = _zeros(vocab)

    def lattice(self, f, g):
        from .lattice import simple_joiner_logits
        return simple_joiner_logits(f, g, self.wf, self.wg, self.b)

    def named(self, prefix):
        return [(prefix + ".wf", self.wf), (prefix + ".wg", self.wg),
                (prefix + ".b", self.b)]


class CtcHead:
    """Linear projection to per-frame log-probabilities."""

    def __init__(self, rng, d, vocab):
        self.w = _uniform(rng, (d, vocab), d)
        self.b = _zeros(vocab)

    def log_probs(self, f):
        return log_softmax(add(matmul(f, self.w), self.b))

    def named(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


@dataclass(frozen=True)
class TaskHeads:
    predictor: Predictor
    joiner: Joiner
    vocab: int


class HierarchicalModel:
    def __init__(self, cfg: ModelConfig, seed=0):
        rng = np.random.default_rng(seed)
        d = cfg.d
        self.cfg = cfg
        self.in_w = _uniform(rng, (cfg.feat_dim, d), cfg.feat_dim)
        self.in_b = _zeros(d)
        self.enc_asr = [EncoderBlock(rng, d, cfg.ff_mult) for _ in range(cfg.asr_blocks)]
        self.enc_st = [EncoderBlock(rng, d, cfg.st_ff_mult) for _ in range(cfg.st_blocks)]
        self.pred_asr = Predictor(rng, cfg.src_vocab, d, cfg.predictor_k)
        self.pred_st = Predictor(rng, cfg.tgt_vocab, d, cfg.predictor_k)
        self.join_asr = Joiner(rng, d, cfg.src_vocab)
        self.join_st = Joiner(rng, d, cfg.tgt_vocab)
        self.sjoin_asr = SimpleJoiner(rng, d, cfg.src_vocab)
        self.sjoin_st = SimpleJoiner(rng, d, cfg.tgt_vocab)
        self.ctc_asr = CtcHead(rng, d, cfg.src_vocab)
        self.ctc_st = CtcHead(rng, d, cfg.tgt_vocab)

    def _masks(self, T, mask):
        if mask is None:
            return None, None
        chunk, left = mask
        if chunk < 2 or chunk % 2 != 0:
            raise ContractError("streaming chunk_size must be even and >= 2")
        m0 = Tensor(chunk_attention_mask(T, chunk, left))
        T2 = (T + 1) // 2
        m1 = Tensor(chunk_attention_mask(T2, chunk // 2, left // 2))
        return m0, m1

    def enc_asr_forward(self, x, mask=None):
        """Acoustic features (T, F) -> recognition frames (ceil(T/2), d).

        mask is None for full context, or (chunk_size, left_context) in
        input frames for streaming-constrained attention."""
        if x.data.ndim != 2 or x.shape[1] != self.cfg.feat_dim:
            raise ContractError(f"expected (T, {self.cfg.feat_dim}) features")
        if x.shape[0] < 2:
            raise ContractError("need at least 2 frames to downsample")
        m0, m1 = self._masks(x.shape[0], mask)
        h = add(matmul(x, self.in_w), self.in_b)
        h = self.enc_asr[0].forward(h, m0)
        h = strided_mean_downsample(h, 2)
        for blk in self.enc_asr[1:]:
            h = blk.forward(h, m1)
        return h

    def enc_st_forward(self, f_s, mask=None):
        """Recognition frames -> translation frames, same frame count.

        mask, when given, is (chunk_size, left_context) in *input* frames,
        matching enc_asr_forward; translation blocks run at the halved rate."""
        if f_s.data.ndim != 2 or f_s.shape[1] != self.cfg.d:
            raise ContractError(f"expected (T', {self.cfg.d}) encoder frames")
        _, m1 = self._masks(2 * f_s.shape[0], mask)
        h = f_s
        for blk in self.enc_st:
            h = blk.forward(h, m1)
        return h

    def encode(self, x, mask=None):
        f_s = self.enc_asr_forward(x, mask)
        return f_s, self.enc_st_forward(f_s, mask)

    def heads(self, task):
        if task == "asr":
            return TaskHeads(self.pred_asr, self.join_asr, self.cfg.src_vocab)
        if task == "st":
            return TaskHeads(self.pred_st, self.join_st, self.cfg.tgt_vocab)
        raise ContractError(f"unknown task {task!r}")

    def params(self):
        out = [("in_proj.w", self.in_w), ("in_proj.b", self.in_b)]
        for i, blk in enumerate(self.enc_asr):
            out += blk.named(f"enc_asr.{i}")
        for i, blk in enumerate(self.enc_st):
            out += blk.named(f"enc_st.{i}")
        out += self.pred_asr.named("pred_asr") + self.pred_st.named("pred_st")
        out += self.join_asr.named("join_asr") + self.join_st.named("join_st")
        out += self.sjoin_asr.named("sjoin_asr") + self.sjoin_st.named("sjoin_st")
        out += self.ctc_asr.named("ctc_asr") + self.ctc_st.named("ctc_st")
        return dict(out)

    def asr_param_names(self):
        """Arrays covered by recognition-only pretraining checkpoints."""
        keep = ("in_proj.", "enc_asr.", "pred_asr", "join_asr", "sjoin_asr", "ctc_asr")
        return [n for n in self.params() if n.startswith(keep)]

    def param_count(self):
        return sum(t.size for t in self.params().values())

    def zero_grad(self):
        for t in self.params().values():
            t.zero_grad()


def checkpoint_save(model, path, names=None):
    params = model.params()
    if names is None:
        names = list(params)
    with open(path, "wb") as fh:
        fh.write(b"HENT1")
        for name in names:
            arr = np.ascontiguousarray(params[name].data, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def checkpoint_load(model, path, init_missing=False):
    """Load arrays into model in place.  Unknown or shape-mismatched arrays
    are errors naming the offenders; arrays absent from the file are errors
    too unless init_missing, which leaves them at their fresh values."""
    arrays = {}
    with open(path, "rb") as fh:
        if fh.read(5) != b"HENT1":
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading name length")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{name} extents"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"{name} data")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)

    params = model.params()
    unknown = sorted(set(arrays) - set(params))
    if unknown:
        raise CheckpointError(f"{path}: unknown arrays {', '.join(unknown)}")
    bad = sorted(n for n in arrays if tuple(arrays[n].shape) != params[n].shape)
    if bad:
        raise CheckpointError(f"{path}: shape mismatch for {', '.join(bad)}")
    missing = sorted(set(params) - set(arrays))
    if missing and not init_missing:
        raise CheckpointError(f"{path}: missing arrays {', '.join(missing)}")
    for name, arr in arrays.items():
        params[name].data = arr.astype(dtype())
    return model
