"""Synthetic paired recognition/translation task.

Each source token emits a run of noisy copies of its fixed embedding vector;
the translation target is a deterministic token relabeling composed with a
position reordering, so translation quality is sensitive to whether a model
can reorder while recognition stays monotone.

On-disk dataset layout (one directory):
  manifest.tsv  UTF-8 lines  id<TAB>T<TAB>src tokens<TAB>tgt tokens
  feats.bin     raw little-endian float32, row-major (T, F) per example
  feats.idx     UTF-8 lines  id<TAB>byte offset<TAB>T
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass(frozen=True)
class SynthConfig:
    src_vocab: int = 30        # real token ids 1..src_vocab; 0 stays blank
    tgt_vocab: int = 30
    feat_dim: int = 16
    frames_lo: int = 2
    frames_hi: int = 4
    noise_std: float = 0.1
    reorder_mode: str = "swap_pairs"
    len_lo: int = 4
    len_hi: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.src_vocab, self.tgt_vocab) < 4:
            raise ContractError("vocab sizes must be >= 4")
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")
        if not 1 <= self.frames_lo <= self.frames_hi:
            raise ContractError("bad frames_per_token range")
        if not 1 <= self.len_lo <= self.len_hi:
            raise ContractError("bad utterance length range")
        reorder_positions(self.reorder_mode, 4)  # validate mode string


@dataclass
class SynthExample:
    uid: str
    frames: Tensor
    src_tokens: list = field(default_factory=list)
    tgt_tokens: list = field(default_factory=list)


def reorder_positions(mode, n):
    """Position bijection for an n-token utterance: output i takes the source
    token at position perm[i].  Modes: monotone, swap_pairs, rotate_span:k."""
    if mode == "monotone":
        return np.arange(n)
    if mode == "swap_pairs":
        perm = np.arange(n)
        for i in range(0, n - 1, 2):
            perm[i], perm[i + 1] = perm[i + 1], perm[i]
        return perm
    if mode.startswith("rotate_span:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            raise ContractError(f"bad rotate_span parameter in {mode!r}") from None
        if k < 0:
            raise ContractError("rotate_span shift must be >= 0")
        return (np.arange(n) + k) % n
    raise ContractError(f"unknown reorder_mode {mode!r}")


def inverse_positions(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def token_table(cfg):
    """Fixed per-config token embeddings: seeded gaussian rows, unit norm,
    row 0 (blank) all zero.  Near-orthogonal at desk dimensionality."""
    rng = np.random.default_rng(cfg.seed)
    emb = rng.normal(size=(cfg.src_vocab + 1, cfg.feat_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    emb[0] = 0.0
    return emb


def token_map(cfg):
    """Deterministic source-to-target relabeling m(s), a seeded permutation
    when the vocabularies match."""
    perm = np.random.default_rng(cfg.seed + 1).permutation(cfg.tgt_vocab)

    def m(s):
        return int(perm[(s - 1) % cfg.tgt_vocab]) + 1

    return m


def translate(cfg, src_tokens):
    m = token_map(cfg)
    perm = reorder_positions(cfg.reorder_mode, len(src_tokens))
    return [m(src_tokens[p]) for p in perm]


def gen_example(cfg, rng, uid="utt00000", table=None):
    if table is None:
        table = token_table(cfg)
    n = int(rng.integers(cfg.len_lo, cfg.len_hi + 1))
    src = [int(s) for s in rng.integers(1, cfg.src_vocab + 1, size=n)]
    rows = []
    for s in src:
        r = int(rng.integers(cfg.frames_lo, cfg.frames_hi + 1))
        rows.append(table[s] + rng.normal(0.0, cfg.noise_std,
                                          size=(r, cfg.feat_dim)))
    frames = Tensor(np.concatenate(rows, axis=0))
    return SynthExample(uid, frames, src, translate(cfg, src))


def gen_dataset(cfg, n, out_dir=None, split=0):
    """Generate n seeded examples; optionally persist them to out_dir.

    `split` offsets the example draws only: splits share the token
    embeddings and relabeling map but contain different utterances."""
    if n < 1:
        raise ContractError("need n >= 1 examples")
    rng = np.random.default_rng(cfg.seed + 2 + 7919 * split)
    table = token_table(cfg)
    examples = [gen_example(cfg, rng, f"utt{i:05d}", table) for i in range(n)]
    if out_dir is not None:
        save_dataset(examples, out_dir)
    return examples


def save_dataset(examples, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    offset = 0
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as man, \
         open(os.path.join(out_dir, "feats.bin"), "wb") as bin_f, \
         open(os.path.join(out_dir, "feats.idx"), "w", encoding="utf-8") as idx:
        for ex in examples:
            T = ex.frames.shape[0]
            man.write("%s\t%d\t%s\t%s\n" % (
                ex.uid, T,
                " ".join(map(str, ex.src_tokens)),
                " ".join(map(str, ex.tgt_tokens))))
            raw = np.ascontiguousarray(ex.frames.data, dtype="<f4").tobytes()
            bin_f.write(raw)
            idx.write(f"{ex.uid}\t{offset}\t{T}\n")
            offset += len(raw)


def read_manifest(path):
    """id -> (src_tokens, tgt_tokens), no feature I/O."""
    refs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            uid, _, src, tgt = line.rstrip("\n").split("\t")
            refs[uid] = ([int(t) for t in src.split()] if src else [],
                         [int(t) for t in tgt.split()] if tgt else [])
    return refs


def load_dataset(in_dir, feat_dim):
    index = {}
    with open(os.path.join(in_dir, "feats.idx"), encoding="utf-8") as fh:
        for line in fh:
            uid, off, T = line.rstrip("\n").split("\t")
            index[uid] = (int(off), int(T))
    examples = []
    with open(os.path.join(in_dir, "feats.bin"), "rb") as bin_f, \
         open(os.path.join(in_dir, "manifest.tsv"), encoding="utf-8") as man:
        for line in man:
            uid, T, src, tgt = line.rstrip("\n").split("\t")
            off, T_idx = index[uid]
            if int(T) != T_idx:
                raise ContractError(f"{uid}: manifest/index frame counts disagree")
            bin_f.seek(off)
            raw = bin_f.read(4 * int(T) * feat_dim)
            frames = np.array(np.frombuffer(raw, dtype="<f4").reshape(int(T), feat_dim))
            examples.append(SynthExample(
                uid, Tensor(frames),
                [int(t) for t in src.split()] if src else [],
                [int(t) for t in tgt.split()] if tgt else []))
    return examples
