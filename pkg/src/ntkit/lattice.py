"""Alignment-lattice losses: exact and pruned transducer, CTC, consistency KL.

Conventions used throughout:

* blank id is 0; real tokens are 1..V-1.
* a transducer logit lattice has shape (T, U+1, V): frame t, labels-emitted u.
* an alignment interleaves exactly T blanks with the U target labels. A label
  emitted after u' previous labels and t' previous blanks consumes the logit
  row (t', u'), so it needs t' <= T-1; the final symbol of every alignment is
  therefore the blank that advances past the last frame.

The heavy losses are single tape ops: the forward pass runs the dynamic
program in plain numpy and the backward rule is the closed-form occupancy
gradient, checked against brute-force enumeration and finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .tensor import (
    NEG_INF,
    ContractError,
    Tensor,
    _log_softmax_np,
    _record,
    add,
    gather,
    matmul,
    mul,
    reshape,
    tsum,
)

BLANK = 0


class NoPathError(ValueError):
    """The lattice admits no alignment for the target."""


class VocabError(ValueError):
    """A target token is outside 1..V-1."""


def _check_target(target, vocab: int) -> list:
    target = list(int(y) for y in target)
    for y in target:
        if not 1 <= y <= vocab - 1:
            raise VocabError(f"token {y} outside 1..{vocab - 1}")
    return target


def _lattice_dims(lattice: Tensor, target) -> tuple:
    if lattice.data.ndim != 3:
        raise ContractError(f"logit lattice must be (T, U+1, V), got {lattice.shape}")
    T, u1, vocab = lattice.shape
    if vocab < 2:
        raise ContractError("lattice needs at least blank plus one token")
    if u1 != len(target) + 1:
        raise ContractError(f"lattice U+1={u1} does not match target length {len(target)}")
    if T < 1:
        raise NoPathError("empty lattice (no frames)")
    return T, len(target), vocab


def _transducer_alpha(ll: np.ndarray, y: list) -> np.ndarray:
    """Forward scores over the (T+1, U+1) node grid; alpha[T, U] is log P."""
    T, u1, _ = ll.shape
    U = len(y)
    alpha = np.full((T + 1, u1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T + 1):
        for u in range(u1):
            if t == 0 and u == 0:
                continue
            best = NEG_INF
            if t >= 1:
                best = alpha[t - 1, u] + ll[t - 1, u, BLANK]
            if u >= 1 and t <= T - 1:
                best = np.logaddexp(best, alpha[t, u - 1] + ll[t, u - 1, y[u - 1]])
            alpha[t, u] = best
    return alpha


def _transducer_beta(ll: np.ndarray, y: list) -> np.ndarray:
    T, u1, _ = ll.shape
    U = len(y)
    beta = np.full((T + 1, u1), NEG_INF)
    beta[T, U] = 0.0
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            acc = ll[t, u, BLANK] + beta[t + 1, u]
            if u <= U - 1:
                acc = np.logaddexp(acc, ll[t, u, y[u]] + beta[t, u + 1])
            beta[t, u] = acc
    return beta


def _transducer_grad_parts(z: np.ndarray, y: list):
    """Returns (nll, grad wrt z, label-transition occupancy)."""
    ll = _log_softmax_np(z, axis=-1)
    alpha = _transducer_alpha(ll, y)
    beta = _transducer_beta(ll, y)
    T, u1, _ = ll.shape
    U = len(y)
    logp = alpha[T, U]
    if not np.isfinite(logp) or logp <= NEG_INF / 2:
        raise NoPathError("no alignment has finite probability")
    occ_blank = np.exp(alpha[:T] + ll[:, :, BLANK] + beta[1:] - logp)
    occ_label = np.zeros((T, u1))
    for u in range(U):
        occ_label[:, u] = np.exp(alpha[:T, u] + ll[:, u, y[u]] + beta[:T, u + 1] - logp)
    gamma = occ_blank + occ_label
    grad = np.exp(ll) * gamma[:, :, None]
    grad[:, :, BLANK] -= occ_blank
    for u in range(U):
        grad[:, u, y[u]] -= occ_label[:, u]
    return -logp, grad, occ_label


def transducer_nll(lattice: Tensor, target) -> Tensor:
    """Exact transducer negative log likelihood of `target` given raw logits.

    Softmax over the last axis happens inside; the backward rule is the
    occupancy-form gradient, so the whole loss is one tape op.
    """
    T, U, vocab = _lattice_dims(lattice, target)
    y = _check_target(target, vocab)
    nll, grad, _ = _transducer_grad_parts(lattice.data, y)
    out = Tensor._wrap(np.asarray(nll, dtype=lattice.data.dtype))

    def bw(g):
        return (g * grad.astype(lattice.data.dtype),)

    return _record(out, (lattice,), bw)


def transducer_occupancy_grad(lattice: Tensor, target) -> Tensor:
    """d NLL / d logits as a constant tensor (softmax(z)*gamma minus occupancy)."""
    T, U, vocab = _lattice_dims(lattice, target)
    y = _check_target(target, vocab)
    _, grad, _ = _transducer_grad_parts(lattice.data, y)
    return Tensor._wrap(grad.astype(lattice.data.dtype))


def transducer_label_occupancy(lattice: Tensor, target) -> np.ndarray:
    """Posterior mass of the label transition leaving each node, shape (T, U+1).

    Column u holds the probability that the alignment emits label u+1 while
    reading frame t. This is what the pruning bound construction consumes.
    """
    T, U, vocab = _lattice_dims(lattice, target)
    y = _check_target(target, vocab)
    _, _, occ_label = _transducer_grad_parts(lattice.data, y)
    return occ_label


def brute_force_transducer_nll(lattice, target) -> float:
    """Enumerate every alignment and log-sum its path probabilities.

    Deliberately independent of the dynamic program: alignments are generated
    as blank/label interleavings and walked symbol by symbol. Guard rails keep
    this to toy sizes.
    """
    z = lattice.data if isinstance(lattice, Tensor) else np.asarray(lattice)
    T, u1, vocab = z.shape
    U = u1 - 1
    if T + U > 14:
        raise ContractError("brute force limited to T+U <= 14")
    if T < 1:
        raise NoPathError("empty lattice (no frames)")
    y = _check_target(target, vocab)
    ll = _log_softmax_np(z, axis=-1)
    path_logps = []
    for label_slots in combinations(range(T + U), U):
        slot_set = set(label_slots)
        t = u = 0
        logp = 0.0
        ok = True
        for pos in range(T + U):
            if pos in slot_set:
                if t > T - 1:
                    ok = False  # no frame left to score the label against
                    break
                logp += ll[t, u, y[u]]
                u += 1
            else:
                logp += ll[t, u, BLANK]
                t += 1
        if ok:
            path_logps.append(logp)
    if not path_logps:
        raise NoPathError("no alignment has finite probability")
    return float(-np.logaddexp.reduce(np.array(path_logps)))


def simple_joiner_logits(f: Tensor, g: Tensor, w_f: Tensor, w_g: Tensor, b: Tensor) -> Tensor:
    """Additive joiner lattice: z[t, u] = W_f f[t] + W_g g[u] + b.

    Costs O((T + U) d V) instead of evaluating a joiner per lattice cell;
    its occupancies drive the pruning bounds for the full joiner.
    """
    T = f.shape[0]
    u1 = g.shape[0]
    vf = matmul(f, w_f)
    vg = matmul(g, w_g)
    vocab = vf.shape[1]
    z = add(reshape(vf, (T, 1, vocab)), reshape(vg, (1, u1, vocab)))
    return add(z, b)


@dataclass
class PruneBounds:
    """Per-frame label windows for the pruned loss.

    starts[t] is the first label index whose row of the lattice survives at
    frame t; the window is [starts[t], starts[t] + width). Starts are
    non-decreasing, move by at most one per frame, begin at 0, and end so the
    final window contains label index U.
    """

    starts: np.ndarray
    width: int
    n_labels: int

    def window(self, t: int) -> tuple:
        lo = int(self.starts[t])
        return lo, lo + self.width

    @property
    def cells(self) -> int:
        return len(self.starts) * self.width


def compute_prune_bounds(label_occ: np.ndarray, s: int) -> PruneBounds:
    """Choose label windows of width `s` from label-transition occupancies.

    Each frame's window is centred on the occupancy argmax, then repaired so
    that windows are monotone, move at most one label per frame, start at
    label 0, and finish covering the last label. Keeping the anchor fixed and
    only widening around it makes the admitted path set grow with `s`, so the
    pruned loss is non-increasing in the window width.
    """
    occ = np.asarray(label_occ, dtype=float)
    if occ.ndim != 2:
        raise ContractError(f"label occupancy must be (T, U+1), got {occ.shape}")
    T, u1 = occ.shape
    if s < 2:
        raise ContractError(f"prune width must be >= 2, got {s}")
    width = min(s, u1)
    top = u1 - width  # largest legal start
    if top > T - 1:
        raise NoPathError(
            f"window ramp infeasible: need to climb {top} labels in {T - 1} frame steps")
    anchors = occ.argmax(axis=1)
    starts = np.clip(anchors - (width - 1) // 2, 0, top)
    starts[0] = 0
    for t in range(1, T):
        starts[t] = min(max(starts[t], starts[t - 1]), starts[t - 1] + 1, top)
    starts[T - 1] = top
    for t in range(T - 2, -1, -1):
        starts[t] = max(starts[t], starts[t + 1] - 1)
    if starts[0] != 0:
        raise NoPathError("window ramp infeasible after repair")
    return PruneBounds(starts=starts.astype(np.int64), width=width, n_labels=u1 - 1)


def _window_mask(bounds: PruneBounds, T: int) -> list:
    return [bounds.window(t) for t in range(T)]


def _pruned_grad_parts(zw: np.ndarray, y: list, bounds: PruneBounds):
    """Forward/backward over the windowed lattice; returns (nll, grad wrt zw)."""
    T, width, _ = zw.shape
    U = len(y)
    ll = _log_softmax_np(zw, axis=-1)
    wins = _window_mask(bounds, T)
    alpha = np.full((T + 1, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        lo, hi = wins[t]
        for u in range(lo, min(hi, U + 1)):
            a = alpha[t, u]
            if a <= NEG_INF / 2:
                continue
            j = u - lo
            if u < U and u + 1 < hi:
                alpha[t, u + 1] = np.logaddexp(alpha[t, u + 1], a + ll[t, j, y[u]])
            if t + 1 < T:
                nlo, nhi = wins[t + 1]
                if nlo <= u < nhi:
                    alpha[t + 1, u] = np.logaddexp(alpha[t + 1, u], a + ll[t, j, BLANK])
            else:
                alpha[T, u] = np.logaddexp(alpha[T, u], a + ll[t, j, BLANK])
    logp = alpha[T, U]
    if not np.isfinite(logp) or logp <= NEG_INF / 2:
        raise NoPathError("pruning bounds admit no alignment")

    beta = np.full((T + 1, U + 1), NEG_INF)
    beta[T, U] = 0.0
    for t in range(T - 1, -1, -1):
        lo, hi = wins[t]
        for u in range(min(hi, U + 1) - 1, lo - 1, -1):
            j = u - lo
            if t + 1 < T:
                nlo, nhi = wins[t + 1]
                acc = ll[t, j, BLANK] + beta[t + 1, u] if nlo <= u < nhi else NEG_INF
            else:
                acc = ll[t, j, BLANK] + beta[T, u]
            if u < U and u + 1 < hi:
                acc = np.logaddexp(acc, ll[t, j, y[u]] + beta[t, u + 1])
            beta[t, u] = acc

    grad = np.zeros_like(zw)
    sm = np.exp(ll)
    for t in range(T):
        lo, hi = wins[t]
        for u in range(lo, min(hi, U + 1)):
            j = u - lo
            if t + 1 < T:
                nlo, nhi = wins[t + 1]
                b_next = beta[t + 1, u] if nlo <= u < nhi else NEG_INF
            else:
                b_next = beta[T, u]
            occ_b = np.exp(alpha[t, u] + ll[t, j, BLANK] + b_next - logp)
            occ_l = 0.0
            if u < U and u + 1 < hi:
                occ_l = np.exp(alpha[t, u] + ll[t, j, y[u]] + beta[t, u + 1] - logp)
            gamma = occ_b + occ_l
            grad[t, j, :] = sm[t, j, :] * gamma
            grad[t, j, BLANK] -= occ_b
            if occ_l:
                grad[t, j, y[u]] -= occ_l
    return -logp, grad


def pruned_transducer_nll(f: Tensor, g: Tensor, target, bounds: PruneBounds, joiner) -> Tensor:
    """Transducer NLL restricted to the label windows in `bounds`.

    `joiner` maps matched row batches (n, d_f), (n, d_g) -> logits (n, V) and
    is only evaluated on the T*width surviving cells. Transitions that leave a
    window are treated as impossible, so the result upper-bounds the exact
    NLL and equals it once the windows cover every label row.
    """
    T = f.shape[0]
    u1 = g.shape[0]
    y = list(int(t) for t in target)
    if len(bounds.starts) != T or bounds.n_labels != len(y):
        raise ContractError("bounds do not match this lattice")
    width = bounds.width
    idx_g = (bounds.starts[:, None] + np.arange(width)[None, :]).reshape(-1)
    if idx_g.max() >= u1:
        raise ContractError("bounds reach past the label rows")
    idx_f = np.repeat(np.arange(T), width)
    zw_flat = joiner(gather(f, idx_f), gather(g, idx_g))
    vocab = zw_flat.shape[1]
    _check_target(y, vocab)
    zw = reshape(zw_flat, (T, width, vocab))
    nll, grad = _pruned_grad_parts(zw.data, y, bounds)
    out = Tensor._wrap(np.asarray(nll, dtype=zw.data.dtype))

    def bw(gout):
        return (gout * grad.astype(zw.data.dtype),)

    return _record(out, (zw,), bw)


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------


def _check_logprob_rows(x: np.ndarray, tol: float = 1e-4) -> None:
    lse = np.log(np.exp(x - x.max(axis=-1, keepdims=True)).sum(axis=-1)) + x.max(axis=-1)
    if np.max(np.abs(lse)) > tol:
        raise ContractError("rows are not normalized log-probabilities")


def _ctc_extended(y: list) -> list:
    ext = [BLANK]
    for tok in y:
        ext.append(tok)
        ext.append(BLANK)
    return ext


def ctc_min_frames(target) -> int:
    y = list(target)
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    return len(y) + repeats


def _ctc_grad_parts(lp: np.ndarray, y: list):
    T, vocab = lp.shape
    ext = _ctc_extended(y)
    S = len(ext)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, BLANK]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s_i in range(S):
            acc = alpha[t - 1, s_i]
            if s_i >= 1:
                acc = np.logaddexp(acc, alpha[t - 1, s_i - 1])
            if s_i >= 2 and ext[s_i] != BLANK and ext[s_i] != ext[s_i - 2]:
                acc = np.logaddexp(acc, alpha[t - 1, s_i - 2])
            alpha[t, s_i] = acc + lp[t, ext[s_i]]
    logp = alpha[T - 1, S - 1]
    if S > 1:
        logp = np.logaddexp(logp, alpha[T - 1, S - 2])
    if not np.isfinite(logp) or logp <= NEG_INF / 2:
        raise NoPathError("no CTC path has finite probability")

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s_i in range(S):
            acc = lp[t + 1, ext[s_i]] + beta[t + 1, s_i]
            if s_i + 1 < S:
                acc = np.logaddexp(acc, lp[t + 1, ext[s_i + 1]] + beta[t + 1, s_i + 1])
            if s_i + 2 < S and ext[s_i + 2] != BLANK and ext[s_i + 2] != ext[s_i]:
                acc = np.logaddexp(acc, lp[t + 1, ext[s_i + 2]] + beta[t + 1, s_i + 2])
            beta[t, s_i] = acc

    grad = np.zeros_like(lp)
    post = np.exp(alpha + beta - logp)
    for s_i, lab in enumerate(ext):
        grad[:, lab] -= post[:, s_i]
    return -logp, grad


def ctc_nll(frame_logprobs: Tensor, target) -> Tensor:
    """CTC negative log likelihood over normalized frame log-probabilities.

    Uses the usual blank-interleaved extension of the target; repeated labels
    need a separating blank, hence the minimum-frame requirement.
    """
    if frame_logprobs.data.ndim != 2:
        raise ContractError(f"frame log-probs must be (T, V), got {frame_logprobs.shape}")
    T, vocab = frame_logprobs.shape
    y = _check_target(target, vocab)
    if T < ctc_min_frames(y):
        raise NoPathError(
            f"target needs at least {ctc_min_frames(y)} frames, lattice has {T}")
    _check_logprob_rows(frame_logprobs.data)
    nll, grad = _ctc_grad_parts(frame_logprobs.data, y)
    out = Tensor._wrap(np.asarray(nll, dtype=frame_logprobs.data.dtype))

    def bw(g):
        return (g * grad.astype(frame_logprobs.data.dtype),)

    return _record(out, (frame_logprobs,), bw)


def brute_force_ctc_nll(frame_logprobs, target) -> float:
    """Sum path probabilities over every length-T emission sequence whose
    collapse (merge repeats, drop blanks) equals the target."""
    lp = frame_logprobs.data if isinstance(frame_logprobs, Tensor) else np.asarray(frame_logprobs)
    T, vocab = lp.shape
    if vocab ** T > 300_000:
        raise ContractError("brute force limited to V**T <= 300000")
    y = list(int(t) for t in target)
    path_logps = []
    for path in product(range(vocab), repeat=T):
        collapsed = []
        prev = None
        for sym in path:
            if sym != prev and sym != BLANK:
                collapsed.append(sym)
            prev = sym
        if collapsed == y:
            path_logps.append(sum(lp[t, sym] for t, sym in enumerate(path)))
    if not path_logps:
        raise NoPathError("no CTC path matches the target")
    return float(-np.logaddexp.reduce(np.array(path_logps)))


# ---------------------------------------------------------------------------
# Consistency regularization
# ---------------------------------------------------------------------------


def directed_kl(stopped: Tensor, live: Tensor) -> Tensor:
    """KL(stop_grad(p_stopped) || p_live) summed over frames.

    The stopped side enters as constants, so gradients flow only into `live`.
    """
    if stopped.shape != live.shape:
        raise ContractError(f"view shapes differ: {stopped.shape} vs {live.shape}")
    p = Tensor._wrap(np.exp(stopped.data))
    ref = Tensor._wrap(stopped.data.copy())
    return tsum(mul(p, ref - live))


def cr_kl(logp_a: Tensor, logp_b: Tensor) -> Tensor:
    """Symmetric consistency loss between two views of frame posteriors.

    0.5 * sum_t [ KL(sg(p_b) || p_a) + KL(sg(p_a) || p_b) ], where each KL
    term stops gradients through its reference distribution.
    """
    if logp_a.data.ndim != 2 or logp_b.data.ndim != 2:
        raise ContractError("cr_kl expects (T, V) log-probability matrices")
    if logp_a.shape != logp_b.shape:
        raise ContractError(f"view shapes differ: {logp_a.shape} vs {logp_b.shape}")
    _check_logprob_rows(logp_a.data)
    _check_logprob_rows(logp_b.data)
    return 0.5 * (directed_kl(logp_b, logp_a) + directed_kl(logp_a, logp_b))
