"""Acceptance suite: eleven end-to-end checks, one test per criterion.

Each test prints a single `[criterion NN] PASS ...` line with the
measured quantities (visible with `pytest -rP` or `-s`). The first six
criteria are exact mathematical properties; the last five train models
on the synthetic task and check task-level outcomes, sharing trained
models through module-scoped fixtures to keep the suite fast.
"""

import dataclasses
import math
import statistics
import time

import numpy as np
import pytest

import ntkit.tensor as tz
from ntkit.tensor import (Tensor, Tape, backward, set_precision,
                          finite_diff_check, NEG_INF)
from ntkit.lattice import (transducer_nll, brute_force_transducer_nll,
                           transducer_label_occupancy, compute_prune_bounds,
                           pruned_transducer_nll, simple_joiner_logits,
                           ctc_nll, brute_force_ctc_nll, ctc_min_frames,
                           directed_kl, cr_kl)
from ntkit.model import (HierarchicalModel, ModelConfig, preset,
                         checkpoint_save, checkpoint_load)
from ntkit.decode import (ChunkConfig, apply_blank_penalty, greedy_decode,
                          beam_search, streaming_decode)
from ntkit.synthdata import SynthConfig, gen_dataset
from ntkit.train import TrainConfig, train_run
from ntkit.metrics import wer, bleu, length_ratio, rtf


def report(num, detail):
    print(f"[criterion {num:02d}] PASS {detail}")


@pytest.fixture(autouse=True)
def _default_precision():
    yield
    set_precision(32)


def _rand_target(r, U, vocab):
    return [int(t) for t in r.integers(1, vocab, size=U)]


# criterion 1: exact losses match brute-force path enumeration


def test_01_exact_losses_match_enumeration():
    set_precision(64)
    t0 = time.monotonic()
    r = np.random.default_rng(8101)
    worst_nt = 0.0
    for _ in range(200):
        T = int(r.integers(1, 5))
        U = int(r.integers(0, 4))
        vocab = int(r.integers(2, 7))
        z = Tensor(r.normal(size=(T, U + 1, vocab)) * 2.0)
        y = _rand_target(r, U, vocab)
        got = transducer_nll(z, y).item()
        want = brute_force_transducer_nll(z, y)
        worst_nt = max(worst_nt, abs(got - want))
    worst_ctc = 0.0
    n_ctc = 0
    while n_ctc < 200:
        T = int(r.integers(1, 7))
        U = int(r.integers(0, 4))
        vocab = int(r.integers(2, 7))
        y = _rand_target(r, U, vocab)
        if ctc_min_frames(y) > T:
            continue
        n_ctc += 1
        lp = tz.log_softmax(Tensor(r.normal(size=(T, vocab)) * 2.0))
        got = ctc_nll(lp, y).item()
        want = brute_force_ctc_nll(lp, y)
        worst_ctc = max(worst_ctc, abs(got - want))
    elapsed = time.monotonic() - t0
    assert worst_nt <= 1e-9 and worst_ctc <= 1e-9
    assert elapsed < 10.0
    report(1, f"200+200 lattices, max |diff| transducer {worst_nt:.2e}, "
              f"ctc {worst_ctc:.2e}, {elapsed:.1f}s")


# criterion 2: finite differences confirm every gradient


def _op_cases(r, case):
    """One (name, scalar_fn, probe_tensor) triple per differentiable op.

    All weights are drawn up front: the closures must be pure functions
    of the probe or the finite differences are meaningless.
    """
    d, T = 4, 5
    w_td = Tensor(r.normal(size=(T, d)))
    w_dt = Tensor(r.normal(size=(d, T)))
    w_7d = Tensor(r.normal(size=(7, d)))
    w_3d = Tensor(r.normal(size=(3, d)))
    w_d = Tensor(r.normal(size=d))
    w_t = Tensor(r.normal(size=T))

    def weighted(op):
        return lambda x: tz.tsum(tz.mul(op(x), w_td))

    a = Tensor(r.normal(size=(T, d)))
    b = Tensor(r.normal(size=(d, d)))
    kernel = Tensor(r.normal(size=(3, d, d)) * 0.5)
    nudged = r.normal(size=(T, d))
    nudged += 0.2 * np.sign(nudged)  # keep clear of the relu kink
    ids = r.integers(0, T, size=7)
    mask = np.triu(np.full((T, T), NEG_INF), k=1)

    cases = [
        ("matmul", (lambda x: tz.tsum(tz.mul(tz.matmul(x, b), w_td)),
                    lambda x: tz.tsum(tz.mul(tz.matmul(a, x), w_td))
                    )[case % 2], a if case % 2 == 0 else b),
        ("transpose", lambda x: tz.tsum(tz.mul(tz.transpose(x), w_dt)), a),
        ("add", weighted(lambda x: tz.add(x, a)), Tensor(r.normal(size=(T, d)))),
        ("mul", weighted(lambda x: tz.mul(x, a)), Tensor(r.normal(size=(T, d)))),
        ("relu", weighted(tz.relu), Tensor(nudged)),
        ("tanh", weighted(tz.tanh), a),
        ("conv1d", (lambda x: tz.tsum(tz.mul(tz.conv1d(x, kernel, causal=True), w_td)),
                    lambda x: tz.tsum(tz.mul(tz.conv1d(a, x, causal=False), w_td))
                    )[case % 2], a if case % 2 == 0 else kernel),
        ("layernorm", weighted(tz.layernorm), a),
        ("softmax", weighted(tz.softmax), a),
        ("log_softmax", weighted(tz.log_softmax), a),
        ("logsumexp", lambda x: tz.tsum(tz.logsumexp(x)), a),
        ("embedding_lookup",
         lambda x: tz.tsum(tz.mul(tz.embedding_lookup(x, ids), w_7d)), a),
        ("strided_mean_downsample",
         lambda x: tz.tsum(tz.mul(tz.strided_mean_downsample(x, 2), w_3d)), a),
        ("masked_attention", [
            lambda x: tz.tsum(tz.mul(tz.masked_attention(x, a, w_td, mask), w_td)),
            lambda x: tz.tsum(tz.mul(tz.masked_attention(a, x, w_td, None), w_td)),
            lambda x: tz.tsum(tz.mul(tz.masked_attention(a, w_td, x, mask), w_td)),
        ][case % 3], Tensor(r.normal(size=(T, d)))),
        ("tsum", [lambda x: tz.tsum(x),
                  lambda x: tz.tsum(tz.mul(tz.tsum(x, axis=0), w_d)),
                  lambda x: tz.tsum(tz.mul(tz.tsum(x, axis=1), w_t)),
                  ][case % 3], a),
        ("gather", lambda x: tz.tsum(tz.mul(tz.gather(x, ids), w_7d)), a),
        ("reshape", lambda x: tz.tsum(tz.mul(tz.reshape(x, (d, T)), w_dt)), a),
    ]
    return cases


def _toy_joiner(r, d, vocab, hidden=5):
    wf = Tensor(r.normal(size=(d, hidden)) * 0.7)
    wg = Tensor(r.normal(size=(d, hidden)) * 0.7)
    bb = Tensor(r.normal(size=hidden) * 0.1)
    wo = Tensor(r.normal(size=(hidden, vocab)) * 0.7)

    def joiner(rows_f, rows_g):
        h = tz.tanh(tz.add(tz.add(tz.matmul(rows_f, wf), tz.matmul(rows_g, wg)), bb))
        return tz.matmul(h, wo)

    return joiner


def test_02_finite_differences_confirm_gradients():
    set_precision(64)
    t0 = time.monotonic()
    r = np.random.default_rng(8202)
    TOL = 1e-4
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)
        assert err <= TOL, f"{name}: fd mismatch {err:.2e}"

    for case in range(50):
        # transducer loss
        T = int(r.integers(1, 4))
        U = int(r.integers(0, 3))
        vocab = int(r.integers(2, 5))
        y = _rand_target(r, U, vocab)
        z = Tensor(r.normal(size=(T, U + 1, vocab)))
        note("transducer", finite_diff_check(lambda x: transducer_nll(x, y), z))

        # pruned loss, alternating between the two encoder inputs
        T = int(r.integers(2, 5))
        U = int(r.integers(1, T))
        d = 3
        f = Tensor(r.normal(size=(T, d)))
        g = Tensor(r.normal(size=(U + 1, d)))
        joiner = _toy_joiner(r, d, 4)
        y = _rand_target(r, U, 4)
        idx_f = np.repeat(np.arange(T), U + 1)
        idx_g = np.tile(np.arange(U + 1), T)
        full = tz.reshape(joiner(tz.gather(f, idx_f), tz.gather(g, idx_g)), (T, U + 1, 4))
        bounds = compute_prune_bounds(transducer_label_occupancy(full, y),
                                      int(r.integers(2, U + 2)))
        if case % 2 == 0:
            note("pruned", finite_diff_check(
                lambda x: pruned_transducer_nll(x, g, y, bounds, joiner), f))
        else:
            note("pruned", finite_diff_check(
                lambda x: pruned_transducer_nll(f, x, y, bounds, joiner), g))

        # ctc loss through the log-softmax that feeds it
        vocab = int(r.integers(2, 5))
        while True:
            T = int(r.integers(1, 5))
            y = _rand_target(r, int(r.integers(0, 3)), vocab)
            if ctc_min_frames(y) <= T:
                break
        x = Tensor(r.normal(size=(T, vocab)))
        note("ctc", finite_diff_check(
            lambda t: ctc_nll(tz.log_softmax(t), y), x))

        # consistency KL: the gradient path is the live branch; the stopped
        # branch is constant by construction, so that is what fd must probe
        n, vocab = int(r.integers(1, 4)), int(r.integers(2, 5))
        ref = tz.log_softmax(Tensor(r.normal(size=(n, vocab))))
        x = Tensor(r.normal(size=(n, vocab)))
        note("cr_kl", finite_diff_check(
            lambda t: directed_kl(ref, tz.log_softmax(t)), x))

        # every tensor op
        for name, fn, probe in _op_cases(r, case):
            note(name, finite_diff_check(fn, probe))

    # detach is the one op without a gradient: confirm the barrier
    x = Tensor(r.normal(size=(3, 3)), requires_grad=True)
    with Tape():
        out = tz.tsum(tz.detach(x))
    assert out.tape is None  # nothing was recorded: detach cut the only path
    w = Tensor(r.normal(size=(3, 3)))
    with Tape():
        mixed = tz.add(tz.tsum(tz.mul(x, w)), tz.tsum(tz.detach(x)))
    backward(mixed)
    np.testing.assert_array_equal(x.grad, w.data)  # only the live term flows

    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    names = sorted(worst, key=worst.get)
    report(2, f"50 cases x {len(worst)} targets, worst rel err "
              f"{worst[names[-1]]:.2e} ({names[-1]}), {elapsed:.1f}s")


# criterion 3: pruning upper-bounds the exact loss, tightening to equality


def test_03_pruned_bounds_exact_loss():
    set_precision(64)
    r = np.random.default_rng(8303)
    worst_gap = 0.0
    for case in range(200):
        T = int(r.integers(2, 6))
        U = int(r.integers(1, T))  # windows advance one label per frame at most
        d, vocab = 4, int(r.integers(3, 7))
        f = Tensor(r.normal(size=(T, d)))
        g = Tensor(r.normal(size=(U + 1, d)))
        joiner = _toy_joiner(r, d, vocab)
        y = _rand_target(r, U, vocab)
        idx_f = np.repeat(np.arange(T), U + 1)
        idx_g = np.tile(np.arange(U + 1), T)
        full = tz.reshape(joiner(tz.gather(f, idx_f), tz.gather(g, idx_g)),
                          (T, U + 1, vocab))
        exact = transducer_nll(full, y).item()
        occ = transducer_label_occupancy(full, y)
        prev = None
        for s in range(2, U + 2):
            nll = pruned_transducer_nll(f, g, y, compute_prune_bounds(occ, s),
                                        joiner).item()
            assert nll >= exact - 1e-9, f"case {case} s={s}: pruned below exact"
            if prev is not None:
                assert nll <= prev + 1e-9, f"case {case} s={s}: widening raised the loss"
            prev = nll
        gap = abs(prev - exact)
        assert gap <= 1e-9, f"case {case}: full-width windows missed exact"
        worst_gap = max(worst_gap, gap)
    report(3, f"200 cases, equality gap at s=U+1 max {worst_gap:.2e}")


# criterion 4: consistency loss vanishes on identical views; stop-grad holds


def test_04_consistency_zero_and_stopgrad():
    set_precision(64)
    r = np.random.default_rng(8404)
    for case in range(20):
        n, vocab = int(r.integers(1, 5)), int(r.integers(2, 6))
        xa = Tensor(r.normal(size=(n, vocab)), requires_grad=True)
        xb = Tensor(r.normal(size=(n, vocab)), requires_grad=True)

        with Tape():
            la = tz.log_softmax(xa)
            loss_same = cr_kl(la, tz.log_softmax(Tensor(xa.data.copy())))
        assert loss_same.item() == 0.0

        # tape inspection: the stopped branch contributes no gradient
        with Tape():
            la = tz.log_softmax(xa)
            lb = tz.log_softmax(xb)
            one_way = directed_kl(la, lb)
        backward(one_way)
        assert xa.grad is None, "stopped branch leaked gradient"
        assert xb.grad is not None and np.any(xb.grad != 0.0)

        xa.grad = xb.grad = None
        with Tape():
            full = cr_kl(tz.log_softmax(xa), tz.log_softmax(xb))
        backward(full)
        assert xa.grad is not None and xb.grad is not None
    report(4, "20 cases: zero loss on identical views, stop-grad branch has no path")


# criterion 5: streaming equals the masked offline pass, and is append-invariant


def test_05_streaming_matches_offline():
    cfg = ModelConfig(feat_dim=6, d=16, asr_blocks=2, st_blocks=1,
                      src_vocab=7, tgt_vocab=7)
    model = HierarchicalModel(cfg, seed=5)
    heads = model.heads("asr")
    chunk_cfg = ChunkConfig(chunk_size=4, left_context=8)
    r = np.random.default_rng(8505)
    checked_prefixes = 0
    for case in range(100):
        T = int(r.integers(6, 41))
        x = Tensor(r.normal(size=(T, cfg.feat_dim)))
        offline = greedy_decode(model.enc_asr_forward(x, mask=(4, 8)), heads)
        streamed, timings = streaming_decode(x, model, chunk_cfg)
        assert streamed.tokens == offline.tokens, f"case {case}"
        assert len(timings) == -(-T // 4)
        # append invariance: audio cut at a chunk boundary yields a prefix
        # of the full-utterance token stream
        cut = 4 * int(r.integers(1, T // 4 + 1))
        if cut < T:
            early, _ = streaming_decode(Tensor(x.data[:cut]), model, chunk_cfg)
            n = len(early.tokens)
            assert streamed.tokens[:n] == early.tokens, f"case {case} cut={cut}"
            checked_prefixes += 1
    assert checked_prefixes >= 80
    report(5, f"100 utterances token-identical, {checked_prefixes} prefix cuts stable")


# criterion 6: beam=1 equals greedy; blank penalty behaves


def test_06_beam_one_equals_greedy_and_bp_properties():
    cfg = ModelConfig(feat_dim=6, d=16, asr_blocks=2, st_blocks=1,
                      src_vocab=7, tgt_vocab=7)
    model = HierarchicalModel(cfg, seed=6)
    heads = model.heads("asr")
    r = np.random.default_rng(8606)
    for case in range(100):
        T = int(r.integers(4, 25))
        x = Tensor(r.normal(size=(T, cfg.feat_dim)))
        f = model.enc_asr_forward(x)
        bp = (0.0, 0.7)[case % 2]
        g = greedy_decode(f, heads, bp=bp)
        b = beam_search(f, heads, beam=1, bp=bp)
        assert b.tokens == g.tokens and b.logp == g.logp, f"case {case}"

    # the penalty moves only the blank column
    for case in range(30):
        z = Tensor(r.normal(size=(6, 7)))
        bp = float(r.uniform(0.1, 3.0))
        pen = apply_blank_penalty(z, bp)
        np.testing.assert_array_equal(pen.data[:, 1:], z.data[:, 1:])
        np.testing.assert_allclose(pen.data[:, 0], z.data[:, 0] - bp, rtol=1e-6)

    # blank-argmax set shrinks monotonically with the penalty
    rows = Tensor(r.normal(size=(400, 7)))
    prev = None
    sizes = []
    for bp in (0.0, 0.5, 1.0, 2.0):
        pen = apply_blank_penalty(tz.log_softmax(rows), bp)
        blanks = {i for i in range(400) if int(np.argmax(pen.data[i])) == 0}
        if prev is not None:
            assert blanks <= prev
        prev = blanks
        sizes.append(len(blanks))
    report(6, f"beam=1 identical on 100 utterances; blank-argmax sizes {sizes}")


# -- trained-model criteria ---------------------------------------------------
#
# Criteria 7-11 train real models. The recipes below are calibrated to the
# synthetic task at desk scale; the two fixtures are module-scoped so the
# trained models are shared across criteria.

# monotone ASR pretrain, desk configuration (criterion 7): a main phase and
# a short low-lr polish phase, 3000 steps total
_C7_MAIN = dict(steps=2500, lr=2e-3, warmup_steps=8000, prune_s=6,
                batch_size=16)
_C7_POLISH = dict(steps=500, lr=4e-4, warmup_steps=10 ** 6, prune_s=6,
                  batch_size=16)

# staged swap_pairs pipeline shared across criteria 8, 10 and 11: ASR
# pretrain, then a two-phase joint finetune (main run + low-lr polish)
_C8_SEEDS = (0, 1, 2)
_C8_DATA = dict(src_vocab=12, tgt_vocab=12, frames_lo=2, frames_hi=3,
                reorder_mode="swap_pairs", len_lo=4, len_hi=8, seed=21)
_C8_D = 32
_C8_N_TRAIN = 400
_C8_PRE = dict(stage="asr_pretrain", steps=1800, lr=2e-3, warmup_steps=8000,
               prune_s=4, batch_size=8)
_C8_JMAIN = dict(stage="joint_finetune", steps=2200, lr=2e-3,
                 warmup_steps=10000, prune_s=4, batch_size=8)
_C8_JPOLISH = dict(stage="joint_finetune", steps=600, lr=3e-4,
                   warmup_steps=10 ** 6, prune_s=4, batch_size=8)


def _score_corpus(model, data, task, bp=0.0):
    heads = model.heads(task)
    refs, hyps = {}, {}
    for ex in data:
        f = model.enc_asr_forward(ex.frames)
        if task == "st":
            f = model.enc_st_forward(f)
        refs[ex.uid] = ex.src_tokens if task == "asr" else ex.tgt_tokens
        hyps[ex.uid] = greedy_decode(f, heads, bp=bp).tokens
    return refs, hyps


@pytest.fixture(scope="module")
def desk_pretrain():
    set_precision(32)
    scfg = SynthConfig()
    train = gen_dataset(scfg, 600, split=0)
    held = gen_dataset(scfg, 200, split=1)
    mcfg = preset("hier1", feat_dim=scfg.feat_dim,
                  src_vocab=scfg.src_vocab + 1, tgt_vocab=scfg.tgt_vocab + 1)
    model = HierarchicalModel(mcfg, seed=0)
    t0 = time.monotonic()
    train_run(TrainConfig(stage="asr_pretrain", seed=0, **_C7_MAIN),
              train, model)
    train_run(TrainConfig(stage="asr_pretrain", seed=1, **_C7_POLISH),
              train, model)
    wall = time.monotonic() - t0
    return model, held, wall


def test_07_desk_pretrain_reaches_095_accuracy(desk_pretrain):
    model, held, wall = desk_pretrain
    t0 = time.monotonic()
    refs, hyps = _score_corpus(model, held, "asr")
    wall += time.monotonic() - t0
    acc = 1.0 - wer(refs, hyps)
    steps = _C7_MAIN["steps"] + _C7_POLISH["steps"]
    assert acc >= 0.95, f"greedy token accuracy {acc:.4f}"
    assert wall <= 900.0, f"runtime {wall:.0f}s"
    report(7, f"accuracy {acc:.4f} on 200 held-out after "
              f"{steps} steps in {wall:.0f}s")


@pytest.fixture(scope="module")
def staged_runs(tmp_path_factory):
    set_precision(32)
    tmp = tmp_path_factory.mktemp("staged")
    scfg = SynthConfig(**_C8_DATA)
    train = gen_dataset(scfg, _C8_N_TRAIN, split=0)
    test = gen_dataset(scfg, 100, split=1)

    def mconf(arch):
        return dataclasses.replace(
            preset(arch, feat_dim=scfg.feat_dim, src_vocab=scfg.src_vocab + 1,
                   tgt_vocab=scfg.tgt_vocab + 1), d=_C8_D)

    runs = {}
    for seed in _C8_SEEDS:
        pre_ckpt = {}
        for arch in ("shared", "hier2"):
            model = HierarchicalModel(mconf(arch), seed=seed)
            train_run(TrainConfig(seed=seed, **_C8_PRE), train, model)
            path = str(tmp / f"pre_{arch}_{seed}.ckpt")
            checkpoint_save(model, path, names=model.asr_param_names())
            pre_ckpt[arch] = path
        for label in ("shared", "hier2", "hier2_cr"):
            arch = "hier2" if label.startswith("hier2") else "shared"
            cr = label.endswith("cr")
            model = HierarchicalModel(mconf(arch), seed=seed)
            checkpoint_load(model, pre_ckpt[arch], init_missing=True)
            train_run(TrainConfig(seed=seed, cr_enabled=cr, **_C8_JMAIN),
                      train, model)
            train_run(TrainConfig(seed=seed + 11, cr_enabled=cr,
                                  **_C8_JPOLISH), train, model)
            refs, hyps = _score_corpus(model, test, "asr")
            ter = wer(refs, hyps)
            refs, hyps = _score_corpus(model, test, "st")
            runs[label, seed] = dict(model=model, ter=ter,
                                     bleu=bleu(refs, hyps),
                                     ratio=length_ratio(refs, hyps))
    return runs, test


def test_08_hier_beats_shared_on_reordering(staged_runs):
    runs, _ = staged_runs
    hier = [runs["hier2", s]["bleu"] for s in _C8_SEEDS]
    flat = [runs["shared", s]["bleu"] for s in _C8_SEEDS]
    med_h, med_f = statistics.median(hier), statistics.median(flat)
    gap = med_h - med_f
    assert med_h >= med_f, f"median BLEU hier2 {med_h:.2f} < shared {med_f:.2f}"
    report(8, f"median BLEU hier2 {med_h:.2f} vs shared {med_f:.2f} "
              f"(gap +{gap:.2f}; per-seed hier2 {[round(b, 2) for b in hier]}, "
              f"shared {[round(b, 2) for b in flat]})")


def test_09_blank_penalty_length_trend(desk_pretrain):
    # the sharply trained desk model undergenerates slightly at bp=0 (blank
    # bias); the penalty must walk the corpus length back toward the
    # reference without overshooting
    model, held, _ = desk_pretrain
    ratios = []
    for bp in (0.0, 0.5, 1.0, 2.0):
        refs, hyps = _score_corpus(model, held, "asr", bp=bp)
        ratios.append(length_ratio(refs, hyps))
    for lo, hi in zip(ratios, ratios[1:]):
        assert hi >= lo - 1e-9, f"length ratio decreased: {ratios}"
    assert abs(ratios[-1] - 1.0) < abs(ratios[0] - 1.0), \
        f"bp=2 ratio {ratios[-1]:.3f} not closer to 1.0 than bp=0 {ratios[0]:.3f}"
    report(9, f"desk model length ratios {[round(x, 4) for x in ratios]} "
              f"over bp 0/0.5/1/2")


def test_10_cr_keeps_asr_close(staged_runs):
    runs, _ = staged_runs
    with_cr = [runs["hier2_cr", s]["ter"] for s in _C8_SEEDS]
    without = [runs["hier2", s]["ter"] for s in _C8_SEEDS]
    med_cr, med_plain = statistics.median(with_cr), statistics.median(without)
    assert med_cr <= med_plain + 0.01, \
        f"median TER with CR {med_cr:.4f} vs without {med_plain:.4f}"
    report(10, f"median ASR TER with CR {med_cr:.4f} vs without {med_plain:.4f} "
               f"(per-seed with {[round(t, 4) for t in with_cr]}, "
               f"without {[round(t, 4) for t in without]})")


def test_11_streaming_rtf_parity(staged_runs):
    runs, test = staged_runs
    chunk_cfg = ChunkConfig(chunk_size=8, left_context=16)
    vals = {}
    for label in ("shared", "hier2"):
        model = runs[label, 0]["model"]
        chunk_times, frames = [], 0
        for ex in test[:30]:
            _, timings = streaming_decode(ex.frames, model, chunk_cfg, task="st")
            chunk_times.extend(timings)
            frames += ex.frames.data.shape[0]
        vals[label] = rtf(chunk_times, frames)
    assert vals["shared"] > 0.0 and vals["hier2"] > 0.0
    rel = abs(vals["hier2"] - vals["shared"]) / max(vals.values())
    assert rel < 0.30, f"rtf differs by {rel:.0%}: {vals}"
    report(11, f"streaming rtf shared {vals['shared']:.4f} vs hier2 "
               f"{vals['hier2']:.4f} ({rel:.0%} apart)")
