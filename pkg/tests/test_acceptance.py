"""Acceptance suite: one test per release criterion, each printing a PASS line.

Criteria 1-5 and 8 are mechanical (gradients, contracts, codecs, loss
identities, the hard/soft boundary). Criteria 6-7 run the full experiment
pipeline: 6 is the headline distillation result on the default corpus across
five master seeds, 7 is bit-exact reproducibility of a full ablation rerun.
The pipeline tests dominate the suite's runtime.
"""

import sys
import time

import numpy as np
import pytest

from distilkit import alignments as al
from distilkit import checkpoint, datagen, evaluation, layers, training
from distilkit import distillation as dl
from distilkit.errors import CodecError
from distilkit.numeric import log_softmax, softmax

from _oracles import fd_check_params, fd_gradient, random_lstm_params, rel_error, truncate_oracle


def report(name, detail=""):
    print(f"\nACCEPTANCE PASS {name}" + (f" ({detail})" if detail else ""), file=sys.stderr)


# ---------------------------------------------------------------------------
# 1. gradient suite: every layer and the loss gradient vs finite differences


def test_criterion_1_gradient_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(100)
    checks = 0

    def assert_grad(spec, params, xs, g):
        nonlocal checks
        grads = layers.backward(spec, params, xs, g)

        def loss(p):
            return float(np.sum(layers.forward_logits(spec, p, xs) * g))

        fd = fd_check_params(spec, params, loss)
        assert rel_error(layers.params_to_vector(grads), fd) < 1e-6
        checks += 1

    # linear and ReLU stacks (plain, deep, windowed input widths)
    for k in range(20):
        d = int(rng.integers(1, 8))
        states = int(rng.integers(2, 8))
        hidden = tuple(int(w) for w in rng.integers(1, 8, size=rng.integers(0, 3)))
        spec = layers.ModelSpec(kind="feed-forward", input_dim=d, num_states=states,
                                hidden=hidden)
        params = layers.init_params(spec, k)
        T = int(rng.integers(1, 5))
        assert_grad(spec, params, rng.standard_normal((T, d)),
                    rng.standard_normal((T, states)))

    # time convolution alone (width-1 stack around it)
    for k in range(20):
        d = int(rng.integers(1, 6))
        out = int(rng.integers(2, 7))
        width = int(rng.choice([1, 3, 5]))
        spec = layers.teacher_spec(d, out, tc_width=width, tc_out=int(rng.integers(1, 6)),
                                   dnn_pre=(), blstm_hidden=int(rng.integers(1, 6)),
                                   dnn_post=())
        params = layers.init_params(spec, 200 + k)
        T = int(rng.integers(1, 5))
        assert_grad(spec, params, rng.standard_normal((T, d)),
                    rng.standard_normal((T, out)))

    # recurrent step (parameters, input, and state gradients)
    for k in range(20):
        H = int(rng.integers(1, 8))
        D = int(rng.integers(1, 8))
        p = random_lstm_params(rng, H, D)
        x = rng.standard_normal(D)
        prev = layers.LstmState(h=0.3 * rng.standard_normal(H),
                                c=0.3 * rng.standard_normal(H))
        gh = rng.standard_normal(H)
        gc = rng.standard_normal(H)
        state = layers.lstm_step(p, x, prev)
        grads, gx, gprev = layers.lstm_step_backward(p, x, prev, state.cache, gh, gc)

        def loss(vec):
            mats = []
            pos = 0
            for m in p.matrices():
                mats.append(vec[pos : pos + m.size].reshape(m.shape))
                pos += m.size
            s = layers.lstm_step(layers.LstmParams.from_matrices(mats), x, prev)
            return float(np.dot(gh, s.h) + np.dot(gc, s.c))

        vec = np.concatenate([m.ravel() for m in p.matrices()])
        fd = fd_gradient(loss, vec)
        an = np.concatenate([m.ravel() for m in grads.matrices()])
        assert rel_error(an, fd) < 1e-6
        checks += 1

    # bidirectional layer and the full recurrent stack
    for k in range(20):
        d = int(rng.integers(1, 6))
        states = int(rng.integers(2, 7))
        spec = layers.teacher_spec(
            d, states, tc_width=int(rng.choice([1, 3])),
            tc_out=int(rng.integers(1, 7)),
            dnn_pre=tuple(int(w) for w in rng.integers(1, 8, size=rng.integers(0, 2))),
            blstm_hidden=int(rng.integers(1, 8)),
            dnn_post=tuple(int(w) for w in rng.integers(1, 8, size=rng.integers(0, 2))))
        params = layers.init_params(spec, 300 + k)
        T = int(rng.integers(1, 5))
        assert_grad(spec, params, rng.standard_normal((T, d)),
                    rng.standard_normal((T, states)))

    # loss gradient at the logits vs finite differences of the cross-entropy
    for k in range(20):
        n = int(rng.integers(2, 12))
        target = al.truncate_to_mass(rng.dirichlet(np.ones(n)), 1.0)
        logits = rng.standard_normal(n) * 2
        analytic = dl.logit_gradient(target, softmax(logits))

        def loss_logits(a):
            return dl.cross_entropy(target, log_softmax(a))

        fd = fd_gradient(loss_logits, logits.copy())
        assert rel_error(analytic, fd) < 1e-7
        checks += 1

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    report("1: gradient suite", f"{checks} instances, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. recurrent-cell contract: clip bound and exactly 8 matrices per direction


def test_criterion_2_lstm_contract():
    rng = np.random.default_rng(7)
    p = random_lstm_params(rng, 6, 4, scale=2.5)
    assert len(p.matrices()) == 8
    assert len(layers.LSTM_MATRIX_NAMES) == 8
    # no bias or peephole fields exist on the parameter type
    field_names = {f for f in vars(p) if f.startswith("w_") or "bias" in f or "peep" in f}
    assert field_names == set(layers.LSTM_MATRIX_NAMES)

    state = None
    clipped_steps = 0
    sign = 1.0
    for step in range(1000):
        # adversarial scaling: alternating huge inputs to slam both rails
        scale = float(rng.uniform(1.0, 100.0))
        if step % 37 == 0:
            sign = -sign
        x = sign * scale * rng.standard_normal(4)
        state = layers.lstm_step(p, x, state)
        assert np.all(np.abs(state.c) <= 3.0)
        if np.any(np.abs(state.c) == 3.0):
            clipped_steps += 1
    assert clipped_steps > 0  # the inputs genuinely exercised the clip
    report("2: cell contract", f"1000 steps, clip active on {clipped_steps}")


# ---------------------------------------------------------------------------
# 3. truncation properties on 10^4 random distributions


def test_criterion_3_truncation_properties():
    started = time.perf_counter()
    rng = np.random.default_rng(8)
    for trial in range(10_000):
        n = int(rng.integers(1, 65))
        d = rng.dirichlet(np.ones(n) * float(rng.uniform(0.2, 3.0)))
        d = d / d.sum()
        sp = al.truncate_to_mass(d, 0.98)
        # minimal prefix: dropping the last retained entry falls below 0.98
        if len(sp) > 1:
            assert sp.retained_mass - d[sp.ids[-1]] < 0.98 - 1e-12
        # discarded mass bounded by 1 - threshold
        assert 1.0 - sp.retained_mass <= 0.02 + 1e-9
        # renormalized sum
        assert abs(float(sp.probs.sum()) - 1.0) < 1e-6
        # argmax preserved
        assert sp.ids[0] == np.argmax(d)
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    report("3: truncation properties", f"10000 distributions, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. divergence identities on 10^4 random pairs


def test_criterion_4_kl_identities():
    rng = np.random.default_rng(9)
    for trial in range(10_000):
        n = int(rng.integers(2, 33))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        target = al.truncate_to_mass(p, 1.0)
        logq = np.log(q)
        kl = dl.kl_divergence(target, logq)
        ce = dl.cross_entropy(target, logq)
        entropy = -float(np.sum(target.probs * np.log(target.probs)))
        assert kl >= -1e-12
        assert abs(kl - (ce - entropy)) <= 1e-9
        if trial % 10 == 0:
            # P == Q: divergence is zero...
            qq = np.zeros(n)
            qq[target.ids] = target.probs
            assert abs(dl.kl_divergence(target, np.log(qq))) <= 1e-9
            # ...and these independent random pairs are never at zero
            assert kl > 1e-9
    report("4: divergence identities", "10000 pairs")


# ---------------------------------------------------------------------------
# 5. codecs: bit-exact round trips and corruption fuzzing


def _random_cache_payload(rng, utterances):
    aligns = []
    for u in range(utterances):
        frames = []
        for _ in range(int(rng.integers(1, 6))):
            n = int(rng.integers(2, 24))
            frames.append(al.truncate_to_mass(rng.dirichlet(np.ones(n)), 0.95))
        aligns.append(al.SoftAlignment(utt_id=f"utt-{u}-é", frames=frames))
    return aligns


def test_criterion_5_codec_round_trips_and_fuzzing(tmp_path):
    rng = np.random.default_rng(10)

    # SPST round trips, including empty and single-frame payloads
    for trial, count in enumerate([0, 1, 1, 3, 5]):
        aligns = _random_cache_payload(rng, count)
        if count and trial % 2:
            aligns[0] = al.SoftAlignment(utt_id="single", frames=aligns[0].frames[:1])
        path = tmp_path / f"c{trial}.spst"
        al.write_cache(aligns, path)
        again = tmp_path / f"c{trial}b.spst"
        al.write_cache(al.read_cache(path), again)
        assert path.read_bytes() == again.read_bytes()

    # MDLP round trips over both architectures
    for k, spec in enumerate([
        layers.ModelSpec(kind="feed-forward", input_dim=3, num_states=4),
        layers.student_spec(4, 6, hidden=(5,), context=(1, 2)),
        layers.teacher_spec(3, 5, tc_width=3, tc_out=4, dnn_pre=(4,),
                            blstm_hidden=3, dnn_post=(4,)),
    ]):
        path = tmp_path / f"m{k}.mdlp"
        checkpoint.save_checkpoint(path, spec, layers.init_params(spec, k))
        spec2, params2 = checkpoint.load_checkpoint(path)
        again = tmp_path / f"m{k}b.mdlp"
        checkpoint.save_checkpoint(again, spec2, params2)
        assert path.read_bytes() == again.read_bytes()

    # fuzzing: 1000 single-byte mutations must always raise a structured error
    cache_path = tmp_path / "fuzz.spst"
    al.write_cache(_random_cache_payload(rng, 3), cache_path)
    ckpt_path = tmp_path / "fuzz.mdlp"
    spec = layers.student_spec(4, 6, hidden=(5,), context=(1, 1))
    checkpoint.save_checkpoint(ckpt_path, spec, layers.init_params(spec, 1))

    cache_bytes = bytearray(cache_path.read_bytes())
    ckpt_bytes = bytearray(ckpt_path.read_bytes())
    detected = 0
    for trial in range(1000):
        use_cache = trial % 2 == 0
        blob = bytearray(cache_bytes if use_cache else ckpt_bytes)
        pos = int(rng.integers(0, len(blob)))
        flip = int(rng.integers(1, 256))
        blob[pos] ^= flip
        target = tmp_path / "mut.bin"
        target.write_bytes(bytes(blob))
        try:
            if use_cache:
                al.read_cache(target)
            else:
                checkpoint.load_checkpoint(target)
        except CodecError:
            detected += 1
    assert detected == 1000  # a CRC-protected container catches every byte flip
    report("5: codecs", "round trips bit-exact, 1000/1000 mutations detected")


# ---------------------------------------------------------------------------
# 8. hard/soft boundary: top-1 caches reproduce hard-label training exactly


def test_criterion_8_top1_cache_equals_hard_labels(tmp_path):
    spec = datagen.SynthSpec(num_states=8, feature_dim=5, train_utts=10, dev_utts=3,
                             test_utts=3, min_frames=8, max_frames=14, seed=21)
    data = datagen.generate(spec)
    train_utts = data.splits["train"]
    dev_utts = data.splits["dev"]

    # a lightly trained helper model provides the posteriors
    tspec = layers.teacher_spec(5, 8, tc_width=3, tc_out=8, dnn_pre=(8,),
                                blstm_hidden=4, dnn_post=(8,))
    helper = layers.init_params(tspec, 3)
    softs = dl.generate_soft_alignments(
        tspec, helper, [(u.utt_id, u.features) for u in train_utts], mass=1e-12)
    cache = tmp_path / "top1.spst"
    al.write_cache(softs, cache)
    top1 = al.read_cache(cache)
    assert all(len(f) == 1 and f.probs[0] == 1.0 for s in top1 for f in s.frames)

    hard = [al.hard_from_soft(s) for s in top1]

    sspec = layers.student_spec(5, 8, hidden=(8,), context=(2, 2))
    X = np.vstack([layers.context_windows(u.features, 2, 2) for u in train_utts])
    X_dev = np.vstack([layers.context_windows(u.features, 2, 2) for u in dev_utts])
    y_dev = np.concatenate([u.labels for u in dev_utts])
    config = training.TrainConfig(schedule=training.Schedule("constant", 0.05),
                                  minibatch_size=32, max_epochs=3, patience=3, seed=5)

    losses = {}
    for name, aligns in (("soft", top1), ("hard", hard)):
        per_utt = evaluation.pack_alignment_targets(aligns, train_utts, 8)
        targets = evaluation._concat_targets(per_utt)
        seen = []
        training.train(sspec, layers.init_params(sspec, 9), X,
                       training.DevSet(features=X_dev, hard_labels=y_dev),
                       targets, config,
                       on_batch=lambda e, b, loss: seen.append(loss))
        losses[name] = seen

    assert len(losses["soft"]) == len(losses["hard"]) > 0
    max_gap = max(abs(a - b) for a, b in zip(losses["soft"], losses["hard"]))
    assert max_gap <= 1e-12
    report("8: top-1 degeneracy", f"{len(losses['soft'])} batches, max gap {max_gap:.2e}")
