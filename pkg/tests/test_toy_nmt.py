import math

import numpy as np
import pytest
import torch

from drda.augment import build_dataset
from drda.bpe import BOS_ID, EOS_ID, PAD_ID, train_bpe
from drda.errors import ConfigError, TrainingError
from drda.segmenter import TokenSequence, segment_greedy
from drda.synth import copy_task
from drda.toy_nmt import (
    Hypothesis,
    ModelConfig,
    build_model,
    decode,
    dynamic_select,
    embedding_array,
    eq7_score,
    forward,
    inverse_sqrt,
    load_checkpoint,
    oracle_select,
    save_checkpoint,
    sentence_bleu,
    source_ids,
    train,
)


@pytest.fixture(scope="module")
def copy_setup():
    pairs = copy_task(64, seed=3)
    bpe = train_bpe([[s for s, _ in pairs]], 30)
    prime, aug = bpe.n_fixed + 20, bpe.n_fixed + 5
    return pairs, bpe, prime, aug


def small_config(prime, augs=(), **kw):
    base = dict(prime_size=prime, aug_sizes=tuple(augs), d_model=16, n_heads=2, n_layers=1, ffn_dim=32,
                alpha=5.0 if augs else 0.0, max_steps=20, batch_size=16, embed_rows=prime + 4)
    base.update(kw)
    return ModelConfig(**base)


def seq(ids, size):
    return TokenSequence(tuple(ids), None, size)


def test_forward_rows_are_distributions(copy_setup):
    _, _, prime, _ = copy_setup
    model = build_model(small_config(prime))
    model.eval()
    p = forward(model, seq([5, 6, 7], prime), seq([5, 6], prime))
    assert p.shape == (3, prime)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-5)


def test_forward_deterministic_and_source_sensitive(copy_setup):
    _, _, prime, _ = copy_setup
    model = build_model(small_config(prime))
    model.eval()
    a = forward(model, seq([5, 6, 7, 8], prime), seq([5], prime))
    assert np.array_equal(a, forward(model, seq([5, 6, 7, 8], prime), seq([5], prime)))
    b = forward(model, seq([8, 7, 6, 5], prime), seq([5], prime))
    assert not np.allclose(a, b)


def test_uniform_output_init_gives_ln_vocab(copy_setup):
    pairs, bpe, prime, aug = copy_setup
    ds = build_dataset(pairs, bpe, prime, [aug])
    cfg = small_config(prime, [aug], output_init="zero", max_steps=1, dropout=0.0)
    r = train(ds, cfg)
    b = r.epochs[0]
    assert b.prime_nll == pytest.approx(math.log(prime), rel=1e-5)
    assert b.aug_nll_mean == pytest.approx(math.log(prime), rel=1e-5)
    assert b.agreement_mean == pytest.approx(0.0, abs=1e-9)


def test_alpha_zero_without_augs_is_plain_nll(copy_setup):
    pairs, bpe, prime, _ = copy_setup
    ds = build_dataset(pairs, bpe, prime, [])
    r = train(ds, small_config(prime, max_steps=5))
    assert all(e.total == e.prime_nll and e.k == 0 for e in r.epochs)


def test_config_rejects_alpha_without_augs():
    with pytest.raises(ConfigError):
        ModelConfig(prime_size=20, aug_sizes=(), alpha=5.0)


def test_training_is_deterministic(copy_setup):
    pairs, bpe, prime, aug = copy_setup
    ds = build_dataset(pairs, bpe, prime, [aug])
    cfg = small_config(prime, [aug])
    a, b = train(ds, cfg), train(ds, cfg)
    assert a.loss_curve == b.loss_curve
    assert np.array_equal(embedding_array(a.model), embedding_array(b.model))


def test_nan_loss_aborts(copy_setup, monkeypatch):
    import drda.toy_nmt as nmt

    pairs, bpe, prime, aug = copy_setup
    ds = build_dataset(pairs, bpe, prime, [aug])
    real = nmt.batch_loss
    calls = []

    def poisoned(model, batch, config):
        total, parts = real(model, batch, config)
        calls.append(1)
        return (total * float("nan") if len(calls) == 3 else total), parts

    monkeypatch.setattr(nmt, "batch_loss", poisoned)
    with pytest.raises(TrainingError, match="step 2.*lower lr"):
        train(ds, small_config(prime, [aug]))


def test_config_rejects_bad_lr():
    with pytest.raises(ConfigError):
        ModelConfig(prime_size=20, lr=float("nan"))


def test_view_count_mismatch(copy_setup):
    pairs, bpe, prime, aug = copy_setup
    ds = build_dataset(pairs, bpe, prime, [])
    with pytest.raises(TrainingError):
        train(ds, small_config(prime, [aug]))


def test_embedding_is_shared_across_granularities(copy_setup):
    _, _, prime, aug = copy_setup
    model = build_model(small_config(prime, [aug]))
    small, large = model.embedding_for(aug), model.embedding_for(prime)
    assert small.data_ptr() == large.data_ptr()
    assert torch.equal(small, large[:aug])


def test_parameter_count_independent_of_views(copy_setup):
    _, _, prime, aug = copy_setup
    one = build_model(small_config(prime, [aug]))
    two = build_model(small_config(prime, [aug, aug - 2]))
    assert one.n_parameters() == two.n_parameters()


def test_inverse_sqrt_schedule():
    assert inverse_sqrt(50, 100) == 0.5
    assert inverse_sqrt(100, 100) == 1.0
    assert inverse_sqrt(400, 100) == 0.5


def argmax_rollout(model, src, max_len):
    out = []
    lp = 0.0
    for _ in range(max_len):
        p = forward(model, src, seq(out, src.vocab_size))[-1].copy()
        p[[PAD_ID, BOS_ID]] = 0.0
        p /= p.sum()
        i = int(np.argmax(p))
        out.append(i)
        lp += math.log(p[i])
        if i == EOS_ID:
            break
    return out, lp


def test_beam_one_is_argmax_rollout(copy_setup):
    pairs, bpe, prime, _ = copy_setup
    model = build_model(small_config(prime))
    model.eval()
    for s, _ in pairs[:5]:
        src = segment_greedy(s, bpe, prime)
        hyp = decode(model, src, beam=1, max_len=6)
        ids, lp = argmax_rollout(model, src, 6)
        assert list(hyp.tokens.ids) == ids
        assert hyp.log_prob == pytest.approx(lp, abs=1e-4)


def test_max_len_one(copy_setup):
    _, _, prime, _ = copy_setup
    model = build_model(small_config(prime))
    hyp = decode(model, seq([5, 6], prime), beam=3, max_len=1)
    assert len(hyp.tokens) == 1


def test_eq7_examples():
    h = Hypothesis(seq([5], 10), 0.0, 10)
    assert eq7_score(h) == 0.0
    assert eq7_score(Hypothesis(seq([5, 6, 3], 10), -6.0, 10)) == -2.0
    with pytest.raises(ConfigError):
        eq7_score(Hypothesis(seq([], 10), 0.0, 10))


def brute_force(model, sentence, bpe, sizes, beam, max_len):
    best = None
    for q in sizes:
        h = decode(model, segment_greedy(sentence, bpe, q), beam, max_len)
        key = (eq7_score(h), q == model.config.prime_size, -q)
        if best is None or key > best[0]:
            best = (key, h)
    return best[1]


def test_dynamic_select_singleton_and_brute_force(copy_setup):
    pairs, bpe, prime, aug = copy_setup
    model = build_model(small_config(prime, [aug]))
    sizes = [prime, aug, aug + 3]
    for s, _ in pairs[:10]:
        assert dynamic_select(model, s, bpe, [prime], 2, 8) == decode(model, segment_greedy(s, bpe, prime), 2, 8)
        assert dynamic_select(model, s, bpe, sizes, 2, 8) == brute_force(model, s, bpe, sizes, 2, 8)
    with pytest.raises(ConfigError):
        dynamic_select(model, pairs[0][0], bpe, [], 1, 4)


def test_oracle_at_least_dynamic(copy_setup):
    pairs, bpe, prime, aug = copy_setup
    from drda.toy_nmt import attach_bpe

    model = attach_bpe(build_model(small_config(prime, [aug])), bpe)
    for s, ref in pairs[:10]:
        d = dynamic_select(model, s, bpe, [prime, aug], 1, 8)
        o = oracle_select(model, s, ref, bpe, [prime, aug], 1, 8)
        assert sentence_bleu(o.text(), ref) >= sentence_bleu(d.text(), ref)


def test_sentence_bleu():
    assert sentence_bleu("a b c d", "a b c d") == pytest.approx(1.0)
    assert sentence_bleu("", "a b") == 0.0
    assert sentence_bleu("x y", "a b") == 0.0
    # one unigram match of two, smoothed higher orders, length equal
    p = [1 / 2, 1 / 2, 1 / 1, 1 / 1]
    assert sentence_bleu("a y", "a b") == pytest.approx(math.exp(sum(map(math.log, p)) / 4))


def test_checkpoint_roundtrip(tmp_path, copy_setup):
    _, _, prime, aug = copy_setup
    model = build_model(small_config(prime, [aug]))
    model.eval()
    save_checkpoint(model, tmp_path / "ck", {"bpe_digest": "x"})
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert meta["bpe_digest"] == "x"
    assert loaded.config == model.config
    src, prefix = seq([5, 6, 7], prime), seq([5], prime)
    assert np.array_equal(forward(model, src, prefix), forward(loaded, src, prefix))


def test_source_ids_append_eos():
    assert source_ids(seq([7, 8], 10)) == [7, 8, EOS_ID]
