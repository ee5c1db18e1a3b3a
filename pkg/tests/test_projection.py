import numpy as np
import pytest

from limber import container
from limber.encoders import DEFAULT_GEOMETRY, EncoderTrainConfig, pretrain_encoder_classifier
from limber.lm import BOS, EOS, DecoderLM, LmConfig, pad_batch
from limber.projection import (LimberTrainConfig, LimberTrainer, Projection, ShapeError, projection_for,
                               train_projection)
from limber.tensor import Tensor


def _lm():
    return DecoderLM(LmConfig(vocab_size=12, d_model=8, n_layers=1, n_heads=2, d_ff=16, context_len=16), seed=0)


def _data(n=40, h=6, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, h)).astype(np.float32)
    caps = [rng.integers(4, 12, size=rng.integers(1, 5)) for _ in range(n)]
    return feats, caps


def _cfg(**kw):
    return LimberTrainConfig(**{"steps": 6, "batch_size": 4, "seed": 0, **kw})


def test_frozen_mode_trains_only_the_projection():
    lm = _lm()
    feats, caps = _data()
    before = lm.content_hash()
    trainer = train_projection(lm, feats, caps, _cfg(), Projection("vector", 6, 2, 8))
    assert trainer.trainable_names() == ["projection.proj.w", "projection.proj.b"]
    assert lm.content_hash() == before


def test_encoder_hash_is_checked_and_unchanged():
    lm = _lm()
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(40, 72)).astype(np.float32)
    enc = pretrain_encoder_classifier(obs, np.arange(40) % 4, 4, EncoderTrainConfig(steps=2, batch_size=8))
    h = enc.content_hash()
    feats = enc.encode(obs)
    _, caps = _data()
    trainer = train_projection(lm, feats, caps, _cfg(), encoder=enc)
    assert enc.content_hash() == h
    assert all(n.startswith("projection.") for n in trainer.trainable_names())


def test_tuned_mode_exposes_the_encoder():
    lm = _lm()
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(40, 72)).astype(np.float32)
    enc = pretrain_encoder_classifier(obs, np.arange(40) % 4, 4, EncoderTrainConfig(steps=2, batch_size=8))
    _, caps = _data()
    trainer = train_projection(lm, obs, caps, _cfg(lr_encoder=2e-6), encoder=enc, tune_encoder=True)
    names = trainer.trainable_names()
    assert any(n.startswith("encoder.") for n in names)
    assert not any(n.startswith("lm.") for n in names)
    with pytest.raises(ValueError):
        LimberTrainer(_lm(), Projection("vector", 48, 2, 8), _cfg(), enc, tune_encoder=True)


def test_zero_projection_gives_bias_prompts():
    p = Projection("vector", 6, 3, 8, init="zeros")
    out = p.project(np.ones((2, 6), dtype=np.float32))
    assert out.shape == (2, 3, 8) and not out.any()


def test_patch_mode_with_one_token_matches_vector_mode():
    v = Projection("vector", 6, 1, 8, seed=3)
    p = Projection("patch", 6, 1, 8, n_tokens=1, seed=3)
    p.load_state_dict(v.state_dict())
    x = np.random.default_rng(0).normal(size=(5, 6)).astype(np.float32)
    np.testing.assert_array_equal(v.project(x), p.project(x))


def test_projection_shapes():
    g = DEFAULT_GEOMETRY["contrastive"]
    proj = projection_for(g, 8)
    assert proj.mode == "patch" and proj.k == g.n_tokens
    out = proj.project(np.zeros((3, g.n_tokens, g.width), dtype=np.float32))
    assert out.shape == (3, g.n_tokens, 8)
    with pytest.raises(ShapeError):
        proj.project(np.zeros((3, g.width), dtype=np.float32))
    with pytest.raises(ShapeError):
        Projection("patch", 6, 2, 8, n_tokens=3)


def test_loss_counts_only_caption_positions():
    lm = _lm()
    feats, caps = _data(n=3)
    trainer = LimberTrainer(lm, Projection("vector", 6, 2, 8), _cfg(dropout=0.0))
    got = float(trainer.loss(feats, caps, 0, training=False).data)
    emb = lm.embedding_matrix()
    ids = pad_batch([np.concatenate([c, [EOS]]) for c in caps])
    prompts = trainer.proj.project(feats)
    x = np.concatenate([np.broadcast_to(emb[BOS], (3, 1, 8)), prompts, emb[ids[:, :-1]]], axis=1)
    logits = lm.forward_embeds(Tensor(x)).data[:, 2 : 2 + ids.shape[1]].astype(np.float64)
    z = logits - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    picked = np.take_along_axis(logp, ids[..., None], -1)[..., 0]
    mask = ids != 0
    assert abs(got - (-(picked * mask).sum() / mask.sum())) < 1e-5


def _nll(logits, ids, mask):
    z = logits.astype(np.float64) - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    picked = np.take_along_axis(logp, ids[..., None], -1)[..., 0]
    return -(picked * mask).sum(), mask.sum()


def test_leading_pair_is_scored_before_the_example():
    lm = _lm()
    feats, caps = _data(n=3)
    lead = [np.array([5, 6]), np.array([7, 7]), np.array([9, 4])]
    lead_feats = feats[::-1].copy()
    trainer = LimberTrainer(lm, Projection("vector", 6, 2, 8), _cfg(dropout=0.0))
    got = float(trainer.loss(feats, caps, 0, training=False, pair=(lead_feats, lead)).data)
    emb = lm.embedding_matrix()
    ids = pad_batch([np.concatenate([c, [EOS]]) for c in caps])
    lead_ids = np.stack(lead)
    x = np.concatenate([np.broadcast_to(emb[BOS], (3, 1, 8)), trainer.proj.project(lead_feats), emb[lead_ids],
                        trainer.proj.project(feats), emb[ids[:, :-1]]], axis=1)
    logits = lm.forward_embeds(Tensor(x)).data
    # BOS, 2 lead prompts, 2 lead words, 2 prompts: the lead words come from
    # positions 2 and 3, the caption from position 6 onwards
    a, na = _nll(logits[:, 2:4], lead_ids, np.ones_like(lead_ids, dtype=bool))
    b, nb = _nll(logits[:, 6 : 6 + ids.shape[1]], ids, ids != 0)
    assert abs(got - (a + b) / (na + nb)) < 1e-5


def test_paired_training_resumes_identically(tmp_path):
    feats, caps = _data()
    straight = LimberTrainer(_lm(), Projection("vector", 6, 2, 8), _cfg(steps=10, paired=0.5))
    straight.fit(feats, caps)
    first = LimberTrainer(_lm(), Projection("vector", 6, 2, 8), _cfg(steps=10, paired=0.5))
    first.fit(feats, caps, until=5)
    first.save_checkpoint(tmp_path / "p.limb")
    resumed = LimberTrainer.load_checkpoint(tmp_path / "p.limb", _lm())
    resumed.fit(feats, caps)
    assert resumed.proj.content_hash() == straight.proj.content_hash()
    plain = train_projection(_lm(), feats, caps, _cfg(steps=10), Projection("vector", 6, 2, 8))
    assert plain.proj.content_hash() != straight.proj.content_hash()


def test_paired_fraction_is_validated():
    with pytest.raises(ValueError):
        _cfg(paired=1.5)


def test_checkpoint_resume_matches_uninterrupted_run(tmp_path):
    feats, caps = _data()
    straight = LimberTrainer(_lm(), Projection("vector", 6, 2, 8), _cfg(steps=10))
    straight.fit(feats, caps)
    first = LimberTrainer(_lm(), Projection("vector", 6, 2, 8), _cfg(steps=10))
    first.fit(feats, caps, until=5)
    first.save_checkpoint(tmp_path / "p.limb")
    resumed = LimberTrainer.load_checkpoint(tmp_path / "p.limb", _lm())
    resumed.fit(feats, caps)
    assert resumed.state.step == 10
    for k in straight.proj.params:
        np.testing.assert_array_equal(straight.proj.params[k].data, resumed.proj.params[k].data)


def test_checkpoint_rejects_another_language_model(tmp_path):
    feats, caps = _data()
    t = LimberTrainer(_lm(), Projection("vector", 6, 2, 8), _cfg())
    t.save_checkpoint(tmp_path / "p.limb")
    other = DecoderLM(_lm().config, seed=5)
    with pytest.raises(container.IntegrityError):
        LimberTrainer.load_checkpoint(tmp_path / "p.limb", other)


def test_training_is_deterministic():
    feats, caps = _data()
    a = train_projection(_lm(), feats, caps, _cfg(), Projection("vector", 6, 2, 8))
    b = train_projection(_lm(), feats, caps, _cfg(), Projection("vector", 6, 2, 8))
    assert a.proj.content_hash() == b.proj.content_hash()
