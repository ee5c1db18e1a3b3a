import numpy as np
import pytest

from limber.lm import BOS, DecodeSettings, DecoderLM, LmConfig, Vocabulary
from limber.projection import Projection
from limber.tasks import (ConfigError, Triple, VqaExample, build_context, make_vqa_examples, replay, run_blind,
                          run_captioning, run_vqa)
from limber.world import WorldConfig, build_world, make_dataset


@pytest.fixture(scope="module")
def setup():
    world = build_world(4, config=WorldConfig(n_categories=6))
    data = make_dataset(world, n_train=12, n_val=12, n_test=12, seed=0)
    vocab = Vocabulary(world.vocabulary_words() + ["q:", "a:", "what", "animal", "is", "this", "?", "it", "or",
                                                   "doing", "how", "many", "are", "there", "yes", "no"])
    lm = DecoderLM(LmConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32, context_len=128),
                   seed=0).freeze()
    feats = np.random.default_rng(0).normal(size=(12, 5)).astype(np.float32)
    pool_feats = np.random.default_rng(1).normal(size=(12, 5)).astype(np.float32)
    triple = Triple(lm, vocab, Projection("vector", 5, 2, 16, seed=2), feats, "toy")
    examples = make_vqa_examples(world, data["test"], seed=3, prefix="t")
    pool = make_vqa_examples(world, data["val"], seed=4, prefix="p")
    return world, data, triple, examples, pool, pool_feats


def test_caption_records_replay(setup):
    world, data, triple, *_ = setup
    recs = run_captioning(triple, range(4), ["a", "b", "c", "d"], data["test"].references[:4])
    for r in recs:
        assert r.output.startswith("a picture of")
        assert replay(triple, r) == r.output
    again = run_captioning(triple, range(4), ["a", "b", "c", "d"], data["test"].references[:4])
    assert [r.output for r in again] == [r.output for r in recs]
    assert run_captioning(triple, [], [], []) == []


def test_vqa_records_replay(setup):
    world, data, triple, examples, pool, pool_feats = setup
    recs = run_vqa(triple, examples, pool, 2, seed=5, pool_features=pool_feats)
    for r in recs:
        assert replay(triple, r, pool_feats) == r.output
        assert len(r.output.split()) <= max(len(a.split()) for a in r.gold)


def test_zero_shot_context_is_only_the_target_block(setup):
    world, data, triple, examples, pool, pool_feats = setup
    rec = run_vqa(triple, examples[:1], pool, 0, seed=5, pool_features=pool_feats)[0]
    kinds = [k for k, _ in rec.transcript]
    assert kinds == ["tok", "img", "tok"]
    assert rec.transcript[0][1] == [BOS]


def test_blind_differs_only_by_image_segments(setup):
    world, data, triple, examples, pool, pool_feats = setup
    sighted = run_vqa(triple, examples, pool, 4, seed=5, pool_features=pool_feats)
    blind = run_blind(triple, examples, pool, 4, seed=5)
    for s, b in zip(sighted, blind):
        assert [seg for seg in s.transcript if seg[0] == "tok"] == b.transcript
        assert all(seg[0] == "tok" for seg in b.transcript)


def test_context_length_follows_the_transcript(setup):
    world, data, triple, examples, pool, pool_feats = setup
    rec = run_vqa(triple, examples[:1], pool, 1, seed=5, pool_features=pool_feats)[0]
    n_tok = sum(len(v) for k, v in rec.transcript if k == "tok")
    assert n_tok + 2 * 2 == sum(len(v) if k == "tok" else 2 for k, v in rec.transcript)


def test_pool_too_small(setup):
    world, data, triple, examples, pool, pool_feats = setup
    with pytest.raises(ConfigError):
        run_vqa(triple, examples, pool[:2], 4, pool_features=pool_feats)


def test_overflow_is_recorded_not_raised(setup):
    world, data, triple, examples, pool, pool_feats = setup
    short = Triple(DecoderLM(LmConfig(vocab_size=len(triple.vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32,
                                      context_len=12)), triple.vocab, triple.projection, triple.features)
    recs = run_vqa(short, examples[:2], pool, 4, seed=5, pool_features=pool_feats)
    assert all(r.error and r.output == "" for r in recs)


def test_blind_triple_has_no_prompts(setup):
    _, _, triple, *_ = setup
    with pytest.raises(ConfigError):
        Triple(triple.lm, triple.vocab).prompts([0])
    with pytest.raises(ValueError):
        build_context(triple, [["audio", 0]])


def test_vqa_example_validation():
    with pytest.raises(ValueError):
        VqaExample("x", 0, "q", [])
    assert VqaExample("x", 0, "q", ["Dog"]).answers == ["dog"]
