"""Caption, lexical, VQA and animal metrics against brute-force oracles and hand-worked cases."""
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limber.metrics import awa, captions, lexical, vqa
from limber.tasks import normalize_answer
from limber.taxonomy import Taxonomy

import oracles

WORDS = ["a", "dog", "cat", "runs", "red", "on", "grass", "two", "the", "small"]
PARENT = {"entity": None, "animal": "entity", "dog": "animal", "cat": "animal", "bird": "entity"}


def _sentence(rng, lo=1, hi=8):
    return " ".join(rng.choice(WORDS, size=rng.integers(lo, hi + 1)))


def _corpus(seed, size=5):
    rng = np.random.default_rng(seed)
    cands = [_sentence(rng) for _ in range(size)]
    refs = [[_sentence(rng) for _ in range(rng.integers(1, 4))] for _ in range(size)]
    return cands, refs


# ------------------------------------------------------------ oracle agreement

@pytest.mark.parametrize("seed", range(100))
def test_cider_matches_brute_force(seed):
    cands, refs = _corpus(seed)
    assert abs(captions.cider_d(cands, refs) - oracles.cider_d_brute(cands, refs)) <= 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_bleu_matches_brute_force(seed):
    cands, refs = _corpus(1000 + seed)
    for n in (1, 4):
        assert abs(captions.bleu(cands, refs, n=n) - oracles.bleu_brute(cands, refs, n=n)) <= 1e-9


def _random_tree(rng, size=12):
    parent = {"n0": None}
    for i in range(1, size):
        parent[f"n{i}"] = f"n{rng.integers(0, i)}"
    return parent


@pytest.mark.parametrize("seed", range(100))
def test_wup_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    parent = _random_tree(rng)
    tax = Taxonomy(parent, root="n0")
    for _ in range(5):
        a, b = rng.choice(list(parent), size=2)
        assert abs(tax.wup(a, b) - oracles.wup_brute(parent, a, b)) <= 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_vqa_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pool = ["Dog", "the dog", "cat.", "yes", "no", "two", "A red"]
    for _ in range(5):
        pred = str(rng.choice(pool))
        answers = list(rng.choice(pool, size=rng.choice([1, 10])))
        assert abs(vqa.vqa_accuracy(pred, answers) - oracles.vqa_brute(pred, answers)) <= 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_property_ap_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    matrix = (rng.random((6, 8)) < 0.4).astype(int)
    for _ in range(5):
        gold = int(rng.integers(0, 6))
        pred = list(rng.integers(0, 6, size=rng.integers(0, 4)))
        assert abs(awa.property_ap(pred, gold, matrix) - oracles.property_ap_brute(pred, gold, matrix)) <= 1e-9


# ------------------------------------------------------------ caption metrics

def test_cider_identical_caption_scores_ten():
    # a one-image corpus has idf 0 everywhere, so the second image supplies contrast
    refs = [["a small dog runs on the grass"], ["two red cats sit by a tree"]]
    cands = [r[0] for r in refs]
    assert abs(captions.cider_d(cands, refs) - 10.0) <= 1e-6
    assert all(abs(s - 10.0) <= 1e-6 for s in captions.cider_d_per_example(cands, refs))


def test_cider_disjoint_caption_scores_zero():
    assert captions.cider_d(["zebra zebra"], [["a dog runs"]]) == 0.0


def test_cider_rejects_missing_references():
    with pytest.raises(ValueError):
        captions.cider_d(["a dog"], [[]])


def test_bleu_hand_case():
    expected = math.sqrt(2 / 3 * 1 / 2) * math.exp(1 - 4 / 3)
    got = captions.bleu(["the cat sat"], [["the cat is here"]], n=2)
    assert abs(got - expected) < 1e-9


def test_bleu_edges():
    assert abs(captions.bleu(["a dog runs on grass"], [["a dog runs on grass"]]) - 1.0) < 1e-9
    assert captions.bleu(["zebra"], [["a dog"]], n=1) < 1e-8
    assert captions.bleu([""], [["a dog"]]) == 0.0


def test_contrastive_score_clamps_and_scales():
    img = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    txt = np.array([[2.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(captions.contrastive_score(img, txt), [2.5, 0.0, 0.0])
    ref = captions.ref_contrastive_score(img[:1], txt[:1], [np.array([[1.0, 1.0]])])
    a, b = 2.5, 1 / math.sqrt(2)
    assert abs(ref[0] - 2 * a * b / (a + b)) < 1e-9


# ------------------------------------------------------------ taxonomy and lexical

def test_wup_hand_taxonomy():
    tax = Taxonomy({"root": None, "animal": "root", "dog": "animal", "cat": "animal"}, root="root")
    assert abs(lexical.wup(tax, "dog", "cat") - 2 / 3) < 1e-12
    assert lexical.wup(tax, "dog", "dog") == 1.0
    with pytest.raises(KeyError):
        tax.wup("dog", "unicorn")


def _lexicon():
    return [lexical.LexiconEntry("dog", "noun", "dog"), lexical.LexiconEntry("cat", "noun", "cat"),
            lexical.LexiconEntry("bird", "noun", "bird"), lexical.LexiconEntry("two", "modifier"),
            lexical.LexiconEntry("running", "relation")]


def test_lexical_hand_corpus():
    tax = Taxonomy(PARENT)
    gens = ["two dog running", "a dog", "a bird"]
    gold = [["two dog running"], ["a cat"], ["a dog"]]
    rep = lexical.lexical_prf(gens, gold, _lexicon(), tax)
    by = {s.word: s for s in rep.words}
    assert (by["dog"].tp, by["dog"].fp, by["dog"].fn) == (1, 1, 1)
    assert by["dog"].precision == by["dog"].recall == by["dog"].f1 == 0.5
    assert by["cat"].f1 == 0.0 and by["bird"].fp == 1
    assert by["two"].f1 == by["running"].f1 == 1.0
    # bird never appears in gold so it carries no support in the role average
    assert rep.roles["noun"] == {"precision": 0.25, "recall": 0.25, "f1": 0.25}
    assert rep.roles["modifier"]["f1"] == rep.roles["relation"]["f1"] == 1.0
    assert rep.max_wup == pytest.approx([1.0, 2 / 3, 0.4])
    assert rep.mean_max_wup == pytest.approx(31 / 45)


def test_lexical_identity_and_empty_generation():
    tax = Taxonomy(PARENT)
    gold = [["two dog running"], ["a cat"]]
    same = lexical.lexical_prf([g[0] for g in gold], gold, _lexicon(), tax)
    for s in same.words:
        if s.tp + s.fn:
            assert s.precision == s.recall == s.f1 == 1.0
    empty = lexical.lexical_prf(["", ""], gold, _lexicon(), tax)
    assert all(s.recall == 0.0 for s in empty.words)
    assert empty.max_wup == [0.0, 0.0]


def test_build_lexicon_ranks_by_frequency_then_alphabet():
    gold = [["a dog runs", "the dog"], ["a cat runs"], ["a bird"], ["a cat"]]
    roles = {"dog": "noun", "cat": "noun", "bird": "noun", "runs": "relation"}
    lex = lexical.build_lexicon(gold, roles, top=2)
    # dog occurs twice but in one example, so it ties with bird and loses alphabetically
    assert [(e.word, e.rank) for e in lex if e.role == "noun"] == [("cat", 1), ("bird", 2)]
    assert [e.word for e in lex if e.role == "relation"] == ["runs"]


def test_load_lexicon_rejects_unknown_role(tmp_path):
    f = tmp_path / "lex.tsv"
    f.write_text("dog\tverb\tdog\n")
    with pytest.raises(ValueError):
        lexical.load_lexicon(f)


def test_random_pair_wup_by_enumeration():
    tax = Taxonomy(PARENT)
    leaves = ["dog", "cat", "bird"]
    pairs = list(itertools.combinations(leaves, 2))
    expected = np.mean([oracles.wup_brute(PARENT, a, b) for a, b in pairs])
    assert abs(lexical.random_pair_wup(tax, leaves) - expected) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_wup_symmetric(seed):
    rng = np.random.default_rng(seed)
    tax = Taxonomy(_random_tree(rng), root="n0")
    a, b = rng.choice(tax.nodes(), size=2)
    assert tax.wup(a, b) == tax.wup(b, a)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["two", "dog", "cat", "bird", "running", "red"]), max_size=6),
       st.sampled_from(["dog", "cat"]), st.integers(0, 6))
def test_inserting_gold_noun_never_hurts(words, gold_noun, at):
    tax = Taxonomy(PARENT)
    gold = [[f"two {gold_noun} running"]]
    before = lexical.lexical_prf([" ".join(words)], gold, _lexicon(), tax)
    words = list(words)
    words.insert(min(at, len(words)), gold_noun)
    after = lexical.lexical_prf([" ".join(words)], gold, _lexicon(), tax)
    rec = lambda r: {s.word: s.recall for s in r.words}
    assert all(rec(after)[w] >= rec(before)[w] for w in rec(before))
    assert after.max_wup[0] >= before.max_wup[0]


# ------------------------------------------------------------ VQA

def test_normalize_answer():
    assert normalize_answer("The Dog.") == "dog"
    assert normalize_answer("") == ""
    assert normalize_answer("two") == normalize_answer(" two ")


def test_vqa_annotator_counts():
    answers = ["dog"] * 3 + ["cat"] * 6 + ["bird"]
    assert vqa.vqa_accuracy("Dog", answers) == 1.0
    assert abs(vqa.vqa_accuracy("bird", answers) - 1 / 3) < 1e-12
    assert vqa.vqa_accuracy("fish", answers) == 0.0
    assert vqa.vqa_accuracy("the dog", ["dog"]) == 1.0


def test_majority_answer_rate():
    assert vqa.majority_answer_rate([["yes"], ["yes"], ["no"]]) == pytest.approx(2 / 3)


# ------------------------------------------------------------ animals and properties

MATRIX = np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 0, 1, 1]])


def test_property_overlap():
    assert awa.property_overlap([1, 0, 1], [1, 0, 1]) == 1.0
    assert awa.property_overlap([1, 0, 0], [0, 1, 0]) == 0.0
    assert awa.property_overlap([0, 0], [0, 0]) == 0.0
    assert awa.property_overlap(MATRIX[0], MATRIX[1]) == pytest.approx(2 / 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=10), st.lists(st.booleans(), min_size=1, max_size=10))
def test_property_overlap_symmetric(a, b):
    n = min(len(a), len(b))
    assert awa.property_overlap(a[:n], b[:n]) == awa.property_overlap(b[:n], a[:n])


def test_property_ap_hand_case():
    rows = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 0, 1, 0]])
    # mean of rows 0 and 1 ranks properties 0, 1, 3, 2; gold positives sit at ranks 1 and 4
    assert awa.property_ap([0, 1], 2, rows) == pytest.approx(0.75)
    assert awa.property_ap([2], 2, rows) == 1.0


def test_animal_report_hand_corpus():
    tax = Taxonomy(PARENT)
    gens = ["a dog", "a cat", "a cat and a dog", "a bird", "nothing here"]
    gold = [0, 0, 1, 1, 2]
    rep = awa.animal_report(gens, gold, ["dog", "cat", "bird"], tax, ["dog", "cat", "bird"], MATRIX)
    assert rep.accuracy == pytest.approx(0.4)
    assert rep.n_mistakes == 2
    assert rep.mistake_wup == pytest.approx((2 / 3 + 0.4) / 2)
    assert rep.mistake_jaccard == pytest.approx((2 / 3 + 1 / 4) / 2)
    assert rep.top_confusion_jaccard == pytest.approx(rep.mistake_jaccard)
    assert rep.confusion_rows() == [("cat", "bird", 1), ("dog", "cat", 1)]


def test_animal_report_all_correct_and_synonyms():
    tax = Taxonomy(PARENT)
    rep = awa.animal_report(["a puppy", "a cat"], [0, 1], ["dog", "cat", "bird"], tax, ["dog", "cat", "bird"],
                            MATRIX, synonyms={"puppy": "dog"})
    assert rep.accuracy == 1.0 and rep.n_mistakes == 0 and not rep.confusions
