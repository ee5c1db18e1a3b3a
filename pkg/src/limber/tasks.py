"""Captioning and few-shot VQA over an (encoder, projection, LM) triple.

Every generation keeps a transcript: the ordered list of segments that made
up its context, where a segment is either token ids or a reference to an
example whose projected image prompts were spliced in. Replaying a transcript
rebuilds the exact same context.
"""
from __future__ import annotations

import hashlib
import json
import re
import string
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .lm import BOS, DecodeSettings, DecoderLM, LengthError, Vocabulary, generate_from_embeds
from .projection import Projection
from .world import PREFIX, QUESTION_FAMILIES, Dataset, World, make_question

ARTICLES = {"a", "an", "the"}
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


class ConfigError(ValueError):
    pass


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = _PUNCT.sub(" ", text.lower())
    return " ".join(w for w in text.split() if w not in ARTICLES)


@dataclass
class Triple:
    """A frozen LM plus, optionally, a projection and the per-example features it reads.

    With no projection the triple is blind.
    """

    lm: DecoderLM
    vocab: Vocabulary
    projection: Projection | None = None
    features: np.ndarray | None = None
    name: str = ""

    def prompts(self, rows: Sequence[int]) -> np.ndarray:
        if self.projection is None or self.features is None:
            raise ConfigError("blind triple has no image prompts")
        return self.projection.project(self.features[np.asarray(rows, dtype=np.int64)])


@dataclass
class GenerationRecord:
    id: str
    task: str
    n_shots: int
    output: str
    gold: list[str]
    transcript: list
    settings: dict
    seed: int
    error: str | None = None
    family: str | None = None

    @property
    def transcript_hash(self) -> str:
        blob = json.dumps(self.transcript, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> dict:
        out = {"id": self.id, "task": self.task, "n_shots": self.n_shots, "output": self.output,
               "gold": self.gold, "transcript_hash": self.transcript_hash}
        if self.error:
            out["error"] = self.error
        if self.family:
            out["family"] = self.family
        return out


def build_context(triple: Triple, transcript: Sequence) -> np.ndarray:
    """``[T, d]`` input rows for a transcript of ``["tok", ids]`` / ``["img", row]`` segments."""
    emb = triple.lm.embedding_matrix()
    parts = []
    for kind, value in transcript:
        if kind == "tok":
            if value:
                parts.append(emb[np.asarray(value, dtype=np.int64)])
        elif kind == "img":
            parts.append(triple.prompts([value])[0])
        else:
            raise ValueError(f"unknown transcript segment {kind!r}")
    return np.concatenate(parts, axis=0)


def _run(triple: Triple, items: list[tuple[str, list, list[str], str | None]], task: str, n_shots: int,
         settings: DecodeSettings, answer_words: dict[str, int] | None = None) -> list[GenerationRecord]:
    """Generate for ``(id, transcript, gold, family)`` items, batching equal-length contexts."""
    records: dict[str, GenerationRecord] = {}
    groups: dict[int, list] = defaultdict(list)
    contexts = {}
    for item in items:
        ctx = build_context(triple, item[1])
        contexts[item[0]] = ctx
        groups[len(ctx)].append(item)
    sdict = asdict(settings)
    for length in sorted(groups):
        group = groups[length]
        for s in range(0, len(group), 256):
            chunk = group[s : s + 256]
            batch = np.stack([contexts[it[0]] for it in chunk])
            try:
                outs = generate_from_embeds(triple.lm, batch, settings)
                err = None
            except LengthError as exc:
                outs, err = [[] for _ in chunk], str(exc)
            for (ex_id, transcript, gold, family), ids in zip(chunk, outs):
                text = triple.vocab.detokenize(ids)
                if answer_words is not None:
                    text = " ".join(text.split()[: answer_words[ex_id]])
                records[ex_id] = GenerationRecord(ex_id, task, n_shots, text, gold, [list(t) for t in transcript],
                                                  sdict, settings.seed, err, family)
    return [records[it[0]] for it in items]


def run_captioning(triple: Triple, rows: Sequence[int], ids: Sequence[str], golds: Sequence[Sequence[str]],
                   settings: DecodeSettings | None = None, prefix: str = PREFIX) -> list[GenerationRecord]:
    """Caption each example: ``<bos> [image prompts] a picture of`` then decode.

    The returned ``output`` includes the prefix, so it is directly comparable
    to references that start with it.
    """
    settings = settings or DecodeSettings()
    pre = triple.vocab.tokenize(prefix)
    items = [(str(i), [["tok", [BOS]], ["img", int(r)], ["tok", pre]], list(g), None)
             for i, r, g in zip(ids, rows, golds)]
    records = _run(triple, items, "caption", 0, settings)
    for rec in records:
        rec.output = f"{prefix} {rec.output}".strip() if rec.output else prefix
    return records


@dataclass
class VqaExample:
    id: str
    row: int
    question: str
    answers: list[str]
    family: str = ""

    def __post_init__(self):
        if not self.answers:
            raise ValueError("a VQA example needs at least one answer")
        self.answers = [a.lower() for a in self.answers]


def make_vqa_examples(world: World, data: Dataset, seed: int, prefix: str = "") -> list[VqaExample]:
    """One question per scene, question families cycling through the split."""
    rng = np.random.default_rng([seed, 0x0A])
    out = []
    for i, scene in enumerate(data.scenes):
        fam = QUESTION_FAMILIES[i % len(QUESTION_FAMILIES)]
        q = make_question(world, scene, fam, rng)
        out.append(VqaExample(f"{prefix}{int(data.scene_ids[i])}", i, q.text, q.answers, q.family))
    return out


def _majority(answers: Sequence[str]) -> str:
    counts: dict[str, int] = {}
    for a in answers:
        counts[a] = counts.get(a, 0) + 1
    return max(sorted(counts), key=lambda a: counts[a])


def _vqa_items(triple: Triple, examples: Sequence[VqaExample], pool: Sequence[VqaExample], n_shots: int,
               seed: int, blind: bool) -> list:
    if n_shots > len(pool):
        raise ConfigError(f"exemplar pool of {len(pool)} is smaller than {n_shots} shots")
    vocab = triple.vocab
    items = []
    for ex in examples:
        rng = np.random.default_rng([seed, _stable_id(ex.id)])
        shots = rng.choice(len(pool), size=n_shots, replace=False) if n_shots else []
        transcript: list = [["tok", [BOS]]]
        for j in shots:
            e = pool[int(j)]
            if not blind:
                transcript.append(["img", ("pool", e.row)])
            transcript.append(["tok", vocab.tokenize(f"q: {e.question} a: {_majority(e.answers)}")])
        if not blind:
            transcript.append(["img", ("eval", ex.row)])
        transcript.append(["tok", vocab.tokenize(f"q: {ex.question} a:")])
        items.append((ex.id, transcript, list(ex.answers), ex.family))
    return items


def _stable_id(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "little")


class _SplitTriple(Triple):
    """Resolves ``("pool", row)`` / ``("eval", row)`` image references to two feature tables."""

    def __init__(self, base: Triple, pool_features: np.ndarray | None):
        super().__init__(base.lm, base.vocab, base.projection, base.features, base.name)
        self.pool_features = pool_features

    def prompts(self, rows):
        (ref,) = rows
        src, row = ref if isinstance(ref, (tuple, list)) else ("eval", ref)
        table = self.pool_features if src == "pool" else self.features
        if self.projection is None or table is None:
            raise ConfigError("blind triple has no image prompts")
        return self.projection.project(table[[int(row)]])


def run_vqa(triple: Triple, examples: Sequence[VqaExample], pool: Sequence[VqaExample], n_shots: int = 4,
            seed: int = 0, pool_features: np.ndarray | None = None,
            settings: DecodeSettings | None = None) -> list[GenerationRecord]:
    """n-shot VQA. Exemplars are drawn (seeded per example) from ``pool``, a
    split disjoint from ``examples``; ``pool_features`` holds their features."""
    settings = settings or DecodeSettings(max_len=3)
    t = _SplitTriple(triple, pool_features)
    items = _vqa_items(triple, examples, pool, n_shots, seed, blind=False)
    longest = {ex.id: max(len(a.split()) for a in ex.answers) for ex in examples}
    return _run(t, items, "vqa", n_shots, settings, longest)


def run_blind(triple: Triple, examples: Sequence[VqaExample], pool: Sequence[VqaExample], n_shots: int = 4,
              seed: int = 0, settings: DecodeSettings | None = None) -> list[GenerationRecord]:
    """As :func:`run_vqa` with every image prompt removed."""
    settings = settings or DecodeSettings(max_len=3)
    blind = Triple(triple.lm, triple.vocab, None, None, "blind")
    items = _vqa_items(blind, examples, pool, n_shots, seed, blind=True)
    longest = {ex.id: max(len(a.split()) for a in ex.answers) for ex in examples}
    return _run(blind, items, "vqa-blind", n_shots, settings, longest)


def replay(triple: Triple, record: GenerationRecord, pool_features: np.ndarray | None = None) -> str:
    """Regenerate a record from its transcript alone."""
    t = _SplitTriple(triple, pool_features)
    transcript = [[k, tuple(v) if k == "img" and isinstance(v, list) else v] for k, v in record.transcript]
    ctx = build_context(t, transcript)
    settings = DecodeSettings(**record.settings)
    ids = generate_from_embeds(triple.lm, ctx[None], settings)[0]
    text = triple.vocab.detokenize(ids)
    if record.task == "caption":
        # the prefix was the last token segment
        prefix = triple.vocab.detokenize(transcript[-1][1])
        return f"{prefix} {text}".strip() if text else prefix
    longest = max(len(a.split()) for a in record.gold)
    return " ".join(text.split()[:longest])


def generations_jsonl(records: Sequence[GenerationRecord]) -> str:
    rows = sorted((r.to_json() for r in records), key=lambda r: r["id"])
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
