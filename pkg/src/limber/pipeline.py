"""Pipeline stages over one run directory.

Layout of a run directory::

    world/     taxonomy, properties, world.json, dataset splits, lexicon
    lm/        lm.limb (+ .json), vocab.tsv, metrics.json
    encoders/  {variant}.limb (+ .json), gates.json
    limber/    {variant}.limb checkpoints (+ .json)
    eval/      generation JSONL files
    reports/   CSV tables and JSON aggregates
    figures/   SVG figures

Each stage writes its outputs into its own directory together with a
``manifest.json`` listing them, so every output file is claimed by exactly
one manifest. Stages find their inputs by these fixed paths and refuse to run
when one is missing or its hash disagrees with the manifest that produced it.
"""
from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, container, seeding
from .config import ExperimentConfig
from .encoders import (
    DEFAULT_GEOMETRY,
    DEFAULT_PROMPT_LEN,
    EncoderModel,
    classifier_accuracy,
    pretrain_encoder_classifier,
    pretrain_encoder_contrastive,
    pretrain_encoder_ssl,
    random_encoder,
    retrieval_at_1,
    ssl_masked_mse,
)
from .lm import DecodeSettings, DecoderLM, LmConfig, PretrainConfig, Vocabulary, encode_docs, perplexity, pretrain_lm
from .metrics import awa, captions, lexical, probes, purity, rsa, vqa
from .projection import LimberTrainer, caption_ids, projection_for, teacher_forced_accuracy
from .report import write_csv
from .tasks import Triple, generations_jsonl, make_vqa_examples, run_blind, run_captioning, run_vqa
from .world import (
    Dataset,
    World,
    build_world,
    caption_entropy_floor,
    generate_caption,
    lm_corpus,
    load_world,
    make_dataset,
    sample_scene,
)


class MissingArtifactError(FileNotFoundError):
    pass


STAGES = ("world-gen", "pretrain-lm", "pretrain-encoder", "train-limber", "eval-caption", "eval-vqa", "probe",
          "analyze")
STAGE_DIRS = {
    "world-gen": "world",
    "pretrain-lm": "lm",
    "pretrain-encoder": "encoders",
    "train-limber": "limber",
    "eval-caption": "eval/caption",
    "eval-vqa": "eval/vqa",
    "probe": "reports/probe",
    "analyze": "reports/analyze",
    "report": "reports/summary",
}


class Run:
    """A run directory plus the configuration that governs it."""

    def __init__(self, out, config: ExperimentConfig):
        self.out = Path(out)
        self.config = config
        self.seeds = seeding.seed_everything(config.seed)

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    def stage_dir(self, stage: str) -> Path:
        d = self.path(STAGE_DIRS[stage])
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, *parts: str) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise MissingArtifactError(f"missing artifact {p}; run the stage that produces it first")
        return p

    def manifest(self, stage: str) -> dict:
        p = self.require(STAGE_DIRS[stage], "manifest.json")
        return json.loads(p.read_text(encoding="utf-8"))

    # loading -----------------------------------------------------------------

    def world(self) -> World:
        self.require("world", "world.json")
        return load_world(self.path("world"))

    def split(self, world: World, name: str) -> Dataset:
        self.require("world", f"{name}.jsonl")
        return Dataset.load(world, self.path("world"), name)

    def lm(self) -> tuple[DecoderLM, Vocabulary]:
        lm = DecoderLM.load(self.require("lm", "lm.limb"))
        vocab = Vocabulary.load(self.require("lm", "vocab.tsv"))
        expected = self.manifest("pretrain-lm")["hashes"]["lm"]
        if lm.content_hash() != expected:
            raise container.IntegrityError("lm.limb does not match the hash recorded when it was trained")
        return lm, vocab

    def encoder(self, variant: str) -> EncoderModel:
        enc = EncoderModel.load(self.require("encoders", f"{variant}.limb"))
        expected = self.manifest("pretrain-encoder")["hashes"].get(variant)
        if expected is not None and enc.content_hash() != expected:
            raise container.IntegrityError(f"encoder {variant} does not match its recorded hash")
        return enc

    def projection_trainer(self, variant: str, lm: DecoderLM, encoder: EncoderModel) -> LimberTrainer:
        return LimberTrainer.load_checkpoint(self.require("limber", f"{variant}.limb"), lm, encoder)


def _finish(run: Run, stage: str, outputs: Sequence[Path], hashes: dict | None = None, started: float = 0.0,
            extra: dict | None = None) -> Path:
    d = run.stage_dir(stage)
    rel = sorted({str(Path(p).resolve().relative_to(run.out.resolve())) for p in outputs})
    manifest = {
        "stage": stage,
        "version": __version__,
        "config": run.config.to_dict(),
        "master_seed": run.config.seed,
        "seeds": run.seeds,
        "hashes": hashes or {},
        "outputs": rel,
        "timestamps": {"finished": time.strftime("%Y-%m-%dT%H:%M:%S"), "wall_clock_s": round(time.time() - started, 3)},
    }
    if extra:
        manifest.update(extra)
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _variants(run: Run, only: Sequence[str] | None) -> list[str]:
    return [v for v in run.config.variants if not only or v in only]


# stages ------------------------------------------------------------------------

def world_gen(run: Run) -> Path:
    t0 = time.time()
    cfg = run.config
    d = run.stage_dir("world-gen")
    world = build_world(run.seeds["world"], config=copy.deepcopy(cfg.world))
    world.save(d)
    outputs = [d / "taxonomy.tsv", d / "properties.csv", d / "world.json"]
    splits = make_dataset(world, cfg.data.n_train, cfg.data.n_val, cfg.data.n_test, seed=run.seeds["dataset"])
    for name, split in splits.items():
        outputs += split.save(world, d, name)
    roles = world.word_roles()
    lines = []
    for w in world.vocabulary_words():
        if w in roles:
            node = world.noun_node(w) if roles[w] == "noun" else ""
            lines.append(f"{w}\t{roles[w]}\t{node}")
    (d / "lexicon.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append(d / "lexicon.tsv")
    hashes = {name: container.content_hash({"observations": s.observations}) for name, s in splits.items()}
    return _finish(run, "world-gen", outputs, hashes, t0)


def pretrain_language_model(run: Run) -> Path:
    t0 = time.time()
    cfg = run.config.lm
    world = run.world()
    d = run.stage_dir("pretrain-lm")
    docs = lm_corpus(world, run.config.data.lm_docs, seed=run.seeds["lm"])
    vocab = Vocabulary(world.vocabulary_words())
    model_cfg = LmConfig(vocab_size=len(vocab), d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
                         d_ff=cfg.d_ff, context_len=cfg.context_len, dropout=cfg.dropout)
    train_cfg = PretrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, warmup=cfg.warmup,
                               weight_decay=cfg.weight_decay, betas=tuple(cfg.betas), clip=cfg.clip,
                               seed=seeding.derive_seed(run.seeds["lm"], "train"))
    lm = pretrain_lm(encode_docs(vocab, docs), model_cfg, train_cfg)
    lm.save(d / "lm.limb")
    vocab.save(d / "vocab.tsv")
    rng = seeding.rng(run.seeds["lm"], "heldout")
    held = [generate_caption(world, sample_scene(world, i % len(world.categories),
                                                 seeding.derive_seed(run.seeds["lm"], "heldout-scene", i)),
                             int(rng.integers(1 << 30))).caption for i in range(1000)]
    metrics = {"heldout_caption_perplexity": perplexity(lm, encode_docs(vocab, held)),
               "caption_entropy_floor": caption_entropy_floor(world),
               "final_loss": train_cfg.history[-1][1] if train_cfg.history else None}
    _write_json(d / "metrics.json", metrics)
    return _finish(run, "pretrain-lm", [d / "lm.limb", d / "lm.limb.json", d / "vocab.tsv", d / "metrics.json"],
                   {"lm": lm.content_hash()}, t0)


def pretrain_encoders(run: Run, only: Sequence[str] | None = None) -> Path:
    """Train (or, for ``random``, merely initialise) each requested encoder.

    Encoders not requested keep whatever the previous manifest recorded.
    """
    t0 = time.time()
    world = run.world()
    train, val = run.split(world, "train"), run.split(world, "val")
    d = run.stage_dir("pretrain-encoder")
    prev = {}
    if (d / "manifest.json").exists():
        prev = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    hashes = dict(prev.get("hashes", {}))
    gates = dict(prev.get("gates", {}))
    n_patches = world.config.n_patches
    for v in _variants(run, only):
        ecfg = copy.deepcopy(run.config.encoders[v])
        ecfg.seed = run.seeds[f"encoder.{v}"]
        if v == "classifier":
            enc = pretrain_encoder_classifier(train.observations, train.categories, len(world.categories), ecfg,
                                              n_patches)
            gates[v] = {"heldout_accuracy": classifier_accuracy(enc, val.observations, val.categories)}
        elif v == "contrastive":
            enc = pretrain_encoder_contrastive(train.observations, train.captions, world.vocabulary_words(), ecfg,
                                               n_patches)
            gates[v] = {"heldout_r_at_1": retrieval_at_1(enc, val.observations, val.captions),
                        "shuffled_r_at_1": retrieval_at_1(enc, val.observations, val.captions, shuffle_seed=0)}
        elif v == "ssl":
            enc = pretrain_encoder_ssl(train.observations, n_patches, ecfg)
            mse, base = ssl_masked_mse(enc, val.observations, ecfg.mask_ratio, seed=ecfg.seed)
            gates[v] = {"masked_mse": mse, "baseline_mse": base}
        else:
            enc = random_encoder(DEFAULT_GEOMETRY[v], ecfg.seed, world.config.d_obs, ecfg.random_gain, ecfg.hidden,
                                 ecfg.random_depth)
            gates[v] = {}
        enc.save(d / f"{v}.limb")
        hashes[v] = enc.content_hash()
    outputs = []
    for v in sorted(hashes):
        outputs += [d / f"{v}.limb", d / f"{v}.json"]
    return _finish(run, "pretrain-encoder", outputs, hashes, t0, {"gates": gates})


def _limber_inputs(run: Run, encoder: EncoderModel, data: Dataset, tune: bool) -> np.ndarray:
    return data.observations if tune else encoder.encode(data.observations)


def train_limber(run: Run, only: Sequence[str] | None = None) -> Path:
    t0 = time.time()
    world = run.world()
    lm, vocab = run.lm()
    train, test = run.split(world, "train"), run.split(world, "test")
    d = run.stage_dir("train-limber")
    prev = {}
    if (d / "manifest.json").exists():
        prev = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    hashes = dict(prev.get("hashes", {}))
    stats = dict(prev.get("limber", {}))
    section = run.config.limber
    for v in _variants(run, only):
        enc = run.encoder(v)
        seed = seeding.derive_seed(run.seeds["limber"], v)
        tcfg = section.train_config(seed)
        proj = projection_for(enc.geometry, lm.d_model, DEFAULT_PROMPT_LEN[v], seed=seed)
        trainer = LimberTrainer(lm, proj, tcfg, enc, section.tune_encoder)
        lm_before, enc_before = lm.content_hash(), enc.content_hash()
        trainer.fit(_limber_inputs(run, enc, train, section.tune_encoder), caption_ids(vocab, train.captions))
        trainer.check_frozen()
        trainer.save_checkpoint(d / f"{v}.limb")
        feats = enc.encode(test.observations) if not section.tune_encoder else trainer.encoder.encode(test.observations)
        acc, nll = teacher_forced_accuracy(lm, trainer.proj, feats, caption_ids(vocab, [r[0] for r in test.references]))
        stats[v] = {"heldout_next_token_accuracy": acc, "heldout_nll": nll,
                    "final_loss": trainer.state.history[-1][1] if trainer.state.history else None,
                    "lm_unchanged": lm.content_hash() == lm_before,
                    "encoder_unchanged": enc.content_hash() == enc_before,
                    "trainable": sorted(trainer.trainable_names())}
        hashes[v] = trainer.proj.content_hash()
    outputs = []
    for v in sorted(hashes):
        outputs += [d / f"{v}.limb", d / f"{v}.json"]
    return _finish(run, "train-limber", outputs, hashes, t0, {"limber": stats})


def _triple(run: Run, v: str, lm, vocab, obs: np.ndarray) -> tuple[Triple, EncoderModel]:
    """The (encoder, projection, LM) triple for ``obs``, plus the encoder used
    (the tuned copy when the encoder was trained alongside the projection)."""
    trainer = run.projection_trainer(v, lm, run.encoder(v))
    return Triple(lm, vocab, trainer.proj, trainer.encoder.encode(obs), v), trainer.encoder


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6f}"
    return str(x)


def eval_caption(run: Run) -> Path:
    t0 = time.time()
    world = run.world()
    lm, vocab = run.lm()
    test = run.split(world, "test")
    d = run.stage_dir("eval-caption")
    mcfg = run.config.metrics
    settings = DecodeSettings(**{**asdict(run.config.decode), "seed": seeding.derive_seed(run.seeds["eval"], "caption")})
    ids = [str(int(i)) for i in test.scene_ids]
    towers = None
    if "contrastive" in run.config.variants:
        towers = run.encoder("contrastive")
    rows, outputs = [], []
    nouns = [c.noun for c in world.categories]
    for v in run.config.variants:
        triple, _ = _triple(run, v, lm, vocab, test.observations)
        recs = run_captioning(triple, range(len(test)), ids, test.references, settings)
        path = d / f"{v}.jsonl"
        path.write_text(generations_jsonl(recs), encoding="utf-8")
        outputs.append(path)
        outs = [r.output for r in recs]
        row = {"variant": v,
               "cider_d": captions.cider_d(outs, test.references, mcfg.cider_sigma, mcfg.cider_scale),
               "bleu1": captions.bleu(outs, test.references, n=1),
               "bleu4": captions.bleu(outs, test.references, n=4),
               "noun_accuracy": float(np.mean([nouns[c] in o.split() for c, o in zip(test.categories, outs)]))}
        if towers is not None:
            img = towers.embed_images(test.observations)
            txt = towers.embed_texts(outs)
            refs = [towers.embed_texts(r) for r in test.references]
            row["contrastive_score"] = float(np.mean(captions.contrastive_score(img, txt, mcfg.contrastive_w)))
            row["ref_contrastive_score"] = float(np.mean(captions.ref_contrastive_score(img, txt, refs,
                                                                                         mcfg.contrastive_w)))
        rows.append(row)
    cols = ["variant", "cider_d", "bleu1", "bleu4", "noun_accuracy", "contrastive_score", "ref_contrastive_score"]
    outputs.append(write_csv(d / "captions.csv", cols, [[_fmt(r.get(c)) for c in cols] for r in rows]))
    return _finish(run, "eval-caption", outputs, {}, t0)


def eval_vqa(run: Run) -> Path:
    t0 = time.time()
    world = run.world()
    lm, vocab = run.lm()
    test, val = run.split(world, "test"), run.split(world, "val")
    d = run.stage_dir("eval-vqa")
    vc = run.config.vqa
    seed = seeding.derive_seed(run.seeds["eval"], "vqa")
    examples = make_vqa_examples(world, test, seed, prefix="t")[: vc.n_questions]
    pool = make_vqa_examples(world, val, seeding.derive_seed(seed, "pool"), prefix="p")[: vc.pool_size]
    settings = DecodeSettings(mode="greedy", max_len=vc.max_len, seed=seed)
    rows, outputs = [], []

    def score(name, shots, recs):
        path = d / f"{name}_{shots}shot.jsonl"
        path.write_text(generations_jsonl(recs), encoding="utf-8")
        outputs.append(path)
        accs = [vqa.vqa_accuracy(r.output, r.gold) for r in recs]
        row = {"variant": name, "shots": shots, "accuracy": 100.0 * float(np.mean(accs))}
        for fam in sorted({r.family for r in recs}):
            row[f"acc_{fam}"] = 100.0 * float(np.mean([a for a, r in zip(accs, recs) if r.family == fam]))
        rows.append(row)

    blind = Triple(lm, vocab, None, None, "blind")
    for shots in vc.shots:
        score("blind", shots, run_blind(blind, examples, pool, shots, seed, settings))
    for v in run.config.variants:
        enc_triple, model = _triple(run, v, lm, vocab, test.observations)
        pool_feats = model.encode(val.observations)
        for shots in vc.shots:
            score(v, shots, run_vqa(enc_triple, examples, pool, shots, seed, pool_feats, settings))
    fams = sorted({k for r in rows for k in r if k.startswith("acc_")})
    cols = ["variant", "shots", "accuracy"] + fams
    outputs.append(write_csv(d / "vqa.csv", cols, [[_fmt(r.get(c)) for c in cols] for r in rows]))
    return _finish(run, "eval-vqa", outputs, {}, t0)


def designated_property(visible: np.ndarray) -> int:
    """The property bit whose scene-level rate is closest to one half (lowest index on ties)."""
    rate = visible.mean(axis=0)
    return int(np.argmin(np.abs(rate - 0.5)))


def probe_stage(run: Run) -> Path:
    t0 = time.time()
    world = run.world()
    val, test = run.split(world, "val"), run.split(world, "test")
    d = run.stage_dir("probe")
    base = run.config.probe
    C = len(world.categories)
    rows = []
    vis_tr = np.array([s.visible for s in val.scenes], dtype=np.int8)
    vis_te = np.array([s.visible for s in test.scenes], dtype=np.int8)
    for v in run.config.variants:
        enc = run.encoder(v)
        ftr, fte = enc.encode(val.observations), enc.encode(test.observations)
        seed = seeding.derive_seed(run.seeds["probe"], v)
        cat_cfg = _with(base, task="single-label", seed=seed)
        p = probes.train_probe(ftr, val.categories, cat_cfg, C)
        res = probes.eval_probe(p, fte, test.categories)
        ctrl = probes.shuffled_control(ftr, val.categories, fte, test.categories, cat_cfg,
                                       seeding.derive_seed(seed, "shuffle"), C)
        rows.append(["category", v, _fmt(res["macro_f1"]), _fmt(res["accuracy"]), _fmt(ctrl["macro_f1"]),
                     _fmt(ctrl["accuracy"]), _fmt(1.0 / C), str(p.epochs)])
        prop_cfg = _with(base, task="multilabel", seed=seed)
        p = probes.train_probe(ftr, vis_tr, prop_cfg)
        res = probes.eval_probe(p, fte, vis_te)
        rows.append(["properties", v, _fmt(res["macro_f1"]), _fmt(res["accuracy"]), "", "", "", str(p.epochs)])
    cols = ["target", "variant", "macro_f1", "accuracy", "shuffled_macro_f1", "shuffled_accuracy", "chance_accuracy",
            "epochs"]
    out = write_csv(d / "probes.csv", cols, rows)
    return _finish(run, "probe", [out], {}, t0)


def _with(cfg, **kw):
    out = copy.deepcopy(cfg)
    for k, val in kw.items():
        setattr(out, k, val)
    out.__post_init__()
    return out


def _load_generations(path: Path) -> dict[str, dict]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            r = json.loads(line)
            out[r["id"]] = r
    return out


def analyze(run: Run) -> Path:
    """Lexical transfer, animal mentions and confusions, RSA and neighbour purity."""
    t0 = time.time()
    world = run.world()
    test = run.split(world, "test")
    d = run.stage_dir("analyze")
    mcfg = run.config.metrics
    ids = [str(int(i)) for i in test.scene_ids]
    nouns = [c.noun for c in world.categories]
    nodes = [c.node for c in world.categories]
    matrix = world.property_matrix
    lex = lexical.build_lexicon(test.references, world.word_roles(), {n: world.noun_node(n) for n in nouns},
                                mcfg.lexicon_top)
    word_rows, role_rows, animal_rows, conf_rows, purity_rows = [], [], [], [], []
    feats = {}
    vis = np.array([s.visible for s in test.scenes], dtype=np.int8)
    bit = designated_property(vis)
    for v in run.config.variants:
        gens = _load_generations(run.require(STAGE_DIRS["eval-caption"], f"{v}.jsonl"))
        outs = [gens[i]["output"] for i in ids]
        rep = lexical.lexical_prf(outs, test.references, lex, world.taxonomy)
        for s in rep.words:
            word_rows.append([v, s.word, s.role, str(s.tp), str(s.fp), str(s.fn), _fmt(s.precision),
                              _fmt(s.recall), _fmt(s.f1)])
        for role in lexical.ROLES:
            r = rep.roles.get(role, {})
            role_rows.append([v, role, _fmt(r.get("precision")), _fmt(r.get("recall")), _fmt(r.get("f1")),
                              _fmt(rep.mean_max_wup)])
        ar = awa.animal_report(outs, test.categories, nouns, world.taxonomy, nodes, matrix,
                               top_k=mcfg.top_confusions)
        animal_rows.append([v, _fmt(ar.accuracy), _fmt(ar.mistake_wup), _fmt(ar.mistake_jaccard),
                            _fmt(ar.top_confusion_jaccard), str(ar.n_mistakes), _fmt(ar.mean_property_ap)])
        for g, p, c in ar.confusion_rows():
            conf_rows.append([v, g, p, str(c), _fmt(world.taxonomy.wup(world.noun_node(g), world.noun_node(p))),
                              _fmt(awa.property_overlap(matrix[world.noun_index[g]], matrix[world.noun_index[p]]))])
        f = run.encoder(v).encode(test.observations).reshape(len(test), -1)
        feats[v] = f
        purity_rows.append([v, _fmt(purity.neighbor_purity(f, test.categories, mcfg.purity_k)),
                            _fmt(purity.neighbor_purity(f, vis[:, bit], mcfg.purity_k)), world.property_names[bit]])
    rsa_rows = []
    refs = {"observations": test.observations, "properties": vis.astype(np.float64) + 1e-3}
    names = list(feats) + list(refs)
    tables = {**feats, **refs}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            try:
                val = _fmt(rsa.rsa(tables[a], tables[b]))
            except rsa.UndefinedError:
                val = ""
            rsa_rows.append([a, b, val])
    outputs = [
        write_csv(d / "lexical_words.csv", ["variant", "word", "role", "tp", "fp", "fn", "precision", "recall", "f1"],
                  word_rows),
        write_csv(d / "lexical_roles.csv", ["variant", "role", "precision", "recall", "f1", "mean_max_wup"], role_rows),
        write_csv(d / "animals.csv", ["variant", "accuracy", "mistake_wup", "mistake_jaccard", "top_confusion_jaccard",
                                      "n_mistakes", "mean_property_ap"], animal_rows),
        write_csv(d / "confusions.csv", ["variant", "gold", "predicted", "count", "wup", "jaccard"], conf_rows),
        write_csv(d / "purity.csv", ["variant", "category_purity", "property_purity", "property"], purity_rows),
        write_csv(d / "rsa.csv", ["a", "b", "rsa"], rsa_rows),
    ]
    rnd = lexical.random_pair_wup(world.taxonomy, nodes)
    outputs.append(_write_json(d / "taxonomy.json", {"mean_random_pair_wup": rnd, "designated_property": bit}))
    return _finish(run, "analyze", outputs, {}, t0)


def run_all(run: Run, log=None) -> Path:
    """Every stage in order, then the single-run summary report."""
    from .report import report

    t0 = time.time()
    steps = [("world-gen", world_gen), ("pretrain-lm", pretrain_language_model),
             ("pretrain-encoder", pretrain_encoders), ("train-limber", train_limber),
             ("eval-caption", eval_caption), ("eval-vqa", eval_vqa), ("probe", probe_stage), ("analyze", analyze)]
    run.out.mkdir(parents=True, exist_ok=True)
    run.path("config.json").write_text(run.config.to_json(), encoding="utf-8")
    manifests = []
    timings = {}
    for name, fn in steps:
        s = time.time()
        manifests.append(fn(run))
        timings[name] = round(time.time() - s, 1)
        if log:
            log(f"{name} done in {timings[name]}s")
    manifests.append(report([run.out], run.path(STAGE_DIRS["report"]), run.config))
    top = {
        "stage": "run-all",
        "version": __version__,
        "config": run.config.to_dict(),
        "master_seed": run.config.seed,
        "seeds": run.seeds,
        "stage_manifests": sorted(str(Path(m).relative_to(run.out)) for m in manifests),
        "outputs": ["config.json"],
        "timestamps": {"finished": time.strftime("%Y-%m-%dT%H:%M:%S"), "wall_clock_s": round(time.time() - t0, 3),
                       "stages_s": timings},
    }
    return _write_json(run.path("manifest.json"), top)


__all__ = ["Run", "MissingArtifactError", "STAGES", "world_gen", "pretrain_language_model", "pretrain_encoders",
           "train_limber", "eval_caption", "eval_vqa", "probe_stage", "analyze", "run_all"]
