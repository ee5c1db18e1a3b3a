"""A small synthetic world of animals, their properties, observations and captions.

Categories are the leaves of a taxonomy. Each category carries a binary
property vector that is inherited down the tree with a few random flips, so
taxonomic neighbours tend to look alike. Observations are dense vectors in
which properties are loud and category identity is quiet; captions come from a
tiny role-tagged grammar.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container, seeding
from .taxonomy import Taxonomy

ROOT = "entity"
PREFIX = "a picture of"
COUNT_WORDS = ("one", "two", "three")
QUESTION_FAMILIES = ("identity", "yesno", "choice", "relation", "count")
FUNCTION_WORDS = (
    "a", "picture", "of", "q:", "a:", "?", "what", "animal", "is", "this", "it",
    "or", "doing", "how", "many", "are", "there", "yes", "no",
)


class ConfigError(ValueError):
    pass


# (property name, caption word, role). The first sixteen are the toy set.
PROPERTY_CATALOG: tuple[tuple[str, str, str], ...] = (
    ("furry", "furry", "modifier"),
    ("swims", "swimming", "relation"),
    ("stripes", "striped", "modifier"),
    ("spots", "spotted", "modifier"),
    ("flys", "flying", "relation"),
    ("big", "big", "modifier"),
    ("small", "small", "modifier"),
    ("hunter", "hunting", "relation"),
    ("black", "black", "modifier"),
    ("white", "white", "modifier"),
    ("grazer", "grazing", "relation"),
    ("brown", "brown", "modifier"),
    ("fierce", "fierce", "modifier"),
    ("tree", "climbing", "relation"),
    ("lean", "lean", "modifier"),
    ("hops", "hopping", "relation"),
    ("blue", "blue", "modifier"),
    ("gray", "gray", "modifier"),
    ("orange", "orange", "modifier"),
    ("red", "red", "modifier"),
    ("yellow", "yellow", "modifier"),
    ("patches", "patchy", "modifier"),
    ("hairless", "hairless", "modifier"),
    ("toughskin", "thickskinned", "modifier"),
    ("bulbous", "plump", "modifier"),
    ("flippers", "flippered", "modifier"),
    ("hands", "handed", "modifier"),
    ("hooves", "hoofed", "modifier"),
    ("pads", "padded", "modifier"),
    ("paws", "pawed", "modifier"),
    ("longleg", "leggy", "modifier"),
    ("longneck", "longnecked", "modifier"),
    ("tail", "tailed", "modifier"),
    ("chewteeth", "toothy", "modifier"),
    ("meatteeth", "fanged", "modifier"),
    ("buckteeth", "bucktoothed", "modifier"),
    ("strainteeth", "baleened", "modifier"),
    ("horns", "horned", "modifier"),
    ("claws", "clawed", "modifier"),
    ("tusks", "tusked", "modifier"),
    ("smelly", "smelly", "modifier"),
    ("fast", "fast", "modifier"),
    ("slow", "slow", "modifier"),
    ("strong", "strong", "modifier"),
    ("weak", "weak", "modifier"),
    ("muscle", "muscular", "modifier"),
    ("bipedal", "bipedal", "modifier"),
    ("quadrapedal", "fourlegged", "modifier"),
    ("active", "active", "modifier"),
    ("inactive", "sluggish", "modifier"),
    ("nocturnal", "nocturnal", "modifier"),
    ("agility", "agile", "modifier"),
    ("timid", "timid", "modifier"),
    ("smart", "smart", "modifier"),
    ("solitary", "solitary", "modifier"),
    ("domestic", "domestic", "modifier"),
    ("tunnels", "digging", "relation"),
    ("walks", "walking", "relation"),
    ("hibernate", "hibernating", "relation"),
    ("fish", "fishing", "relation"),
    ("meat", "feeding", "relation"),
    ("plankton", "filtering", "relation"),
    ("vegetation", "browsing", "relation"),
    ("insects", "snapping", "relation"),
    ("forager", "foraging", "relation"),
    ("scavenger", "scavenging", "relation"),
    ("skimmer", "skimming", "relation"),
    ("stalker", "stalking", "relation"),
    ("newworld", "roaming", "relation"),
    ("oldworld", "wandering", "relation"),
    ("arctic", "sliding", "relation"),
    ("coastal", "wading", "relation"),
    ("desert", "basking", "relation"),
    ("bush", "hiding", "relation"),
    ("plains", "galloping", "relation"),
    ("forest", "lurking", "relation"),
    ("fields", "frolicking", "relation"),
    ("jungle", "swinging", "relation"),
    ("mountains", "scrambling", "relation"),
    ("ocean", "diving", "relation"),
    ("ground", "resting", "relation"),
    ("water", "splashing", "relation"),
    ("cave", "sheltering", "relation"),
    ("group", "herding", "relation"),
    ("nestspot", "nesting", "relation"),
)

ANIMAL_NOUNS = (
    "antelope", "bear", "orca", "beaver", "dalmatian", "cat", "horse", "shepherd",
    "whale", "skunk", "mole", "tiger", "hippo", "leopard", "moose", "monkey",
    "elephant", "gorilla", "ox", "fox", "sheep", "seal", "chimpanzee", "hamster",
    "squirrel", "rhino", "rabbit", "bat", "giraffe", "wolf", "chihuahua", "rat",
    "weasel", "otter", "buffalo", "zebra", "panda", "deer", "bobcat", "pig",
    "lion", "mouse", "collie", "walrus", "raccoon", "cow", "dolphin", "camel",
    "goat", "koala", "lynx", "badger", "hedgehog", "llama", "kangaroo", "jaguar",
    "cheetah", "donkey", "hyena", "porcupine", "meerkat", "lemur", "tapir", "bison",
)


@dataclass
class WorldConfig:
    n_categories: int = 50
    n_properties: int = 16
    taxonomy_depth: int = 4
    # probability that a property bit flips along an edge, per tree level below
    # the top-level classes (whose bits are drawn fresh)
    flip_rates: tuple[float, ...] = (0.15, 0.02)
    grid: int = 3
    d_patch: int = 8
    identity_ratio: float = 0.25
    salience: float = 0.5
    # chance that an active property is visible in a given scene
    visibility: float = 0.7
    count_scale: float = 1.0
    pose_scale: float = 0.5
    brightness: tuple[float, float] = (0.8, 1.2)
    noise: float = 0.5
    salient_modifier_prob: float = 0.8
    template_probs: tuple[float, float, float] = (0.6, 0.2, 0.2)
    n_references: int = 5

    def __post_init__(self):
        if self.n_categories < 2:
            raise ConfigError("a world needs at least two categories")
        if self.taxonomy_depth < 2:
            raise ConfigError("taxonomy depth must be at least 2 (root plus leaves)")
        if not 2 <= self.n_properties <= len(PROPERTY_CATALOG):
            raise ConfigError(f"n_properties must be in [2, {len(PROPERTY_CATALOG)}]")
        if self.grid < 1 or self.d_patch < 1:
            raise ConfigError("observation grid must be non-empty")
        if not 0.0 < self.visibility <= 1.0:
            raise ConfigError("visibility must be in (0, 1]")
        if self.noise < 0 or self.identity_ratio < 0:
            raise ConfigError("noise and identity ratio must be non-negative")
        if abs(sum(self.template_probs) - 1.0) > 1e-9:
            raise ConfigError("template probabilities must sum to 1")
        self.flip_rates = tuple(float(f) for f in self.flip_rates)
        self.brightness = tuple(float(b) for b in self.brightness)
        self.template_probs = tuple(float(p) for p in self.template_probs)

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def d_obs(self) -> int:
        return self.n_patches * self.d_patch


@dataclass
class CategorySpec:
    id: int
    node: str
    noun: str
    properties: np.ndarray  # {0,1}^B, int8


@dataclass
class Scene:
    category: int
    instance_seed: int
    count: int = 1
    salient: int = 0
    pose: tuple[float, float] = (0.0, 0.0)
    brightness: float = 1.0
    # property bits actually shown in this scene (active and visible)
    visible: tuple[int, ...] = ()


@dataclass
class CaptionExample:
    scene: Scene
    caption: str
    roles: dict[str, str]


@dataclass
class World:
    seed: int
    config: WorldConfig
    taxonomy: Taxonomy
    categories: list[CategorySpec]
    property_names: list[str]
    property_words: list[str]
    property_roles: list[str]
    property_dirs: np.ndarray
    identity_dirs: np.ndarray
    count_dir: np.ndarray
    pose_dirs: np.ndarray
    noun_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.noun_index = {c.noun: c.id for c in self.categories}

    @property
    def property_matrix(self) -> np.ndarray:
        return np.stack([c.properties for c in self.categories]).astype(np.int8)

    def modifiers(self, category: int) -> list[int]:
        props = self.categories[category].properties
        return [b for b, r in enumerate(self.property_roles) if r == "modifier" and props[b]]

    def relations(self, category: int) -> list[int]:
        props = self.categories[category].properties
        return [b for b, r in enumerate(self.property_roles) if r == "relation" and props[b]]

    def modifier_ids(self) -> list[int]:
        return [b for b, r in enumerate(self.property_roles) if r == "modifier"]

    def relation_ids(self) -> list[int]:
        return [b for b, r in enumerate(self.property_roles) if r == "relation"]

    def vocabulary_words(self) -> list[str]:
        words = list(FUNCTION_WORDS) + list(COUNT_WORDS)
        words += [c.noun for c in self.categories]
        words += list(self.property_words)
        return words

    def word_roles(self) -> dict[str, str]:
        roles = {w: "modifier" for w in COUNT_WORDS}
        roles.update({c.noun: "noun" for c in self.categories})
        roles.update(dict(zip(self.property_words, self.property_roles)))
        return roles

    def noun_node(self, noun: str) -> str:
        return self.categories[self.noun_index[noun]].node

    def property_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category"] + self.property_names)
        for c in self.categories:
            w.writerow([c.noun] + [int(v) for v in c.properties])
        return buf.getvalue()

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.taxonomy.save(out / "taxonomy.tsv")
        (out / "properties.csv").write_text(self.property_csv(), encoding="utf-8")
        meta = {"seed": self.seed, "config": asdict(self.config)}
        (out / "world.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def load_world(out_dir) -> World:
    """Rebuild a saved world from its seed and config, then check that the
    taxonomy and property files on disk match what the rebuild produces."""
    out = Path(out_dir)
    meta = json.loads((out / "world.json").read_text(encoding="utf-8"))
    cfg = dict(meta["config"])
    for key in ("flip_rates", "brightness", "template_probs"):
        cfg[key] = tuple(cfg[key])
    world = build_world(int(meta["seed"]), config=WorldConfig(**cfg))
    if (out / "properties.csv").read_text(encoding="utf-8") != world.property_csv():
        raise container.IntegrityError(f"properties.csv in {out} does not match the world's seed")
    if Taxonomy.load(out / "taxonomy.tsv").parent != world.taxonomy.parent:
        raise container.IntegrityError(f"taxonomy.tsv in {out} does not match the world's seed")
    return world


def _level_sizes(n_leaves: int, depth: int) -> list[int]:
    """Node counts for tree levels 2..depth (leaves last), roughly geometric."""
    sizes = []
    for level in range(2, depth):
        frac = (level - 1) / (depth - 1)
        sizes.append(max(1, round(n_leaves ** frac)))
    sizes.append(n_leaves)
    for i in range(1, len(sizes)):
        sizes[i] = max(sizes[i], sizes[i - 1])
    return sizes


def build_world(seed: int, n_categories: int = 50, n_properties: int = 16, taxonomy_depth: int = 4,
                config: WorldConfig | None = None) -> World:
    """Sample a taxonomy, per-category property vectors and rendering directions."""
    if config is None:
        config = WorldConfig(n_categories=n_categories, n_properties=n_properties, taxonomy_depth=taxonomy_depth)
    cfg = config
    rng = seeding.rng(seed, "world")
    B = cfg.n_properties

    # tree shape: each level's nodes are dealt round-robin to the level above
    sizes = _level_sizes(cfg.n_categories, cfg.taxonomy_depth)
    parent: dict[str, str | None] = {ROOT: None}
    levels: list[list[str]] = [[ROOT]]
    for li, size in enumerate(sizes[:-1]):
        names = [f"group{li + 1}_{j}" for j in range(size)]
        above = levels[-1]
        for j, name in enumerate(names):
            parent[name] = above[j % len(above)]
        levels.append(names)
    if len(ANIMAL_NOUNS) >= cfg.n_categories:
        nouns = [str(n) for n in rng.permutation(ANIMAL_NOUNS)[: cfg.n_categories]]
    else:
        nouns = list(ANIMAL_NOUNS) + [f"critter{i}" for i in range(cfg.n_categories - len(ANIMAL_NOUNS))]
        nouns = [str(n) for n in rng.permutation(nouns)]
    above = levels[-1]
    for j, noun in enumerate(nouns):
        parent[noun] = above[j % len(above)]
    taxonomy = Taxonomy(parent, root=ROOT)

    # properties flow down the tree with per-edge flips
    catalog = PROPERTY_CATALOG[:B]
    roles = [r for _, _, r in catalog]
    bits: dict[str, np.ndarray] = {}
    for depth_idx, nodes in enumerate(levels[1:] + [nouns]):
        flip = 0.5 if depth_idx == 0 else cfg.flip_rates[min(depth_idx - 1, len(cfg.flip_rates) - 1)] if cfg.flip_rates else 0.0
        for node in nodes:
            if depth_idx == 0:
                bits[node] = (rng.random(B) < 0.5).astype(np.int8)
            else:
                base = bits[parent[node]]
                flips = (rng.random(B) < flip).astype(np.int8)
                bits[node] = base ^ flips
    categories = []
    mods = [b for b in range(B) if roles[b] == "modifier"]
    rels = [b for b in range(B) if roles[b] == "relation"]
    for cid, noun in enumerate(nouns):
        props = bits[noun].copy()
        # every category needs something to say in each caption slot
        if mods and not props[mods].any():
            props[mods[int(rng.integers(len(mods)))]] = 1
        if rels and not props[rels].any():
            props[rels[int(rng.integers(len(rels)))]] = 1
        categories.append(CategorySpec(cid, noun, noun, props))

    d = cfg.d_obs
    property_dirs = rng.normal(0.0, 1.0, size=(B, d))
    identity_dirs = rng.normal(0.0, cfg.identity_ratio, size=(cfg.n_categories, d))
    count_dir = rng.normal(0.0, 1.0, size=d)
    pose_dirs = rng.normal(0.0, 1.0, size=(2, d))
    return World(
        seed=seed,
        config=cfg,
        taxonomy=taxonomy,
        categories=categories,
        property_names=[n for n, _, _ in catalog],
        property_words=[w for _, w, _ in catalog],
        property_roles=roles,
        property_dirs=property_dirs,
        identity_dirs=identity_dirs,
        count_dir=count_dir,
        pose_dirs=pose_dirs,
    )


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.sum((a > 0) | (b > 0)))
    if union == 0:
        return 0.0
    return int(np.sum((a > 0) & (b > 0))) / union


def sample_scene(world: World, category: int, instance_seed: int) -> Scene:
    rng = seeding.rng(world.seed, "scene", instance_seed)
    cfg = world.config
    mods = world.modifiers(category)
    rels = world.relations(category)
    lo, hi = cfg.brightness
    count = int(rng.integers(1, 4))
    salient = int(mods[int(rng.integers(len(mods)))])
    pose = tuple(float(v) for v in rng.normal(0.0, 1.0, size=2))
    brightness = float(rng.uniform(lo, hi))
    props = world.categories[category].properties
    shown = (props > 0) & (rng.random(len(props)) < cfg.visibility)
    shown[salient] = True
    if rels and not shown[rels].any():
        shown[rels[0]] = True
    return Scene(int(category), int(instance_seed), count, salient, pose, brightness,
                 tuple(int(v) for v in shown))


def visible_bits(world: World, scene: Scene) -> np.ndarray:
    if scene.visible:
        return np.asarray(scene.visible, dtype=np.int8)
    return world.categories[scene.category].properties.copy()


def render(world: World, scene: Scene, noise: float | None = None, nuisance: bool = True) -> np.ndarray:
    """Observation vector of length ``d_obs`` for one scene.

    ``noise`` overrides the world's noise level; ``nuisance=False`` removes
    pose and brightness variation.
    """
    cfg = world.config
    weights = visible_bits(world, scene).astype(np.float64)
    if weights[scene.salient]:
        weights[scene.salient] *= 1.0 + cfg.salience
    signal = weights @ world.property_dirs + world.identity_dirs[scene.category]
    signal = signal + cfg.count_scale * (scene.count - 2) * world.count_dir
    if nuisance:
        signal = scene.brightness * signal + cfg.pose_scale * (np.asarray(scene.pose) @ world.pose_dirs)
    sigma = cfg.noise if noise is None else noise
    if sigma > 0:
        rng = seeding.rng(world.seed, "render", scene.instance_seed)
        signal = signal + sigma * rng.normal(0.0, 1.0, size=signal.shape)
    return signal.astype(np.float32)


def patch_grid(obs: np.ndarray, world: World) -> np.ndarray:
    """View ``[..., d_obs]`` observations as ``[..., n_patches, d_patch]``."""
    cfg = world.config
    return obs.reshape(*obs.shape[:-1], cfg.n_patches, cfg.d_patch)


TEMPLATES = (("count", "mod", "noun", "rel"), ("count", "noun", "rel"), ("count", "mod", "noun"))


def _caption_rng(world: World, scene: Scene, grammar_seed: int) -> np.random.Generator:
    return seeding.rng(world.seed, "caption", scene.instance_seed, grammar_seed)


def generate_caption(world: World, scene: Scene, grammar_seed: int) -> CaptionExample:
    rng = _caption_rng(world, scene, grammar_seed)
    cfg = world.config
    template = TEMPLATES[int(rng.choice(len(TEMPLATES), p=cfg.template_probs))]
    shown = visible_bits(world, scene)
    mods = [m for m in world.modifiers(scene.category) if shown[m]]
    rels = [r for r in world.relations(scene.category) if shown[r]]
    others = [m for m in mods if m != scene.salient]
    if not others or rng.random() < cfg.salient_modifier_prob:
        mod = scene.salient
    else:
        mod = others[int(rng.integers(len(others)))]
    rel = rels[int(rng.integers(len(rels)))]
    words = PREFIX.split()
    roles: dict[str, str] = {}
    for slot in template:
        if slot == "count":
            w, role = COUNT_WORDS[scene.count - 1], "modifier"
        elif slot == "mod":
            w, role = world.property_words[mod], "modifier"
        elif slot == "noun":
            w, role = world.categories[scene.category].noun, "noun"
        else:
            w, role = world.property_words[rel], "relation"
        words.append(w)
        roles[w] = role
    return CaptionExample(scene, " ".join(words), roles)


def _modifier_marginal(mods: list[int], p_sal: float, vis: float) -> dict[int, float]:
    """P(caption modifier) for one category, marginal over salient choice and visibility."""
    n = len(mods)
    out = {m: 0.0 for m in mods}
    m_other = n - 1
    for sal in mods:
        if m_other == 0:
            out[sal] += 1.0 / n
            continue
        p_none = (1 - vis) ** m_other
        out[sal] += (p_sal + (1 - p_sal) * p_none) / n
        # each other modifier: visible and then picked uniformly among visible others
        each = (1 - p_sal) * (1 - p_none) / m_other
        for m in mods:
            if m != sal:
                out[m] += each / n
    return out


def _relation_marginal(rels: list[int], vis: float) -> dict[int, float]:
    n = len(rels)
    p_none = (1 - vis) ** n
    out = {r: (1 - p_none) / n for r in rels}
    out[rels[0]] += p_none
    return out


def caption_distribution(world: World) -> dict[str, float]:
    """Exact probability of every caption string under the generative process."""
    cfg = world.config
    probs: dict[str, float] = defaultdict(float)
    C = len(world.categories)
    words = world.property_words
    for cat in range(C):
        noun = world.categories[cat].noun
        mod_p = _modifier_marginal(world.modifiers(cat), cfg.salient_modifier_prob, cfg.visibility)
        rel_p = _relation_marginal(world.relations(cat), cfg.visibility)
        for count in (1, 2, 3):
            base = 1.0 / C / 3
            cw = COUNT_WORDS[count - 1]
            for t, pt in zip(TEMPLATES, cfg.template_probs):
                if pt == 0:
                    continue
                mod_opts = mod_p.items() if "mod" in t else [(None, 1.0)]
                rel_opts = rel_p.items() if "rel" in t else [(None, 1.0)]
                for m, pm in mod_opts:
                    for r, pr in rel_opts:
                        slots = {"count": cw, "noun": noun,
                                 "mod": words[m] if m is not None else "", "rel": words[r] if r is not None else ""}
                        text = " ".join([PREFIX] + [slots[x] for x in t])
                        probs[text] += base * pt * pm * pr
    return dict(probs)


def caption_entropy_floor(world: World) -> float:
    """Per-token perplexity floor of single-caption documents.

    Documents are ``<bos> caption <eos>`` and every caption token plus the EOS
    is predicted, so the floor is ``exp(H / E[len + 1])``.
    """
    dist = caption_distribution(world)
    h = -sum(p * math.log(p) for p in dist.values() if p > 0)
    mean_len = sum(p * (len(c.split()) + 1) for c, p in dist.items())
    return math.exp(h / mean_len)


@dataclass
class Dataset:
    """One split of scenes with observations and captions."""

    scene_ids: np.ndarray
    scenes: list[Scene]
    observations: np.ndarray
    captions: list[str]
    roles: list[dict[str, str]]
    references: list[list[str]]

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def categories(self) -> np.ndarray:
        return np.array([s.category for s in self.scenes], dtype=np.int64)

    def subset(self, idx) -> "Dataset":
        idx = list(np.asarray(idx, dtype=np.int64))
        return Dataset(
            self.scene_ids[idx],
            [self.scenes[i] for i in idx],
            self.observations[idx],
            [self.captions[i] for i in idx],
            [self.roles[i] for i in idx],
            [self.references[i] for i in idx],
        )

    def to_jsonl(self, world: World, obs_file: str | None = None) -> str:
        """One JSON object per row. With ``obs_file`` the observations are not
        inlined; each row points at its row of an ``observations`` tensor in
        that LIMB container instead (see :meth:`save`)."""
        lines = []
        for i, s in enumerate(self.scenes):
            rec = {
                "scene_id": int(self.scene_ids[i]),
                "category": world.categories[s.category].noun,
                "caption": self.captions[i],
                "roles": self.roles[i],
                "references": self.references[i],
                "instance_seed": s.instance_seed,
                "count": s.count,
                "salient": s.salient,
                "pose": list(s.pose),
                "brightness": s.brightness,
                "visible": list(s.visible),
            }
            if obs_file is None:
                rec["observation"] = [float(v) for v in self.observations[i]]
            else:
                rec["obs_file"], rec["row"] = obs_file, i
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, world: World, base_dir=None) -> "Dataset":
        ids, scenes, obs, caps, roles, refs = [], [], [], [], [], []
        tables: dict[str, np.ndarray] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            r = json.loads(line)
            ids.append(r["scene_id"])
            scenes.append(Scene(world.noun_index[r["category"]], r["instance_seed"], r["count"], r["salient"],
                                tuple(r["pose"]), r["brightness"], tuple(r.get("visible", ()))))
            if "observation" in r:
                obs.append(r["observation"])
            else:
                name = r["obs_file"]
                if name not in tables:
                    tables[name] = container.load(Path(base_dir or ".") / name)["observations"]
                table = tables[name]
                if not 0 <= r["row"] < len(table):
                    raise container.IntegrityError(f"row {r['row']} outside {name}")
                obs.append(table[r["row"]])
            caps.append(r["caption"])
            roles.append(r["roles"])
            refs.append(r.get("references", [r["caption"]]))
        d = world.config.d_obs
        arr = np.asarray(obs, dtype=np.float32).reshape(len(obs), d)
        return cls(np.asarray(ids, dtype=np.int64), scenes, arr, caps, roles, refs)

    def save(self, world: World, out_dir, name: str) -> list[Path]:
        """Write ``{name}.jsonl`` plus ``{name}.obs.limb``; returns both paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        obs_name = f"{name}.obs.limb"
        container.save(out / obs_name, {"observations": self.observations.astype(np.float32)})
        (out / f"{name}.jsonl").write_text(self.to_jsonl(world, obs_name), encoding="utf-8")
        return [out / f"{name}.jsonl", out / obs_name]

    @classmethod
    def load(cls, world: World, out_dir, name: str) -> "Dataset":
        out = Path(out_dir)
        return cls.from_jsonl((out / f"{name}.jsonl").read_text(encoding="utf-8"), world, out)


def make_split(world: World, categories: np.ndarray, scene_ids: np.ndarray, seed: int, n_refs: int) -> Dataset:
    scenes, obs, caps, roles, refs = [], [], [], [], []
    for cat, sid in zip(categories, scene_ids):
        inst = seeding.derive_seed(seed, "scene", int(sid))
        scene = sample_scene(world, int(cat), inst)
        scenes.append(scene)
        obs.append(render(world, scene))
        examples = [generate_caption(world, scene, g) for g in range(n_refs)]
        caps.append(examples[0].caption)
        roles.append(examples[0].roles)
        refs.append([e.caption for e in examples])
    d = world.config.d_obs
    arr = np.asarray(obs, dtype=np.float32).reshape(len(obs), d)
    return Dataset(np.asarray(scene_ids, dtype=np.int64), scenes, arr, caps, roles, refs)


def make_dataset(world: World, n_train: int = 50000, n_val: int = 2000, n_test: int = 2000,
                 seed: int = 0) -> dict[str, Dataset]:
    """Train/val/test splits with disjoint scenes and every category in each split.

    Train rows carry one caption; val and test rows carry ``n_references``.
    """
    C = len(world.categories)
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    for name, n in sizes.items():
        if n < C:
            raise ConfigError(f"{name} split of {n} cannot cover {C} categories")
    rng = seeding.rng(seed, "dataset", world.seed)
    out = {}
    offset = 0
    for name, n in sizes.items():
        cats = rng.permutation(np.arange(n) % C)
        ids = np.arange(offset, offset + n)
        offset += n
        refs = 1 if name == "train" else world.config.n_references
        out[name] = make_split(world, cats, ids, seed, refs)
    seeds = [s.instance_seed for d in out.values() for s in d.scenes]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("scene seed collision")
    return out


# question answering over scenes -------------------------------------------------

@dataclass
class Question:
    family: str
    text: str
    answers: list[str]  # ten annotator answers


def make_question(world: World, scene: Scene, family: str, rng: np.random.Generator) -> Question:
    cat = scene.category
    mods, rels = world.modifiers(cat), world.relations(cat)
    all_mods = world.modifier_ids()
    inactive = [m for m in all_mods if m not in mods]
    words = world.property_words
    if family == "choice" and not inactive:
        family = "yesno"
    if family == "identity":
        return Question(family, "what animal is this ?", [world.categories[cat].noun] * 10)
    if family == "yesno":
        if inactive and rng.random() < 0.5:
            m, ans = inactive[int(rng.integers(len(inactive)))], "no"
        else:
            m, ans = mods[int(rng.integers(len(mods)))], "yes"
        return Question(family, f"is it {words[m]} ?", [ans] * 10)
    if family == "choice":
        yes = mods[int(rng.integers(len(mods)))]
        no = inactive[int(rng.integers(len(inactive)))]
        pair = (yes, no) if rng.random() < 0.5 else (no, yes)
        return Question(family, f"is it {words[pair[0]]} or {words[pair[1]]} ?", [words[yes]] * 10)
    if family == "relation":
        answers = [words[rels[int(i)]] for i in rng.integers(len(rels), size=10)]
        return Question(family, "what is it doing ?", answers)
    if family == "count":
        return Question(family, "how many are there ?", [COUNT_WORDS[scene.count - 1]] * 10)
    raise ValueError(f"unknown question family {family!r}")


def qa_block(question: Question, answer: str) -> str:
    return f"q: {question.text} a: {answer}"


def lm_corpus(world: World, n_docs: int, seed: int, mix: tuple[float, float, float] = (0.4, 0.25, 0.35),
              max_blocks: int = 5, caption_free_rate: float = 0.2, repeat_rate: float = 0.9) -> list[str]:
    """Text-only pretraining documents.

    Three kinds, mixed by ``mix``: single captions; groups of two or three
    captions of one scene (most of the later ones repeat an earlier caption
    verbatim, which is how the LM learns to copy a prompt); and question-answer
    documents of up to ``max_blocks`` blocks, each block a caption followed by
    a question and answer. A fraction of QA blocks
    omit the caption, which is what a blind model sees.
    """
    rng = seeding.rng(seed, "lm-corpus", world.seed)
    C = len(world.categories)
    docs = []
    kinds = rng.choice(3, size=n_docs, p=list(mix))
    next_scene = 0

    def fresh_scene():
        nonlocal next_scene
        next_scene += 1
        inst = seeding.derive_seed(seed, "lm-scene", next_scene)
        return sample_scene(world, int(rng.integers(C)), inst)

    for kind in kinds:
        if kind == 0:
            docs.append(generate_caption(world, fresh_scene(), int(rng.integers(1 << 30))).caption)
        elif kind == 1:
            scene = fresh_scene()
            caps = [generate_caption(world, scene, int(rng.integers(1 << 30))).caption]
            for _ in range(int(rng.integers(1, 3))):
                if rng.random() < repeat_rate:
                    caps.append(caps[int(rng.integers(len(caps)))])
                else:
                    caps.append(generate_caption(world, scene, int(rng.integers(1 << 30))).caption)
            docs.append(" ".join(caps))
        else:
            blocks = []
            blind = rng.random() < caption_free_rate
            for _ in range(int(rng.integers(1, max_blocks + 1))):
                scene = fresh_scene()
                fam = QUESTION_FAMILIES[int(rng.integers(len(QUESTION_FAMILIES)))]
                q = make_question(world, scene, fam, rng)
                answer = q.answers[int(rng.integers(len(q.answers)))]
                if blind:
                    blocks.append(qa_block(q, answer))
                else:
                    cap = generate_caption(world, scene, int(rng.integers(1 << 30))).caption
                    blocks.append(f"{cap} {qa_block(q, answer)}")
            docs.append(" ".join(blocks))
    return docs
