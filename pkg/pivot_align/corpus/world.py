"""Synthetic multilingual world generator.

Concepts have a prototype feature vector and one pseudo-word per language. A scene is a handful of concepts; its
images are the mean of their prototypes plus Gaussian noise, and its captions list the concepts' words in random
order with function words mixed in. Ground truth (word map, concept sets, corrupted captions) is returned
separately and never needed for training.
"""
import logging
import string
from typing import Dict, List, Sequence, Set

import numpy as np

from pivot_align.config import WorldSpec
from pivot_align.corpus.records import CaptionRecord, CaptionTable, GroundTruth, ImageTable, World
from pivot_align.corpus.splits import make_splits
from pivot_align.exceptions import ConfigError

_logger = logging.getLogger(__name__)

LETTERS = string.ascii_lowercase
_MAX_DRAWS = 10000


def language_names(n: int) -> List[str]:
    """Language codes that sort in generation order."""
    return [f'lang{i:02d}' for i in range(n)]


class _WordSmith:
    """Draws globally unique pseudo-words from per-language letter distributions."""

    def __init__(self, rng: np.random.Generator, n_languages: int) -> None:
        self.rng = rng
        self.weights = rng.dirichlet(np.ones(len(LETTERS)), size=n_languages)
        self.used: Set[str] = set()

    def draw(self, language: int, lo: int, hi: int) -> str:
        for _ in range(_MAX_DRAWS):
            length = int(self.rng.integers(lo, hi + 1))
            letters = self.rng.choice(len(LETTERS), size=length, p=self.weights[language])
            word = ''.join(LETTERS[i] for i in letters)
            if word not in self.used:
                self.used.add(word)
                return word
        raise ConfigError(f'Could not draw a fresh word of length {lo}..{hi} for language {language}')


def _check_feasible(spec: WorldSpec) -> None:
    if spec.scene_size[1] > spec.n_concepts:
        raise ConfigError(f'scene_size max {spec.scene_size[1]} exceeds concept count {spec.n_concepts}')
    if spec.topics > spec.n_concepts:
        raise ConfigError(f'{spec.topics} topics for only {spec.n_concepts} concepts')
    if spec.families > spec.n_languages:
        raise ConfigError(f'{spec.families} families for only {spec.n_languages} languages')


def _family_of(spec: WorldSpec) -> List[int]:
    """Family index of every language; held-out languages join families round-robin."""
    chunks = np.array_split(np.arange(spec.n_languages), spec.families)
    family = [0] * (spec.n_languages + spec.held_out)
    for f, members in enumerate(chunks):
        for lang in members:
            family[int(lang)] = f
    for i in range(spec.held_out):
        family[spec.n_languages + i] = i % spec.families
    return family


def _wordforms(spec: WorldSpec, rng: np.random.Generator, smith: _WordSmith, family: List[int]) -> List[List[str]]:
    """forms[lang][concept]: each language either shares an earlier language's form or coins its own."""
    n_total = spec.n_languages + spec.held_out
    p_family = spec.p_cognate if spec.p_cognate_family is None else spec.p_cognate_family
    forms: List[List[str]] = [[] for _ in range(n_total)]
    for concept in range(spec.n_concepts):
        for lang in range(n_total):
            earlier = list(range(lang))
            kin = [e for e in earlier if family[e] == family[lang]]
            u = rng.random()
            if kin and u < p_family:
                forms[lang].append(forms[kin[int(rng.integers(len(kin)))]][concept])
            elif not kin and earlier and u < spec.p_cognate:
                forms[lang].append(forms[earlier[int(rng.integers(len(earlier)))]][concept])
            else:
                forms[lang].append(smith.draw(lang, *spec.word_length))
    return forms


def _scene(spec: WorldSpec, rng: np.random.Generator, topics: Sequence[np.ndarray]) -> List[int]:
    size = int(rng.integers(spec.scene_size[0], spec.scene_size[1] + 1))
    pool = np.arange(spec.n_concepts)
    if len(topics) > 1 and rng.random() < spec.p_topic:
        pool = topics[int(rng.integers(len(topics)))]
    size = min(size, len(pool))
    return sorted(int(c) for c in rng.choice(pool, size=size, replace=False))


def _render(
    spec: WorldSpec, rng: np.random.Generator, concepts: Sequence[int], forms: Sequence[str], function: Sequence[str]
) -> str:
    words: List[str] = []
    for i, concept in enumerate(rng.permutation(list(concepts))):
        if i > 0 and function and rng.random() < spec.p_function_word:
            words.append(function[int(rng.integers(len(function)))])
        words.append(forms[int(concept)])
    if function and spec.mean_length > 0:
        target = int(rng.poisson(spec.mean_length))
        while len(words) < target:
            words.insert(int(rng.integers(len(words) + 1)), function[int(rng.integers(len(function)))])
    return ' '.join(words)


def generate_world(spec: WorldSpec) -> World:
    """Generate captions, images, splits and ground truth for ``spec``, deterministically in ``spec.seed``.

    Caption noise (swapping a caption for another scene's caption in the same language) is applied to training
    captions only, after splitting.

    Raises:
        ConfigError: the world cannot be generated with these settings.
    """
    _check_feasible(spec)
    rng = np.random.default_rng(spec.seed)
    n_total = spec.n_languages + spec.held_out
    languages = language_names(n_total)
    held_out = languages[spec.n_languages :]
    family = _family_of(spec)

    smith = _WordSmith(rng, n_total)
    forms = _wordforms(spec, rng, smith, family)
    function_words = [[smith.draw(lang, 1, 3) for _ in range(spec.n_function_words)] for lang in range(n_total)]
    topics = np.array_split(np.arange(spec.n_concepts), spec.topics)
    prototypes = rng.standard_normal((spec.n_concepts, spec.feat_dim))

    scenes = [_scene(spec, rng, topics) for _ in range(spec.n_pairs)]
    records: List[CaptionRecord] = []
    image_ids: List[str] = []
    features = np.empty((spec.n_pairs * n_total, spec.feat_dim))
    groups: Dict[str, Dict[str, str]] = {}
    image_concepts: Dict[str, List[int]] = {}
    caption_concepts: Dict[str, List[int]] = {}
    texts: Dict[str, Dict[str, str]] = {}
    for g, concepts in enumerate(scenes):
        gid = f'grp-{g:05d}'
        groups[gid] = {}
        mean = prototypes[concepts].mean(axis=0)
        for lang_index, lang in enumerate(languages):
            cid, iid = f'cap-{g:05d}-{lang}', f'img-{g:05d}-{lang}'
            text = _render(spec, rng, concepts, forms[lang_index], function_words[lang_index])
            features[len(image_ids)] = mean + spec.noise_sigma * rng.standard_normal(spec.feat_dim)
            image_ids.append(iid)
            records.append(CaptionRecord(id=cid, lang=lang, text=text, image_id=iid))
            groups[gid][lang] = cid
            image_concepts[iid] = list(concepts)
            caption_concepts[cid] = list(concepts)
            texts.setdefault(lang, {})[gid] = text
    images = ImageTable(image_ids, features.astype(np.float32))
    captions = CaptionTable(records)

    manifest = make_splits(captions, groups, spec.split_ratios, seed=spec.seed, held_out=held_out)

    corrupted: List[str] = []
    if spec.p_noise > 0 and spec.n_pairs > 1:
        group_of = {cid: gid for gid, members in groups.items() for cid in members.values()}
        group_ids = sorted(groups)
        replaced = {}
        for cid in manifest.train:
            if rng.random() >= spec.p_noise:
                continue
            record = captions[cid]
            own = group_of[cid]
            other = own
            while other == own:
                other = group_ids[int(rng.integers(len(group_ids)))]
            replaced[cid] = record.copy(update={'text': texts[record.lang][other]})
            caption_concepts[cid] = list(caption_concepts[groups[other][record.lang]])
            corrupted.append(cid)
        captions = CaptionTable(replaced.get(r.id, r) for r in captions)

    ground_truth = GroundTruth(
        word_map={lang: dict(enumerate(forms[i])) for i, lang in enumerate(languages)},
        function_words={lang: function_words[i] for i, lang in enumerate(languages)},
        families=[[lang for i, lang in enumerate(languages) if family[i] == f] for f in range(spec.families)],
        topics=[[int(c) for c in topic] for topic in topics],
        image_concepts=image_concepts,
        caption_concepts=caption_concepts,
        corrupted=corrupted,
        paraphrase_groups=groups,
    )
    _logger.info(
        f'Generated world: {spec.n_concepts} concepts, {n_total} languages ({len(held_out)} held out), '
        f'{spec.n_pairs} scenes, {len(corrupted)} corrupted training captions'
    )
    return World(captions, images, manifest, ground_truth)
