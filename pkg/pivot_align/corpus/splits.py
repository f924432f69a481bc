import logging
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from pivot_align.corpus.records import CaptionTable, SplitManifest
from pivot_align.exceptions import DataError

_logger = logging.getLogger(__name__)


def split_counts(n_groups: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """Number of groups per split; any split with a positive ratio must receive at least one group."""
    counts = tuple(int(round(r * n_groups)) for r in ratios)
    if sum(counts) > n_groups:
        counts = (n_groups - counts[1] - counts[2], counts[1], counts[2])
    short = [name for name, r, c in zip(('train', 'val', 'test'), ratios, counts) if r > 0 and c < 1]
    if n_groups == 0 or short or min(counts) < 0:
        raise DataError(f'{n_groups} paraphrase groups are too few for ratios {tuple(ratios)} (empty: {short})')
    return counts  # type: ignore[return-value]


def make_splits(
    captions: CaptionTable,
    groups: Mapping[str, Mapping[str, str]],
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    held_out: Sequence[str] = (),
) -> SplitManifest:
    """Partition paraphrase groups into train/val/test and pick the captions each split uses.

    Train keeps exactly one caption per group, in a language drawn at random among the non-held-out ones, so each
    training image has a single language. Validation keeps every non-held-out caption of its groups; test keeps
    every caption, held-out languages included. Held-out captions of training groups go to ``adapt``.

    Args:
        captions: the caption table the groups refer to.
        groups: group id -> {language: caption id}.
        ratios: train/val/test proportions of groups.
        seed: shuffling seed.
        held_out: languages kept out of train and val.

    Raises:
        DataError: too few groups for the ratios, unknown caption ids, or incomplete test groups.
    """
    held = sorted(set(held_out))
    all_languages = sorted({lang for group in groups.values() for lang in group})
    languages = [lang for lang in all_languages if lang not in held]
    dangling = sorted(cid for group in groups.values() for cid in group.values() if cid not in captions)
    if dangling:
        raise DataError(f'Paraphrase groups reference unknown captions: {", ".join(dangling[:10])}', dangling)

    group_ids = sorted(groups)
    n_train, n_val, n_test = split_counts(len(group_ids), ratios)
    rng = np.random.default_rng(seed)
    order = [group_ids[i] for i in rng.permutation(len(group_ids))]
    train_groups = sorted(order[:n_train])
    val_groups = sorted(order[n_train : n_train + n_val])
    test_groups = sorted(order[n_train + n_val : n_train + n_val + n_test])

    train, adapt = [], []
    for gid in train_groups:
        seen = [lang for lang in sorted(groups[gid]) if lang not in held]
        if seen:
            train.append(groups[gid][seen[int(rng.integers(len(seen)))]])
        adapt.extend(groups[gid][lang] for lang in held if lang in groups[gid])

    val, val_entries = [], []
    for gid in val_groups:
        entry = {lang: cid for lang, cid in sorted(groups[gid].items()) if lang not in held}
        val.extend(entry.values())
        val_entries.append(entry)

    test, test_entries = [], []
    incomplete = []
    for gid in test_groups:
        entry: Dict[str, str] = dict(sorted(groups[gid].items()))
        if sorted(entry) != all_languages:
            incomplete.append(gid)
        test.extend(entry.values())
        test_entries.append(entry)
    if incomplete:
        raise DataError(f'Test groups missing languages: {", ".join(incomplete[:10])}', incomplete)

    _logger.info(
        f'Split {len(group_ids)} groups into {n_train}/{n_val}/{n_test}: '
        f'{len(train)} train, {len(val)} val, {len(test)} test, {len(adapt)} adapt captions'
    )
    return SplitManifest(
        languages=languages,
        held_out=held,
        train=train,
        val=val,
        test=test,
        adapt=adapt,
        val_groups=val_entries,
        test_groups=test_entries,
    )
