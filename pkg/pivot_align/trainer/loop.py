"""The optimisation loop: batches, the combined objective, Adam, validation and best-checkpoint selection.

Batches for the next step are built on a worker thread while the current step runs. Only the calling thread
touches parameters, and validation runs between steps.
"""
import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from pivot_align.config import LossConfig, RunConfig
from pivot_align.corpus.records import CaptionTable, ImageTable
from pivot_align.diffcore import Tape, Tensor, adam_step, as_tensor, backward, clip_grad_norm, ops, set_precision
from pivot_align.evaluation.retrieval import sentence_retrieval_eval
from pivot_align.exceptions import DataError, NumericError, TrainingDiverged
from pivot_align.losses import cross_alpha, loss_cloze, loss_t, loss_x, supervised_alpha, total_loss, transitive_alpha
from pivot_align.model.checkpoint import save_checkpoint
from pivot_align.model.dual import DualEncoder
from pivot_align.model.similarity import similarity_matrix, similarity_scores
from pivot_align.trainer.batch import Augmenter, Batch, build_batch
from pivot_align.trainer.objective import LossTerms, compute_losses
from pivot_align.trainer.run_dir import RunDirectory

_logger = logging.getLogger(__name__)

CaptionPair = Tuple[str, str]


class TrainingData(NamedTuple):
    """Tokenized training captions with their image features, plus the validation split for model selection."""

    train: CaptionTable
    images: ImageTable
    val: CaptionTable
    val_groups: List[Dict[str, str]]


class TrainResult(NamedTuple):
    """The selected model and how it was selected."""

    model: DualEncoder
    best_epoch: int
    best_score: float
    best_checkpoint: Optional[Path]
    metrics: List[Dict[str, float]]


def effective_loss_config(config: RunConfig) -> LossConfig:
    """The loss switches actually used: text-only training keeps the cloze loss alone."""
    if config.train.text_only:
        return config.loss.copy(update={'use_lt': False, 'use_lv': False, 'use_lx': False, 'use_lc': True})
    return config.loss


def supervised_alpha_mode(batch_ids: Sequence[str], pairs: Iterable[CaptionPair]) -> np.ndarray:
    """0/1 α for a batch from ground-truth caption pairs.

    Raises:
        DataError: a pair names a caption that is not in the batch.
    """
    index = {caption_id: i for i, caption_id in enumerate(batch_ids)}
    pairs = list(pairs)
    outside = sorted({c for pair in pairs for c in pair if c not in index})
    if outside:
        raise DataError(f'Pairing refers to {len(outside)} caption(s) outside the batch', offenders=outside)
    return supervised_alpha(len(batch_ids), [(index[a], index[b]) for a, b in pairs])


def _partner_lookup(pairs: Iterable[CaptionPair]) -> Dict[str, Set[str]]:
    partners: Dict[str, Set[str]] = defaultdict(set)
    for a, b in pairs:
        if a != b:
            partners[a].add(b)
            partners[b].add(a)
    return partners


def batch_order(
    ids: Sequence[str],
    batch_size: int,
    rng: np.random.Generator,
    partners: Optional[Dict[str, Set[str]]] = None,
    min_size: int = 2,
) -> List[List[str]]:
    """Shuffle ids into batches; with ``partners`` each caption is followed by one unused partner when possible.

    A trailing batch smaller than ``min_size`` is folded into the previous one.
    """
    order = [ids[i] for i in rng.permutation(len(ids))]
    if partners:
        used: Set[str] = set()
        arranged = []
        for caption_id in order:
            if caption_id in used:
                continue
            used.add(caption_id)
            arranged.append(caption_id)
            mate = next((p for p in sorted(partners.get(caption_id, ())) if p not in used), None)
            if mate is not None:
                used.add(mate)
                arranged.append(mate)
        order = arranged
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        batches[-2].extend(batches.pop())
    return batches


def _batch_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


class Trainer:
    """Runs epochs over the training captions and keeps the validation-best parameters."""

    def __init__(
        self,
        config: RunConfig,
        model: DualEncoder,
        data: TrainingData,
        run_dir: Optional[RunDirectory] = None,
        supervised_pairs: Optional[Iterable[CaptionPair]] = None,
    ) -> None:
        self.config = config
        self.model = model
        self.data = data
        self.run_dir = run_dir
        self.loss = effective_loss_config(config)
        self.augmenter = Augmenter(config.train.aug_sigma, config.train.aug_dropout)
        self.partners = _partner_lookup(supervised_pairs) if supervised_pairs is not None else None
        missing = [r.id for r in data.train if r.tokens is None]
        if missing:
            raise DataError(f'{len(missing)} training caption(s) are not tokenized', offenders=missing)
        if self.loss.needs_negatives and len(data.train) < 2:
            raise DataError(f'Contrastive training needs at least 2 captions, got {len(data.train)}')
        if not self.loss.any_enabled:
            _logger.warning('Every loss term is switched off; parameters will not change')

    def make_batch(self, ids: Sequence[str], seed: int) -> Batch:
        """Build the batch for ``ids`` (runs on the prefetch thread)."""
        records = [self.data.train[i] for i in ids]
        return build_batch(
            records,
            self.data.images,
            self.augmenter,
            seed,
            self.model.config.vocab_size,
            self.model.config.max_len,
            self.config.train.mask_prob,
            self.loss.needs_negatives,
        )

    def _supervised(self, batch: Batch) -> Optional[np.ndarray]:
        if self.partners is None:
            return None
        members = set(batch.record_ids)
        inside = [(a, b) for a in batch.record_ids for b in self.partners.get(a, ()) if b in members and a < b]
        return supervised_alpha_mode(batch.record_ids, inside)

    def step(self, batch: Batch) -> LossTerms:
        """One Adam update on ``batch``.

        Raises:
            TrainingDiverged: the loss or the gradient norm is not finite.
        """
        store = self.model.store
        store.zero_grad()
        try:
            with Tape():
                terms = compute_losses(self.model, batch, self.loss, self._supervised(batch))
                if not terms.total.is_leaf:
                    backward(terms.total)
        except NumericError as e:
            raise TrainingDiverged(e.message, batch.record_ids)
        if terms.total.is_leaf:
            return terms
        train = self.config.train
        norm = clip_grad_norm(store, train.clip_norm)
        if not np.isfinite(norm):
            raise TrainingDiverged(f'Gradient norm is {norm}', batch.record_ids)
        adam_step(store, train.lr, train.beta1, train.beta2, train.eps)
        _logger.debug(f'step {store.t}: loss {terms.total.item():.6f} {terms.components} grad norm {norm:.4f}')
        return terms

    def validate(self) -> float:
        """Vision-free sentence retrieval on the validation paraphrase groups."""
        report = sentence_retrieval_eval(
            self.model,
            self.data.val,
            self.data.val_groups,
            self.config.train.val_queries,
            seed=self.config.train.seed,
            threads=self.config.threads,
        )
        return report.metrics['accuracy']

    def run_epoch(self, epoch: int) -> Dict[str, float]:
        """Train over one shuffled pass of the training captions; returns mean losses."""
        train = self.config.train
        rng = np.random.default_rng([train.seed, epoch])
        min_size = 2 if self.loss.needs_negatives else 1
        order = batch_order(self.data.train.ids(), train.batch_size, rng, self.partners, min_size)
        sums: Dict[str, float] = defaultdict(float)

        def build(index: int) -> Batch:
            return self.make_batch(order[index], _batch_seed(train.seed, epoch, index))

        def consume(batch: Batch) -> None:
            terms = self.step(batch)
            sums['total'] += terms.total.item()
            for name, value in terms.components.items():
                sums[name] += value

        if train.prefetch and len(order) > 1:
            with ThreadPoolExecutor(max_workers=1, thread_name_prefix='batch') as pool:
                pending = pool.submit(build, 0)
                for index in range(len(order)):
                    batch = pending.result()
                    if index + 1 < len(order):
                        pending = pool.submit(build, index + 1)
                    consume(batch)
        else:
            for index in range(len(order)):
                consume(build(index))
        return {name: value / max(len(order), 1) for name, value in sums.items()}

    def fit(self) -> TrainResult:
        """Train for the configured epochs, validating every ``val_every`` epochs and keeping the best."""
        train = self.config.train
        set_precision(self.model.config.precision)
        metrics: List[Dict[str, float]] = []
        best_epoch, best_score = 0, -np.inf
        best_params = self.model.store.snapshot()
        best_path: Optional[Path] = None
        if not self.data.val_groups:
            _logger.warning('No validation groups; selecting on negative training loss instead')

        for epoch in range(1, train.epochs + 1):
            started = time.monotonic()
            losses = self.run_epoch(epoch)
            _logger.info(
                f'Epoch {epoch}/{train.epochs}: loss {losses.get("total", 0.0):.4f} ({time.monotonic() - started:.1f}s)'
            )
            if epoch % train.val_every and epoch != train.epochs:
                continue
            score = self.validate() if self.data.val_groups else -losses.get('total', 0.0)
            record = {'epoch': epoch, 'step': self.model.store.t, 'val_score': score}
            record.update({f'train_{name}': value for name, value in sorted(losses.items())})
            metrics.append(record)
            if self.run_dir is not None:
                self.run_dir.append_metrics(record)
                path = self.run_dir.checkpoint_path(epoch)
                save_checkpoint(path, self.model, {'epoch': epoch, 'val_score': score}, train.save_optimizer_state)
            if score > best_score:
                best_epoch, best_score = epoch, score
                best_params = self.model.store.snapshot()
                if self.run_dir is not None:
                    self.run_dir.set_best(epoch)
                    best_path = self.run_dir.best_checkpoint()
            _logger.info(f'Epoch {epoch}: validation {score:.4f} (best {best_score:.4f} at epoch {best_epoch})')

        self.model.store.restore(best_params)
        return TrainResult(self.model, best_epoch, float(best_score), best_path, metrics)


def train(
    config: RunConfig,
    data: TrainingData,
    model: DualEncoder,
    run_dir: Optional[RunDirectory] = None,
    supervised_pairs: Optional[Iterable[CaptionPair]] = None,
) -> TrainResult:
    """Train ``model`` in place and return it with the validation-best parameters restored."""
    return Trainer(config, model, data, run_dir, supervised_pairs).fit()


class AnchorCache(NamedTuple):
    """Fixed embeddings of already-learned captions and their images, used as extra negatives and α partners."""

    texts: np.ndarray
    images: np.ndarray
    diag_x: np.ndarray


def build_anchor_cache(
    model: DualEncoder,
    captions: CaptionTable,
    images: ImageTable,
    limit: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> AnchorCache:
    """Embed (up to ``limit``) captions and their images once; the arrays are made read-only."""
    records = list(captions)
    if limit is not None and len(records) > limit:
        chosen = np.sort(np.random.default_rng(seed).choice(len(records), limit, replace=False))
        records = [records[i] for i in chosen]
    if not records:
        raise DataError('Cannot build an anchor cache from no captions')
    texts = model.embed_sentences([r.tokens for r in records], threads=threads)  # type: ignore[misc]
    image_embeddings = model.embed_images(images.rows([r.image_id for r in records]))
    diag_x = (np.sum(texts * image_embeddings, axis=1) + 1.0) / 2.0
    for array in (texts, image_embeddings, diag_x):
        array.setflags(write=False)
    return AnchorCache(texts, image_embeddings, diag_x)


def _adaptation_terms(
    model: DualEncoder, batch: Batch, image_embeddings: np.ndarray, cache: AnchorCache, loss: LossConfig
) -> Tensor:
    z = model.encode_text(batch.ids, batch.mask).z
    images = as_tensor(image_embeddings)
    anchor_texts, anchor_images = as_tensor(cache.texts), as_tensor(cache.images)
    l_t = l_x = l_c = None
    if loss.use_lt:
        diag = (np.sum(images.data * z.data, axis=1) + 1.0) / 2.0
        alpha = np.concatenate(
            [
                transitive_alpha(diag, similarity_scores(images.data, images.data), loss.margin_m).data,
                cross_alpha(diag, similarity_scores(images.data, cache.images), cache.diag_x, loss.margin_m).data,
            ],
            axis=1,
        )
        beta = similarity_matrix(z, ops.concat([z, anchor_texts], axis=0))
        l_t = loss_t(beta, alpha, loss.tau)
    if loss.use_lx:
        l_x = loss_x(images, z, loss.tau, extra_images=anchor_images, extra_texts=anchor_texts)
    if loss.use_lc:
        corrupted = model.encode_text(batch.plan.corrupted, batch.mask)
        logits = model.text.cloze_logits(corrupted.hiddens, batch.plan.positions)
        l_c = loss_cloze(logits, batch.plan.targets, batch.plan.sentence)
    return total_loss(l_t, None, l_x, l_c, loss.lambda_v, loss.lambda_x, loss.lambda_c)


def adapt_language(
    model: DualEncoder, cache: AnchorCache, corpus: CaptionTable, images: ImageTable, config: RunConfig
) -> DualEncoder:
    """Fine-tune the text branch on a new language against fixed cached anchors.

    The image branch is frozen (its embeddings are computed without gradients), so only text parameters move.
    Adam starts from fresh moments. The two-view loss is skipped because it has no text path.

    Raises:
        DataError: the new-language corpus is empty or untokenized.
    """
    if len(corpus) == 0:
        raise DataError('Adaptation corpus is empty')
    missing = [r.id for r in corpus if r.tokens is None]
    if missing:
        raise DataError(f'{len(missing)} adaptation caption(s) are not tokenized', offenders=missing)
    set_precision(model.config.precision)
    train, loss = config.train, effective_loss_config(config)
    augmenter = Augmenter(train.aug_sigma, train.aug_dropout)
    store = model.store
    store.reset_optimizer()
    names = model.text_params
    for epoch in range(1, train.adapt_epochs + 1):
        order = batch_order(corpus.ids(), train.batch_size, np.random.default_rng([train.seed, epoch]), min_size=1)
        total = 0.0
        for index, ids in enumerate(order):
            batch = build_batch(
                [corpus[i] for i in ids],
                images,
                augmenter,
                _batch_seed(train.seed, epoch, index),
                model.config.vocab_size,
                model.config.max_len,
                train.mask_prob,
                needs_negatives=False,
            )
            image_embeddings = model.embed_images(batch.features)
            store.zero_grad()
            try:
                with Tape():
                    objective = _adaptation_terms(model, batch, image_embeddings, cache, loss)
                    if not objective.is_leaf:
                        backward(objective)
            except NumericError as e:
                raise TrainingDiverged(e.message, batch.record_ids)
            if objective.is_leaf:
                continue
            clip_grad_norm(store, train.clip_norm, names)
            adam_step(store, train.lr, train.beta1, train.beta2, train.eps, names=names)
            total += objective.item()
        mean = total / max(len(order), 1)
        _logger.info(f'Adaptation epoch {epoch}: mean loss {mean:.4f} over {len(corpus)} captions')
    return model
