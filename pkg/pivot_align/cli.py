"""Console script running the alignment pipeline: worlds, tokenizer, training, refinement and evaluation."""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import click
from loguru import logger
from pydantic import BaseModel

from pivot_align import align
from pivot_align.config import RunConfig
from pivot_align.corpus import CaptionTable, ImageTable, SplitManifest, generate_world, load_corpus, save_world
from pivot_align.evaluation import (
    RetrievalReport,
    alpha_gap,
    cluster_report,
    crossmodal_retrieval_eval,
    gt_precision,
    merge_reports,
    probe_correspondence,
    read_ground_truth,
    sentence_retrieval_eval,
    supervised_pairs,
    word_map_gt,
    word_retrieval_eval,
    write_report,
)
from pivot_align.exceptions import ConfigError, DataError, ExceptionBase, NumericError
from pivot_align.model import DualEncoder, load_checkpoint, save_checkpoint
from pivot_align.model.checkpoint import file_hash
from pivot_align.tokenizer import Vocabulary, train_bpe
from pivot_align.trainer import (
    RunDirectory,
    TrainingData,
    adapt_language,
    build_anchor_cache,
    effective_loss_config,
    train,
)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

RUN_LOG = 'run.log'
NOT_REPORTS = ('config.json', 'summary.json', 'train_summary.json', 'vocab.json', 'word_gt.json')


class InterceptHandler(logging.Handler):
    """Install loguru by intercepting logging."""

    def emit(self, record):
        """Redirect logging emissions to loguru instead."""
        # Get corresponding Loguru level if it exists
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # Find caller from where the logged message originated
        frame, depth = logging.currentframe(), 2
        while frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


_logger = logging.getLogger(__name__)


def config_keys(model: Any = RunConfig, prefix: str = '') -> List[str]:
    """Every dotted key a ``--set`` override may address."""
    keys = []
    for name, field in model.__fields__.items():
        if isinstance(field.type_, type) and issubclass(field.type_, BaseModel):
            keys.extend(config_keys(field.type_, f'{prefix}{name}.'))
        else:
            keys.append(f'{prefix}{name}')
    return keys


def _one_line(message: str) -> str:
    return ' '.join(message.split())


class PipelineGroup(click.Group):
    """Click group that maps pipeline failures onto exit codes with a one-line diagnostic."""

    def main(self, *args, **kwargs):
        """Run without click's own exit handling so every failure gets our exit codes."""
        kwargs['standalone_mode'] = False
        try:
            return super().main(*args, **kwargs)
        except click.ClickException as e:
            click.echo(f'Error: {_one_line(e.format_message())}', err=True)
            sys.exit(EXIT_USAGE)
        except click.Abort:
            click.echo('Aborted!', err=True)
            sys.exit(EXIT_USAGE)
        except ConfigError as e:
            click.echo(f'Configuration error: {_one_line(e.message)}', err=True)
            sys.exit(EXIT_USAGE)
        except DataError as e:
            click.echo(f'Data error: {_one_line(e.message)}', err=True)
            sys.exit(EXIT_DATA)
        except NumericError as e:
            click.echo(f'Numeric failure: {_one_line(e.message)}', err=True)
            sys.exit(EXIT_NUMERIC)
        except ExceptionBase as e:
            click.echo(f'Error: {_one_line(e.message)}', err=True)
            sys.exit(EXIT_USAGE)


def _remove_sinks(sinks: List[int]) -> None:
    for sink in sinks:
        logger.remove(sink)
    sinks.clear()


@click.group(cls=PipelineGroup, epilog='Config keys for --set: ' + ', '.join(config_keys()))
@click.option('-c', '--config', 'config_path', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('-s', '--set', 'overrides', multiple=True, metavar='SECTION.KEY=VALUE', help='Override one config key.')
@click.option('-t', '--threads', type=click.IntRange(min=1), help='Cap on worker threads.')
@click.option('-r', '--runs', type=click.Path(file_okay=False, path_type=Path), default=Path('runs'), show_default=True)
@click.option(
    '--log-level',
    default='INFO',
    type=click.Choice(['CRITICAL', 'ERROR', 'WARNING', 'INFO', 'DEBUG'], case_sensitive=False),
)
@click.pass_context
def main(ctx, config_path, overrides, threads, runs, log_level):
    """Vision-pivoted multilingual sentence and word alignment on captioned images."""
    ctx.ensure_object(dict)
    logger.remove()
    sinks = [logger.add(sys.stderr, level=log_level.upper())]
    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    ctx.call_on_close(lambda: _remove_sinks(sinks))

    config = RunConfig.load(config_path, overrides)
    if threads is not None:
        config.threads = threads
    ctx.obj.update({'CONFIG': config, 'RUNS': runs, 'SINKS': sinks})


def start_run(ctx: click.Context, label: str) -> RunDirectory:
    """Create this invocation's run directory, log into it and record the resolved config."""
    config: RunConfig = ctx.obj['CONFIG']
    run = RunDirectory.create(ctx.obj['RUNS'], config, label)
    ctx.obj['SINKS'].append(logger.add(run.path / RUN_LOG, level='DEBUG'))
    _logger.info(f'Resolved config: {config.canonical_json()}')
    return run


def read_vocab(path: Path) -> Vocabulary:
    """Load a vocabulary file."""
    try:
        return Vocabulary.from_json(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise DataError(f'Cannot read vocabulary {path}: {e}')


def load_tokenized(world: Path, vocab: Vocabulary) -> Tuple[CaptionTable, ImageTable, SplitManifest]:
    """Captions of a world directory with token ids filled in, with its images and split manifest."""
    captions, images, manifest = load_corpus(world)
    return captions.tokenized(vocab.encode), images, manifest


def load_model(path: Path) -> Tuple[DualEncoder, str]:
    """A checkpointed model and the hash that names reports computed from it."""
    model, meta = load_checkpoint(path)
    _logger.info(f'Loaded {path} (step {meta.get("step", 0)})')
    return model, file_hash(path)


def emit_report(run: RunDirectory, report: RetrievalReport, checkpoint_hash: Optional[str] = None) -> Path:
    """Write a report into the run directory and print its metrics."""
    target = write_report(report, run.path, checkpoint_hash)
    click.echo(json.dumps({'report': str(target), 'metrics': report.metrics}, sort_keys=True))
    return target


world_option = click.option(
    '-w',
    '--world',
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help='World directory.',
)
vocab_option = click.option(
    '-v',
    '--vocab',
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help='Vocabulary file.',
)
checkpoint_option = click.option(
    '-k', '--checkpoint', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True
)
split_option = click.option('--split', type=click.Choice(['test', 'val']), default='test', show_default=True)


def _split_ids(manifest: SplitManifest, split: str) -> Tuple[List[str], List[Dict[str, str]]]:
    if split == 'val':
        return manifest.val, manifest.val_groups
    return manifest.test, manifest.test_groups


@main.command('gen-world')
@click.option('-o', '--out', type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
def gen_world(ctx, out):
    """Generate a synthetic captioned-image world into OUT."""
    config: RunConfig = ctx.obj['CONFIG']
    start_run(ctx, 'gen-world')
    world = generate_world(config.world)
    save_world(out, world)
    _logger.info(f'Wrote {len(world.captions)} captions over {len(world.images)} images to {out}')
    click.echo(str(out))


@main.command('train-bpe')
@world_option
@click.option('-o', '--out', type=click.Path(dir_okay=False, path_type=Path))
@click.pass_context
def train_bpe_command(ctx, world, out):
    """Learn a shared BPE vocabulary from the training captions of all languages."""
    config: RunConfig = ctx.obj['CONFIG']
    run = start_run(ctx, 'train-bpe')
    captions, _, manifest = load_corpus(world)
    texts = [r.text for r in captions.subset(manifest.train + manifest.adapt)]
    vocab = train_bpe(texts, config.tokenizer.vocab_size, config.tokenizer.min_pair_count)
    target = out or run.path / 'vocab.json'
    target.write_text(vocab.json(), encoding='utf-8')
    _logger.info(f'{vocab!r} written to {target}')
    click.echo(str(target))


@main.command('train')
@world_option
@vocab_option
@click.option('--no-lt', is_flag=True, help='Drop the transitive text loss.')
@click.option('--no-lv', is_flag=True, help='Drop the image two-view loss.')
@click.option('--no-lx', is_flag=True, help='Drop the cross-modal loss.')
@click.option('--no-lc', is_flag=True, help='Drop the cloze loss.')
@click.option('--supervised-alpha', is_flag=True, help='Use ground-truth caption pairs instead of the transitive α.')
@click.option('--text-only', is_flag=True, help='Train the text encoder on the cloze loss alone.')
@click.pass_context
def train_command(ctx, world, vocab, no_lt, no_lv, no_lx, no_lc, supervised_alpha, text_only):
    """Train the text and image encoders on the training split and keep the validation-best checkpoint."""
    config: RunConfig = ctx.obj['CONFIG']
    for switch, off in (('use_lt', no_lt), ('use_lv', no_lv), ('use_lx', no_lx), ('use_lc', no_lc)):
        if off:
            setattr(config.loss, switch, False)
    config.train.supervised_alpha = config.train.supervised_alpha or supervised_alpha
    config.train.text_only = config.train.text_only or text_only
    if not effective_loss_config(config).any_enabled:
        raise ConfigError('Every loss term is switched off; there is nothing to train')

    vocabulary = read_vocab(vocab)
    captions, images, manifest = load_tokenized(world, vocabulary)
    config.model.vocab_size = vocabulary.size
    config.model.image_feat_dim = images.feat_dim
    run = start_run(ctx, 'train')

    pairs = None
    if config.train.supervised_alpha:
        pairs = supervised_pairs(read_ground_truth(world), manifest.train)
    data = TrainingData(captions.subset(manifest.train), images, captions.subset(manifest.val), manifest.val_groups)
    result = train(config, data, DualEncoder(config.model), run, pairs)
    summary = {
        'best_epoch': result.best_epoch,
        'best_score': result.best_score,
        'best_checkpoint': str(result.best_checkpoint) if result.best_checkpoint else None,
        'epochs': len(result.metrics),
    }
    run.write_json('train_summary.json', summary)
    click.echo(json.dumps(summary, sort_keys=True))


@main.command('adapt')
@world_option
@vocab_option
@checkpoint_option
@click.option('-l', '--language', 'languages', multiple=True, help='Language to add (default: all held-out ones).')
@click.option('--anchors', type=click.IntRange(min=1), default=2048, show_default=True, help='Cached anchor captions.')
@click.pass_context
def adapt_command(ctx, world, vocab, checkpoint, languages, anchors):
    """Fine-tune the text encoder of a trained model on held-out languages against cached anchors."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, images, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    run = start_run(ctx, 'adapt')
    chosen = sorted(languages or manifest.held_out)
    if not chosen:
        raise DataError('No language to adapt to: the world holds none out and none was given')
    corpus = CaptionTable(r for r in captions.subset(manifest.adapt) if r.lang in chosen)
    cache = build_anchor_cache(
        model, captions.subset(manifest.train), images, anchors, config.train.seed, config.threads
    )
    adapt_language(model, cache, corpus, images, config)
    target = run.checkpoint_file('adapted.gtck')
    save_checkpoint(
        target, model, {'adapted': chosen, 'source': checkpoint_hash}, config.train.save_optimizer_state
    )
    click.echo(str(target))


@main.command('mine-word-gt')
@world_option
@vocab_option
@click.option('--precision', is_flag=True, help='Also score the mined pairs against the generator word map.')
@click.pass_context
def mine_word_gt_command(ctx, world, vocab, precision):
    """Mine word translation pairs from the sentence-aligned test captions with tf-idf."""
    config: RunConfig = ctx.obj['CONFIG']
    vocabulary = read_vocab(vocab)
    captions, _, manifest = load_tokenized(world, vocabulary)
    run = start_run(ctx, 'mine-word-gt')
    gts = align.mine_all_pairs(
        captions.subset(manifest.test),
        manifest.test_groups,
        manifest.languages,
        vocabulary,
        config.align.gt_top,
        config.threads,
    )
    target = run.path / 'word_gt.json'
    align.write_word_gt(target, gts, vocabulary)
    click.echo(str(target))
    if precision:
        emit_report(run, gt_precision(gts, read_ground_truth(world), vocabulary))


def _word_token_sets(captions: CaptionTable, manifest: SplitManifest, vocabulary: Vocabulary, min_count: int):
    return align.language_token_sets(captions.subset(manifest.train + manifest.adapt), vocabulary, min_count)


@main.command('procrustes')
@world_option
@vocab_option
@checkpoint_option
@click.pass_context
def procrustes_command(ctx, world, vocab, checkpoint):
    """Refine word embeddings with iterative multi-language Procrustes and write the maps."""
    config: RunConfig = ctx.obj['CONFIG']
    vocabulary = read_vocab(vocab)
    captions, _, manifest = load_tokenized(world, vocabulary)
    model, _ = load_model(checkpoint)
    run = start_run(ctx, 'procrustes')
    token_sets = _word_token_sets(captions, manifest, vocabulary, config.align.min_count)
    maps = align.multi_procrustes(
        align.procrustes_inputs(model.word_embeddings(), token_sets),
        config.align.k,
        config.align.rounds,
        config.align.tol,
        config.align.init,
    )
    target = run.path / 'maps.gtck'
    align.write_maps(target, maps)
    _logger.info(f'Procrustes over {len(maps.languages)} languages stopped after {maps.rounds} round(s)')
    click.echo(str(target))


@main.command('eval-sentence')
@world_option
@vocab_option
@checkpoint_option
@split_option
@click.pass_context
def eval_sentence(ctx, world, vocab, checkpoint, split):
    """Sentence-level translation retrieval among paraphrase groups, text encoder only."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, _, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    run = start_run(ctx, 'eval-sentence')
    ids, groups = _split_ids(manifest, split)
    report = sentence_retrieval_eval(
        model, captions.subset(ids), groups, config.eval.n_queries, seed=config.eval.seed, threads=config.threads
    )
    emit_report(run, report, checkpoint_hash)


@main.command('eval-word')
@world_option
@vocab_option
@checkpoint_option
@click.option('--gt', type=click.Path(exists=True, dir_okay=False, path_type=Path), help='Mined word pairs.')
@click.option('--maps', type=click.Path(exists=True, dir_okay=False, path_type=Path), help='Procrustes maps.')
@click.option('--exclude-identical', is_flag=True, help='Drop pairs whose two tokens are the same.')
@click.pass_context
def eval_word(ctx, world, vocab, checkpoint, gt, maps, exclude_identical):
    """Word translation recall@k; without --gt the generator's word map is the ground truth."""
    config: RunConfig = ctx.obj['CONFIG']
    vocabulary = read_vocab(vocab)
    captions, _, manifest = load_tokenized(world, vocabulary)
    model, checkpoint_hash = load_model(checkpoint)
    run = start_run(ctx, 'eval-word')
    token_sets = _word_token_sets(captions, manifest, vocabulary, config.align.min_count)
    spaces = align.word_spaces(model.word_embeddings(), token_sets, align.read_maps(maps) if maps else None)
    if gt is not None:
        gts = align.read_word_gt(gt, vocabulary)
    else:
        gts = word_map_gt(read_ground_truth(world), vocabulary, manifest.languages)
    report = word_retrieval_eval(
        spaces, gts, config.eval.recall_k, exclude_identical or config.eval.exclude_identical
    )
    emit_report(run, report, checkpoint_hash)


@main.command('eval-crossmodal')
@world_option
@vocab_option
@checkpoint_option
@split_option
@click.pass_context
def eval_crossmodal(ctx, world, vocab, checkpoint, split):
    """Image-to-text and text-to-image recall@{1, 5, 10} per language."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, images, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    run = start_run(ctx, 'eval-crossmodal')
    ids, _ = _split_ids(manifest, split)
    report = crossmodal_retrieval_eval(
        model, captions.subset(ids), images, config.eval.pairs_per_language, config.eval.seed, config.threads
    )
    emit_report(run, report, checkpoint_hash)


@main.command('probe-correspondence')
@world_option
@vocab_option
@checkpoint_option
@click.pass_context
def probe_command(ctx, world, vocab, checkpoint):
    """Train the sentence-correspondence probe on half the languages and test on the other half."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, _, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    run = start_run(ctx, 'probe-correspondence')
    emit_report(run, probe_correspondence(model, captions.subset(manifest.test), config.eval), checkpoint_hash)


@main.command('cluster')
@world_option
@vocab_option
@checkpoint_option
@click.pass_context
def cluster_command(ctx, world, vocab, checkpoint):
    """K-means over test sentence embeddings, scored by language and concept mixing."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, _, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    ground_truth = read_ground_truth(world)
    run = start_run(ctx, 'cluster')
    records = list(captions.subset(manifest.test))
    embeddings = model.embed_sentences([r.tokens for r in records], threads=config.threads)
    concepts = ['-'.join(str(c) for c in sorted(ground_truth.caption_concepts[r.id])) for r in records]
    report = cluster_report(
        embeddings,
        [r.lang for r in records],
        concepts,
        config.eval.cluster_k,
        config.eval.cluster_restarts,
        config.eval.seed,
    )
    emit_report(run, report, checkpoint_hash)


@main.command('alpha-gap')
@world_option
@vocab_option
@checkpoint_option
@click.pass_context
def alpha_gap_command(ctx, world, vocab, checkpoint):
    """Compare the transitive α of pairs involving noisy training captions with that of clean pairs."""
    config: RunConfig = ctx.obj['CONFIG']
    captions, images, manifest = load_tokenized(world, read_vocab(vocab))
    model, checkpoint_hash = load_model(checkpoint)
    ground_truth = read_ground_truth(world)
    run = start_run(ctx, 'alpha-gap')
    report = alpha_gap(
        model,
        captions.subset(manifest.train),
        images,
        ground_truth.corrupted,
        config.loss.margin_m,
        config.train.batch_size,
        config.train.seed,
        config.threads,
    )
    emit_report(run, report, checkpoint_hash)


def _report_files(paths: Iterable[Path]) -> List[Path]:
    files = []
    for path in paths:
        files.extend(sorted(path.glob('*.json')) if path.is_dir() else [path])
    return [f for f in files if f.name not in NOT_REPORTS]


@main.command('report')
@click.argument('paths', nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.pass_context
def report_command(ctx, paths):
    """Merge report files (or every report in the given directories) into one summary."""
    run = start_run(ctx, 'report')
    summary = merge_reports(_report_files(paths))
    target = run.write_json('summary.json', summary)
    click.echo(json.dumps(summary, indent=2, sort_keys=True, default=str))
    _logger.info(f'Summary written to {target}')


def entrypoint() -> None:
    """Console script entry point."""
    main(obj={})  # pragma: no cover


if __name__ == '__main__':
    entrypoint()  # pragma: no cover
