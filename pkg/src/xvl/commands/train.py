"""Train command - pre-train a model on a generated corpus."""

import json
import logging
from pathlib import Path

import click

from xvl.cli import (
    apply_overrides,
    new_manifest,
    override_option,
    pass_context,
    prepare_out_dir,
    validate_train_config,
)
from xvl.utils.errors import DataError
from xvl.utils.logging import stage_context

BEST_NAME = "best.safetensors"
BEST_RECORD = "best.json"
CONFIG_NAME = "config.yaml"


class BestCheckpoint:
    """Step callback saving the checkpoint with the lowest epoch-mean total loss."""

    def __init__(self, state, run_dir: Path, per_epoch: int, logger: logging.Logger):
        self.state = state
        self.path = Path(run_dir) / BEST_NAME
        self.record_path = Path(run_dir) / BEST_RECORD
        self.per_epoch = per_epoch
        self.logger = logger
        self.best = float("inf")
        if self.record_path.exists():
            self.best = json.loads(self.record_path.read_text())["mean_total"]
        current_epoch = state.step // per_epoch
        self.totals = [r.total for r in state.log if r.epoch == current_epoch]

    def __call__(self, record) -> None:
        import torch

        from xvl.services.checkpoint import save_checkpoint

        self.totals.append(record.total)
        if (record.step + 1) % self.per_epoch:
            return
        mean = sum(self.totals) / len(self.totals)
        self.totals = []
        self.logger.info(f"Epoch {record.epoch}: mean total loss {mean:.4f}")
        if mean < self.best:
            self.best = mean
            self.state.torch_rng = torch.get_rng_state()
            save_checkpoint(self.state, self.path)
            self.record_path.write_text(
                json.dumps({"epoch": record.epoch, "step": self.state.step, "mean_total": mean})
            )


def _truncate_step_log(path: Path, step: int) -> list:
    """Keep only records before `step`; a resumed run rewrites the rest."""
    from xvl.services.trainer import read_step_log

    if not path.exists():
        return []
    records = [r for r in read_step_log(path) if r.step < step]
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict()) + "\n")
    return records


@click.command()
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Corpus directory written by gen-data",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Run directory",
)
@click.option("--resume", is_flag=True, default=False, help="Continue from the run's checkpoint")
@click.option("--epochs", type=int, default=None, help="Training epochs")
@click.option("--batch-size", type=int, default=None, help="Studies per step")
@click.option("--seed", type=int, default=None, help="Training seed")
@click.option("--queue-size", type=int, default=None, help="Feature queue capacity")
@click.option("--lambda-dist", type=float, default=None, help="Distillation weight")
@click.option("--train-fraction", type=float, default=None, help="Share of the train split used")
@click.option("--checkpoint-every", type=int, default=None, help="Checkpoint period in steps")
@click.option(
    "--max-steps",
    type=int,
    default=0,
    help="Stop once this absolute step is reached (not stored in the run config)",
)
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty run directory")
@override_option
@pass_context
def train(
    ctx,
    data_dir,
    out_dir,
    resume,
    epochs,
    batch_size,
    seed,
    queue_size,
    lambda_dist,
    train_fraction,
    checkpoint_every,
    max_steps,
    force,
    overrides,
):
    """Pre-train the vision-language model."""
    flags = {
        "epochs": epochs,
        "batch_size": batch_size,
        "seed": seed,
        "queue_size": queue_size,
        "lambda_dist": lambda_dist,
        "train_fraction": train_fraction,
        "checkpoint_every": checkpoint_every,
    }
    if resume:
        given = [k for k, v in flags.items() if v is not None]
        if given or overrides:
            ctx.logger.warning(
                f"Resuming uses the run's stored configuration; ignoring {given + list(overrides)}"
            )
    else:
        apply_overrides(ctx.config, flags, overrides)
        validate_train_config(ctx.config)

    if ctx.dry_run:
        tc = ctx.config.train
        click.echo("DRY RUN: Would train model")
        click.echo(f"  Data: {data_dir}")
        click.echo(f"  Run directory: {out_dir}")
        click.echo(f"  Resume: {resume}")
        if not resume:
            click.echo(f"  Epochs: {tc.epochs}, batch size: {tc.batch_size}, seed: {tc.seed}")
        return

    result = _train_impl(ctx, data_dir, out_dir, resume=resume, max_steps=max_steps, force=force)
    click.echo(f"Trained {result['steps']} steps in {out_dir}")
    if result.get("last_epoch_mean") is not None:
        click.echo(f"Last epoch mean total loss: {result['last_epoch_mean']:.4f}")
    click.echo(f"Checkpoint: {result['checkpoint']}")


def _train_impl(
    ctx,
    data_dir: Path,
    out_dir: Path,
    resume: bool = False,
    max_steps: int = 0,
    force: bool = False,
) -> dict:
    """Implementation of training."""
    from xvl.commands.gen_data import VOCAB_NAME
    from xvl.models.vocabulary import Vocabulary
    from xvl.services.checkpoint import load_checkpoint, save_checkpoint
    from xvl.services.corpus_io import corpus_hash, read_corpus, write_manifest
    from xvl.services.state import init_state
    from xvl.services.textpipe import build_vocab
    from xvl.services.trainer import (
        CHECKPOINT_NAME,
        STEP_LOG,
        steps_per_epoch,
        train,
        training_subset,
    )
    from xvl.services.zeroshot import default_prompts

    logger = ctx.logger
    train_path = Path(data_dir) / "train.jsonl"
    checkpoint = Path(out_dir) / CHECKPOINT_NAME
    corpus = read_corpus(train_path)

    if resume:
        if not checkpoint.exists():
            raise DataError(f"No checkpoint to resume from in {out_dir}")
        state = load_checkpoint(checkpoint)
        ctx.config = state.config
        state.log = _truncate_step_log(Path(out_dir) / STEP_LOG, state.step)
        logger.info(f"Resuming at step {state.step}")
    else:
        prepare_out_dir(out_dir, force)
        ctx.config.dump(Path(out_dir) / CONFIG_NAME)
        manifest = new_manifest(
            ctx,
            "train",
            ctx.config.train.seed,
            {"data": data_dir, "train_hash": corpus_hash(train_path)},
            {"checkpoint": checkpoint, "best": Path(out_dir) / BEST_NAME},
        )
        write_manifest(out_dir, manifest)

        vocab_path = Path(data_dir) / VOCAB_NAME
        if vocab_path.exists():
            vocab = Vocabulary.load(vocab_path)
        else:
            vocab = build_vocab(corpus, extra_texts=default_prompts().texts())
        state = init_state(ctx.config, vocab)

    tc = state.config.train
    if corpus and corpus[0].image.shape[-1] != state.config.model.image_size:
        raise DataError(
            f"Corpus images are {corpus[0].image.shape}, model expects "
            f"image_size={state.config.model.image_size}"
        )

    if tc.epochs == 0:
        save_checkpoint(state, checkpoint)
        logger.info("epochs=0: wrote the initial checkpoint only")
        return {"steps": 0, "checkpoint": str(checkpoint)}

    per_epoch = steps_per_epoch(len(training_subset(corpus, tc)), tc.batch_size)
    on_step = BestCheckpoint(state, out_dir, per_epoch, logger) if per_epoch else None

    with stage_context("train", logger):
        state = train(
            state,
            corpus,
            run_dir=Path(out_dir),
            max_steps=max_steps or None,
            logger=logger,
            on_step=on_step,
        )
    save_checkpoint(state, checkpoint)

    last_epoch = state.log[-1].epoch if state.log else None
    totals = [r.total for r in state.log if r.epoch == last_epoch]
    return {
        "steps": state.step,
        "checkpoint": str(checkpoint),
        "last_epoch_mean": sum(totals) / len(totals) if totals else None,
    }
