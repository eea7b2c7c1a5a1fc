"""Click CLI entry point for xvl."""

import sys
from pathlib import Path

import click

from xvl import __version__
from xvl.models.run import RunManifest
from xvl.utils.config import XVLConfig, load_config, parse_override
from xvl.utils.errors import ConfigError, DataError, XVLError
from xvl.utils.logging import get_logger, log_error


class Context:
    """Shared context for all CLI commands."""

    def __init__(self):
        self.config: XVLConfig | None = None
        self.logger = None
        self.verbose = False
        self.dry_run = False


pass_context = click.make_pass_decorator(Context, ensure=True)


class XVLGroup(click.Group):
    """Maps XVLError to its exit code after logging it."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except XVLError as e:
            logger = get_logger("xvl", verbose=bool(ctx.params.get("verbose")))
            log_error(logger, f"Error: {e}", e, stage=ctx.invoked_subcommand)
            sys.exit(e.exit_code)


def override_option(f):
    """Repeatable `-o key=value` configuration override."""
    return click.option(
        "-o",
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override any configuration key (repeatable)",
    )(f)


def apply_overrides(config: XVLConfig, flags: dict, overrides: tuple[str, ...] = ()) -> None:
    """CLI flags and -o overrides on top of file and environment values."""
    config.update(flags)
    for text in overrides:
        key, value = parse_override(text)
        config.set(key, value)


def validate_train_config(config: XVLConfig) -> None:
    valid, errors = config.train.validate()
    if not valid:
        raise ConfigError("; ".join(errors))


def prepare_out_dir(path: Path, force: bool = False) -> Path:
    """Create an output directory; an existing non-empty one needs --force."""
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise DataError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"{path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def split_path(data_dir: Path, split: str) -> Path:
    return Path(data_dir) / f"{split}.jsonl"


def open_scorer(ctx: Context, checkpoint: Path):
    """Zero-shot scorer over a checkpoint, honoring the eval configuration."""
    from xvl.services.zeroshot import ZeroShotScorer

    scorer, state = ZeroShotScorer.from_checkpoint(
        checkpoint, ctx.config.eval.score_fn, ctx.config.eval.eval_batch_size
    )
    ctx.logger.info(f"Loaded {checkpoint} at step {state.step}")
    return scorer


def new_manifest(ctx: Context, command: str, seed: int, inputs: dict, outputs: dict) -> RunManifest:
    from xvl.services.corpus_io import git_describe

    return RunManifest(
        command=command,
        config=ctx.config.flatten(),
        seed=seed,
        inputs={k: str(v) for k, v in inputs.items() if v is not None},
        outputs={k: str(v) for k, v in outputs.items() if v is not None},
        tool_version=__version__,
        git_describe=git_describe(),
    )


@click.group(cls=XVLGroup)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True),
    help="Configuration file path (flat key/value YAML)",
)
@click.option(
    "-v",
    "--verbose",
    is_flag=True,
    default=False,
    help="Enable verbose output with structured JSON logging",
)
@click.option(
    "--dry-run",
    is_flag=True,
    default=False,
    help="Show actions without executing",
)
@click.version_option(version=__version__, prog_name="xvl")
@pass_context
def main(ctx, config_path, verbose, dry_run):
    """xvl - cross-attention vision-language pre-training and zero-shot oversight."""
    config = load_config(Path(config_path) if config_path else None)

    config.verbose = verbose
    config.dry_run = dry_run

    ctx.config = config
    ctx.verbose = verbose
    ctx.dry_run = dry_run
    ctx.logger = get_logger("xvl", verbose=verbose)


# Import and register commands (must be after main to avoid circular imports)
from xvl.commands import (  # noqa: E402
    attend,
    compare,
    correct,
    eval_classify,
    eval_errors,
    gen_data,
    train,
)

main.add_command(gen_data.gen_data)
main.add_command(train.train)
main.add_command(eval_classify.eval_classify)
main.add_command(eval_errors.eval_errors)
main.add_command(correct.correct)
main.add_command(attend.attend)
main.add_command(compare.compare)


if __name__ == "__main__":
    main()
