"""Gen-data command - write a synthetic corpus with train/val/test splits."""

from pathlib import Path

import click

from xvl.cli import apply_overrides, new_manifest, override_option, pass_context, prepare_out_dir
from xvl.utils.errors import ConfigError
from xvl.utils.logging import stage_context

SPLITS = ("train", "val", "test")
PROMPTS_NAME = "prompts.txt"
VOCAB_NAME = "vocab.txt"


def parse_mix(text: str) -> dict[str, float]:
    """`class=weight,...` into a normalized mix."""
    mix: dict[str, float] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, sep, weight = part.partition("=")
        if not sep:
            raise ConfigError(f"Mix entry must look like class=weight, got {part!r}")
        try:
            mix[name.strip()] = float(weight)
        except ValueError as e:
            raise ConfigError(f"Mix weight for {name.strip()!r} is not a number") from e
    total = sum(mix.values())
    if not mix or total <= 0:
        raise ConfigError("Mix weights must sum to a positive number")
    return {name: weight / total for name, weight in mix.items()}


@click.command("gen-data")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Output directory for the splits",
)
@click.option("--n", "n_studies", type=int, default=None, help="Number of studies")
@click.option("--seed", "data_seed", type=int, default=None, help="Generator seed")
@click.option(
    "--classes",
    "num_classes",
    type=int,
    default=None,
    help="Use the first N classes ('no finding' first) with a uniform mix",
)
@click.option("--mix", default=None, help="Explicit class mix, e.g. 'no finding=2,atrex=1'")
@click.option("--multi-finding-rate", type=float, default=None, help="Chance of extra findings")
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def gen_data(
    ctx, out_dir, n_studies, data_seed, num_classes, mix, multi_finding_rate, force, overrides
):
    """Generate a synthetic paired image/report corpus."""
    apply_overrides(
        ctx.config,
        {
            "n_studies": n_studies,
            "data_seed": data_seed,
            "num_classes": num_classes,
            "multi_finding_rate": multi_finding_rate,
        },
        overrides,
    )
    dc = ctx.config.data

    if ctx.dry_run:
        click.echo("DRY RUN: Would generate synthetic corpus")
        click.echo(f"  Output: {out_dir}")
        click.echo(f"  Studies: {dc.n_studies} (seed {dc.data_seed})")
        click.echo(f"  Classes: {mix or dc.num_classes}")
        return

    result = _gen_data_impl(ctx, out_dir, mix=mix, force=force)
    sizes = ", ".join(f"{name}={result['sizes'][name]}" for name in SPLITS)
    click.echo(f"Corpus written to {out_dir}: {sizes}")
    click.echo(f"Vocabulary: {result['vocab_size']} tokens")


def _gen_data_impl(ctx, out_dir: Path, mix: str | None = None, force: bool = False) -> dict:
    """Implementation of corpus generation."""
    from xvl.models.study import NO_FINDING
    from xvl.services.corpus_io import corpus_hash, write_corpus, write_manifest
    from xvl.services.synthdata import default_class_mix, generate_corpus, split_corpus
    from xvl.services.textpipe import build_vocab
    from xvl.services.zeroshot import default_prompts, dump_prompts

    dc = ctx.config.data
    mc = ctx.config.model
    logger = ctx.logger
    class_mix = parse_mix(mix) if mix else default_class_mix(dc.num_classes)

    out_dir = prepare_out_dir(out_dir, force)
    outputs = {name: out_dir / f"{name}.jsonl" for name in SPLITS}
    outputs["prompts"] = out_dir / PROMPTS_NAME
    outputs["vocab"] = out_dir / VOCAB_NAME
    manifest = new_manifest(ctx, "gen-data", dc.data_seed, {"mix": class_mix}, outputs)
    write_manifest(out_dir, manifest)

    with stage_context("gen-data", logger):
        corpus = generate_corpus(
            dc.n_studies,
            class_mix,
            dc.data_seed,
            image_size=mc.image_size,
            multi_finding_rate=dc.multi_finding_rate,
        )
        splits = dict(zip(SPLITS, split_corpus(corpus, dc.train_split, dc.val_split), strict=True))
        for name, studies in splits.items():
            write_corpus(outputs[name], studies)
            logger.info(f"Wrote {len(studies)} studies to {outputs[name]}")

        prompts = default_prompts([c for c in class_mix if c != NO_FINDING])
        dump_prompts(prompts, outputs["prompts"])
        vocab = build_vocab(splits["train"], extra_texts=prompts.texts())
        vocab.save(outputs["vocab"])

    for name in SPLITS:
        manifest.outputs[f"{name}_hash"] = corpus_hash(outputs[name])
    write_manifest(out_dir, manifest)

    return {
        "sizes": {name: len(studies) for name, studies in splits.items()},
        "vocab_size": len(vocab),
    }
