"""Correct command - zero-shot word substitution on corrupted reports."""

from pathlib import Path

import click

from xvl.cli import (
    apply_overrides,
    new_manifest,
    open_scorer,
    override_option,
    pass_context,
    prepare_out_dir,
)
from xvl.commands.eval_errors import corrupted_input_options, load_pairs
from xvl.models.error_record import ErrorType
from xvl.utils.logging import stage_context

CORRECTED_NAME = "corrected.jsonl"
SUBSTITUTIONS_NAME = "substitutions.jsonl"


def recovery_rate(pairs: list, corrected: list[list[str]], error_type) -> tuple[int, int]:
    """(recovered, total) over studies of one error type; equal word tokens count."""
    from xvl.services.textpipe import word_tokens

    recovered = total = 0
    for (_, record), report in zip(pairs, corrected, strict=True):
        if record.error_type is error_type:
            total += 1
            recovered += word_tokens(report) == word_tokens(record.original)
    return recovered, total


@click.command()
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Trained checkpoint",
)
@corrupted_input_options
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Output directory",
)
@click.option("--theta", "theta_corr", type=float, default=None, help="Substitution threshold")
@click.option("--limit", type=int, default=0, help="Correct at most this many studies")
@click.option(
    "--only",
    "only_type",
    type=click.Choice([t.value for t in ErrorType]),
    default=None,
    help="Correct only studies with this error type",
)
@click.option("--seed", "eval_seed", type=int, default=None, help="Corruption seed")
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def correct(
    ctx,
    checkpoint,
    corrupted_path,
    data_dir,
    split,
    error_p,
    out_dir,
    theta_corr,
    limit,
    only_type,
    eval_seed,
    force,
    overrides,
):
    """Replace words the model confidently predicts differently from the image."""
    apply_overrides(
        ctx.config,
        {"error_p": error_p, "theta_corr": theta_corr, "eval_seed": eval_seed},
        overrides,
    )

    if ctx.dry_run:
        click.echo("DRY RUN: Would correct reports")
        click.echo(f"  Checkpoint: {checkpoint}")
        click.echo(f"  Input: {corrupted_path or data_dir}")
        click.echo(f"  Threshold: {ctx.config.eval.theta_corr}")
        return

    result = _correct_impl(
        ctx, checkpoint, corrupted_path, data_dir, split, out_dir, limit, only_type, force
    )
    click.echo(
        f"Corrected {result['changed']}/{result['total']} reports "
        f"with {result['substitutions']} substitutions"
    )
    recovered, located = result["location_recovery"]
    if located:
        click.echo(f"Location errors recovered: {recovered}/{located} ({recovered / located:.2f})")
    else:
        click.echo("Location errors recovered: n/a (none in the set)")


def _correct_impl(
    ctx,
    checkpoint: Path,
    corrupted_path: Path | None,
    data_dir: Path | None,
    split: str,
    out_dir: Path,
    limit: int = 0,
    only_type: str | None = None,
    force: bool = False,
) -> dict:
    """Implementation of report correction."""
    from xvl.services.corpus_io import write_jsonl, write_manifest

    ec = ctx.config.eval
    out_dir = prepare_out_dir(out_dir, force)
    pairs, inputs = load_pairs(ctx, corrupted_path, data_dir, split, out_dir)
    if only_type:
        pairs = [(s, r) for s, r in pairs if r.error_type.value == only_type]
    if limit:
        pairs = pairs[:limit]
    write_manifest(
        out_dir,
        new_manifest(
            ctx,
            "correct",
            ec.eval_seed,
            {"checkpoint": checkpoint, **inputs},
            {
                "corrected": out_dir / CORRECTED_NAME,
                "substitutions": out_dir / SUBSTITUTIONS_NAME,
            },
        ),
    )

    scorer = open_scorer(ctx, checkpoint)
    corrected, records, substitutions = [], [], []
    with stage_context("correct", ctx.logger):
        for study, error in pairs:
            result = scorer.correct_report(study.image, study.report, ec.theta_corr)
            corrected.append(result.report)
            records.append(
                {
                    "study_id": study.study_id,
                    "error_type": error.error_type.value,
                    "input": list(study.report),
                    "report": result.report,
                    "original": list(error.original),
                    "changed": result.changed,
                }
            )
            substitutions += [
                {"study_id": study.study_id, **s.to_dict()} for s in result.substitutions
            ]

    write_jsonl(out_dir / CORRECTED_NAME, records)
    write_jsonl(out_dir / SUBSTITUTIONS_NAME, substitutions)
    return {
        "total": len(pairs),
        "changed": sum(r["changed"] for r in records),
        "substitutions": len(substitutions),
        "location_recovery": recovery_rate(pairs, corrected, ErrorType.LOCATION),
    }
