"""Eval-errors command - zero-shot detection of simulated report errors."""

from collections import Counter
from pathlib import Path

import click

from xvl.cli import (
    apply_overrides,
    new_manifest,
    open_scorer,
    override_option,
    pass_context,
    prepare_out_dir,
    split_path,
)
from xvl.utils.errors import DataError
from xvl.utils.logging import stage_context

CORRUPTED_NAME = "corrupted.jsonl"
SCORES_NAME = "scores.jsonl"
METRICS_NAME = "metrics.jsonl"
ACCOUNTING_NAME = "accounting.json"


def corrupted_input_options(f):
    """--corrupted FILE, or --data/--split corrupted on the fly with --p."""
    f = click.option("--p", "error_p", type=float, default=None, help="Corruption probability")(f)
    f = click.option("--split", default="test", show_default=True, help="Split to corrupt")(f)
    f = click.option(
        "--data",
        "data_dir",
        type=click.Path(exists=True, file_okay=False, path_type=Path),
        default=None,
        help="Corpus directory to corrupt on the fly",
    )(f)
    return click.option(
        "--corrupted",
        "corrupted_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help="Corrupted set written by an earlier run",
    )(f)


def load_pairs(
    ctx, corrupted_path: Path | None, data_dir: Path | None, split: str, out_dir: Path
) -> tuple[list, dict]:
    """(study, ErrorRecord) pairs and their provenance for the manifest.

    A set corrupted on the fly is written to <out>/corrupted.jsonl.
    """
    from xvl.services.corpus_io import corpus_hash, read_corpus, read_corrupted, write_corpus
    from xvl.services.errorsim import corrupt_corpus

    if corrupted_path is not None:
        pairs = read_corrupted(corrupted_path)
        inputs = {"corrupted": corrupted_path, "corrupted_hash": corpus_hash(corrupted_path)}
    elif data_dir is not None:
        source = split_path(data_dir, split)
        ec = ctx.config.eval
        pairs = corrupt_corpus(read_corpus(source), ec.error_p, ec.eval_seed)
        out_path = Path(out_dir) / CORRUPTED_NAME
        write_corpus(out_path, [s for s, _ in pairs], [r for _, r in pairs])
        inputs = {"data": source, "data_hash": corpus_hash(source), "error_p": ec.error_p}
    else:
        raise DataError("Give --corrupted or --data")
    if not pairs:
        raise DataError("No studies to evaluate")
    return pairs, inputs


def accounting(pairs: list) -> dict[str, int]:
    """Study count per error type (including none); sums to the corpus size."""
    from xvl.models.error_record import ErrorType

    counts = Counter(record.error_type.value for _, record in pairs)
    return {t.value: counts.get(t.value, 0) for t in ErrorType}


@click.command("eval-errors")
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
@click.option("--score-fn", type=click.Choice(["itm", "cosine"]), default=None)
@click.option("--n-bootstrap", type=int, default=None, help="Bootstrap resamples")
@click.option("--alpha", type=float, default=None, help="Interval level is 1 - alpha")
@click.option("--seed", "eval_seed", type=int, default=None, help="Corruption and bootstrap seed")
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def eval_errors(
    ctx,
    checkpoint,
    corrupted_path,
    data_dir,
    split,
    error_p,
    out_dir,
    score_fn,
    n_bootstrap,
    alpha,
    eval_seed,
    force,
    overrides,
):
    """Zero-shot error detection per simulated error type."""
    apply_overrides(
        ctx.config,
        {
            "error_p": error_p,
            "score_fn": score_fn,
            "n_bootstrap": n_bootstrap,
            "alpha": alpha,
            "eval_seed": eval_seed,
        },
        overrides,
    )

    if ctx.dry_run:
        click.echo("DRY RUN: Would evaluate zero-shot error detection")
        click.echo(f"  Checkpoint: {checkpoint}")
        if corrupted_path:
            click.echo(f"  Corrupted set: {corrupted_path}")
        else:
            click.echo(f"  Corrupting {split} of {data_dir} with p={ctx.config.eval.error_p}")
        return

    result = _eval_errors_impl(ctx, checkpoint, corrupted_path, data_dir, split, out_dir, force)
    click.echo(result["table"])
    counts = ", ".join(f"{k}={v}" for k, v in result["accounting"].items())
    click.echo(f"Studies: {result['total']} ({counts})")
    click.echo(
        f"Re-label consistency: {result['consistent']}/{result['injected']} injected errors"
    )


def _eval_errors_impl(
    ctx,
    checkpoint: Path,
    corrupted_path: Path | None,
    data_dir: Path | None,
    split: str,
    out_dir: Path,
    force: bool = False,
) -> dict:
    """Implementation of error detection evaluation."""
    import json

    import numpy as np

    from xvl.commands.eval_classify import metric_functions
    from xvl.models.error_record import INJECTED_TYPES, ErrorType
    from xvl.models.scores import DetectionScore
    from xvl.services.corpus_io import write_jsonl, write_manifest
    from xvl.services.errorsim import check_error_consistency
    from xvl.services.metrics import average_reports, bootstrap_ci, format_table

    logger = ctx.logger
    ec = ctx.config.eval
    out_dir = prepare_out_dir(out_dir, force)
    pairs, inputs = load_pairs(ctx, corrupted_path, data_dir, split, out_dir)
    write_manifest(
        out_dir,
        new_manifest(
            ctx,
            "eval-errors",
            ec.eval_seed,
            {"checkpoint": checkpoint, **inputs},
            {"scores": out_dir / SCORES_NAME, "metrics": out_dir / METRICS_NAME},
        ),
    )

    counts = accounting(pairs)
    if sum(counts[t.value] for t in INJECTED_TYPES) == 0:
        raise DataError("The set holds no corrupted reports: nothing to detect")

    scorer = open_scorer(ctx, checkpoint)
    with stage_context("detect-errors", logger):
        scores = scorer.detect_errors(
            np.stack([s.image for s, _ in pairs]), [s.report for s, _ in pairs]
        )
    types = np.array([r.error_type.value for _, r in pairs])
    ids = np.array([s.study_id for s, _ in pairs])
    clean = types == ErrorType.NONE.value

    def report_for(name: str, metric, subject: str, rows: np.ndarray):
        labels = (types[rows] != ErrorType.NONE.value).astype(int)
        report = bootstrap_ci(
            metric,
            scores[rows],
            labels,
            n=ec.n_bootstrap,
            alpha=ec.alpha,
            seed=ec.eval_seed,
            sample_ids=ids[rows].tolist(),
            name=name,
        )
        report.subject, report.mode = subject, "error"
        return report

    present = [t for t in INJECTED_TYPES if counts[t.value]]
    for t in [t for t in INJECTED_TYPES if t not in present]:
        logger.warning(f"No {t.value} errors in the set; skipping")
    reports = []
    for name, metric in metric_functions().items():
        per_type = [
            report_for(name, metric, t.value, clean | (types == t.value)) for t in present
        ]
        reports += per_type
        reports.append(average_reports(per_type, subject="mean"))
        reports.append(report_for(name, metric, "any", np.ones(len(pairs), dtype=bool)))

    injected = [(s, r) for s, r in pairs if r.is_error]
    consistent = sum(check_error_consistency(s, r) for s, r in injected)
    if consistent < len(injected):
        logger.warning(f"{len(injected) - consistent} injected errors fail the re-label check")

    score_records = [
        DetectionScore(
            study_id=s.study_id,
            score=float(np.clip(score, 0.0, 1.0)),
            mode="error",
            subject=r.error_type.value,
            label=int(r.is_error),
        )
        for (s, r), score in zip(pairs, scores, strict=True)
    ]
    write_jsonl(out_dir / SCORES_NAME, (r.to_dict() for r in score_records))
    write_jsonl(out_dir / METRICS_NAME, (r.to_dict() for r in reports))
    (out_dir / ACCOUNTING_NAME).write_text(
        json.dumps(
            {
                "counts": counts,
                "total": len(pairs),
                "inapplicable": sum(r.inapplicable for _, r in pairs),
                "consistent": consistent,
                "injected": len(injected),
            },
            indent=2,
        )
    )
    return {
        "table": format_table(reports),
        "reports": reports,
        "accounting": counts,
        "total": len(pairs),
        "consistent": consistent,
        "injected": len(injected),
    }
