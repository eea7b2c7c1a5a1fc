"""Eval-classify command - zero-shot classification with bootstrap intervals."""

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

MODES = ("simple", "detailed")
SCORES_NAME = "scores.jsonl"
METRICS_NAME = "metrics.jsonl"


def metric_functions() -> dict:
    """Bootstrapped metrics: AUC, F1 at the best threshold and F1 at 0.5."""
    from xvl.services.metrics import auc, best_f1, f1

    return {
        "auc": auc,
        "f1": lambda scores, labels: best_f1(scores, labels)[0],
        "f1@0.5": f1,
    }


def evaluate_matrix(scores, labels, subjects, sample_ids, mode: str, config) -> list:
    """Per-subject and mean-over-subjects MetricReports for (N, K) scores."""
    from xvl.services.metrics import best_f1, bootstrap_ci, mean_over_classes

    ec = config.eval
    reports = []
    for name, metric in metric_functions().items():
        for k, subject in enumerate(subjects):
            report = bootstrap_ci(
                metric,
                scores[:, k],
                labels[:, k],
                n=ec.n_bootstrap,
                alpha=ec.alpha,
                seed=ec.eval_seed,
                sample_ids=sample_ids,
                name=name,
            )
            report.subject, report.mode = subject, mode
            if name == "f1":
                report.threshold = best_f1(scores[:, k], labels[:, k])[1]
            elif name == "f1@0.5":
                report.threshold = 0.5
            reports.append(report)
        mean = bootstrap_ci(
            mean_over_classes(metric),
            scores,
            labels,
            n=ec.n_bootstrap,
            alpha=ec.alpha,
            seed=ec.eval_seed,
            sample_ids=sample_ids,
            name=name,
        )
        mean.subject, mean.mode = "mean", mode
        reports.append(mean)
    return reports


@click.command("eval-classify")
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Trained checkpoint",
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Corpus directory written by gen-data",
)
@click.option("--split", default="test", show_default=True, help="Split to evaluate")
@click.option(
    "--prompts",
    "prompts_path",
    type=click.Path(path_type=Path),
    default=None,
    help="Prompt file (default: <data>/prompts.txt)",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Output directory",
)
@click.option("--mode", "modes", type=click.Choice(MODES), multiple=True, help="Prompt modes")
@click.option("--score-fn", type=click.Choice(["itm", "cosine"]), default=None)
@click.option("--n-bootstrap", type=int, default=None, help="Bootstrap resamples")
@click.option("--alpha", type=float, default=None, help="Interval level is 1 - alpha")
@click.option("--seed", "eval_seed", type=int, default=None, help="Bootstrap seed")
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def eval_classify(
    ctx,
    checkpoint,
    data_dir,
    split,
    prompts_path,
    out_dir,
    modes,
    score_fn,
    n_bootstrap,
    alpha,
    eval_seed,
    force,
    overrides,
):
    """Zero-shot per-class detection with simple and detailed prompts."""
    apply_overrides(
        ctx.config,
        {"score_fn": score_fn, "n_bootstrap": n_bootstrap, "alpha": alpha, "eval_seed": eval_seed},
        overrides,
    )
    modes = modes or MODES
    prompts_path = prompts_path or Path(data_dir) / "prompts.txt"

    if ctx.dry_run:
        click.echo("DRY RUN: Would evaluate zero-shot classification")
        click.echo(f"  Checkpoint: {checkpoint}")
        click.echo(f"  Split: {split_path(data_dir, split)}")
        click.echo(f"  Prompts: {prompts_path}")
        click.echo(f"  Modes: {', '.join(modes)}")
        return

    result = _eval_classify_impl(
        ctx, checkpoint, data_dir, split, prompts_path, out_dir, modes, force
    )
    click.echo(result["table"])
    click.echo(f"{result['records']} metric records written to {out_dir}")


def _eval_classify_impl(
    ctx,
    checkpoint: Path,
    data_dir: Path,
    split: str,
    prompts_path: Path,
    out_dir: Path,
    modes: tuple[str, ...],
    force: bool = False,
) -> dict:
    """Implementation of zero-shot classification evaluation."""
    import numpy as np

    from xvl.models.scores import DetectionScore
    from xvl.services.corpus_io import corpus_hash, read_corpus, write_jsonl, write_manifest
    from xvl.services.metrics import format_table
    from xvl.services.zeroshot import load_prompts

    logger = ctx.logger
    prompts = load_prompts(prompts_path)
    data_path = split_path(data_dir, split)
    studies = read_corpus(data_path)
    if not studies:
        raise DataError(f"{data_path} holds no studies")

    out_dir = prepare_out_dir(out_dir, force)
    write_manifest(
        out_dir,
        new_manifest(
            ctx,
            "eval-classify",
            ctx.config.eval.eval_seed,
            {
                "checkpoint": checkpoint,
                "data": data_path,
                "data_hash": corpus_hash(data_path),
                "prompts": prompts_path,
            },
            {"scores": out_dir / SCORES_NAME, "metrics": out_dir / METRICS_NAME},
        ),
    )

    scorer = open_scorer(ctx, checkpoint)
    subjects = [p.class_id for p in prompts]
    images = np.stack([s.image for s in studies])
    sample_ids = [s.study_id for s in studies]
    labels = np.array(
        [[int(c in s.label_classes) for c in subjects] for s in studies], dtype=int
    ).reshape(len(studies), len(subjects))

    score_records, reports = [], []
    for mode in modes:
        with stage_context(f"classify-{mode}", logger):
            scores = np.stack(
                [scorer.classify(images, c, prompts, mode) for c in subjects], axis=1
            )
            for i, study in enumerate(studies):
                for k, subject in enumerate(subjects):
                    score_records.append(
                        DetectionScore(
                            study.study_id, float(scores[i, k]), mode, subject, int(labels[i, k])
                        )
                    )
            reports += evaluate_matrix(scores, labels, subjects, sample_ids, mode, ctx.config)

    write_jsonl(out_dir / SCORES_NAME, (r.to_dict() for r in score_records))
    write_jsonl(out_dir / METRICS_NAME, (r.to_dict() for r in reports))
    return {"records": len(reports), "table": format_table(reports), "reports": reports}
