"""Compare command - paired bootstrap comparison of two score files."""

from pathlib import Path

import click

from xvl.cli import apply_overrides, new_manifest, override_option, pass_context, prepare_out_dir
from xvl.utils.errors import DataError

COMPARISON_NAME = "comparison.jsonl"


def group_scores(records: list[dict]) -> dict[tuple[str, str], dict[str, tuple[float, int]]]:
    """(mode, subject) -> study_id -> (score, label). Error scores pool into one group."""
    from xvl.models.scores import DetectionScore

    groups: dict[tuple[str, str], dict[str, tuple[float, int]]] = {}
    for record in records:
        score = DetectionScore.from_dict(record)
        if score.label is None:
            raise DataError(f"Score for {score.study_id} has no label")
        subject = "any" if score.mode == "error" else score.subject
        group = groups.setdefault((score.mode, subject), {})
        if score.study_id in group:
            raise DataError(f"Duplicate score for {score.study_id} in {score.mode}/{subject}")
        group[score.study_id] = (score.score, score.label)
    return groups


def paired_rows(group_a: dict, group_b: dict, key: tuple[str, str]):
    """Aligned (ids, scores_a, scores_b, labels); both files must cover the same studies."""
    import numpy as np

    if group_a.keys() != group_b.keys():
        raise DataError(f"{key[0]}/{key[1]}: the files score different studies")
    ids = sorted(group_a)
    labels = [group_a[i][1] for i in ids]
    if labels != [group_b[i][1] for i in ids]:
        raise DataError(f"{key[0]}/{key[1]}: labels disagree between the files")
    scores_a = np.array([group_a[i][0] for i in ids])
    scores_b = np.array([group_b[i][0] for i in ids])
    return ids, scores_a, scores_b, np.array(labels)


@click.command()
@click.argument("scores_a", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("scores_b", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--metric",
    type=click.Choice(["auc", "f1", "f1@0.5"]),
    default="auc",
    show_default=True,
    help="Metric to compare",
)
@click.option("--n-bootstrap", type=int, default=None, help="Bootstrap resamples")
@click.option("--alpha", type=float, default=None, help="Interval level is 1 - alpha")
@click.option("--seed", "eval_seed", type=int, default=None, help="Bootstrap seed")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write comparison records here",
)
@click.option("--force", is_flag=True, default=False, help="Overwrite a non-empty directory")
@override_option
@pass_context
def compare(
    ctx, scores_a, scores_b, metric, n_bootstrap, alpha, eval_seed, out_dir, force, overrides
):
    """Bootstrap the difference A - B of a metric on the same studies."""
    apply_overrides(
        ctx.config, {"n_bootstrap": n_bootstrap, "alpha": alpha, "eval_seed": eval_seed}, overrides
    )

    if ctx.dry_run:
        click.echo("DRY RUN: Would compare score files")
        click.echo(f"  A: {scores_a}")
        click.echo(f"  B: {scores_b}")
        click.echo(f"  Metric: {metric}, resamples: {ctx.config.eval.n_bootstrap}")
        return

    rows = _compare_impl(ctx, scores_a, scores_b, metric, out_dir, force)
    header = f"{'subject':<16} {'mode':<9} {'A':>7} {'B':>7} {'A - B':>7}  {'CI':<19} sig"
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        ci = f"[{row['ci_lower']:.3f}, {row['ci_upper']:.3f}]"
        click.echo(
            f"{row['subject']:<16} {row['mode']:<9} {row['a']:>7.3f} {row['b']:>7.3f} "
            f"{row['difference']:>7.3f}  {ci:<19} {'yes' if row['significant'] else 'no'}"
        )


def _compare_impl(
    ctx,
    scores_a: Path,
    scores_b: Path,
    metric: str,
    out_dir: Path | None = None,
    force: bool = False,
) -> list[dict]:
    """Implementation of the paired comparison."""
    from xvl.commands.eval_classify import metric_functions
    from xvl.services.corpus_io import read_jsonl, write_jsonl, write_manifest
    from xvl.services.metrics import bootstrap_ci, paired_difference, significance

    ec = ctx.config.eval
    groups_a = group_scores(read_jsonl(scores_a))
    groups_b = group_scores(read_jsonl(scores_b))
    shared = sorted(groups_a.keys() & groups_b.keys())
    if not shared:
        raise DataError("The score files share no (mode, subject) groups")

    if out_dir is not None:
        out_dir = prepare_out_dir(out_dir, force)
        write_manifest(
            out_dir,
            new_manifest(
                ctx,
                "compare",
                ec.eval_seed,
                {"a": scores_a, "b": scores_b, "metric": metric},
                {"comparison": out_dir / COMPARISON_NAME},
            ),
        )

    function = metric_functions()[metric]
    rows = []
    for key in shared:
        ids, a, b, labels = paired_rows(groups_a[key], groups_b[key], key)
        reports = [
            bootstrap_ci(
                function,
                scores,
                labels,
                n=ec.n_bootstrap,
                alpha=ec.alpha,
                seed=ec.eval_seed,
                sample_ids=ids,
                name=metric,
            )
            for scores in (a, b)
        ]
        difference = paired_difference(*reports)
        rows.append(
            {
                "mode": key[0],
                "subject": key[1],
                "metric": metric,
                "a": reports[0].estimate,
                "b": reports[1].estimate,
                "difference": difference.estimate,
                "ci_lower": difference.ci_lower,
                "ci_upper": difference.ci_upper,
                "significant": significance(*reports),
                "n": len(ids),
            }
        )

    if out_dir is not None:
        write_jsonl(out_dir / COMPARISON_NAME, rows)
    return rows
