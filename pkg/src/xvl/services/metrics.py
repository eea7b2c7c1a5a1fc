"""AUC, F1 and percentile bootstrap confidence intervals."""

from collections.abc import Callable, Sequence

import numpy as np
from sklearn.metrics import f1_score, roc_auc_score

from xvl.models.metric_report import MetricReport
from xvl.utils.errors import DataError

Metric = Callable[[np.ndarray, np.ndarray], float]


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve; ties count one half."""
    labels = np.asarray(labels).astype(int)
    if np.unique(labels).size < 2:
        raise ValueError("AUC needs both positive and negative labels")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=np.float64)))


def f1(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """F1 of `score >= threshold`; 0 when nothing is predicted positive."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    predictions = (np.asarray(scores, dtype=np.float64) >= threshold).astype(int)
    return float(f1_score(np.asarray(labels).astype(int), predictions, zero_division=0))


def best_f1(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, float]:
    """(F1, threshold) at the F1-maximizing threshold; ties go to the lowest threshold.

    Candidate thresholds are the distinct scores, evaluated in one sorted pass.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0:
        return 0.0, 0.5
    order = np.argsort(-scores, kind="stable")
    ranked, hits = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(ranked)), ranked.size - 1]
    tp = np.cumsum(hits)[last]
    predicted = last + 1
    values = 2.0 * tp / (predicted + hits.sum())
    best = int(np.flatnonzero(values == values.max())[-1])
    return float(values[best]), float(ranked[last[best]])


def mean_over_classes(metric: Metric) -> Metric:
    """Lift a binary metric to (n, K) score/label matrices by averaging columns."""

    def averaged(scores: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean([metric(scores[:, k], labels[:, k]) for k in range(scores.shape[1])]))

    return averaged


def _single_class(labels: np.ndarray) -> bool:
    if labels.ndim == 1:
        return np.unique(labels).size < 2
    return any(np.unique(labels[:, k]).size < 2 for k in range(labels.shape[1]))


def resample_indices(
    labels: np.ndarray, n_resamples: int, seed: int, max_redraws: int | None = None
) -> tuple[np.ndarray, int]:
    """(n_resamples, N) row indices drawn with replacement; one-class draws are redrawn.

    Returns the indices and the number of redraws.
    """
    labels = np.asarray(labels)
    size = labels.shape[0]
    if size == 0:
        raise DataError("Cannot bootstrap an empty sample")
    cap = max_redraws if max_redraws is not None else 10 * n_resamples
    rng = np.random.default_rng(seed)
    indices = np.empty((n_resamples, size), dtype=np.int64)
    redraws = 0
    for i in range(n_resamples):
        draw = rng.integers(0, size, size)
        while _single_class(labels[draw]):
            redraws += 1
            if redraws > cap:
                raise DataError(
                    f"Bootstrap redraw cap {cap} exceeded after {i} accepted resamples "
                    f"(N={size}, positives={int(np.sum(labels))}); labels are too imbalanced"
                )
            draw = rng.integers(0, size, size)
        indices[i] = draw
    return indices, redraws


def percentile_interval(values: Sequence[float], alpha: float) -> tuple[float, float]:
    """Percentiles 100*alpha/2 and 100*(1 - alpha/2), linear interpolation."""
    bounds = [100 * alpha / 2, 100 * (1 - alpha / 2)]
    lower, upper = np.percentile(np.asarray(values, dtype=np.float64), bounds)
    return float(lower), float(upper)


def bootstrap_ci(
    metric: Metric,
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    n: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    sample_ids: Sequence[str] | None = None,
    name: str | None = None,
    max_redraws: int | None = None,
) -> MetricReport:
    """Percentile bootstrap interval of metric(scores, labels).

    Scores and labels may be (N,) or (N, K); rows are resampled together.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    if sample_ids is not None and len(sample_ids) != len(labels):
        raise ValueError("sample_ids must have one id per row")

    name = name or getattr(metric, "__name__", "metric")
    if _single_class(labels):
        raise DataError(
            f"{name} needs positive and negative labels "
            f"(N={labels.shape[0]}, positives={int(np.sum(labels))})"
        )
    indices, redraws = resample_indices(labels, n, seed, max_redraws)
    values = [metric(scores[idx], labels[idx]) for idx in indices]
    lower, upper = percentile_interval(values, alpha)
    return MetricReport(
        metric=name,
        estimate=float(metric(scores, labels)),
        ci_lower=lower,
        ci_upper=upper,
        n_resamples=n,
        alpha=alpha,
        seed=seed,
        redraws=redraws,
        sample_ids=tuple(sample_ids) if sample_ids is not None else (),
        resamples=tuple(float(v) for v in values),
    )


def _check_paired(report_a: MetricReport, report_b: MetricReport) -> None:
    if report_a.sample_ids != report_b.sample_ids:
        raise ValueError("Reports were computed on different sample ids")
    for attr in ("metric", "n_resamples", "alpha", "seed"):
        if getattr(report_a, attr) != getattr(report_b, attr):
            raise ValueError(f"Reports differ in {attr}: cannot pair resamples")
    if len(report_a.resamples) != len(report_b.resamples) or not report_a.resamples:
        raise ValueError("Reports must carry their resample values")


def paired_difference(report_a: MetricReport, report_b: MetricReport) -> MetricReport:
    """Bootstrap interval of (a - b) over the shared resample indices."""
    _check_paired(report_a, report_b)
    diffs = np.asarray(report_a.resamples) - np.asarray(report_b.resamples)
    lower, upper = percentile_interval(diffs, report_a.alpha)
    return MetricReport(
        metric=f"{report_a.metric}_difference",
        estimate=report_a.estimate - report_b.estimate,
        ci_lower=lower,
        ci_upper=upper,
        n_resamples=report_a.n_resamples,
        alpha=report_a.alpha,
        seed=report_a.seed,
        subject=report_a.subject,
        mode=report_a.mode,
        sample_ids=report_a.sample_ids,
        resamples=tuple(float(d) for d in diffs),
    )


def significance(report_a: MetricReport, report_b: MetricReport) -> bool:
    """True iff the paired-difference interval excludes 0."""
    difference = paired_difference(report_a, report_b)
    return difference.ci_lower > 0.0 or difference.ci_upper < 0.0


def average_reports(reports: Sequence[MetricReport], subject: str = "mean") -> MetricReport:
    """Mean of several reports; the interval comes from the elementwise mean of resamples.

    Each report may be computed on its own rows (one error type against the
    clean studies, say) as long as all share n_resamples, alpha and seed.
    """
    if not reports:
        raise DataError("Nothing to average")
    first = reports[0]
    for r in reports[1:]:
        for attr in ("metric", "n_resamples", "alpha", "seed"):
            if getattr(r, attr) != getattr(first, attr):
                raise ValueError(f"Reports differ in {attr}: cannot average")
    resamples = np.mean([np.asarray(r.resamples) for r in reports], axis=0)
    lower, upper = percentile_interval(resamples, first.alpha)
    return MetricReport(
        metric=first.metric,
        estimate=float(np.mean([r.estimate for r in reports])),
        ci_lower=lower,
        ci_upper=upper,
        n_resamples=first.n_resamples,
        alpha=first.alpha,
        seed=first.seed,
        redraws=sum(r.redraws for r in reports),
        subject=subject,
        mode=first.mode,
        resamples=tuple(float(v) for v in resamples),
    )


def format_table(reports: Sequence[MetricReport]) -> str:
    """Fixed-width table: subject, mode, metric, estimate and interval."""
    header = f"{'subject':<16} {'mode':<9} {'metric':<14} {'estimate':>8}  {'95% CI':<19}"
    lines = [header, "-" * len(header)]
    for r in reports:
        level = round(100 * (1 - r.alpha))
        ci = f"[{r.ci_lower:.3f}, {r.ci_upper:.3f}]"
        flag = " *" if r.estimate_outside_ci else ""
        label = ci if level == 95 else f"{ci} ({level}%)"
        lines.append(
            f"{r.subject:<16} {r.mode:<9} {r.metric:<14} {r.estimate:>8.3f}  {label}{flag}"
        )
    return "\n".join(lines)
