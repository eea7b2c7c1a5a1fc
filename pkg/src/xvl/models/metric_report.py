"""MetricReport model - point estimate with a percentile bootstrap interval."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class MetricReport:
    """AUC/F1 (or a difference of them) with its bootstrap confidence interval.

    The percentile interval may exclude the point estimate in pathological
    cases; `estimate_outside_ci` flags that instead of enforcing an ordering.
    """

    metric: str
    estimate: float
    ci_lower: float
    ci_upper: float
    n_resamples: int
    alpha: float
    seed: int = 0
    redraws: int = 0
    subject: str = ""
    mode: str = ""
    threshold: float | None = None
    sample_ids: tuple[str, ...] = field(default=(), repr=False)
    resamples: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.ci_lower > self.ci_upper:
            raise ValueError("ci_lower must not exceed ci_upper")

    @property
    def estimate_outside_ci(self) -> bool:
        return not self.ci_lower <= self.estimate <= self.ci_upper

    @property
    def width(self) -> float:
        return self.ci_upper - self.ci_lower

    def to_dict(self, include_resamples: bool = False) -> dict:
        data = {
            "metric": self.metric,
            "subject": self.subject,
            "mode": self.mode,
            "estimate": self.estimate,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "n_resamples": self.n_resamples,
            "alpha": self.alpha,
            "seed": self.seed,
            "redraws": self.redraws,
            "threshold": self.threshold,
            "estimate_outside_ci": self.estimate_outside_ci,
        }
        if include_resamples:
            data["sample_ids"] = list(self.sample_ids)
            data["resamples"] = list(self.resamples)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> MetricReport:
        return cls(
            metric=data["metric"],
            estimate=data["estimate"],
            ci_lower=data["ci_lower"],
            ci_upper=data["ci_upper"],
            n_resamples=data["n_resamples"],
            alpha=data["alpha"],
            seed=data.get("seed", 0),
            redraws=data.get("redraws", 0),
            subject=data.get("subject", ""),
            mode=data.get("mode", ""),
            threshold=data.get("threshold"),
            sample_ids=tuple(data.get("sample_ids", ())),
            resamples=tuple(data.get("resamples", ())),
        )
