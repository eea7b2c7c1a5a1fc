"""Run models - the manifest of a command invocation and per-step loss records."""

from dataclasses import dataclass, field
from datetime import datetime, timezone

UTC = timezone.utc


@dataclass
class RunManifest:
    """Everything needed to reproduce one command invocation."""

    command: str
    config: dict = field(default_factory=dict)
    seed: int = 0
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = "0.1.0"
    git_describe: str = "unknown"
    created_at: datetime = field(default_factory=lambda: datetime.now(UTC))

    def to_dict(self) -> dict:
        """Serialize to dictionary for JSON storage."""
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "git_describe": self.git_describe,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            command=data["command"],
            config=data.get("config", {}),
            seed=data.get("seed", 0),
            inputs=data.get("inputs", {}),
            outputs=data.get("outputs", {}),
            tool_version=data.get("tool_version", "0.1.0"),
            git_describe=data.get("git_describe", "unknown"),
            created_at=datetime.fromisoformat(data["created_at"]),
        )


@dataclass
class StepRecord:
    """Scalar loss terms of one optimizer step."""

    step: int
    cmc: float
    imc: float
    sent: float
    mlm: float
    itm: float
    dist: float
    total: float
    tau: float
    lr: float = 0.0
    lambda_dist: float = 0.0
    fallbacks: int = 0
    epoch: int = 0

    @property
    def base(self) -> float:
        return self.cmc + self.imc + self.sent + self.mlm + self.itm

    def recombined_total(self, lambda_dist: float | None = None) -> float:
        """(1 - lambda) * L + lambda * L_dist from the logged terms.

        Defaults to the effective lambda of the step (0 when distillation is off).
        """
        if lambda_dist is None:
            lambda_dist = self.lambda_dist
        return (1.0 - lambda_dist) * self.base + lambda_dist * self.dist

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "cmc": self.cmc,
            "imc": self.imc,
            "sent": self.sent,
            "mlm": self.mlm,
            "itm": self.itm,
            "dist": self.dist,
            "total": self.total,
            "tau": self.tau,
            "lr": self.lr,
            "lambda_dist": self.lambda_dist,
            "fallbacks": self.fallbacks,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StepRecord":
        return cls(
            step=data["step"],
            epoch=data.get("epoch", 0),
            cmc=data["cmc"],
            imc=data["imc"],
            sent=data["sent"],
            mlm=data["mlm"],
            itm=data["itm"],
            dist=data["dist"],
            total=data["total"],
            tau=data["tau"],
            lr=data.get("lr", 0.0),
            lambda_dist=data.get("lambda_dist", 0.0),
            fallbacks=data.get("fallbacks", 0),
        )
