"""CLI command modules for xvl."""

from xvl.commands import (
    attend,
    compare,
    correct,
    eval_classify,
    eval_errors,
    gen_data,
    train,
)

__all__ = [
    "gen_data",
    "train",
    "eval_classify",
    "eval_errors",
    "correct",
    "attend",
    "compare",
]
