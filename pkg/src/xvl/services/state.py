"""Run state: student, EMA teacher, queues, optimizer and random streams."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
from torch import nn

from xvl.models.run import StepRecord
from xvl.models.vocabulary import Vocabulary
from xvl.services.network import XVLModel, build_model
from xvl.services.objectives import QueuePair
from xvl.utils.config import TrainConfig, XVLConfig


def decay_parameter_names(model: nn.Module) -> tuple[list[str], list[str]]:
    """(weight-decayed, not decayed) parameter names in registration order.

    Matrices and embeddings decay; biases, norms, tokens, positions and the
    temperature do not.
    """
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if param.dim() >= 2 and "pos_embed" not in name and "cls_token" not in name:
            decay.append(name)
        else:
            no_decay.append(name)
    return decay, no_decay


def make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    params = dict(model.named_parameters())
    decay, no_decay = decay_parameter_names(model)
    return torch.optim.AdamW(
        [
            {"params": [params[n] for n in decay], "weight_decay": config.weight_decay},
            {"params": [params[n] for n in no_decay], "weight_decay": 0.0},
        ],
        lr=config.lr_init,
        betas=(config.beta1, config.beta2),
    )


def optimizer_parameter_order(model: nn.Module) -> list[str]:
    """Parameter names in the optimizer's integer-index order."""
    decay, no_decay = decay_parameter_names(model)
    return decay + no_decay


def make_teacher(student: XVLModel) -> XVLModel:
    teacher = copy.deepcopy(student)
    for param in teacher.parameters():
        param.requires_grad_(False)
    return teacher.eval()


@dataclass
class RunState:
    """Everything a resumed run needs to continue bit-for-bit."""

    config: XVLConfig
    vocab: Vocabulary
    student: XVLModel
    teacher: XVLModel
    queues: QueuePair
    optimizer: torch.optim.AdamW
    generator: torch.Generator
    torch_rng: torch.Tensor
    step: int = 0
    log: list[StepRecord] = field(default_factory=list)


def init_state(config: XVLConfig, vocab: Vocabulary) -> RunState:
    """Fresh state seeded by `config.train.seed`."""
    seed = config.train.seed
    student = build_model(config.model, len(vocab), seed=seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        torch_rng = torch.get_rng_state()
    return RunState(
        config=config,
        vocab=vocab,
        student=student,
        teacher=make_teacher(student),
        queues=QueuePair.empty(config.train.queue_size, config.model.embed_dim),
        optimizer=make_optimizer(student, config.train),
        generator=torch.Generator().manual_seed(seed),
        torch_rng=torch_rng,
    )
