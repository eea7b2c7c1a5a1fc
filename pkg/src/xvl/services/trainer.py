"""Pre-training loop: schedule, EMA teacher, queue updates and step logging."""

import json
import logging
import math
from collections.abc import Callable
from pathlib import Path

import numpy as np
import torch
from torch import nn

from xvl.models.run import StepRecord
from xvl.models.study import SyntheticStudy
from xvl.models.vocabulary import Vocabulary
from xvl.services.checkpoint import save_checkpoint
from xvl.services.objectives import PretrainBatch, pretraining_losses
from xvl.services.state import RunState
from xvl.services.textpipe import encode_texts, split_sentences
from xvl.utils.config import ModelConfig, TrainConfig
from xvl.utils.errors import DataError, NumericAbortError
from xvl.utils.logging import log_step

STEP_LOG = "steps.jsonl"
ABORT_DUMP = "abort_state.json"
CHECKPOINT_NAME = "checkpoint.safetensors"


def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> nn.Module:
    """teacher <- m * teacher + (1 - m) * student, parameter by parameter."""
    if not 0.0 < momentum < 1.0:
        raise ValueError(f"momentum must be in (0, 1), got {momentum}")
    teacher_params = dict(teacher.named_parameters())
    student_params = dict(student.named_parameters())
    if teacher_params.keys() != student_params.keys():
        raise ValueError("Teacher and student have different parameters")
    with torch.no_grad():
        for name, t in teacher_params.items():
            s = student_params[name]
            if t.shape != s.shape:
                raise ValueError(f"Shape mismatch for {name}: {tuple(t.shape)} vs {tuple(s.shape)}")
            t.mul_(momentum).add_(s.detach(), alpha=1.0 - momentum)
    return teacher


def lr_schedule(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from lr_init to lr_peak, then cosine decay to 0.

    The last warmup step is warmup_epochs * steps_per_epoch - 1 and runs at lr_peak.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup_steps = config.warmup_epochs * steps_per_epoch
    total_steps = config.epochs * steps_per_epoch
    if warmup_steps > 1 and step < warmup_steps:
        return config.lr_init + (config.lr_peak - config.lr_init) * step / (warmup_steps - 1)
    if warmup_steps == 1 and step == 0:
        return config.lr_init
    if config.decay == "none":
        return config.lr_peak
    start = max(warmup_steps - 1, 0)
    span = max(total_steps - start, 1)
    progress = min(max((step - start) / span, 0.0), 1.0)
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def distillation_scale(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear ramp of the distillation weight from 0 to 1 over dist_warmup_epochs."""
    ramp = config.dist_warmup_epochs * steps_per_epoch
    if ramp <= 0:
        return 1.0
    return min(1.0, step / ramp)


def make_batch(
    studies: list[SyntheticStudy], vocab: Vocabulary, model_config: ModelConfig
) -> PretrainBatch:
    """Stack images, tokenize reports and their sentences."""
    images = torch.tensor(np.stack([s.image for s in studies]), dtype=torch.float32)
    ids, mask = encode_texts([s.report for s in studies], vocab, model_config.max_len)
    sentences, owner = [], []
    for index, study in enumerate(studies):
        for sentence in split_sentences(study.report):
            sentences.append(sentence)
            owner.append(index)
    if sentences:
        sentence_ids, sentence_mask = encode_texts(sentences, vocab, model_config.sentence_max_len)
    else:
        sentence_ids = torch.zeros(0, model_config.sentence_max_len, dtype=torch.long)
        sentence_mask = torch.zeros(0, model_config.sentence_max_len, dtype=torch.bool)
    return PretrainBatch(
        images=images,
        ids=ids,
        mask=mask,
        sentence_ids=sentence_ids,
        sentence_mask=sentence_mask,
        sentence_owner=torch.tensor(owner, dtype=torch.long),
    )


def training_subset(corpus: list[SyntheticStudy], config: TrainConfig) -> list[SyntheticStudy]:
    """Seeded subset of size round(fraction * n), kept in corpus order."""
    if config.train_fraction >= 1.0:
        return list(corpus)
    keep = max(1, round(config.train_fraction * len(corpus)))
    chosen = np.random.default_rng(config.seed).permutation(len(corpus))[:keep]
    return [corpus[i] for i in sorted(chosen.tolist())]


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def steps_per_epoch(n_studies: int, batch_size: int) -> int:
    return n_studies // batch_size


def _dump_abort_state(run_dir: Path | None, state: RunState, terms: dict, lr: float) -> str | None:
    if run_dir is None:
        return None
    path = Path(run_dir) / ABORT_DUMP
    path.write_text(
        json.dumps(
            {
                "step": state.step,
                "terms": {k: (v if math.isfinite(v) else str(v)) for k, v in terms.items()},
                "lr": lr,
                "tau": float(state.student.temperature),
            },
            indent=2,
        )
    )
    return str(path)


def train(
    state: RunState,
    corpus: list[SyntheticStudy],
    run_dir: Path | None = None,
    max_steps: int | None = None,
    logger: logging.Logger | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> RunState:
    """Run optimizer steps from state.step until the schedule ends or max_steps.

    Args:
        state: Run state to advance in place
        corpus: Training studies
        run_dir: Directory for steps.jsonl, periodic checkpoints and abort dumps
        max_steps: Absolute step at which to stop (0 or None for the full schedule)
        logger: Logger instance
        on_step: Callback receiving each StepRecord

    Returns:
        The advanced state
    """
    logger = logger or logging.getLogger("xvl")
    tc = state.config.train
    if tc.epochs == 0:
        return state
    if not corpus:
        raise DataError("Training corpus is empty")

    train_set = training_subset(corpus, tc)
    per_epoch = steps_per_epoch(len(train_set), tc.batch_size)
    if per_epoch == 0:
        raise DataError(
            f"Training set of {len(train_set)} studies is smaller than batch_size {tc.batch_size}"
        )
    total_steps = tc.epochs * per_epoch
    limit = max_steps or tc.max_steps
    if limit:
        total_steps = min(total_steps, limit)

    step_log = Path(run_dir) / STEP_LOG if run_dir else None
    student, teacher = state.student, state.teacher

    if tc.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)

    with torch.random.fork_rng(devices=[]):
        torch.set_rng_state(state.torch_rng)
        while state.step < total_steps:
            epoch, position = divmod(state.step, per_epoch)
            order = epoch_order(len(train_set), tc.seed, epoch)
            chosen = order[position * tc.batch_size : (position + 1) * tc.batch_size]
            batch = make_batch([train_set[i] for i in chosen], state.vocab, state.config.model)

            lr = lr_schedule(state.step, tc, per_epoch)
            for group in state.optimizer.param_groups:
                group["lr"] = lr

            student.train()
            terms = pretraining_losses(
                student, teacher, batch, state.queues, tc, state.vocab, state.generator,
                distillation_scale(state.step, tc, per_epoch),
            )
            scalars = terms.scalars()
            if not math.isfinite(scalars["total"]):
                dump = _dump_abort_state(run_dir, state, scalars, lr)
                raise NumericAbortError(
                    f"Non-finite loss at step {state.step}: {scalars}", dump_path=dump
                )

            state.optimizer.zero_grad(set_to_none=True)
            terms.total.backward()
            if any(p.grad is not None for p in teacher.parameters()):
                raise RuntimeError("Teacher parameters received gradients")
            nn.utils.clip_grad_norm_(student.parameters(), tc.grad_clip)
            state.optimizer.step()

            ema_update(teacher, student, tc.momentum)
            state.queues.image.enqueue(terms.image_momentum)
            state.queues.text.enqueue(terms.text_momentum)

            record = StepRecord(
                step=state.step,
                epoch=epoch,
                tau=float(student.temperature),
                lr=lr,
                lambda_dist=terms.lambda_dist,
                fallbacks=terms.fallbacks,
                **scalars,
            )
            state.log.append(record)
            state.step += 1
            if step_log is not None:
                with open(step_log, "a") as f:
                    f.write(json.dumps(record.to_dict()) + "\n")
            log_step(logger, record.step, {**scalars, "tau": record.tau, "lr": lr})
            if terms.mlm_empty and tc.use_mlm:
                logger.debug(f"step {record.step}: no masked positions, MLM term is 0")
            if on_step is not None:
                on_step(record)

            if run_dir and tc.checkpoint_every and state.step % tc.checkpoint_every == 0:
                state.torch_rng = torch.get_rng_state()
                save_checkpoint(state, Path(run_dir) / CHECKPOINT_NAME)

        state.torch_rng = torch.get_rng_state()
    student.eval()
    return state


def read_step_log(path: Path) -> list[StepRecord]:
    with open(path) as f:
        return [StepRecord.from_dict(json.loads(line)) for line in f if line.strip()]
