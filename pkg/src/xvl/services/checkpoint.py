"""Checkpoint container: safetensors tensors plus one JSON metadata entry.

Tensor names:
    model.<param>          student weights
    teacher.<param>        EMA teacher weights
    queue.image.buffer     image feature queue (ring buffer order)
    queue.text.buffer      text feature queue
    optim.<param>.<slot>   AdamW moments and step counters
    rng.generator          loss-sampling generator state (uint8)
    rng.torch              global torch RNG state (uint8)

The "xvl" metadata entry is sorted-key JSON with the format version, step,
flat configuration, vocabulary, queue cursors and optimizer hyperparameters.
"""

import json
import os
from pathlib import Path

import torch
from safetensors import safe_open
from safetensors.torch import save

from xvl.models.vocabulary import Vocabulary
from xvl.services.state import RunState, init_state, optimizer_parameter_order
from xvl.utils.config import XVLConfig
from xvl.utils.errors import CheckpointError

FORMAT_VERSION = "xvl-ckpt/1"
METADATA_KEY = "xvl"


def _prefixed(prefix: str, tensors: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{name}": t.detach().clone().contiguous() for name, t in tensors.items()}


def _strip(prefix: str, tensors: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    start = len(prefix) + 1
    return {name[start:]: t for name, t in tensors.items() if name.startswith(prefix + ".")}


def state_tensors(state: RunState) -> dict[str, torch.Tensor]:
    tensors = _prefixed("model", state.student.state_dict())
    tensors.update(_prefixed("teacher", state.teacher.state_dict()))
    tensors["queue.image.buffer"] = state.queues.image.buffer.clone()
    tensors["queue.text.buffer"] = state.queues.text.buffer.clone()

    order = optimizer_parameter_order(state.student)
    for index, slots in state.optimizer.state_dict()["state"].items():
        for slot, value in slots.items():
            if not torch.is_tensor(value):
                value = torch.tensor(float(value))
            tensors[f"optim.{order[index]}.{slot}"] = value.detach().clone().contiguous()

    tensors["rng.generator"] = state.generator.get_state().clone()
    tensors["rng.torch"] = state.torch_rng.clone()
    return tensors


def state_metadata(state: RunState) -> dict:
    groups = [
        {k: v for k, v in group.items() if k != "params"}
        for group in state.optimizer.state_dict()["param_groups"]
    ]
    return {
        "format": FORMAT_VERSION,
        "step": state.step,
        "config": state.config.flatten(),
        "vocab": list(state.vocab.tokens),
        "queues": {
            "image": {"cursor": state.queues.image.cursor, "size": state.queues.image.size},
            "text": {"cursor": state.queues.text.cursor, "size": state.queues.text.size},
        },
        "param_groups": groups,
    }


def save_checkpoint(state: RunState, path: Path) -> Path:
    """Write atomically; identical states produce identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {METADATA_KEY: json.dumps(state_metadata(state), sort_keys=True)}
    data = save(state_tensors(state), metadata=metadata)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def _read(path: Path) -> tuple[dict, dict[str, torch.Tensor]]:
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with safe_open(str(path), framework="pt") as f:
            raw_meta = f.metadata() or {}
            tensors = {name: f.get_tensor(name) for name in f.keys()}
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if METADATA_KEY not in raw_meta:
        raise CheckpointError(f"{path} is not an xvl checkpoint (no metadata)")
    try:
        meta = json.loads(raw_meta[METADATA_KEY])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt metadata: {e}") from e
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format {meta.get('format')!r}, "
            f"expected {FORMAT_VERSION!r}"
        )
    return meta, tensors


def load_checkpoint(path: Path) -> RunState:
    """Rebuild a RunState; fails without returning partial state."""
    path = Path(path)
    meta, tensors = _read(path)
    try:
        config = XVLConfig.from_flat(meta["config"])
        vocab = Vocabulary(tuple(meta["vocab"]))
        state = init_state(config, vocab)

        state.student.load_state_dict(_strip("model", tensors), strict=True)
        state.teacher.load_state_dict(_strip("teacher", tensors), strict=True)

        for which in ("image", "text"):
            getattr(state.queues, which).load_state_dict(
                {"buffer": tensors[f"queue.{which}.buffer"], **meta["queues"][which]}
            )

        order = optimizer_parameter_order(state.student)
        optim = _strip("optim", tensors)
        slots: dict[int, dict[str, torch.Tensor]] = {}
        for index, name in enumerate(order):
            found = {k[len(name) + 1 :]: v for k, v in optim.items() if k.rsplit(".", 1)[0] == name}
            if found:
                slots[index] = found
        groups, start = [], 0
        for group, live in zip(meta["param_groups"], state.optimizer.param_groups, strict=True):
            count = len(live["params"])
            groups.append({**group, "params": list(range(start, start + count))})
            start += count
        state.optimizer.load_state_dict({"state": slots, "param_groups": groups})

        state.generator.set_state(tensors["rng.generator"])
        state.torch_rng = tensors["rng.torch"]
        state.step = int(meta["step"])
    except (KeyError, RuntimeError, ValueError) as e:
        raise CheckpointError(f"{path}: incompatible checkpoint contents: {e}") from e
    return state
