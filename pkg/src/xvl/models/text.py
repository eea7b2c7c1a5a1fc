"""Tokenized text and MLM batch models."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class TokenizedText:
    """[CLS] w_1 .. w_k [SEP] followed by padding; mask is True up to [SEP]."""

    ids: tuple[int, ...]
    attention_mask: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of non-padding positions."""
        return sum(self.attention_mask)

    def ids_tensor(self) -> torch.Tensor:
        return torch.tensor(self.ids, dtype=torch.long)

    def mask_tensor(self) -> torch.Tensor:
        return torch.tensor(self.attention_mask, dtype=torch.bool)


@dataclass
class MaskedBatch:
    """MLM inputs: corrupted ids, targets (IGNORE_INDEX off-target) and selected positions."""

    input_ids: torch.Tensor
    labels: torch.Tensor
    mask_positions: torch.Tensor

    @property
    def num_targets(self) -> int:
        return int(self.mask_positions.sum().item())
