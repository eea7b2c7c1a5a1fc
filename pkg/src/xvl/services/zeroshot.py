"""Zero-shot classification, error detection, report correction and attention maps."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from xvl.models.scores import AttentionHeatmap, CorrectionResult, Substitution
from xvl.models.study import ABNORMAL_CLASSES, LEVELS, SIDES
from xvl.models.vocabulary import Vocabulary
from xvl.services.checkpoint import load_checkpoint
from xvl.services.network import FusionOutput, XVLModel, match_logit
from xvl.services.state import RunState
from xvl.services.textpipe import detokenize, encode_texts, split_sentences, tokenize
from xvl.utils.errors import DataError

DETAILED_TEMPLATES = (
    "There is small {c} in the left upper zone.",
    "There is large {c} in the right upper zone.",
    "There is small {c} in the right lower zone.",
    "There is large {c} in the left lower zone.",
    "There is {c}.",
)


@dataclass
class ClassPrompts:
    class_id: str
    positive: str
    negative: str
    detailed: list[str] = field(default_factory=list)


@dataclass
class PromptSet:
    classes: dict[str, ClassPrompts] = field(default_factory=dict)

    def __getitem__(self, class_id: str) -> ClassPrompts:
        if class_id not in self.classes:
            raise DataError(f"No prompts for class {class_id!r}")
        return self.classes[class_id]

    def __iter__(self):
        return iter(self.classes.values())

    def texts(self) -> list[str]:
        """Every prompt sentence (used to extend the vocabulary)."""
        out = []
        for prompts in self:
            out += [prompts.positive, prompts.negative, *prompts.detailed]
        return out


def default_prompts(classes: Sequence[str] = ABNORMAL_CLASSES) -> PromptSet:
    """'{c}' / 'no {c}' plus five location and extent paraphrases per class."""
    return PromptSet(
        {
            c: ClassPrompts(c, c, f"no {c}", [t.format(c=c) for t in DETAILED_TEMPLATES])
            for c in classes
        }
    )


def dump_prompts(prompts: PromptSet, path: Path) -> None:
    """One block per class, blocks separated by blank lines."""
    blocks = []
    for p in prompts:
        lines = [f"class: {p.class_id}", f"positive: {p.positive}", f"negative: {p.negative}"]
        lines += [f"detailed: {d}" for d in p.detailed]
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def load_prompts(path: Path) -> PromptSet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Prompt file not found: {path}")
    classes: dict[str, ClassPrompts] = {}
    for block in path.read_text().split("\n\n"):
        fields: dict[str, list[str]] = {}
        for line in block.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise DataError(f"{path}: malformed prompt line {line!r}")
            fields.setdefault(key.strip(), []).append(value.strip())
        if not fields:
            continue
        for required in ("class", "positive", "negative"):
            if required not in fields:
                raise DataError(f"{path}: block {block.splitlines()[0]!r} lacks {required!r}")
        class_id = fields["class"][0]
        classes[class_id] = ClassPrompts(
            class_id, fields["positive"][0], fields["negative"][0], fields.get("detailed", [])
        )
    if not classes:
        raise DataError(f"{path}: no prompt blocks")
    return PromptSet(classes)


def quadrant_mass(heatmap: np.ndarray) -> dict[str, float]:
    """Share of total heatmap mass in each '<side> <level>' quadrant."""
    height, width = heatmap.shape
    total = float(heatmap.sum())
    masses = {}
    for row, level in enumerate(LEVELS):
        for col, side in enumerate(SIDES):
            block = heatmap[
                row * height // 2 : (row + 1) * height // 2,
                col * width // 2 : (col + 1) * width // 2,
            ]
            masses[f"{side} {level}"] = float(block.sum()) / total if total > 0 else 0.0
    return masses


class ZeroShotScorer:
    """Read-only zero-shot operations over a trained model."""

    def __init__(
        self,
        model: XVLModel,
        vocab: Vocabulary,
        score_fn: str = "itm",
        batch_size: int = 64,
    ):
        if score_fn not in ("itm", "cosine"):
            raise ValueError(f"score_fn must be 'itm' or 'cosine', got {score_fn!r}")
        self.model = model.eval()
        self.vocab = vocab
        self.score_fn = score_fn
        self.batch_size = batch_size
        self.max_len = model.config.max_len

    @classmethod
    def from_checkpoint(
        cls, path: Path, score_fn: str = "itm", batch_size: int = 64
    ) -> tuple[ZeroShotScorer, RunState]:
        """Scorer over the student weights of a saved run."""
        state = load_checkpoint(path)
        return cls(state.student, state.vocab, score_fn, batch_size), state

    def _images(self, images) -> torch.Tensor:
        array = np.asarray(images, dtype=np.float32)
        if array.ndim == 2:
            array = array[None]
        return torch.from_numpy(array)

    @torch.no_grad()
    def match_logits(self, images, texts: Sequence[str | list[str]]) -> np.ndarray:
        """Match logit per (image, text) pair.

        itm: l1 - l0 of the match head. cosine: projected cosine / temperature.
        """
        images = self._images(images)
        if images.shape[0] != len(texts):
            raise ValueError("images and texts must pair up")
        out = []
        for start in range(0, len(texts), self.batch_size):
            chunk = images[start : start + self.batch_size]
            texts_chunk = list(texts[start : start + self.batch_size])
            ids, mask = encode_texts(texts_chunk, self.vocab, self.max_len)
            patches = self.model.encode_image(chunk)
            words = self.model.encode_text(ids, mask)
            if self.score_fn == "itm":
                fused = self.model.fuse(patches, words, mask)
                logits = match_logit(self.model.itm_head(fused.v_cls_t2i, fused.v_cls_i2t))
            else:
                image_feat = self.model.project(patches[:, 0], "image")
                text_feat = self.model.project(words[:, 0], "text")
                logits = (image_feat * text_feat).sum(-1) / self.model.temperature
            out.append(logits.double().numpy())
        return np.concatenate(out) if out else np.zeros(0)

    def _to_score(self, logits: np.ndarray) -> np.ndarray:
        if self.score_fn == "itm":
            return 1.0 / (1.0 + np.exp(-logits))
        cosine = logits * float(self.model.temperature)
        return np.clip((cosine + 1.0) / 2.0, 0.0, 1.0)

    def match_scores(self, images, texts: Sequence[str | list[str]]) -> np.ndarray:
        """Match probability per pair (ITM softmax at index 'matched')."""
        return self._to_score(self.match_logits(images, texts))

    def match_score(self, image: np.ndarray, text: str | list[str]) -> float:
        return float(self.match_scores(image[None], [text])[0])

    def detect_errors(self, images, reports: Sequence[list[str]]) -> np.ndarray:
        """1 - match score; higher means more likely erroneous."""
        return 1.0 - self.match_scores(images, reports)

    def detect_error(self, image: np.ndarray, report: list[str]) -> float:
        return float(self.detect_errors(image[None], [report])[0])

    def classify(
        self, images, class_id: str, prompts: PromptSet, mode: str = "simple"
    ) -> np.ndarray:
        """P(positive) per image: two-way softmax of (positive logit, negative logit).

        simple uses the '{c}' prompt; detailed uses the mean logit over the
        class's detailed descriptions.
        """
        class_prompts = prompts[class_id]
        if mode == "simple":
            positives = [class_prompts.positive]
        elif mode == "detailed":
            if not class_prompts.detailed:
                raise DataError(f"Class {class_id!r} has no detailed descriptions")
            positives = list(class_prompts.detailed)
        else:
            raise ValueError(f"mode must be 'simple' or 'detailed', got {mode!r}")
        images = self._images(images)
        n = images.shape[0]
        texts = positives + [class_prompts.negative]
        logits = self.match_logits(
            images.repeat_interleave(len(texts), dim=0), texts * n
        ).reshape(n, len(texts))
        positive = logits[:, :-1].mean(axis=1)
        negative = logits[:, -1]
        return 1.0 / (1.0 + np.exp(negative - positive))

    def classify_simple(self, image: np.ndarray, class_id: str, prompts: PromptSet) -> float:
        return float(self.classify(image, class_id, prompts, "simple")[0])

    def classify_detailed(self, image: np.ndarray, class_id: str, prompts: PromptSet) -> float:
        return float(self.classify(image, class_id, prompts, "detailed")[0])

    @torch.no_grad()
    def correct_report(
        self, image: np.ndarray, report: list[str], theta: float = 0.5
    ) -> CorrectionResult:
        """Mask each word position independently and substitute confident predictions.

        Every prediction sees the original report with only its own position
        masked. Substitution positions are word indices (without [CLS]).
        """
        tokens = tokenize(report, self.vocab, self.max_len)
        ids = torch.tensor(tokens.ids)
        positions = list(range(1, tokens.length - 1))
        if not positions:
            return CorrectionResult(list(report))

        masked = ids.repeat(len(positions), 1)
        rows = torch.arange(len(positions))
        masked[rows, torch.tensor(positions)] = self.vocab.mask_id
        mask = torch.tensor(tokens.attention_mask).repeat(len(positions), 1)
        images = self._images(image).expand(len(positions), -1, -1)

        probs = []
        for start in range(0, len(positions), self.batch_size):
            sl = slice(start, start + self.batch_size)
            fused = self.model.fuse(
                self.model.encode_image(images[sl]),
                self.model.encode_text(masked[sl], mask[sl]),
                mask[sl],
            )
            logits = self.model.mlm_head(fused.text)
            picked = logits[torch.arange(logits.shape[0]), torch.tensor(positions[sl])]
            probs.append(F.softmax(picked.double(), dim=-1))
        probs = torch.cat(probs)
        best_prob, best_id = probs.max(dim=-1)

        new_ids = ids.clone()
        substitutions = []
        for row, position in enumerate(positions):
            old_id, new_id, prob = int(ids[position]), int(best_id[row]), float(best_prob[row])
            if new_id != old_id and prob >= theta and new_id not in self.vocab.special_ids:
                new_ids[position] = new_id
                substitutions.append(
                    Substitution(
                        position=position - 1,
                        old=self.vocab.token(old_id),
                        new=self.vocab.token(new_id),
                        prob=prob,
                    )
                )
        if not substitutions:
            return CorrectionResult(list(report))
        corrected = split_sentences(detokenize(new_ids.tolist(), self.vocab))
        return CorrectionResult(corrected, substitutions)

    def attention_gradcam(
        self,
        image: np.ndarray,
        report: str | list[str],
        layer: int = -1,
        target: Callable[[FusionOutput, torch.Tensor], torch.Tensor] | None = None,
        gradient_hook: Callable[[torch.Tensor], torch.Tensor] | None = None,
    ) -> AttentionHeatmap:
        """Per-word relevance over the image from text-attends-image cross-attention.

        relevance = mean over heads of relu(attention * d target / d attention),
        [CLS] patch dropped, reshaped to the patch grid and bilinearly upsampled.
        The default target is the match logit.
        """
        n_layers = self.model.config.fusion_layers
        if not -n_layers <= layer < n_layers:
            raise ValueError(f"layer {layer} out of range for {n_layers} fusion layers")
        tokens = tokenize(report, self.vocab, self.max_len)
        ids, mask = tokens.ids_tensor()[None], tokens.mask_tensor()[None]
        images = self._images(image)

        with torch.enable_grad():
            fused = self.model.fuse(
                self.model.encode_image(images), self.model.encode_text(ids, mask), mask
            )
            attention = fused.t2i_layers[layer]
            itm_logits = self.model.itm_head(fused.v_cls_t2i, fused.v_cls_i2t)
            value = target(fused, itm_logits) if target else match_logit(itm_logits).sum()
            (grad,) = torch.autograd.grad(value, attention, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(attention)
        if gradient_hook is not None:
            grad = gradient_hook(grad)

        cam = (attention.detach() * grad).clamp_min(0).mean(dim=1)[0]  # (L, N + 1)
        grid = self.model.config.image_size // self.model.config.patch_size
        cam = cam[:, 1:].reshape(-1, 1, grid, grid)
        size = images.shape[-1]
        upsampled = F.interpolate(cam, size=(size, size), mode="bilinear", align_corners=False)
        upsampled = upsampled[:, 0].clamp_min(0)

        positions = list(range(1, tokens.length - 1))
        return AttentionHeatmap(
            words=[self.vocab.token(int(ids[0, p])) for p in positions],
            positions=[p - 1 for p in positions],
            maps=upsampled[positions].double().numpy(),
            layer=layer,
        )
