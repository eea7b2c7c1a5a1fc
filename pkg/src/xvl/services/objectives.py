"""Pre-training losses, feature queues, hard-negative mining and distillation targets."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from xvl.models.vocabulary import IGNORE_INDEX, Vocabulary
from xvl.services.network import XVLModel
from xvl.services.textpipe import mask_tokens
from xvl.utils.config import TrainConfig

UNIT_TOL = 1e-5


def _check_unit(features: torch.Tensor, name: str) -> None:
    norms = features.detach().norm(dim=-1)
    if norms.numel() and (norms - 1.0).abs().max().item() > UNIT_TOL:
        raise ValueError(f"{name} must be unit-norm (max deviation {(norms - 1).abs().max():.2e})")


class FeatureQueue:
    """Fixed-capacity FIFO ring buffer of detached unit-norm features."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.dim = dim
        self.buffer = torch.zeros(capacity, dim)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def enqueue(self, features: torch.Tensor) -> None:
        features = features.detach().to(self.buffer.dtype)
        if features.dim() != 2 or features.shape[1] != self.dim:
            raise ValueError(f"Expected (n, {self.dim}) features, got {tuple(features.shape)}")
        _check_unit(features, "queued features")
        if self.capacity == 0 or features.shape[0] == 0:
            return
        n = features.shape[0]
        if n > self.capacity:
            self.cursor = (self.cursor + n - self.capacity) % self.capacity
            features = features[-self.capacity :]
            n = self.capacity
        index = (self.cursor + torch.arange(n)) % self.capacity
        self.buffer[index] = features
        self.cursor = (self.cursor + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def contents(self) -> torch.Tensor:
        """Stored features, oldest first."""
        if self.size < self.capacity:
            return self.buffer[: self.size].clone()
        return torch.cat([self.buffer[self.cursor :], self.buffer[: self.cursor]])

    def state_dict(self) -> dict:
        return {"buffer": self.buffer.clone(), "cursor": self.cursor, "size": self.size}

    def load_state_dict(self, state: dict) -> None:
        buffer = state["buffer"]
        if tuple(buffer.shape) != (self.capacity, self.dim):
            raise ValueError(
                f"Queue buffer shape {tuple(buffer.shape)} != {(self.capacity, self.dim)}"
            )
        self.buffer = buffer.clone()
        self.cursor = int(state["cursor"])
        self.size = int(state["size"])


@dataclass
class QueuePair:
    image: FeatureQueue
    text: FeatureQueue

    @classmethod
    def empty(cls, capacity: int, dim: int) -> QueuePair:
        return cls(FeatureQueue(capacity, dim), FeatureQueue(capacity, dim))


def similarity(
    image_feature: torch.Tensor, text_feature: torch.Tensor, checked: bool = True
) -> float:
    """Dot product of two unit vectors, in [-1, 1]."""
    if checked:
        _check_unit(image_feature, "image feature")
        _check_unit(text_feature, "text feature")
    return float(torch.dot(image_feature.flatten(), text_feature.flatten()).clamp(-1.0, 1.0))


def normalized_similarities(
    anchor: torch.Tensor, candidates: torch.Tensor, tau: float | torch.Tensor
) -> torch.Tensor:
    """Softmax over anchor . candidate / tau; one row per anchor."""
    if candidates.shape[0] == 0:
        raise ValueError("Candidate set is empty")
    if float(tau) <= 0:
        raise ValueError("tau must be > 0")
    return F.softmax(anchor @ candidates.T / tau, dim=-1)


def _entropy_to_diagonal(logits: torch.Tensor) -> torch.Tensor:
    """Mean H(one-hot at row index, softmax(logits))."""
    return F.cross_entropy(logits, torch.arange(logits.shape[0], device=logits.device))


@dataclass
class ContrastiveTerms:
    cmc: torch.Tensor
    imc: torch.Tensor
    total: torch.Tensor
    # Similarity logits (anchor . candidate / tau) over batch + queue candidates
    i2t_logits: torch.Tensor
    t2i_logits: torch.Tensor


def contrastive_loss(
    image_feat: torch.Tensor,
    text_feat: torch.Tensor,
    image_momentum: torch.Tensor,
    text_momentum: torch.Tensor,
    image_queue: torch.Tensor,
    text_queue: torch.Tensor,
    tau: float | torch.Tensor,
    use_imc: bool = True,
) -> ContrastiveTerms:
    """Cross-modal and in-modal contrastive terms.

    Candidates for anchor i are the momentum features of the batch followed by
    the queue; the positive is the momentum feature at index i.
    """
    batch = image_feat.shape[0]
    if batch < 2 and image_queue.shape[0] == 0 and text_queue.shape[0] == 0:
        raise ValueError("Contrastive loss needs negatives: batch size < 2 and empty queues")
    image_all = torch.cat([image_momentum, image_queue.to(image_momentum)])
    text_all = torch.cat([text_momentum, text_queue.to(text_momentum)])

    i2t = image_feat @ text_all.T / tau
    t2i = text_feat @ image_all.T / tau
    cmc = 0.5 * (_entropy_to_diagonal(i2t) + _entropy_to_diagonal(t2i))

    if use_imc:
        i2i = image_feat @ image_all.T / tau
        t2t = text_feat @ text_all.T / tau
        imc = 0.5 * (_entropy_to_diagonal(i2i) + _entropy_to_diagonal(t2t))
    else:
        imc = torch.zeros((), dtype=cmc.dtype)
    return ContrastiveTerms(cmc=cmc, imc=imc, total=cmc + imc, i2t_logits=i2t, t2i_logits=t2i)


def sentence_contrastive_loss(
    image_feat: torch.Tensor,
    sentence_feat: torch.Tensor,
    owner: torch.Tensor,
    image_momentum: torch.Tensor,
    text_momentum: torch.Tensor,
    sentence_momentum: torch.Tensor,
    image_queue: torch.Tensor,
    text_queue: torch.Tensor,
    tau: float | torch.Tensor,
) -> torch.Tensor:
    """Mean over sentences of the cross-modal term with the sentence as text anchor.

    owner[k] is the batch index of the study sentence k came from. In the
    image-to-text direction the owner's report feature is replaced by the
    sentence's momentum feature; the report-level queues supply negatives.
    """
    if sentence_feat.shape[0] == 0:
        raise ValueError("Sentence-wise contrastive loss needs at least one sentence")
    n_sent, batch = sentence_feat.shape[0], image_momentum.shape[0]
    rows = torch.arange(n_sent)
    anchors = image_feat[owner]

    text_candidates = text_momentum.unsqueeze(0).expand(n_sent, batch, -1).clone()
    text_candidates[rows, owner] = sentence_momentum
    i2t_batch = torch.einsum("sd,sbd->sb", anchors, text_candidates)
    i2t = torch.cat([i2t_batch, anchors @ text_queue.to(anchors).T], dim=1) / tau

    image_all = torch.cat([image_momentum, image_queue.to(image_momentum)])
    t2i = sentence_feat @ image_all.T / tau
    return 0.5 * (F.cross_entropy(i2t, owner) + F.cross_entropy(t2i, owner))


def mlm_loss(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Mean cross-entropy over labelled positions; (0, True) when none are labelled."""
    if not (labels != IGNORE_INDEX).any():
        return logits.sum() * 0.0, True
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX
    ), False


def sample_hard_negatives(
    sim_rows: torch.Tensor,
    text_features: torch.Tensor,
    threshold: float = 0.9,
    generator: torch.Generator | None = None,
    constrained: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pick one in-batch negative per anchor.

    sim_rows is (B, B), the anchors' similarity logits restricted to in-batch
    candidates. Weights are the row softmax with the anchor's own positive
    removed. A candidate j is eligible for anchor i when j != i and (if
    constrained) cos(text_j, text_i) < threshold. With no eligible candidate the
    least text-similar other sample is chosen and the anchor flagged.

    Returns (negative indices (B,), fallback flags (B,)).
    """
    batch = sim_rows.shape[0]
    if batch < 2:
        raise ValueError("Hard-negative mining needs a batch of at least 2")
    with torch.no_grad():
        weights = F.softmax(sim_rows.detach().float(), dim=1)
        others = ~torch.eye(batch, dtype=torch.bool)
        text_sim = text_features.detach().float() @ text_features.detach().float().T
        eligible = others & (text_sim < threshold) if constrained else others

        negatives = torch.empty(batch, dtype=torch.long)
        fallback = torch.zeros(batch, dtype=torch.bool)
        for i in range(batch):
            if eligible[i].any():
                row = weights[i] * eligible[i]
                if row.sum() <= 0:
                    row = eligible[i].float()
                negatives[i] = torch.multinomial(row, 1, generator=generator)[0]
            else:
                masked = text_sim[i].masked_fill(~others[i], float("inf"))
                negatives[i] = masked.argmin()
                fallback[i] = True
    return negatives, fallback


def itm_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over the 2-logit match heads; label 1 is matched."""
    return F.cross_entropy(logits, labels)


def distillation_targets(teacher_logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Teacher pseudo-label rows: detached softmax distributions."""
    with torch.no_grad():
        return F.softmax(teacher_logits.detach(), dim=dim)


def distillation_divergence(student_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over rows of KL(student || teacher targets)."""
    log_student = F.log_softmax(student_logits, dim=-1)
    log_targets = targets.clamp_min(1e-12).log()
    return (log_student.exp() * (log_student - log_targets)).sum(dim=-1).mean()


def total_loss(base: torch.Tensor, dist: torch.Tensor, lambda_dist: float) -> torch.Tensor:
    """(1 - lambda) * L + lambda * L_dist, in double precision."""
    if not 0.0 <= lambda_dist <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    base, dist = base.double(), dist.double()
    if lambda_dist == 0.0:
        return base
    if lambda_dist == 1.0:
        return dist
    return (1.0 - lambda_dist) * base + lambda_dist * dist


@dataclass
class PretrainBatch:
    """Tensors of one pre-training minibatch."""

    images: torch.Tensor
    ids: torch.Tensor
    mask: torch.Tensor
    sentence_ids: torch.Tensor
    sentence_mask: torch.Tensor
    sentence_owner: torch.Tensor

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass
class LossTerms:
    cmc: torch.Tensor
    imc: torch.Tensor
    sent: torch.Tensor
    mlm: torch.Tensor
    itm: torch.Tensor
    dist: torch.Tensor
    total: torch.Tensor
    lambda_dist: float
    fallbacks: int = 0
    mlm_empty: bool = False
    # Teacher features to enqueue after the optimizer step
    image_momentum: torch.Tensor = field(default=None, repr=False)
    text_momentum: torch.Tensor = field(default=None, repr=False)

    @property
    def base(self) -> torch.Tensor:
        return self.cmc + self.imc + self.sent + self.mlm + self.itm

    def scalars(self) -> dict[str, float]:
        return {
            name: getattr(self, name).detach().item()
            for name in ("cmc", "imc", "sent", "mlm", "itm", "dist", "total")
        }


def _teacher_features(teacher: XVLModel, batch: PretrainBatch, sentences: bool):
    with torch.no_grad():
        image_embeds = teacher.encode_image(batch.images)
        text_embeds = teacher.encode_text(batch.ids, batch.mask)
        image_m = teacher.project(image_embeds[:, 0], "image")
        text_m = teacher.project(text_embeds[:, 0], "text")
        sentence_m = None
        if sentences:
            sentence_embeds = teacher.encode_text(batch.sentence_ids, batch.sentence_mask)
            sentence_m = teacher.project(sentence_embeds[:, 0], "text")
    return image_embeds, image_m, text_m, sentence_m


def pretraining_losses(
    student: XVLModel,
    teacher: XVLModel,
    batch: PretrainBatch,
    queues: QueuePair,
    config: TrainConfig,
    vocab: Vocabulary,
    generator: torch.Generator | None = None,
    lambda_scale: float = 1.0,
) -> LossTerms:
    """All loss terms for one minibatch; disabled terms are zero.

    lambda_scale multiplies config.lambda_dist (the trainer ramps it in).
    """
    zero = torch.zeros(())
    tau = student.temperature
    image_queue, text_queue = queues.image.contents(), queues.text.contents()

    image_embeds = student.encode_image(batch.images)
    text_embeds = student.encode_text(batch.ids, batch.mask)
    image_feat = student.project(image_embeds[:, 0], "image")
    text_feat = student.project(text_embeds[:, 0], "text")

    use_sentences = config.use_sentence_contrastive and batch.sentence_ids.shape[0] > 0
    t_image_embeds, image_m, text_m, sentence_m = _teacher_features(
        teacher, batch, use_sentences
    )

    contrast = contrastive_loss(
        image_feat, text_feat, image_m, text_m, image_queue, text_queue, tau, config.use_imc
    )

    sent = zero
    if use_sentences:
        sentence_embeds = student.encode_text(batch.sentence_ids, batch.sentence_mask)
        sentence_feat = student.project(sentence_embeds[:, 0], "text")
        sent = sentence_contrastive_loss(
            image_feat, sentence_feat, batch.sentence_owner,
            image_m, text_m, sentence_m, image_queue, text_queue, tau,
        )

    dist_terms = []
    if config.use_distillation:
        with torch.no_grad():
            t_tau = tau.detach()
            t_image_all = torch.cat([image_m, image_queue])
            t_text_all = torch.cat([text_m, text_queue])
            i2t_targets = distillation_targets(image_m @ t_text_all.T / t_tau)
            t2i_targets = distillation_targets(text_m @ t_image_all.T / t_tau)
        dist_terms.append(distillation_divergence(contrast.i2t_logits, i2t_targets))
        dist_terms.append(distillation_divergence(contrast.t2i_logits, t2i_targets))

    mlm, mlm_empty = zero, False
    if config.use_mlm:
        masked = mask_tokens(batch.ids, vocab, config.mask_rate, generator)
        masked_embeds = student.encode_text(masked.input_ids, batch.mask)
        fused = student.fuse(image_embeds, masked_embeds, batch.mask)
        logits = student.mlm_head(fused.text)
        mlm, mlm_empty = mlm_loss(logits, masked.labels)
        if config.use_distillation and not mlm_empty:
            with torch.no_grad():
                t_masked = teacher.encode_text(masked.input_ids, batch.mask)
                t_fused = teacher.fuse(t_image_embeds, t_masked, batch.mask)
                t_logits = teacher.mlm_head(t_fused.text)
            positions = masked.mask_positions
            targets = distillation_targets(t_logits[positions])
            dist_terms.append(distillation_divergence(logits[positions], targets))

    # Matched pairs, then (negative image, text) and (image, negative text)
    b = batch.size
    negative_images, fallback_img = sample_hard_negatives(
        contrast.t2i_logits[:, :b], text_m, config.sim_threshold, generator,
        config.use_similarity_constraint,
    )
    negative_texts, fallback_txt = sample_hard_negatives(
        contrast.i2t_logits[:, :b], text_m, config.sim_threshold, generator,
        config.use_similarity_constraint,
    )
    patches = torch.cat([image_embeds, image_embeds[negative_images], image_embeds])
    words = torch.cat([text_embeds, text_embeds, text_embeds[negative_texts]])
    word_mask = torch.cat([batch.mask, batch.mask, batch.mask[negative_texts]])
    fused_pairs = student.fuse(patches, words, word_mask)
    itm_logits = student.itm_head(fused_pairs.v_cls_t2i, fused_pairs.v_cls_i2t)
    itm_labels = torch.cat([torch.ones(b, dtype=torch.long), torch.zeros(2 * b, dtype=torch.long)])
    itm = itm_loss(itm_logits, itm_labels)

    dist = torch.stack(dist_terms).mean() if dist_terms else zero
    lambda_dist = config.lambda_dist * lambda_scale if config.use_distillation else 0.0
    base = torch.stack([t.double() for t in (contrast.cmc, contrast.imc, sent, mlm, itm)]).sum()
    return LossTerms(
        cmc=contrast.cmc,
        imc=contrast.imc,
        sent=sent,
        mlm=mlm,
        itm=itm,
        dist=dist,
        total=total_loss(base, dist, lambda_dist),
        lambda_dist=lambda_dist,
        fallbacks=int(fallback_img.sum() + fallback_txt.sum()),
        mlm_empty=mlm_empty,
        image_momentum=image_m,
        text_momentum=text_m,
    )
