"""Text-image similarity models (strategy B's language side).

The contract: score(image, text) in [0, 1], deterministic, differentiable
with respect to the image. Two implementations:

* OracleSimilarity — parses the text into attribute assertions and scores the
  classifier's (temperature-softened) probability of each asserted value.
  The default judge for everything downstream.
* LearnedSimilarity — a small contrastive dual encoder, kept to demonstrate
  that the scorer is pluggable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .features import FeatureExtractor, slot_logits_tensor
from .generator import TrainingError
from .nets import ConvTrunk, lrelu
from .toyfaces.attributes import DISCRETE_DOMAINS
from .toyfaces.grammar import default_grammar, tokenize
from .utils import configure_torch, derive_seed, image_to_tensor, state_dict_hash


class SimilarityModel:
    """Interface: kind, score(image, text), score_tensor(images, text)."""

    kind = "abstract"

    def score_tensor(self, images: torch.Tensor, text: str) -> torch.Tensor:
        raise NotImplementedError

    def score(self, image: np.ndarray, text: str) -> float:
        with torch.no_grad():
            return float(self.score_tensor(image_to_tensor(image), text)[0])


def clip_loss(image, text: str, model: SimilarityModel) -> float:
    """1 - S(image, text)."""
    return 1.0 - model.score(image, text)


def clip_loss_tensor(images: torch.Tensor, text: str, model: SimilarityModel) -> torch.Tensor:
    return 1.0 - model.score_tensor(images, text)


@dataclass
class OracleSimilarity(SimilarityModel):
    """Ground-truth-backed scorer built on the oracle classifier.

    The score is the mean, over attribute slots the text asserts, of the
    classifier's softmax probability of the asserted value. Logits are
    divided by a temperature before the softmax: a softer distribution keeps
    gradients alive when an edit starts from a confidently wrong value.
    An empty query scores 1.0 by convention.
    """

    extractor: FeatureExtractor
    temperature: float = 3.0
    kind = "oracle"

    def parse(self, text: str) -> dict:
        return default_grammar().parse(text)

    def score_tensor(self, images: torch.Tensor, text: str) -> torch.Tensor:
        query = self.parse(text)
        if not query:
            return torch.ones(images.shape[0], dtype=images.dtype)
        logits = slot_logits_tensor(images, self.extractor)
        probs = []
        for slot, value in query.items():
            sl = logits[slot] / self.temperature
            p = nn.functional.softmax(sl, dim=1)
            probs.append(p[:, DISCRETE_DOMAINS[slot].index(value)])
        return torch.stack(probs, dim=1).mean(dim=1)


class _ImageTower(nn.Module):
    def __init__(self, resolution: int, dim: int):
        super().__init__()
        self.trunk = ConvTrunk(3, resolution, widths=(16, 24, 32))
        self.proj = nn.Linear(self.trunk.out_dim, dim)

    def forward(self, x):
        return nn.functional.normalize(self.proj(self.trunk(x)), dim=1)


class _TextTower(nn.Module):
    def __init__(self, vocab: int, dim: int, emb: int = 32):
        super().__init__()
        self.embedding = nn.Embedding(vocab, emb)
        self.proj = nn.Sequential(nn.Linear(emb, 64), lrelu(), nn.Linear(64, dim))

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor):
        mask = (torch.arange(ids.shape[1])[None, :] < lengths[:, None]).float()
        pooled = (self.embedding(ids) * mask[:, :, None]).sum(1) / lengths[:, None].clamp(min=1)
        return nn.functional.normalize(self.proj(pooled), dim=1)


@dataclass
class LearnedSimilarity(SimilarityModel):
    """Contrastive dual encoder; cosine similarity affinely rescaled to [0, 1]."""

    image_tower: _ImageTower
    text_tower: _TextTower
    vocabulary: list
    provenance: dict = field(default_factory=dict)
    kind = "learned"

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.vocabulary)}

    def _ids(self, texts: list) -> tuple:
        rows = [[self._index.get(t, 0) for t in tokenize(s)] or [0] for s in texts]
        width = max(len(r) for r in rows)
        mat = torch.zeros(len(rows), width, dtype=torch.long)
        lengths = torch.zeros(len(rows), dtype=torch.long)
        for i, r in enumerate(rows):
            mat[i, :len(r)] = torch.tensor(r)
            lengths[i] = len(r)
        return mat, lengths

    def text_embedding(self, text: str) -> torch.Tensor:
        ids, lengths = self._ids([text])
        with torch.no_grad():
            return self.text_tower(ids, lengths)[0]

    def score_tensor(self, images: torch.Tensor, text: str) -> torch.Tensor:
        emb_t = self.text_embedding(text).to(images.dtype)
        emb_i = self.image_tower(images)
        return (emb_i @ emb_t + 1.0) / 2.0

    def weight_hash(self) -> str:
        return state_dict_hash(self.image_tower) + "/" + state_dict_hash(self.text_tower)


@dataclass
class SimilarityTrainConfig:
    dim: int = 32
    epochs: int = 3
    batch_size: int = 128
    lr: float = 2e-3
    seed: int = 0
    retrieval_floor: float = 0.4  # top-1 over 128 candidates; chance is 1/128


def train_learned_similarity(manifest, cfg: SimilarityTrainConfig | None = None) -> LearnedSimilarity:
    """Symmetric InfoNCE on in-batch (image, description) pairs."""
    configure_torch()
    cfg = cfg or SimilarityTrainConfig()
    vocabulary = ["<unk>"] + default_grammar().vocabulary

    train = manifest.train
    images = torch.stack([torch.from_numpy(s.load_image()).permute(2, 0, 1) for s in train])
    texts, owners = [], []
    for row, s in enumerate(train):
        for t in s.texts:
            texts.append(t)
            owners.append(row)
    owners = torch.tensor(owners)

    torch.manual_seed(derive_seed(cfg.seed, "sim-init"))
    model = LearnedSimilarity(
        image_tower=_ImageTower(manifest.resolution, cfg.dim),
        text_tower=_TextTower(len(vocabulary), cfg.dim),
        vocabulary=vocabulary)
    ids_all, len_all = model._ids(texts)
    params = list(model.image_tower.parameters()) + list(model.text_tower.parameters())
    logit_scale = nn.Parameter(torch.tensor(np.log(1 / 0.07), dtype=torch.float32))
    opt = torch.optim.Adam(params + [logit_scale], lr=cfg.lr)
    g = torch.Generator().manual_seed(derive_seed(cfg.seed, "sim-batches"))
    ce = nn.CrossEntropyLoss()

    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(texts), generator=g)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            if len(idx) < 8:
                continue
            emb_i = model.image_tower(images[owners[idx]])
            emb_t = model.text_tower(ids_all[idx], len_all[idx])
            logits = logit_scale.exp().clamp(max=100) * emb_i @ emb_t.T
            target = torch.arange(len(idx))
            loss = (ce(logits, target) + ce(logits.T, target)) / 2
            opt.zero_grad()
            loss.backward()
            opt.step()

    # Retrieval sanity on the held-out split: top-1 text retrieval over
    # 128-candidate batches.
    test = manifest.test
    t_images = torch.stack([torch.from_numpy(s.load_image()).permute(2, 0, 1) for s in test])
    t_texts = [s.texts[0] for s in test]
    hits = total = 0
    with torch.no_grad():
        for i in range(0, len(test) - 127, 128):
            emb_i = model.image_tower(t_images[i:i + 128])
            ids, lengths = model._ids(t_texts[i:i + 128])
            emb_t = model.text_tower(ids, lengths)
            pred = (emb_i @ emb_t.T).argmax(dim=1)
            hits += int((pred == torch.arange(128)).sum())
            total += 128
    retrieval = hits / max(1, total)
    metrics = {"top1_retrieval_128": retrieval, "final_loss": float(loss.item())}
    if retrieval < cfg.retrieval_floor:
        raise TrainingError(f"retrieval {retrieval:.3f} below floor {cfg.retrieval_floor}", metrics)
    model.provenance = {"dataset_hash": manifest.content_hash(), "seed": cfg.seed,
                        "metrics": metrics}
    model.image_tower.eval().requires_grad_(False)
    model.text_tower.eval().requires_grad_(False)
    return model
