"""Trainable text encoder into the layerwise latent space (strategy A).

A bag-of-embeddings backbone over the closed grammar vocabulary, pooled and
projected by per-layer heads into an (L, C) code. Trained against the frozen
image encoder's codes with the visual-linguistic similarity loss plus a
pairwise ranking loss on cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .encoders import ImageEncoder
from .generator import GeneratorModel, TrainingError
from .latent import WCode
from .nets import lrelu
from .toyfaces.grammar import default_grammar, tokenize
from .utils import configure_torch, derive_seed, state_dict_hash

UNK = "<unk>"


@dataclass
class AlignmentConfig:
    layer_weights: tuple | None = None  # p_i; None means all ones
    margin: float = 0.2
    batch_size: int = 256
    lr: float = 2e-3
    epochs: int = 8
    seed: int = 0
    # The similarity loss as printed sums layer differences before the norm,
    # which admits cross-layer cancellation and is degenerate as a training
    # signal; training therefore uses the per-layer form by default while the
    # loss function itself keeps the printed form as its default.
    per_layer_norms: bool = True
    ranking_weight: float = 1.0
    mentioned_accuracy_floor: float = 0.8

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


class TextEncoderNet(nn.Module):
    def __init__(self, vocab_size: int, layers: int, channels: int,
                 emb_dim: int = 48, hidden: int = 128):
        super().__init__()
        self.layers = layers
        self.channels = channels
        self.embedding = nn.Embedding(vocab_size, emb_dim)
        self.body = nn.Sequential(nn.Linear(emb_dim, hidden), lrelu())
        self.heads = nn.ModuleList([nn.Linear(hidden, channels) for _ in range(layers)])

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, T) padded ids + (B,) true lengths -> (B, L, C) codes."""
        emb = self.embedding(token_ids)
        mask = (torch.arange(token_ids.shape[1])[None, :] < lengths[:, None]).float()
        pooled = (emb * mask[:, :, None]).sum(1) / lengths[:, None].clamp(min=1)
        h = self.body(pooled)
        return torch.stack([head(h) for head in self.heads], dim=1)


@dataclass
class TextEncoder:
    net: TextEncoderNet
    vocabulary: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    def freeze(self) -> "TextEncoder":
        self.net.eval().requires_grad_(False)
        return self

    def weight_hash(self) -> str:
        return state_dict_hash(self.net)

    def encode_ids(self, text: str) -> list:
        toks = tokenize(text)
        unk = self._index[UNK]
        ids = [self._index.get(t, unk) for t in toks]
        return ids or [unk]

    def batch_ids(self, texts: list) -> tuple:
        ids = [self.encode_ids(t) for t in texts]
        width = max(len(i) for i in ids)
        mat = torch.zeros(len(ids), width, dtype=torch.long)
        lengths = torch.zeros(len(ids), dtype=torch.long)
        for row, seq in enumerate(ids):
            mat[row, :len(seq)] = torch.tensor(seq)
            lengths[row] = len(seq)
        return mat, lengths


def encode_text(text: str, encoder: TextEncoder) -> WCode:
    """Deterministic (L, C) code for a sentence; unknown tokens become UNK."""
    ids, lengths = encoder.batch_ids([text])
    with torch.no_grad():
        return WCode.from_tensor(encoder.net(ids, lengths)[0])


def encode_text_batch(texts: list, encoder: TextEncoder) -> torch.Tensor:
    ids, lengths = encoder.batch_ids(texts)
    with torch.no_grad():
        return encoder.net(ids, lengths)


def vl_similarity_loss(w_v: torch.Tensor, w_l: torch.Tensor,
                       p: torch.Tensor | None = None,
                       per_layer_norms: bool = False) -> torch.Tensor:
    """Visual-linguistic alignment loss.

    Default form, exactly as printed: the weighted per-layer differences are
    summed across layers into one channel vector first, then squared — so
    opposite differences in different layers can cancel. The `per_layer_norms`
    switch instead sums squared norms per layer (no cancellation); training
    uses that form.
    """
    if w_v.dim() == 2:
        w_v, w_l = w_v[None], w_l[None]
    if w_v.shape != w_l.shape:
        raise ValueError(f"code shapes differ: {tuple(w_v.shape)} vs {tuple(w_l.shape)}")
    L = w_v.shape[1]
    if p is None:
        p = torch.ones(L, dtype=w_v.dtype)
    p = torch.as_tensor(p, dtype=w_v.dtype)
    if p.shape != (L,):
        raise ValueError(f"layer weights shape {tuple(p.shape)} != ({L},)")
    diff = p[None, :, None] * (w_v - w_l)
    if per_layer_norms:
        return diff.pow(2).sum((1, 2)).mean()
    return diff.sum(1).pow(2).sum(1).mean()


def ranking_loss(pairs: list, margin: float = 0.2) -> torch.Tensor:
    """Hinge ranking on cosine similarity of flattened codes.

    `pairs` is a batch of (w_v, w_l, matched: bool); the loss averages
    max(0, margin - cos(matched) + cos(mismatched)) over every
    matched x mismatched combination.
    """
    matched, mismatched = [], []
    for w_v, w_l, is_match in pairs:
        a = w_v.flatten() if isinstance(w_v, torch.Tensor) else torch.as_tensor(w_v.values).flatten()
        b = w_l.flatten() if isinstance(w_l, torch.Tensor) else torch.as_tensor(w_l.values).flatten()
        cos = nn.functional.cosine_similarity(a[None], b[None])[0]
        (matched if is_match else mismatched).append(cos)
    if not matched or not mismatched:
        raise ValueError("ranking loss needs at least one matched and one mismatched pair")
    m = torch.stack(matched)
    n = torch.stack(mismatched)
    return torch.clamp(margin - m[:, None] + n[None, :], min=0).mean()


def _ranking_from_cosines(cos_matched: torch.Tensor, cos_mismatched: torch.Tensor,
                          margin: float) -> torch.Tensor:
    return torch.clamp(margin - cos_matched[:, None] + cos_mismatched[None, :], min=0).mean()


def train_text_encoder(manifest, image_encoder: ImageEncoder, generator: GeneratorModel,
                       cfg: AlignmentConfig | None = None) -> TextEncoder:
    """Align text codes with the frozen image encoder's codes.

    Every (image, description) pair pulls the text code toward the image code;
    rolled in-batch negatives provide the mismatched side of the ranking loss.
    """
    configure_torch()
    cfg = cfg or AlignmentConfig()
    frozen_hash = image_encoder.weight_hash()
    grammar = default_grammar()
    vocabulary = [UNK] + grammar.vocabulary

    train = manifest.train
    # Image codes are fixed during this phase: precompute once.
    images = torch.stack([torch.from_numpy(s.load_image()).permute(2, 0, 1) for s in train])
    with torch.no_grad():
        w_v = torch.cat([image_encoder.net(images[i:i + 256]) for i in range(0, len(images), 256)])

    texts, owners = [], []
    for row, s in enumerate(train):
        for t in s.texts:
            texts.append(t)
            owners.append(row)
    owners = torch.tensor(owners)

    torch.manual_seed(derive_seed(cfg.seed, "text-init"))
    config = generator.config
    net = TextEncoderNet(len(vocabulary), config.layers, config.channels)
    encoder = TextEncoder(net=net, vocabulary=vocabulary)
    ids_all, len_all = encoder.batch_ids(texts)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    g = torch.Generator().manual_seed(derive_seed(cfg.seed, "text-batches"))
    p = None if cfg.layer_weights is None else torch.tensor(cfg.layer_weights, dtype=torch.float32)

    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(texts), generator=g)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            if len(idx) < 2:
                continue
            w_img = w_v[owners[idx]]
            w_txt = net(ids_all[idx], len_all[idx])
            align = vl_similarity_loss(w_img, w_txt, p, per_layer_norms=cfg.per_layer_norms)
            cos = nn.functional.cosine_similarity(w_img.flatten(1), w_txt.flatten(1))
            cos_neg = nn.functional.cosine_similarity(
                w_img.roll(1, dims=0).flatten(1), w_txt.flatten(1))
            rank = _ranking_from_cosines(cos, cos_neg, cfg.margin)
            loss = align + cfg.ranking_weight * rank
            opt.zero_grad()
            loss.backward()
            opt.step()

    if image_encoder.weight_hash() != frozen_hash:
        raise TrainingError("image encoder changed during text training")
    encoder.provenance = {
        "dataset_hash": manifest.content_hash(), "seed": cfg.seed,
        "metrics": {"final_loss": float(loss.item()), "epochs": cfg.epochs},
    }
    return encoder.freeze()
