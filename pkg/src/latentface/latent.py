"""Layerwise latent space: codes, prior sampling, style mixing, layer probing.

A code is L per-layer C-dimensional vectors. For the reference generator the
prior lives directly in this space: each attribute slot owns one layer and is
embedded through a fixed, seeded codebook, plus Gaussian jitter. Style mixing
composes codes layer by layer; probing measures which attribute each layer
controls by swapping one layer at a time and asking the oracle classifier
what changed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .toyfaces.attributes import SLOTS, DISCRETE_DOMAINS, AttributeVector, sample_attributes
from .utils import derive_seed

CODEBOOK_VERSION = "1"
PRIOR_JITTER_SIGMA = 0.05
HUE_FLIP_TURNS = 0.03  # circular distance (in turns) above which hue counts as flipped


def num_layers(resolution: int) -> int:
    """Layer count of a style-based generator at the given image size."""
    if resolution < 8 or resolution & (resolution - 1) != 0:
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    return 2 * int(np.log2(resolution)) - 2


@dataclass(frozen=True)
class WCode:
    """Layerwise style code, an (L, C) float array. Immutable once built."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"WCode expects a 2-d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("WCode entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def layers(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(np.array(self.values)).to(dtype)

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "WCode":
        return cls(t.detach().cpu().numpy())


@dataclass(frozen=True)
class ZCode:
    """Input-space latent vector."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("ZCode entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(np.array(self.values)).to(dtype)


class LayerSet:
    """An immutable set of layer indices in [0, num_layers)."""

    def __init__(self, indices, layer_count: int):
        idx = sorted(set(int(i) for i in indices))
        if idx and (idx[0] < 0 or idx[-1] >= layer_count):
            raise ValueError(f"layer indices {idx} out of range [0, {layer_count})")
        self._indices = tuple(idx)
        self.layer_count = int(layer_count)

    @classmethod
    def empty(cls, layer_count: int) -> "LayerSet":
        return cls((), layer_count)

    @classmethod
    def full(cls, layer_count: int) -> "LayerSet":
        return cls(range(layer_count), layer_count)

    @property
    def indices(self) -> tuple:
        return self._indices

    def complement(self) -> "LayerSet":
        return LayerSet(set(range(self.layer_count)) - set(self._indices), self.layer_count)

    def union(self, other: "LayerSet") -> "LayerSet":
        return LayerSet(set(self._indices) | set(other._indices), self.layer_count)

    def __contains__(self, i) -> bool:
        return int(i) in self._indices

    def __iter__(self):
        return iter(self._indices)

    def __len__(self):
        return len(self._indices)

    def __eq__(self, other):
        return isinstance(other, LayerSet) and self._indices == other._indices \
            and self.layer_count == other.layer_count

    def __repr__(self):
        return f"LayerSet({list(self._indices)}, layer_count={self.layer_count})"


class Codebook:
    """Fixed per-attribute embeddings, one owned layer per attribute slot.

    Each discrete slot's values map to orthonormal vectors in its layer's
    channel space; the continuous hue maps to a point on a circle spanned by
    two orthonormal vectors. Orthonormality keeps nearest-neighbor decoding
    unambiguous under the prior jitter.
    """

    def __init__(self, layers: int, channels: int, version: str = CODEBOOK_VERSION):
        if layers < len(SLOTS):
            raise ValueError(f"need at least {len(SLOTS)} layers, got {layers}")
        self.layers = layers
        self.channels = channels
        self.version = version
        self.vectors = {}  # layer -> (k, C) array
        for i, slot in enumerate(SLOTS):
            k = 2 if slot == "background_hue" else len(DISCRETE_DOMAINS[slot])
            rng = np.random.default_rng(derive_seed(0xC0DE, version, i, slot))
            mat = rng.standard_normal((channels, k))
            q, _ = np.linalg.qr(mat)
            self.vectors[i] = np.ascontiguousarray(q.T.astype(np.float32))

    def embed(self, attrs: AttributeVector) -> WCode:
        w = np.zeros((self.layers, self.channels), dtype=np.float32)
        for i, slot in enumerate(SLOTS):
            basis = self.vectors[i]
            if slot == "background_hue":
                theta = 2 * np.pi * attrs.background_hue
                w[i] = np.cos(theta) * basis[0] + np.sin(theta) * basis[1]
            else:
                w[i] = basis[DISCRETE_DOMAINS[slot].index(attrs.value(slot))]
        return WCode(w)

    def mean_code(self) -> np.ndarray:
        """Analytic per-coordinate mean of the jittered prior."""
        w = np.zeros((self.layers, self.channels), dtype=np.float64)
        for i, slot in enumerate(SLOTS):
            if slot == "background_hue":
                continue  # E[cos] = E[sin] = 0 over uniform hue
            w[i] = self.vectors[i].mean(axis=0)
        return w

    def decode(self, w: WCode) -> AttributeVector:
        """Nearest-neighbor read-back of a code into attribute values."""
        fields = {}
        for i, slot in enumerate(SLOTS):
            basis = self.vectors[i]
            if slot == "background_hue":
                c, s = float(w.values[i] @ basis[0]), float(w.values[i] @ basis[1])
                fields[slot] = float((np.arctan2(s, c) / (2 * np.pi)) % 1.0)
            else:
                scores = basis @ w.values[i]
                fields[slot] = DISCRETE_DOMAINS[slot][int(np.argmax(scores))]
        return AttributeVector(**fields)


def sample_prior(n: int, seed: int, model) -> list:
    """Draw `n` prior codes for a generator.

    `model` is anything with `.config` and either a `.codebook` (reference
    variant: attribute embeddings plus Gaussian jitter) or a mapping network
    (adversarial variant: z ~ N(0, I) pushed through `map_latent`).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    config = model.config
    out = []
    if config.variant == "reference":
        codebook = model.codebook
        for j in range(n):
            attrs = sample_attributes(derive_seed(seed, "prior-attrs", j))
            rng = np.random.default_rng(derive_seed(seed, "prior-jitter", j))
            base = codebook.embed(attrs).values
            w = base + PRIOR_JITTER_SIGMA * rng.standard_normal(base.shape).astype(np.float32)
            out.append(WCode(w))
    else:
        from .generator import map_latent  # local import to avoid a cycle
        rng = np.random.default_rng(derive_seed(seed, "prior-z"))
        for j in range(n):
            z = ZCode(rng.standard_normal(config.z_dim).astype(np.float32))
            out.append(map_latent(z, model))
    return out


def style_mix(w_c: WCode, w_s: WCode, layers: LayerSet) -> WCode:
    """Take `layers` from the style code w_s, everything else from w_c."""
    if w_c.values.shape != w_s.values.shape:
        raise ValueError(f"shape mismatch {w_c.values.shape} vs {w_s.values.shape}")
    if layers.layer_count != w_c.layers:
        raise ValueError(f"layer set over {layers.layer_count} layers, codes have {w_c.layers}")
    out = np.array(w_c.values)
    for i in layers:
        out[i] = w_s.values[i]
    return WCode(out)


def diverse_variants(w: WCode, protected: LayerSet, n: int, seed: int, model) -> list:
    """Variants of `w` that keep `protected` layers and resample the rest."""
    if n < 1:
        raise ValueError("n must be >= 1")
    fresh = sample_prior(n, seed, model)
    return [style_mix(sample, w, protected) for sample in fresh]


@dataclass
class LayerAttributeTable:
    """Estimated flip rate of every attribute slot under single-layer swaps."""

    rates: dict = field(default_factory=dict)  # layer -> {slot: rate}
    trials: int = 0

    def rate(self, layer: int, slot: str) -> float:
        return self.rates[layer][slot]

    def layers_for_slot(self, slot: str, threshold: float = 0.5) -> list:
        return [i for i in sorted(self.rates) if self.rates[i][slot] >= threshold]

    def to_json(self) -> str:
        doc = {
            "trials": self.trials,
            "layers": {
                str(i): [{"slot": s, "flip_rate": float(r)} for s, r in sorted(row.items())]
                for i, row in self.rates.items()
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LayerAttributeTable":
        doc = json.loads(text)
        rates = {
            int(i): {e["slot"]: float(e["flip_rate"]) for e in row}
            for i, row in doc["layers"].items()
        }
        return cls(rates=rates, trials=int(doc.get("trials", 0)))


def _circular_diff(a, b):
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return np.minimum(d, 1.0 - d)


def probe_layer_attributes(generator, oracle, trials: int, seed: int) -> LayerAttributeTable:
    """Measure which attribute slot each layer controls.

    For every layer, `trials` random code pairs (base, donor) are drawn and
    only that layer is swapped from donor into base. A slot counts as flipped
    when the swap carried the donor's value over: among pairs where the oracle
    reads different values for base and donor, the swapped decode must match
    the donor. (An unconditional flip count would be capped by the chance of
    the donor differing at all, which makes rates incomparable across slots
    with different domain sizes.)
    """
    from .generator import synthesize_batch
    from .features import classify_batch

    if trials < 1:
        raise ValueError("trials must be >= 1")
    L = generator.config.layers
    table = LayerAttributeTable(trials=trials)
    base = sample_prior(trials, derive_seed(seed, "probe-a"), generator)
    donor = sample_prior(trials, derive_seed(seed, "probe-b"), generator)
    cls_a = classify_batch(synthesize_batch(base, generator), oracle)
    cls_b = classify_batch(synthesize_batch(donor, generator), oracle)
    for layer in range(L):
        swapped = [style_mix(a, b, LayerSet([layer], L)) for a, b in zip(base, donor)]
        cls_s = classify_batch(synthesize_batch(swapped, generator), oracle)
        row = {}
        for slot in SLOTS:
            if slot == "background_hue":
                eligible = _circular_diff(cls_a[slot], cls_b[slot]) > 2 * HUE_FLIP_TURNS
                moved = _circular_diff(cls_s[slot], cls_b[slot]) <= HUE_FLIP_TURNS
            else:
                a = np.asarray(cls_a[slot])
                b = np.asarray(cls_b[slot])
                eligible = a != b
                moved = np.asarray(cls_s[slot]) == b
            n = int(eligible.sum())
            row[slot] = float((moved & eligible).sum() / n) if n else 0.0
        table.rates[layer] = row
    return table
