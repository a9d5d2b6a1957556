"""Image-side encoders into the layerwise latent space.

Covers the baseline latent-regression objective, the in-domain inversion
objective with its discriminator (trained on real images, reconstructing in
image space), modality encoders for sketches and label maps, and the masked
encoder for region-constrained editing. The generator stays frozen throughout;
every trainer asserts its weight hash is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .features import FeatureExtractor, extract_features_tensor
from .generator import GeneratorModel, TrainingError, synthesize_tensor
from .latent import WCode, sample_prior
from .nets import CodePredictor, DiscriminatorNet
from .toyfaces.renderer import PART_IDS
from .utils import configure_torch, derive_seed, state_dict_hash

MODALITIES = ("photo", "sketch", "label", "masked")
N_LABEL_CHANNELS = len(PART_IDS)


@dataclass
class EncoderTrainConfig:
    """Loss weights follow the inversion objective's published defaults."""

    perceptual_weight: float = 5e-5   # lambda_1
    adversarial_weight: float = 0.1   # lambda_2
    gradient_penalty: float = 10.0    # lambda_3
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    # Pilot thresholds (held-out reconstruction targets).
    holdout_mae_max: float = 0.08
    masked_holdout_mae_max: float = 0.10
    masked_steps: int = 350
    baseline_epochs: int = 6

    def __post_init__(self):
        if min(self.perceptual_weight, self.adversarial_weight, self.gradient_penalty) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class ImageEncoder:
    """Convolutional encoder from one raster modality into (L, C) codes."""

    net: CodePredictor
    modality: str
    provenance: dict = field(default_factory=dict)
    discriminator: "Discriminator | None" = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")

    def freeze(self) -> "ImageEncoder":
        self.net.eval().requires_grad_(False)
        return self

    def weight_hash(self) -> str:
        return state_dict_hash(self.net)


@dataclass
class Discriminator:
    net: DiscriminatorNet

    def weight_hash(self) -> str:
        return state_dict_hash(self.net)


class Mask:
    """Binary (R, R) mask; 1 marks the observed / preserved region."""

    def __init__(self, values: np.ndarray):
        arr = np.asarray(values)
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        self.values = arr.astype(np.float32)
        self.values.setflags(write=False)

    @property
    def coverage(self) -> float:
        return float(self.values.mean())

    def complement(self) -> "Mask":
        return Mask(1.0 - self.values)

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(np.array(self.values))[None, None]


def sample_mask(resolution: int, seed: int, label_map: np.ndarray | None = None,
                part: str | None = None) -> Mask:
    """Random axis-aligned rectangle covering 10-60% of the canvas, or an
    exact label-map part region when one is supplied."""
    if part is not None:
        if label_map is None:
            raise ValueError("part-region mask needs a label_map")
        return Mask((label_map == PART_IDS[part]).astype(np.float32))
    rng = np.random.default_rng(derive_seed(seed, "mask"))
    for _ in range(100):
        y0, x0 = rng.integers(0, resolution, 2)
        h = rng.integers(resolution // 4, resolution + 1)
        w = rng.integers(resolution // 4, resolution + 1)
        m = np.zeros((resolution, resolution), dtype=np.float32)
        m[y0:y0 + h, x0:x0 + w] = 1.0
        if 0.1 <= m.mean() <= 0.6:
            return Mask(m)
    raise RuntimeError("mask sampling failed to satisfy coverage bounds")


# -- losses ------------------------------------------------------------------


def _sq(x: torch.Tensor) -> torch.Tensor:
    """Squared l2 norm, summed over everything but the batch dim, then
    averaged over the batch (expectations are batch means)."""
    return x.flatten(1).pow(2).sum(1).mean()


def latent_regression_loss(z_s: torch.Tensor, encoder: ImageEncoder,
                           generator: GeneratorModel) -> torch.Tensor:
    """Baseline objective: reconstruct sampled codes through the generator."""
    recon = encoder.net(synthesize_tensor(z_s, generator))
    return _sq(z_s - recon)


def encoder_loss(x: torch.Tensor, encoder: ImageEncoder, generator: GeneratorModel,
                 extractor: FeatureExtractor, disc: Discriminator,
                 cfg: EncoderTrainConfig) -> tuple:
    """In-domain inversion objective on real images; returns (total, breakdown).

    pixel + perceptual - adversarial, with image-space reconstruction through
    the frozen generator. The breakdown terms sum exactly to the total.
    """
    recon = synthesize_tensor(encoder.net(x), generator)
    pixel = _sq(x - recon)
    perceptual = cfg.perceptual_weight * _sq(
        extract_features_tensor(x, extractor) - extract_features_tensor(recon, extractor))
    adversarial = -cfg.adversarial_weight * disc.net(recon).mean()
    total = pixel + perceptual + adversarial
    return total, {"pixel": pixel, "perceptual": perceptual, "adversarial": adversarial}


def discriminator_loss(x: torch.Tensor, encoder: ImageEncoder, generator: GeneratorModel,
                       disc: Discriminator, cfg: EncoderTrainConfig) -> torch.Tensor:
    """Critic objective: score fakes above reals, with a gradient penalty at
    real samples."""
    with torch.no_grad():
        recon = synthesize_tensor(encoder.net(x), generator)
    x_req = x.detach().requires_grad_(True)
    d_real = disc.net(x_req)
    grad = torch.autograd.grad(d_real.sum(), x_req, create_graph=True)[0]
    penalty = grad.flatten(1).pow(2).sum(1).mean()
    return disc.net(recon).mean() - d_real.mean() + cfg.gradient_penalty / 2 * penalty


def gradient_penalty_term(x: torch.Tensor, disc: Discriminator) -> torch.Tensor:
    """E[|grad_x D(x)|^2], exposed for the finite-difference suite."""
    x_req = x.detach().requires_grad_(True)
    grad = torch.autograd.grad(disc.net(x_req).sum(), x_req, create_graph=True)[0]
    return grad.flatten(1).pow(2).sum(1).mean()


def masked_encoder_loss(z: torch.Tensor, mask: torch.Tensor, encoder: ImageEncoder,
                        generator: GeneratorModel, extractor: FeatureExtractor,
                        cfg, x: torch.Tensor | None = None) -> tuple:
    """Masked-input reconstruction objective on synthesized pairs.

    x = G(z) is the known source; the encoder sees (x*m, m) concatenated on
    channels and must recover the full image and the code. All three norms are
    implemented squared. Returns (total, breakdown).
    """
    if x is None:
        x = synthesize_tensor(z, generator)
    x_m = torch.cat([x * mask, mask.expand(x.shape[0], 1, -1, -1)], dim=1)
    z_hat = encoder.net(x_m)
    x_r = synthesize_tensor(z_hat, generator)
    pixel = _sq(x - x_r)
    perceptual = cfg.perceptual_weight * _sq(
        extract_features_tensor(x, extractor) - extract_features_tensor(x_r, extractor))
    latent = cfg.latent_weight * _sq(z - z_hat)
    total = pixel + perceptual + latent
    return total, {"pixel": pixel, "perceptual": perceptual, "latent": latent}


# -- inference ----------------------------------------------------------------


def invert(image: np.ndarray, encoder: ImageEncoder) -> WCode:
    """Single forward pass from an image (or sketch/label raster) to a code."""
    from .utils import image_to_tensor
    if encoder.modality == "photo":
        t = image_to_tensor(image)
    elif encoder.modality == "sketch":
        t = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None]
    elif encoder.modality == "label":
        t = _label_to_tensor(np.asarray(image))
    else:
        raise ValueError("masked encoder needs invert_masked")
    with torch.no_grad():
        return WCode.from_tensor(encoder.net(t)[0])


def invert_masked(image: np.ndarray, mask: Mask, encoder: ImageEncoder) -> WCode:
    from .utils import image_to_tensor
    x = image_to_tensor(image)
    x_m = torch.cat([x * mask.tensor(), mask.tensor()], dim=1)
    with torch.no_grad():
        return WCode.from_tensor(encoder.net(x_m)[0])


def _label_to_tensor(label_map: np.ndarray) -> torch.Tensor:
    onehot = np.stack([(label_map == pid) for pid in range(N_LABEL_CHANNELS)]).astype(np.float32)
    return torch.from_numpy(onehot)[None]


# -- training -----------------------------------------------------------------


def _modality_tensor(samples, modality: str) -> torch.Tensor:
    if modality == "photo":
        return torch.stack([torch.from_numpy(s.load_image()).permute(2, 0, 1) for s in samples])
    if modality == "sketch":
        return torch.stack([
            torch.from_numpy(s.load_sketch().astype(np.float32))[None] for s in samples])
    if modality == "label":
        return torch.cat([_label_to_tensor(s.load_label_map()) for s in samples])
    raise ValueError(modality)


def _holdout_recon_mae(enc_input: torch.Tensor, target: torch.Tensor,
                       encoder: ImageEncoder, generator: GeneratorModel) -> float:
    errs = []
    with torch.no_grad():
        for i in range(0, len(enc_input), 256):
            recon = synthesize_tensor(encoder.net(enc_input[i:i + 256]), generator)
            errs.append(torch.abs(recon - target[i:i + 256]).mean().item() * len(recon))
    return float(sum(errs) / len(enc_input))


def train_modality_encoder(modality: str, manifest, generator: GeneratorModel,
                           extractor: FeatureExtractor,
                           cfg: EncoderTrainConfig | None = None) -> ImageEncoder:
    """Train an encoder for photos, sketches or label maps.

    The input is the chosen modality; the reconstruction target is always the
    paired photo through the frozen generator. Alternating encoder/critic
    steps follow the in-domain objective.
    """
    configure_torch()
    cfg = cfg or EncoderTrainConfig()
    if modality not in ("photo", "sketch", "label"):
        raise ValueError(f"modality {modality!r} not trainable here")
    in_channels = {"photo": 3, "sketch": 1, "label": N_LABEL_CHANNELS}[modality]

    g_hash = generator.weight_hash()
    train, test = manifest.train, manifest.test
    inputs = _modality_tensor(train, modality)
    targets = _modality_tensor(train, "photo")
    test_inputs = _modality_tensor(test, modality)
    test_targets = _modality_tensor(test, "photo")

    torch.manual_seed(derive_seed(cfg.seed, "enc-init", modality))
    config = generator.config
    encoder = ImageEncoder(
        net=CodePredictor(in_channels, config.resolution, config.layers, config.channels),
        modality=modality)
    disc = Discriminator(DiscriminatorNet(config.resolution))
    opt_e = torch.optim.Adam(encoder.net.parameters(), lr=cfg.lr)
    opt_d = torch.optim.Adam(disc.net.parameters(), lr=cfg.lr)
    g = torch.Generator().manual_seed(derive_seed(cfg.seed, "enc-batches", modality))

    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(inputs), generator=g)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            x_in, x_tgt = inputs[idx], targets[idx]

            recon = synthesize_tensor(encoder.net(x_in), generator)
            pixel = _sq(x_tgt - recon)
            perceptual = cfg.perceptual_weight * _sq(
                extract_features_tensor(x_tgt, extractor) - extract_features_tensor(recon, extractor))
            adversarial = -cfg.adversarial_weight * disc.net(recon).mean()
            e_loss = pixel + perceptual + adversarial
            opt_e.zero_grad()
            e_loss.backward()
            opt_e.step()

            x_req = x_tgt.detach().requires_grad_(True)
            d_real = disc.net(x_req)
            grad = torch.autograd.grad(d_real.sum(), x_req, create_graph=True)[0]
            penalty = grad.flatten(1).pow(2).sum(1).mean()
            d_loss = disc.net(recon.detach()).mean() - d_real.mean() \
                + cfg.gradient_penalty / 2 * penalty
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

    mae = _holdout_recon_mae(test_inputs, test_targets, encoder, generator)
    if generator.weight_hash() != g_hash:
        raise TrainingError("generator weights changed during encoder training")
    metrics = {"holdout_mae": mae, "epochs": cfg.epochs}
    if modality == "photo" and mae > cfg.holdout_mae_max:
        raise TrainingError(f"inversion encoder MAE {mae:.4f} > {cfg.holdout_mae_max}", metrics)
    encoder.provenance = {"dataset_hash": manifest.content_hash(), "seed": cfg.seed,
                          "modality": modality, "metrics": metrics}
    encoder.discriminator = disc
    disc.net.eval().requires_grad_(False)
    return encoder.freeze()


def train_inversion_encoder(manifest, generator: GeneratorModel, extractor: FeatureExtractor,
                            cfg: EncoderTrainConfig | None = None) -> ImageEncoder:
    """Photo-modality shorthand; the spec's main inversion trainer."""
    return train_modality_encoder("photo", manifest, generator, extractor, cfg)


def train_baseline_encoder(generator: GeneratorModel, cfg: EncoderTrainConfig | None = None,
                           n_samples: int = 4000) -> ImageEncoder:
    """Latent-regression baseline: trained on synthesized pairs only, with
    supervision in code space rather than image space."""
    configure_torch()
    cfg = cfg or EncoderTrainConfig()
    config = generator.config
    torch.manual_seed(derive_seed(cfg.seed, "base-init"))
    encoder = ImageEncoder(
        net=CodePredictor(3, config.resolution, config.layers, config.channels),
        modality="photo")
    opt = torch.optim.Adam(encoder.net.parameters(), lr=cfg.lr)

    codes = torch.stack([w.tensor() for w in
                         sample_prior(n_samples, derive_seed(cfg.seed, "base-prior"), generator)])
    with torch.no_grad():
        images = torch.cat([synthesize_tensor(codes[i:i + 256], generator)
                            for i in range(0, n_samples, 256)])
    g = torch.Generator().manual_seed(derive_seed(cfg.seed, "base-batches"))
    for epoch in range(cfg.baseline_epochs):
        perm = torch.randperm(n_samples, generator=g)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            loss = _sq(codes[idx] - encoder.net(images[idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
    encoder.provenance = {"seed": cfg.seed, "objective": "latent-regression",
                          "metrics": {"final_loss": float(loss.item())}}
    return encoder.freeze()


def train_masked_encoder(generator: GeneratorModel, extractor: FeatureExtractor,
                         cfg=None, seed: int | None = None) -> ImageEncoder:
    """Train the masked encoder on synthesized pairs under random masks.

    Inputs are 4-channel (masked image + mask). A tenth of the steps see an
    all-ones mask so that unmasked inversion stays in-distribution.
    """
    from .optim import OptimConfig  # default lambda' weights live there
    configure_torch()
    cfg = cfg or EncoderTrainConfig()
    opt_cfg = OptimConfig()
    seed = cfg.seed if seed is None else seed
    config = generator.config
    g_hash = generator.weight_hash()

    torch.manual_seed(derive_seed(seed, "masked-init"))
    encoder = ImageEncoder(
        net=CodePredictor(4, config.resolution, config.layers, config.channels),
        modality="masked")
    opt = torch.optim.Adam(encoder.net.parameters(), lr=cfg.lr)
    g = torch.Generator().manual_seed(derive_seed(seed, "masked-batches"))

    class _W:
        perceptual_weight = opt_cfg.perceptual_weight
        latent_weight = opt_cfg.latent_weight

    for step in range(cfg.masked_steps):
        z = torch.stack([w.tensor() for w in
                         sample_prior(cfg.batch_size, derive_seed(seed, "masked-z", step), generator)])
        if step % 10 == 9:
            masks = torch.ones(1, 1, config.resolution, config.resolution)
        else:
            masks = sample_mask(config.resolution, derive_seed(seed, "masked-m", step)).tensor()
        total, _ = masked_encoder_loss(z, masks, encoder, generator, extractor, _W)
        opt.zero_grad()
        total.backward()
        opt.step()

    # Held-out recovery under 50%-ish rectangle masking.
    z = torch.stack([w.tensor() for w in sample_prior(256, derive_seed(seed, "masked-eval"), generator)])
    with torch.no_grad():
        x = synthesize_tensor(z, generator)
        half = torch.zeros(1, 1, config.resolution, config.resolution)
        half[..., : config.resolution // 2, :] = 1.0
        x_m = torch.cat([x * half, half.expand(len(x), 1, -1, -1)], dim=1)
        recon = synthesize_tensor(encoder.net(x_m), generator)
        mae = float(torch.abs(recon - x).mean())

    if generator.weight_hash() != g_hash:
        raise TrainingError("generator weights changed during masked training")
    metrics = {"masked_holdout_mae": mae, "steps": cfg.masked_steps}
    if mae > cfg.masked_holdout_mae_max:
        raise TrainingError(f"masked encoder MAE {mae:.4f} > {cfg.masked_holdout_mae_max}", metrics)
    encoder.provenance = {"seed": seed, "modality": "masked", "metrics": metrics}
    return encoder.freeze()
