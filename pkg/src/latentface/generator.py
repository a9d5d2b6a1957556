"""The fixed generator: mapping network, layerwise-modulated synthesis, and
supervised training of the reference decoder (the project's stand-in for a
pretrained style-based generator).

Two variants share one synthesis architecture:

* reference: the mapping is a fixed linear read-out of codebook mixture
  weights, and the synthesis net is trained by regression against rendered
  faces whose codes come from the attribute codebook. This gives exact,
  testable layer semantics: layer i controls attribute slot i.
* adversarial: a learned MLP mapping plus the same synthesis net, trained
  against a discriminator on the dataset.

Every layer's code modulates one synthesis block (FiLM-style scale/shift
after an RMS normalization of the layer code), so swapping a layer's code
swaps the information that block sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .latent import Codebook, WCode, ZCode, num_layers
from .nets import DiscriminatorNet, lrelu
from .toyfaces.attributes import SLOTS, DISCRETE_DOMAINS
from .utils import configure_torch, derive_seed, state_dict_hash, tensor_to_image

STAGE_CHANNELS = {4: 64, 8: 48, 16: 40, 32: 32, 64: 24}


class TrainingError(RuntimeError):
    """Training failed to reach its pilot threshold (final metrics attached)."""

    def __init__(self, message: str, metrics: dict | None = None):
        super().__init__(message)
        self.metrics = metrics or {}


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 32
    channels: int = 32  # per-layer code width C
    z_dim: int = 64
    variant: str = "reference"

    @property
    def layers(self) -> int:
        return num_layers(self.resolution)


class SynthesisNet(nn.Module):
    """Constant input, then one modulated conv block per latent layer."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        L = config.layers
        resolutions = [4 * 2 ** (i // 2) for i in range(L)]
        ch = [STAGE_CHANNELS[r] for r in resolutions]
        self.const = nn.Parameter(torch.randn(1, ch[0], 4, 4))
        self.upsample = [i >= 2 and i % 2 == 0 for i in range(L)]
        self.convs = nn.ModuleList()
        self.affines = nn.ModuleList()
        prev = ch[0]
        for i in range(L):
            self.convs.append(nn.Conv2d(prev, ch[i], 3, padding=1))
            self.affines.append(nn.Linear(config.channels, 2 * ch[i]))
            prev = ch[i]
        self.to_rgb = nn.Conv2d(prev, 3, 1)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        """(B, L, C) codes -> (B, 3, R, R) images in [0, 1]."""
        if w.shape[1:] != (self.config.layers, self.config.channels):
            raise ValueError(f"code shape {tuple(w.shape[1:])} does not match "
                             f"({self.config.layers}, {self.config.channels})")
        # Per-layer RMS normalization: modulation responds to the direction of
        # a layer code, not its magnitude.
        w = w * torch.rsqrt(torch.mean(w**2, dim=2, keepdim=True) + 1e-8)
        h = self.const.expand(w.shape[0], -1, -1, -1)
        for i, conv in enumerate(self.convs):
            if self.upsample[i]:
                h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = conv(h)
            scale, shift = self.affines[i](w[:, i]).chunk(2, dim=1)
            h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
            h = nn.functional.leaky_relu(h, 0.2)
        return torch.sigmoid(self.to_rgb(h))


class MappingNet(nn.Module):
    """Adversarial-variant mapping f: z -> one style vector, broadcast to L layers."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.body = nn.Sequential(
            nn.Linear(config.z_dim, 128), lrelu(),
            nn.Linear(128, 128), lrelu(),
            nn.Linear(128, config.channels),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        styled = self.body(z)
        return styled[:, None, :].expand(-1, self.config.layers, -1)


@dataclass
class GeneratorModel:
    """Trained generator: immutable weights plus training provenance."""

    config: GeneratorConfig
    synthesis: SynthesisNet
    codebook: Codebook | None = None
    mapping: MappingNet | None = None
    provenance: dict = field(default_factory=dict)

    def freeze(self) -> "GeneratorModel":
        self.synthesis.eval().requires_grad_(False)
        if self.mapping is not None:
            self.mapping.eval().requires_grad_(False)
        return self

    def weight_hash(self) -> str:
        h = state_dict_hash(self.synthesis)
        if self.mapping is not None:
            h += "/" + state_dict_hash(self.mapping)
        return h


def map_latent(z: ZCode, model: GeneratorModel) -> WCode:
    """Push an input latent into the layerwise style space."""
    config = model.config
    if z.dim != config.z_dim:
        raise ValueError(f"z has dim {z.dim}, config expects {config.z_dim}")
    if config.variant == "reference":
        block = config.z_dim // config.layers
        w = np.zeros((config.layers, config.channels), dtype=np.float32)
        for i in range(config.layers):
            basis = model.codebook.vectors.get(i)
            if basis is None:
                continue
            weights = z.values[i * block: i * block + basis.shape[0]]
            w[i] = weights @ basis
        return WCode(w)
    with torch.no_grad():
        return WCode.from_tensor(model.mapping(z.tensor().unsqueeze(0))[0])


def synthesize_tensor(w: torch.Tensor, model: GeneratorModel) -> torch.Tensor:
    """Differentiable synthesis on batched code tensors."""
    return model.synthesis(w)


def synthesize(w: WCode, model: GeneratorModel) -> np.ndarray:
    """One code -> one (R, R, 3) image in [0, 1]."""
    with torch.no_grad():
        img = model.synthesis(w.tensor().unsqueeze(0))
    return tensor_to_image(img)


def synthesize_batch(codes, model: GeneratorModel, batch_size: int = 256) -> np.ndarray:
    """Many codes -> (N, R, R, 3) array."""
    if isinstance(codes, (list, tuple)):
        t = torch.stack([c.tensor() for c in codes])
    else:
        t = codes
    outs = []
    with torch.no_grad():
        for i in range(0, len(t), batch_size):
            outs.append(model.synthesis(t[i:i + batch_size]).permute(0, 2, 3, 1))
    return torch.cat(outs).cpu().numpy().astype(np.float32)


@dataclass
class GeneratorTrainConfig:
    epochs_max: int = 40
    batch_size: int = 64
    lr: float = 2e-3
    # Small parts (mouth, glasses) cost almost nothing in plain L1, so the
    # decoder would learn to skip them; their pixels get extra loss weight.
    detail_weight: float = 5.0
    # Pilot thresholds: held-out mean-abs-error targets for the reference
    # decoder (stop early at target, fail above the max).
    target_mae: float = 0.028
    holdout_mae_max: float = 0.060
    adv_steps: int = 800
    adv_batch_size: int = 32
    adv_lr: float = 1e-3
    grad_penalty: float = 10.0


def _train_images(samples) -> torch.Tensor:
    return torch.stack([
        torch.from_numpy(s.load_image()).permute(2, 0, 1) for s in samples
    ])


def train_reference_decoder(manifest, config: GeneratorConfig, seed: int,
                            train_cfg: GeneratorTrainConfig | None = None) -> GeneratorModel:
    """Supervised regression: codebook embedding (+ jitter) -> rendered face."""
    configure_torch()
    cfg = train_cfg or GeneratorTrainConfig()
    codebook = Codebook(config.layers, config.channels)

    train, test = manifest.train, manifest.test
    x_train = _train_images(train)
    x_test = _train_images(test)
    w_train = torch.stack([codebook.embed(s.attrs).tensor() for s in train])
    w_test = torch.stack([codebook.embed(s.attrs).tensor() for s in test])
    from .toyfaces.renderer import PART_IDS
    detail = torch.stack([
        torch.from_numpy(np.isin(s.load_label_map(),
                                 (PART_IDS["mouth"], PART_IDS["glasses"])).astype(np.float32))
        for s in train
    ])
    weight_train = (1.0 + (cfg.detail_weight - 1.0) * detail)[:, None, :, :]

    torch.manual_seed(derive_seed(seed, "ref-init"))
    net = SynthesisNet(config)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    g = torch.Generator().manual_seed(derive_seed(seed, "ref-batches"))

    def holdout_mae() -> float:
        net.eval()
        errs = []
        with torch.no_grad():
            for i in range(0, len(x_test), 256):
                pred = net(w_test[i:i + 256])
                errs.append(torch.abs(pred - x_test[i:i + 256]).mean().item() * len(pred))
        net.train()
        return float(sum(errs) / len(x_test))

    final_mae, epochs_run = float("inf"), 0
    for epoch in range(cfg.epochs_max):
        perm = torch.randperm(len(x_train), generator=g)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            jitter = 0.05 * torch.randn(w_train[idx].shape, generator=g)
            pred = net(w_train[idx] + jitter)
            loss = (weight_train[idx] * torch.abs(pred - x_train[idx])).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        epochs_run = epoch + 1
        final_mae = holdout_mae()
        if final_mae <= cfg.target_mae:
            break

    metrics = {"holdout_mae": final_mae, "epochs": epochs_run, "final_loss": float(loss.item())}
    if final_mae > cfg.holdout_mae_max:
        raise TrainingError(f"reference decoder converged to MAE {final_mae:.4f} "
                            f"> {cfg.holdout_mae_max}", metrics)
    model = GeneratorModel(
        config=config, synthesis=net, codebook=codebook,
        provenance={"dataset_hash": manifest.content_hash(), "seed": seed, "metrics": metrics},
    )
    return model.freeze()


def train_adversarial_generator(manifest, config: GeneratorConfig, seed: int,
                                train_cfg: GeneratorTrainConfig | None = None) -> GeneratorModel:
    """Plain adversarial training of mapping + synthesis at dataset scale."""
    configure_torch()
    cfg = train_cfg or GeneratorTrainConfig()
    if config.variant != "adversarial":
        config = GeneratorConfig(config.resolution, config.channels, config.z_dim, "adversarial")

    x_real = _train_images(manifest.train)
    torch.manual_seed(derive_seed(seed, "adv-init"))
    mapping = MappingNet(config)
    net = SynthesisNet(config)
    disc = DiscriminatorNet(config.resolution)
    opt_g = torch.optim.Adam(list(mapping.parameters()) + list(net.parameters()),
                             lr=cfg.adv_lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.adv_lr, betas=(0.5, 0.999))
    g = torch.Generator().manual_seed(derive_seed(seed, "adv-batches"))

    d_loss = g_loss = torch.tensor(0.0)
    for step in range(cfg.adv_steps):
        idx = torch.randint(0, len(x_real), (cfg.adv_batch_size,), generator=g)
        real = x_real[idx]
        z = torch.randn(cfg.adv_batch_size, config.z_dim, generator=g)
        fake = net(mapping(z))

        real_req = real.detach().requires_grad_(True)
        d_real = disc(real_req)
        grad = torch.autograd.grad(d_real.sum(), real_req, create_graph=True)[0]
        penalty = grad.flatten(1).pow(2).sum(1).mean()
        d_loss = disc(fake.detach()).mean() - d_real.mean() + cfg.grad_penalty / 2 * penalty
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        g_loss = -disc(fake).mean()
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        if not (torch.isfinite(d_loss) and torch.isfinite(g_loss)):
            raise TrainingError(f"adversarial training diverged at step {step}",
                                {"d_loss": float(d_loss), "g_loss": float(g_loss)})

    metrics = {"d_loss": float(d_loss.item()), "g_loss": float(g_loss.item()),
               "steps": cfg.adv_steps}
    model = GeneratorModel(
        config=config, synthesis=net, mapping=mapping,
        provenance={"dataset_hash": manifest.content_hash(), "seed": seed, "metrics": metrics},
    )
    return model.freeze()
