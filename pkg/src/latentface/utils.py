"""Shared helpers: determinism setup, hashing, image conversion."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import torch

_TORCH_CONFIGURED = False


def configure_torch() -> None:
    """Pin torch to a reproducible CPU setup.

    Fixed thread count plus deterministic kernels make every training and
    inference run bit-reproducible on the same machine. Idempotent; called
    lazily by everything that touches torch.
    """
    global _TORCH_CONFIGURED
    if _TORCH_CONFIGURED:
        return
    n = min(4, os.cpu_count() or 1)
    torch.set_num_threads(n)
    torch.use_deterministic_algorithms(True)
    _TORCH_CONFIGURED = True


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace drift, for stable hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def json_hash(obj) -> str:
    return sha256_bytes(canonical_json(obj).encode("utf-8"))


def array_hash(arr: np.ndarray) -> str:
    a = np.ascontiguousarray(arr)
    return sha256_bytes(str(a.dtype).encode() + str(a.shape).encode() + a.tobytes())


def image_hash(image: np.ndarray) -> str:
    """Hash of an image quantized to uint8, robust to float noise below 1/255."""
    return array_hash(to_uint8(image))


def state_dict_hash(module: torch.nn.Module) -> str:
    """Order-stable hash over all parameters and buffers of a module."""
    h = hashlib.sha256()
    sd = module.state_dict()
    for key in sorted(sd.keys()):
        t = sd[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) float array in [0,1] -> (1, 3, H, W) tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(dtype)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float32 array."""
    if t.dim() == 4:
        t = t.squeeze(0)
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float32)


def batch_to_tensor(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """List of (H, W, 3) arrays -> (N, 3, H, W) tensor."""
    return torch.stack([image_to_tensor(im, dtype).squeeze(0) for im in images])


def derive_seed(base: int, *parts) -> int:
    """Stable per-item seed derived from a base seed and any hashable parts."""
    payload = canonical_json([int(base), list(parts)]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big") % (2**63)
