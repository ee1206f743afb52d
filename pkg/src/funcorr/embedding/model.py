"""Embedding head: softmax block fusion, bilinear feature sampling, and a
3-layer MLP over (feature, function-embedding) with L2-normalized output.

Everything is float64 numpy with hand-derived backward passes; the gradients
are checked against central finite differences in the test suite, so keep
forward and backward in lockstep when touching anything here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scenes import PATCH_STRIDE


class EmbeddingError(ValueError):
    pass


@dataclass
class ModelConfig:
    c_img: int
    c_text: int
    hidden: int = 1024
    embed_dim: int = 256
    mask_head: bool = True

    def to_dict(self) -> dict:
        return {
            "c_img": self.c_img,
            "c_text": self.c_text,
            "hidden": self.hidden,
            "embed_dim": self.embed_dim,
            "mask_head": self.mask_head,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            c_img=int(d["c_img"]),
            c_text=int(d["c_text"]),
            hidden=int(d["hidden"]),
            embed_dim=int(d["embed_dim"]),
            mask_head=bool(d["mask_head"]),
        )


PARAM_KEYS = ("block_logits", "w1", "b1", "w2", "b2", "w3", "b3", "mask_w", "mask_b")


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """He-style uniform init, seeded; block logits start at zero (equal fusion)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x1A17]))
    c_in = cfg.c_img + cfg.c_text

    def lin(fan_in, fan_out):
        a = np.sqrt(6.0 / fan_in)
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    params = {
        "block_logits": np.zeros(3),
        "w1": lin(c_in, cfg.hidden),
        "b1": np.zeros(cfg.hidden),
        "w2": lin(cfg.hidden, cfg.hidden),
        "b2": np.zeros(cfg.hidden),
        "w3": lin(cfg.hidden, cfg.embed_dim),
        "b3": np.zeros(cfg.embed_dim),
    }
    if cfg.mask_head:
        a = np.sqrt(6.0 / cfg.embed_dim)
        params["mask_w"] = rng.uniform(-a, a, size=cfg.embed_dim)
        params["mask_b"] = np.zeros(1)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_finite(arrays: dict[str, np.ndarray], what: str = "parameter") -> None:
    """Raise naming the offending key. Costs ~1ms on a full-size head, so
    callers run it once per batch/checkpoint, not per forward call."""
    for k, v in arrays.items():
        if not np.all(np.isfinite(v)):
            raise EmbeddingError(f"non-finite {what} {k!r}")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def fuse_blocks(blocks: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Softmax-weighted sum of the 3 feature planes, (gh, gw, C)."""
    blocks = np.asarray(blocks, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if blocks.ndim != 4 or blocks.shape[0] != logits.shape[0]:
        raise EmbeddingError(f"blocks {blocks.shape} do not match {logits.shape[0]} logits")
    w = softmax(logits)
    return np.einsum("b,bijc->ijc", w, blocks)


def sample_feature_blocks(blocks: np.ndarray, pixels: np.ndarray, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Bilinear sample of (B, gh, gw, C) planes at real-valued (row, col)
    pixels, returning (B, n, C); grid coordinates are shared across planes.

    Pixel p maps to grid coordinate (p + 0.5) / stride - 0.5, clamped to the
    grid, so a pixel at a grid-cell center returns exactly that cell's vector.
    Pixels must lie within the image ([-0.5, dim - 0.5] per axis).
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    _, gh, gw, _ = blocks.shape
    p = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    h, w = gh * stride, gw * stride
    if p.size and (
        p[:, 0].min() < -0.5 or p[:, 0].max() > h - 0.5 or p[:, 1].min() < -0.5 or p[:, 1].max() > w - 0.5
    ):
        raise EmbeddingError("pixel outside image bounds")
    gr = np.clip((p[:, 0] + 0.5) / stride - 0.5, 0.0, gh - 1.0)
    gc = np.clip((p[:, 1] + 0.5) / stride - 0.5, 0.0, gw - 1.0)
    r0 = np.floor(gr).astype(np.int64)
    c0 = np.floor(gc).astype(np.int64)
    r1 = np.minimum(r0 + 1, gh - 1)
    c1 = np.minimum(c0 + 1, gw - 1)
    fr = (gr - r0)[None, :, None]
    fc = (gc - c0)[None, :, None]
    return (
        blocks[:, r0, c0] * (1 - fr) * (1 - fc)
        + blocks[:, r0, c1] * (1 - fr) * fc
        + blocks[:, r1, c0] * fr * (1 - fc)
        + blocks[:, r1, c1] * fr * fc
    )


def sample_feature(plane: np.ndarray, pixels: np.ndarray, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Bilinear sample of a single (gh, gw, C) plane; see sample_feature_blocks."""
    return sample_feature_blocks(np.asarray(plane, dtype=np.float64)[None], pixels, stride)[0]


def embed_pixels(
    blocks: np.ndarray,
    pixels: np.ndarray,
    fn_vec: np.ndarray,
    params: dict[str, np.ndarray],
    stride: int = PATCH_STRIDE,
) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Forward pass at a set of pixels.

    Returns (unit embeddings (n, D), mask logits (n,) or None, cache for
    :func:`embed_backward`). Sampling each block then blending equals blending
    then sampling (both linear), and keeping per-block samples makes the
    block-logit gradient a dot product.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    fn_vec = np.asarray(fn_vec, dtype=np.float64).reshape(-1)
    n = np.asarray(pixels).reshape(-1, 2).shape[0]
    s = sample_feature_blocks(blocks, pixels, stride)
    w = softmax(np.asarray(params["block_logits"], dtype=np.float64))
    feat = np.einsum("b,bnc->nc", w, s)
    x = np.concatenate([feat, np.broadcast_to(fn_vec, (n, fn_vec.shape[0]))], axis=1)
    z1 = x @ params["w1"] + params["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params["w2"] + params["b2"]
    h2 = np.maximum(z2, 0.0)
    y = h2 @ params["w3"] + params["b3"]
    r = np.maximum(np.linalg.norm(y, axis=1), 1e-12)
    emb = y / r[:, None]
    mask_logits = None
    if "mask_w" in params:
        mask_logits = y @ params["mask_w"] + params["mask_b"][0]
    cache = {"s": s, "w": w, "x": x, "z1": z1, "h1": h1, "z2": z2, "h2": h2, "y": y, "r": r, "emb": emb}
    return emb, mask_logits, cache


def embed_backward(
    cache: dict,
    d_emb: np.ndarray | None,
    d_mask_logits: np.ndarray | None,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate parameter gradients for one embed_pixels call into grads."""
    y, r, emb = cache["y"], cache["r"], cache["emb"]
    if d_emb is not None:
        dy = (d_emb - emb * np.sum(emb * d_emb, axis=1, keepdims=True)) / r[:, None]
    else:
        dy = np.zeros_like(y)
    if d_mask_logits is not None:
        dy = dy + d_mask_logits[:, None] * params["mask_w"][None, :]
        grads["mask_w"] += y.T @ d_mask_logits
        grads["mask_b"] += np.array([d_mask_logits.sum()])
    grads["w3"] += cache["h2"].T @ dy
    grads["b3"] += dy.sum(axis=0)
    dh2 = dy @ params["w3"].T
    dz2 = dh2 * (cache["z2"] > 0)
    grads["w2"] += cache["h1"].T @ dz2
    grads["b2"] += dz2.sum(axis=0)
    dh1 = dz2 @ params["w2"].T
    dz1 = dh1 * (cache["z1"] > 0)
    grads["w1"] += cache["x"].T @ dz1
    grads["b1"] += dz1.sum(axis=0)
    dx = dz1 @ params["w1"].T
    c_img = cache["s"].shape[2]
    dfeat = dx[:, :c_img]
    dw = np.einsum("bnc,nc->b", cache["s"], dfeat)
    w = cache["w"]
    grads["block_logits"] += w * (dw - np.dot(w, dw))
