"""Frozen multimodal encoder: image, lane masks, and CAN text to fused tokens.

The encoder is deliberately tiny and deterministic: a seeded random
linear patch embedder plus token/position/provenance-tag tables, all
frozen after initialization. What matters downstream is the contract,
not visual quality: masks enter as their own token streams (appended
after the image stream, never mixed in), so the guided/unguided ablation
is purely a change of input composition. Position embeddings are indexed
within each stream, which keeps image and CAN tokens bit-identical
between the two modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lkalert.errors import LKAlertError
from lkalert.text import PAD_ID, Vocabulary

TAG_IMAGE = "image"
TAG_BINARY = "binary_mask"
TAG_INSTANCE = "instance_mask"
TAG_CAN = "can"
_TAGS = (TAG_IMAGE, TAG_BINARY, TAG_INSTANCE, TAG_CAN)


class EncoderError(LKAlertError):
    pass


class BadImageShape(EncoderError):
    pass


class BadMaskShape(EncoderError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 16
    d_model: int = 64
    max_can_tokens: int = 24
    guided: bool = True
    instance_id_max: int = 2  # dataset-wide K for instance-mask normalization

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise EncoderError("image_size must be divisible by patch_size")
        if self.instance_id_max < 1:
            raise EncoderError("instance_id_max must be >= 1")

    @property
    def patch_grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.patch_grid**2

    def token_count(self, guided: bool) -> int:
        streams = 3 if guided else 1
        return streams * self.n_patches + self.max_can_tokens


@dataclass(frozen=True)
class FrozenEncoderParams:
    config: EncoderConfig
    vocab: Vocabulary
    patch_proj: np.ndarray   # (patch_size^2 * 3, d_model)
    tok_embed: np.ndarray    # (vocab_size, d_model)
    tag_embed: np.ndarray    # (4, d_model), one row per provenance tag
    pos_embed: np.ndarray    # (max stream length, d_model), within-stream index

    def __post_init__(self) -> None:
        for arr in (self.patch_proj, self.tok_embed, self.tag_embed, self.pos_embed):
            arr.flags.writeable = False


@dataclass(frozen=True)
class FusedRepresentation:
    tokens: np.ndarray               # (n_tokens, d_model) float64
    provenance: tuple[str, ...]

    def __post_init__(self) -> None:
        self.tokens.flags.writeable = False
        if self.tokens.shape[0] != len(self.provenance):
            raise EncoderError("provenance length must match token count")
        if not np.all(np.isfinite(self.tokens)):
            raise EncoderError("non-finite values in fused representation")


def init_frozen(config: EncoderConfig, vocab: Vocabulary, seed: int) -> FrozenEncoderParams:
    """Draw all encoder tables from a seeded uniform(-0.1, 0.1)."""
    rng = np.random.default_rng(seed)

    def table(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    patch_dim = config.patch_size * config.patch_size * 3
    max_stream = max(config.n_patches, config.max_can_tokens)
    return FrozenEncoderParams(
        config=config,
        vocab=vocab,
        patch_proj=table(patch_dim, config.d_model),
        tok_embed=table(len(vocab), config.d_model),
        tag_embed=table(len(_TAGS), config.d_model),
        pos_embed=table(max_stream, config.d_model),
    )


@dataclass(frozen=True)
class EncoderInputs:
    """One sample's raw arrays: 8-bit RGB image, two single-channel masks, CAN text."""

    image: np.ndarray
    binary_mask: np.ndarray
    instance_mask: np.ndarray
    can_text: str


def _patches(plane: np.ndarray, patch: int) -> np.ndarray:
    """Split (S, S, C) into (grid^2, patch*patch*C), row-major over the grid."""
    s = plane.shape[0]
    g = s // patch
    c = plane.shape[2]
    return (
        plane.reshape(g, patch, g, patch, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(g * g, patch * patch * c)
    )


def _patch_stream(
    params: FrozenEncoderParams, plane: np.ndarray, tag_index: int
) -> np.ndarray:
    cfg = params.config
    tokens = _patches(plane, cfg.patch_size) @ params.patch_proj
    tokens += params.tag_embed[tag_index]
    tokens += params.pos_embed[: cfg.n_patches]
    return tokens


def encode(
    params: FrozenEncoderParams, inputs: EncoderInputs, guided: bool | None = None
) -> FusedRepresentation:
    """Fuse the multimodal inputs into one token sequence.

    Token order: image patches, then (guided only) binary-mask patches and
    instance-mask patches, then CAN text embeddings truncated/padded to
    max_can_tokens. Masks are replicated to three channels so all patch
    streams share one projection; the streams are told apart by their
    additive provenance-tag embedding.
    """
    cfg = params.config
    if guided is None:
        guided = cfg.guided
    s = cfg.image_size
    if inputs.image.shape != (s, s, 3):
        raise BadImageShape(f"expected ({s}, {s}, 3), got {inputs.image.shape}")
    for name, mask in (("binary", inputs.binary_mask), ("instance", inputs.instance_mask)):
        if mask.shape != (s, s):
            raise BadMaskShape(f"{name} mask: expected ({s}, {s}), got {mask.shape}")

    streams = [_patch_stream(params, inputs.image.astype(np.float64) / 255.0, 0)]
    tags: list[str] = [TAG_IMAGE] * cfg.n_patches
    if guided:
        binary = inputs.binary_mask.astype(np.float64) / 255.0
        instance = inputs.instance_mask.astype(np.float64) / float(cfg.instance_id_max)
        for plane, tag_index, tag in ((binary, 1, TAG_BINARY), (instance, 2, TAG_INSTANCE)):
            tripled = np.repeat(plane[:, :, None], 3, axis=2)
            streams.append(_patch_stream(params, tripled, tag_index))
            tags.extend([tag] * cfg.n_patches)

    ids = params.vocab.encode(inputs.can_text)[: cfg.max_can_tokens]
    ids = ids + [PAD_ID] * (cfg.max_can_tokens - len(ids))
    can_tokens = params.tok_embed[np.asarray(ids, dtype=np.intp)].copy()
    can_tokens += params.tag_embed[3]
    can_tokens += params.pos_embed[: cfg.max_can_tokens]
    streams.append(can_tokens)
    tags.extend([TAG_CAN] * cfg.max_can_tokens)

    return FusedRepresentation(tokens=np.vstack(streams), provenance=tuple(tags))
