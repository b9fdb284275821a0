"""Visual forced-alignment network: encoders, multi-modal fusion, TAP and TPP heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (BlockConfig, ConformerLayer, Embedding, LayerNorm, Linear, Module, PositionalModalityEmbedding,
                 TransformerLayer, _param, zero_padding)

TARGETS = ("position", "word")


@dataclass
class ModelConfig:
    d_in: int = 16
    d_model: int = 64
    n_heads: int = 4
    kernel_size: int = 7
    ff_mult: int = 4
    visual_layers: int = 2
    text_layers: int = 2
    fusion_layers: int = 3
    pool_after: int | None = None
    stem_kernel: int = 5
    s_max: int = 16
    t_max: int = 512
    n_tokens: int = 64
    target: str = "position"
    n_dictionary: int = 0
    dropout: float = 0.0
    pos_std: float = 0.02
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.pos_std < 0:
            raise ValueError("pos_std must be non-negative")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.target == "word" and self.n_dictionary < 1:
            raise ValueError("word targets need n_dictionary >= 1")
        if self.pool_after is None:
            self.pool_after = max(1, self.text_layers // 2) if self.text_layers else 0
        if not 0 <= self.pool_after <= self.text_layers:
            raise ValueError(f"pool_after={self.pool_after} outside 0..{self.text_layers}")
        if self.stem_kernel % 2 == 0:
            raise ValueError("stem_kernel must be odd")
        self.block()  # validates head/kernel constraints

    @property
    def n_classes(self) -> int:
        """SIL + positions (or dictionary words) + DEL."""
        return (self.s_max if self.target == "position" else self.n_dictionary) + 2

    @property
    def deletion_class(self) -> int:
        return self.n_classes - 1

    def block(self) -> BlockConfig:
        return BlockConfig(self.d_model, self.n_heads, self.kernel_size, self.ff_mult, self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})


PRESETS = {
    "desk": dict(d_model=64, n_heads=4, kernel_size=7, visual_layers=2, text_layers=2, fusion_layers=3),
    "paper": dict(d_model=512, n_heads=8, kernel_size=7, visual_layers=4, text_layers=4, fusion_layers=6),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class ContextFeatures:
    f_v: Tensor  # (B, T, D)
    f_t: Tensor  # (B, S, D)
    frame_valid: np.ndarray
    word_valid: np.ndarray


@dataclass
class FusedOutput:
    o_m: Tensor  # (B, T + S, D)
    n_frames: int
    n_words: int


@dataclass
class Predictions:
    log_probs: Tensor  # (B, T, N)
    presence: Tensor  # (B, S)


class VisualStem(Module):
    """Linear projection of frame features followed by one T-preserving convolution."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        d = cfg.d_model
        self.proj = Linear(cfg.d_in, d, rng, dtype)
        bound = 1.0 / np.sqrt(cfg.stem_kernel * d)
        self.conv = _param(rng.uniform(-bound, bound, size=(cfg.stem_kernel, d, d)), dtype)
        self.conv_bias = _param(np.zeros(d), dtype)
        self.norm = LayerNorm(d, dtype)

    def __call__(self, x: Tensor, valid) -> Tensor:
        h = zero_padding(self.proj(x), valid)
        h = ad.conv1d(h, self.conv, self.conv_bias)
        return ad.swish(self.norm(h))


class DVFAModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        dtype = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(cfg.seed)
        block = cfg.block()
        self.stem = VisualStem(cfg, rng, dtype)
        self.visual = [ConformerLayer(block, rng, dtype) for _ in range(cfg.visual_layers)]
        self.token_embed = Embedding(cfg.n_tokens, cfg.d_model, rng, dtype, std=1.0)
        self.text = [ConformerLayer(block, rng, dtype) for _ in range(cfg.text_layers)]
        self.fusion_embed = PositionalModalityEmbedding(("video", "text"), {"video": cfg.t_max, "text": cfg.s_max},
                                                        cfg.d_model, rng, dtype, std=cfg.pos_std)
        self.fusion = [TransformerLayer(block, rng, dtype) for _ in range(cfg.fusion_layers)]
        self.fusion_norm = LayerNorm(cfg.d_model, dtype)
        self.tap = Linear(cfg.d_model, cfg.n_classes, rng, dtype, scale=0.02)
        self.tpp = Linear(cfg.d_model, 1, rng, dtype, scale=0.02)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype).type

    # -- encoders ------------------------------------------------------------
    def encode_visual(self, features, frame_valid) -> Tensor:
        features = ad.as_tensor(np.asarray(features, dtype=self.dtype) if not isinstance(features, Tensor) else features)
        if features.ndim != 3 or features.shape[-1] != self.config.d_in:
            raise ad.ShapeError(f"visual features must be (B, T, {self.config.d_in}), got {features.shape}")
        if features.shape[1] < 1:
            raise ValueError("visual input needs at least one frame")
        if features.shape[1] > self.config.t_max:
            raise ValueError(f"{features.shape[1]} frames exceed t_max={self.config.t_max}")
        h = self.stem(features, frame_valid)
        for layer in self.visual:
            h = layer(h, frame_valid)
        return h

    def encode_text(self, token_ids, token_valid, pool, word_valid) -> Tensor:
        """Token embeddings -> token-level conformers -> mean-pool to words -> word-level conformers.

        ``pool`` is a (B, S, L_tok) averaging matrix from :func:`dvfa.text.pooling_matrix`.
        """
        n_words = pool.shape[1]
        if n_words > self.config.s_max:
            raise ValueError(f"transcript of {n_words} words exceeds s_max={self.config.s_max}")
        h = self.token_embed(token_ids)
        for layer in self.text[:self.config.pool_after]:
            h = layer(h, token_valid)
        h = ad.matmul(Tensor(np.asarray(pool, dtype=self.dtype)), h)
        for layer in self.text[self.config.pool_after:]:
            h = layer(h, word_valid)
        return h

    def fuse(self, f_v: Tensor, f_t: Tensor, frame_valid, word_valid) -> FusedOutput:
        if f_v.shape[-1] != f_t.shape[-1]:
            raise ad.ShapeError(f"fusion inputs differ in width: {f_v.shape} vs {f_t.shape}")
        t, s = f_v.shape[1], f_t.shape[1]
        parts = [f_v + self.fusion_embed(t, "video")]
        if s:
            parts.append(f_t + self.fusion_embed(s, "text"))
        x = ad.concat(parts, axis=1) if s else parts[0]
        valid = np.concatenate([np.asarray(frame_valid, bool), np.asarray(word_valid, bool).reshape(len(frame_valid), s)],
                               axis=1)
        for layer in self.fusion:
            x = layer(x, valid)
        return FusedOutput(self.fusion_norm(x), t, s)

    # -- heads ---------------------------------------------------------------
    def predict_tap(self, fused: FusedOutput, class_mask=None) -> Tensor:
        logits = self.tap(fused.o_m[:, :fused.n_frames])
        mask = None if class_mask is None else np.asarray(class_mask, bool)[:, None, :]
        return ad.log_softmax(logits, mask)

    def predict_tpp(self, fused: FusedOutput) -> Tensor:
        b = fused.o_m.shape[0]
        z = self.tpp(fused.o_m[:, fused.n_frames:])
        return ad.sigmoid(z).reshape(b, fused.n_words)

    def __call__(self, batch) -> Predictions:
        f_v = self.encode_visual(batch.features, batch.frame_valid)
        f_t = self.encode_text(batch.token_ids, batch.token_valid, batch.pool, batch.word_valid)
        fused = self.fuse(f_v, f_t, batch.frame_valid, batch.word_valid)
        return Predictions(self.predict_tap(fused, batch.class_mask), self.predict_tpp(fused))


def class_mask(n_words: int, cfg: ModelConfig) -> np.ndarray:
    """Classes a sentence of ``n_words`` may use: SIL, its positions and DEL (all classes for word targets)."""
    mask = np.zeros(cfg.n_classes, dtype=bool)
    if cfg.target == "word":
        mask[:] = True
    else:
        mask[:n_words + 1] = True
        mask[cfg.deletion_class] = True
    return mask


def total_loss(pred: Predictions, frame_labels, frame_valid, presence, word_valid) -> tuple[Tensor, dict]:
    """Unweighted sum of the frame cross-entropy and the word presence BCE."""
    presence = np.asarray(presence)
    if np.any((presence != 0) & (presence != 1) & np.asarray(word_valid, bool)):
        raise ValueError("presence targets must be 0 or 1")
    l_tap = ad.cross_entropy(pred.log_probs, frame_labels, frame_valid)
    l_tpp = ad.binary_cross_entropy(pred.presence, presence, word_valid)
    total = l_tap + l_tpp
    return total, {"loss": float(total.data), "loss_tap": float(l_tap.data), "loss_tpp": float(l_tpp.data)}
