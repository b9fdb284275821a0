"""Sequence-model layers built on :mod:`dvfa.autodiff`.

Layers take batched inputs of shape (B, L, D) together with a boolean
``valid`` array of shape (B, L) that is true on real (unpadded) positions.
Padded positions never influence valid outputs: attention masks them as keys
and the depthwise convolution sees them as zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class BlockConfig:
    d_model: int = 64
    n_heads: int = 4
    kernel_size: int = 7
    ff_mult: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


class Module:
    training = False

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: checkpoint {state[k].shape} vs model {p.shape}")
            p.data[...] = state[k]


def _param(array: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias=True, scale=None):
        bound = 1.0 / np.sqrt(d_in) if scale is None else scale
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)), dtype)
        self.bias = _param(np.zeros(d_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = _param(np.ones(d), dtype)
        self.beta = _param(np.zeros(d), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, dtype=np.float32, std: float = 0.02):
        self.weight = _param(rng.normal(0.0, std, size=(n, d)), dtype)

    def __call__(self, ids) -> Tensor:
        return ad.embedding(self.weight, ids)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator | None = None):
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.p, self.rng, self.training)


def zero_padding(x: Tensor, valid: np.ndarray | None) -> Tensor:
    if valid is None:
        return x
    return ad.mul(x, np.asarray(valid, dtype=x.dtype)[..., None])


def key_mask(valid: np.ndarray) -> np.ndarray:
    """(B, L) validity -> (B, 1, L) attention mask allowing every valid key."""
    return np.asarray(valid, dtype=bool)[:, None, :]


class FeedForward(Module):
    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        self.norm = LayerNorm(cfg.d_model, dtype)
        self.up = Linear(cfg.d_model, cfg.d_model * cfg.ff_mult, rng, dtype)
        self.down = Linear(cfg.d_model * cfg.ff_mult, cfg.d_model, rng, dtype)
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.drop(self.down(ad.swish(self.up(self.norm(x)))))


class MultiHeadAttention(Module):
    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.q = Linear(d, d, rng, dtype)
        self.k = Linear(d, d, rng, dtype)
        self.v = Linear(d, d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)
        self.drop = Dropout(cfg.dropout, rng)
        self.keep_weights = False
        self.last_weights: np.ndarray | None = None

    def _heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor, mask=None) -> Tensor:
        """Scaled dot-product attention over (B, Lq, D) queries and (B, Lk, D) keys/values.

        ``mask`` is boolean and broadcastable to (B, Lq, Lk); true means the key
        may be attended. A query row with no allowed key raises ``ValueError``.
        """
        if queries.shape[-1] != keys.shape[-1] or keys.shape != values.shape:
            raise ad.ShapeError(
                f"attention: query {queries.shape}, key {keys.shape}, value {values.shape} widths disagree"
            )
        b, lq, d = queries.shape
        q = self._heads(self.q(queries))
        k = self._heads(self.k(keys))
        v = self._heads(self.v(values))
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // self.n_heads))
        head_mask = None
        if mask is not None:
            head_mask = np.asarray(mask, dtype=bool)
            if head_mask.ndim == 3:
                head_mask = head_mask[:, None]
        weights = self.drop(ad.softmax(scores, head_mask))
        if self.keep_weights:
            self.last_weights = weights.data.copy()
        ctx = ad.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self.out(ctx)


def multi_head_attention(layer: MultiHeadAttention, queries, keys, values, mask=None) -> Tensor:
    """Unbatched convenience: (Lq, D) / (Lk, D) inputs and an (Lq, Lk) mask."""
    q, k, v = (ad.reshape(ad.as_tensor(t), (1,) + t.shape) for t in (queries, keys, values))
    m = None if mask is None else np.asarray(mask, dtype=bool)[None]
    out = layer(q, k, v, m)
    return out.reshape(out.shape[1:])


class ConvModule(Module):
    """Pointwise -> GLU -> depthwise conv -> norm -> swish -> pointwise."""

    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        d = cfg.d_model
        self.norm = LayerNorm(d, dtype)
        self.pointwise_in = Linear(d, 2 * d, rng, dtype)
        bound = 1.0 / np.sqrt(cfg.kernel_size)
        self.depthwise = _param(rng.uniform(-bound, bound, size=(cfg.kernel_size, d)), dtype)
        self.depthwise_bias = _param(np.zeros(d), dtype)
        self.conv_norm = LayerNorm(d, dtype)
        self.pointwise_out = Linear(d, d, rng, dtype)
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x: Tensor, valid=None) -> Tensor:
        a, gate = ad.split_last(self.pointwise_in(self.norm(x)), 2)
        h = zero_padding(a * ad.sigmoid(gate), valid)
        h = ad.depthwise_conv1d(h, self.depthwise, self.depthwise_bias)
        h = ad.swish(self.conv_norm(h))
        return self.drop(self.pointwise_out(h))


class ConformerLayer(Module):
    """Macaron conformer block with pre-norm residuals and a final norm."""

    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        self.ff1 = FeedForward(cfg, rng, dtype)
        self.attn_norm = LayerNorm(cfg.d_model, dtype)
        self.attn = MultiHeadAttention(cfg, rng, dtype)
        self.conv = ConvModule(cfg, rng, dtype)
        self.ff2 = FeedForward(cfg, rng, dtype)
        self.final_norm = LayerNorm(cfg.d_model, dtype)

    def __call__(self, x: Tensor, valid: np.ndarray) -> Tensor:
        x = x + self.ff1(x) * 0.5
        h = self.attn_norm(x)
        x = x + self.attn(h, h, h, key_mask(valid))
        x = x + self.conv(x, valid)
        x = x + self.ff2(x) * 0.5
        return self.final_norm(x)


class TransformerLayer(Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        self.attn_norm = LayerNorm(cfg.d_model, dtype)
        self.attn = MultiHeadAttention(cfg, rng, dtype)
        self.ff = FeedForward(cfg, rng, dtype)
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x: Tensor, valid=None, attn_mask=None) -> Tensor:
        mask = key_mask(valid) if attn_mask is None else attn_mask
        h = self.attn_norm(x)
        x = x + self.drop(self.attn(h, h, h, mask))
        return x + self.ff(x)


class PositionalModalityEmbedding(Module):
    """Learned absolute positions per modality plus a learned modality-type row."""

    def __init__(self, modalities: tuple[str, ...], max_lengths: dict[str, int], d: int, rng,
                 dtype=np.float32, zero_init: bool = False, std: float = 0.02):
        self.modalities = tuple(modalities)
        self.max_lengths = dict(max_lengths)
        type_std = 0.0 if zero_init else 0.02
        std = 0.0 if zero_init else std
        self.positions = [_param(rng.normal(0.0, std, size=(max_lengths[m], d)), dtype) for m in modalities]
        self.types = _param(rng.normal(0.0, type_std, size=(len(modalities), d)), dtype)

    def __call__(self, length: int, modality: str) -> Tensor:
        if modality not in self.modalities:
            raise KeyError(f"unknown modality {modality!r}; expected one of {self.modalities}")
        m = self.modalities.index(modality)
        if length > self.max_lengths[modality]:
            raise ValueError(f"{modality} length {length} exceeds configured maximum {self.max_lengths[modality]}")
        return self.positions[m][:length] + self.types[m]
