"""Masked reaction transformer.

Two parallel token streams (actor and reactor) per unit. Each block refines
the actor stream with self-attention, lets the masked reactor stream attend
to itself and then cross-attend into the refined actor stream (action-
conditioned fusion), and finally exchanges information between units by
feature-wise modulation (each unit's normalized features are scaled and
shifted by an affine predicted from the other unit).

The transformer emits one conditioning vector per reactor token; the
diffusion heads own everything after that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reactgen.errors import ConfigError, ContractError
from reactgen.rng import stream
from reactgen.tensor import (
    Linear,
    LayerNorm,
    Module,
    ModuleList,
    Parameter,
    Tensor,
    activation,
    concat,
    layer_norm,
    matmul,
    softmax_rows,
    where,
)

FUSION_KINDS = ("acf", "concat")
MUM_MODES = ("both", "b2h", "h2b", "off")


@dataclass(frozen=True)
class ReactorSettings:
    latent_dim: int = 64
    d_model: int = 64
    num_heads: int = 4
    num_blocks: int = 2
    ffn_hidden: int = 0          # 0 -> 4 * d_model
    max_tokens: int = 256
    units: tuple[str, ...] = ("body", "hands")
    fusion: str = "acf"
    mum_mode: str = "both"
    mask_ratio_lo: float = 0.7
    mask_ratio_hi: float = 1.0

    def __post_init__(self):
        if self.d_model < 1 or self.num_heads < 1 or self.num_blocks < 1:
            raise ConfigError("d_model, num_heads and num_blocks must be positive")
        if self.d_model % self.num_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"fusion must be one of {FUSION_KINDS}, got {self.fusion!r}")
        if self.mum_mode not in MUM_MODES:
            raise ConfigError(f"mum_mode must be one of {MUM_MODES}, got {self.mum_mode!r}")
        if not self.units or len(set(self.units)) != len(self.units):
            raise ConfigError("units must be nonempty and distinct")
        if not (0.0 <= self.mask_ratio_lo <= self.mask_ratio_hi <= 1.0):
            raise ConfigError("mask ratio range must satisfy 0 <= lo <= hi <= 1")

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden else 4 * self.d_model


def sample_mask(length: int, rng: np.random.Generator,
                lo: float = 0.7, hi: float = 1.0) -> np.ndarray:
    """Boolean (length,) mask with round(ratio * length) True entries,
    ratio ~ U[lo, hi]. True marks a masked (to-be-predicted) position."""
    if length < 1:
        raise ContractError("mask length must be >= 1")
    ratio = rng.uniform(lo, hi)
    k = int(np.rint(ratio * length))
    mask = np.zeros(length, dtype=bool)
    if k:
        mask[rng.choice(length, size=min(k, length), replace=False)] = True
    return mask


def _plain_ln(x: Tensor) -> Tensor:
    d = x.shape[-1]
    return layer_norm(x, Tensor(np.ones(d)), Tensor(np.zeros(d)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention, H heads, optional boolean attend-mask.

    mask has shape (Lq, Lk); mask[i, j] True lets query i read key j. A row
    with no readable key yields a zero output vector (its softmax weights are
    discarded), so downstream residual adds see a clean no-op.
    """

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask=None) -> Tensor:
        bsz, lq, d = q_in.shape
        lk = kv_in.shape[1]
        h, hd = self.num_heads, self.head_dim

        def heads(t, length):
            return t.reshape(bsz, length, h, hd).swapaxes(1, 2)  # (B,H,L,hd)

        q = heads(self.q(q_in), lq)
        k = heads(self.k(kv_in), lk)
        v = heads(self.v(kv_in), lk)
        logits = matmul(q, k.swapaxes(2, 3)) * (1.0 / np.sqrt(hd))
        if mask is not None:
            if mask.shape != (lq, lk):
                raise ContractError(f"attend-mask shape {mask.shape} != ({lq}, {lk})")
            logits = where(mask[None, None], logits, -1e30)
        weights = softmax_rows(logits)
        if mask is not None:
            keep = mask.any(axis=1).astype(q_in.data.dtype)  # (Lq,)
            weights = weights * Tensor(keep[None, None, :, None])
        out = matmul(weights, v).swapaxes(1, 2).reshape(bsz, lq, d)
        return self.o(out)


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator,
                 act: str = "gelu"):
        super().__init__()
        self.up = Linear(d_model, hidden, rng)
        self.down = Linear(hidden, d_model, rng)
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(activation(self.up(x), self.act))


class AcfBlock(Module):
    """One unit's action-conditioned fusion: refine the actor stream by
    self-attention, self-attend the (partially masked) reactor stream, fuse
    by cross-attending into the refined actor, then a feed-forward. Pre-norm
    residual wiring throughout; the bare attention chain is the published
    three-step fusion."""

    def __init__(self, cfg: ReactorSettings, rng: np.random.Generator):
        super().__init__()
        d, h = cfg.d_model, cfg.num_heads
        self.fusion = cfg.fusion
        self.ln_actor = LayerNorm(d)
        self.actor_attn = MultiHeadAttention(d, h, rng)
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, h, rng)
        if cfg.fusion == "acf":
            self.ln_q = LayerNorm(d)
            self.ln_kv = LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, h, rng)
        else:  # direct concatenation ablation
            self.cat_proj = Linear(2 * d, d, rng)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.hidden, rng)

    def __call__(self, x: Tensor, y: Tensor, masks) -> tuple[Tensor, Tensor]:
        ya = self.ln_actor(y)
        y = y + self.actor_attn(ya, ya, masks.get("actor"))
        xs = self.ln_self(x)
        x = x + self.self_attn(xs, xs, masks.get("self"))
        if self.fusion == "acf":
            x = x + self.cross_attn(self.ln_q(x), self.ln_kv(y), masks.get("cross"))
        else:
            x = x + self.cat_proj(concat([x, y], axis=-1))
        x = x + self.ffn(self.ln_ffn(x))
        return x, y


class MutualModulation(Module):
    """Cross-unit feature modulation. Each direction predicts (scale, shift)
    from the other unit's fused features and applies them to this unit's
    normalized features, replacing the stream. The affine maps start at zero
    so modulation begins as a plain normalization."""

    def __init__(self, d_model: int, mode: str, rng: np.random.Generator):
        super().__init__()
        self.mode = mode
        if mode in ("both", "b2h"):
            self.from_body = Linear(d_model, 2 * d_model, rng, zero_init=True)
        if mode in ("both", "h2b"):
            self.from_hands = Linear(d_model, 2 * d_model, rng, zero_init=True)

    def _modulate(self, target: Tensor, source: Tensor, proj: Linear) -> Tensor:
        d = target.shape[-1]
        affine = proj(source)
        scale, shift = affine[..., :d], affine[..., d:]
        return (1.0 + scale) * _plain_ln(target) + shift

    def __call__(self, xb: Tensor, xh: Tensor) -> tuple[Tensor, Tensor]:
        new_b, new_h = xb, xh
        if self.mode in ("both", "b2h"):
            new_h = self._modulate(xh, xb, self.from_body)
        if self.mode in ("both", "h2b"):
            new_b = self._modulate(xb, xh, self.from_hands)
        return new_b, new_h


class ReactorBlock(Module):
    """Per-unit fusion blocks plus (for two units) the mutual modulation."""

    def __init__(self, cfg: ReactorSettings, rng: np.random.Generator):
        super().__init__()
        self.units = cfg.units
        for name in cfg.units:
            setattr(self, name, AcfBlock(cfg, rng))
        self.mum = (MutualModulation(cfg.d_model, cfg.mum_mode, rng)
                    if len(cfg.units) == 2 and cfg.mum_mode != "off" else None)

    def __call__(self, xs: dict, ys: dict, masks) -> tuple[dict, dict]:
        new_x, new_y = {}, {}
        for name in self.units:
            new_x[name], new_y[name] = getattr(self, name)(xs[name], ys[name], masks)
        if self.mum is not None:
            b, h = self.units
            new_x[b], new_x[h] = self.mum(new_x[b], new_x[h])
        return new_x, new_y


class ReactionTransformer(Module):
    """Maps per-unit actor/reactor token sequences to per-unit conditioning
    features.

    reactor forward contract: actor_tokens / reactor_tokens are dicts
    {unit: (B, L, latent_dim)}; mask is {unit: (B, L) bool} marking reactor
    positions to replace with the learned mask vector (None = no masking);
    attn_masks is {"actor"|"self"|"cross": (L, L) bool or absent}.
    Returns {unit: (B, L, d_model)}.
    """

    def __init__(self, cfg: ReactorSettings, seed: int):
        super().__init__()
        self.cfg = cfg
        rng = stream(seed, "reactor-init")
        d = cfg.d_model
        for name in cfg.units:
            setattr(self, f"in_actor_{name}", Linear(cfg.latent_dim, d, rng))
            setattr(self, f"in_reactor_{name}", Linear(cfg.latent_dim, d, rng))
        self.mask_embedding = Parameter(rng.normal(0.0, 0.02, (d,)))
        self.pos_embedding = Parameter(rng.normal(0.0, 0.02, (cfg.max_tokens, d)))
        for i in range(cfg.num_blocks):
            setattr(self, f"block{i}", ReactorBlock(cfg, rng))
        for name in cfg.units:
            setattr(self, f"final_{name}", LayerNorm(d))

    def _check_tokens(self, tokens: dict, role: str) -> tuple[int, int]:
        shapes = set()
        for name in self.cfg.units:
            if name not in tokens:
                raise ContractError(f"missing {role} tokens for unit {name!r}")
            t = tokens[name]
            if t.ndim != 3 or t.shape[2] != self.cfg.latent_dim:
                raise ContractError(
                    f"{role}[{name}] must be (B, L, {self.cfg.latent_dim}), got {t.shape}"
                )
            shapes.add(t.shape[:2])
        if len(shapes) != 1:
            raise ContractError(f"{role} units disagree on (B, L): {sorted(shapes)}")
        bsz, length = next(iter(shapes))
        if length > self.cfg.max_tokens:
            raise ContractError(
                f"sequence of {length} tokens exceeds max_tokens {self.cfg.max_tokens}"
            )
        return bsz, length

    def __call__(self, actor_tokens: dict, reactor_tokens: dict,
                 mask: dict | None = None, attn_masks: dict | None = None) -> dict:
        attn_masks = attn_masks or {}
        self._check_tokens(actor_tokens, "actor")
        _, length = self._check_tokens(reactor_tokens, "reactor")
        pos = self.pos_embedding[:length]

        xs, ys = {}, {}
        for name in self.cfg.units:
            y = getattr(self, f"in_actor_{name}")(_as3(actor_tokens[name]))
            x = getattr(self, f"in_reactor_{name}")(_as3(reactor_tokens[name]))
            if mask is not None and mask.get(name) is not None:
                x = where(np.asarray(mask[name], dtype=bool)[:, :, None],
                          self.mask_embedding, x)
            ys[name] = y + pos
            xs[name] = x + pos

        for i in range(self.cfg.num_blocks):
            xs, ys = getattr(self, f"block{i}")(xs, ys, attn_masks)
        return {name: getattr(self, f"final_{name}")(xs[name])
                for name in self.cfg.units}


def _as3(t) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(t)
    if t.ndim != 3:
        raise ContractError(f"expected (B, L, d) tokens, got shape {t.shape}")
    return t
