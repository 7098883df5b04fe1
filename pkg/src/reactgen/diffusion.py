"""Per-token denoising: cosine noise schedule, one compact modulated-MLP
noise estimator per unit, the masked-token denoising loss, and the
ancestral per-token sampler.

A token never meets the transformer during denoising — the transformer's
output vector z is the whole condition. That factorization is what keeps
generation autoregressive per token while the heavy context work is done
once per unmasking iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reactgen.errors import ConfigError, ContractError
from reactgen.rng import stream  # noqa: F401  (re-exported for callers building per-token streams)
from reactgen.tensor import (
    Linear,
    Module,
    ModuleList,
    Tensor,
    activation,
    layer_norm,
    no_grad,
)


@dataclass(frozen=True)
class DiffusionSettings:
    token_dim: int = 64
    cond_dim: int = 64
    hidden: int = 256
    num_blocks: int = 3
    T_diff: int = 1000
    s_offset: float = 0.008
    num_sample_steps: int = 100
    include_unmasked: bool = False  # ablation: loss over every position

    def __post_init__(self):
        if min(self.token_dim, self.cond_dim, self.hidden, self.num_blocks) < 1:
            raise ConfigError("diffusion dims and block count must be positive")
        if self.T_diff < 1 or self.s_offset <= 0:
            raise ConfigError("T_diff must be >= 1 and s_offset > 0")
        if not (1 <= self.num_sample_steps <= self.T_diff):
            raise ConfigError("num_sample_steps must lie in [1, T_diff]")


class NoiseSchedule:
    """Cosine schedule tables, index 0 reserved as the t=0 reference row
    (alpha_bar[0] = 1, sigma[0] = 0)."""

    def __init__(self, T_diff: int, s_offset: float, alpha: np.ndarray,
                 alpha_bar: np.ndarray, sigma: np.ndarray):
        self.T_diff = T_diff
        self.s_offset = s_offset
        self.alpha = alpha
        self.alpha_bar = alpha_bar
        self.sigma = sigma


def build_cosine_schedule(T_diff: int, s: float = 0.008) -> NoiseSchedule:
    """alpha_bar[t] = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
    per-step alpha clipped to >= 0.001; sigma is the posterior std and is 0
    at the final reverse step (t=1) because alpha_bar[0] = 1."""
    if T_diff < 1:
        raise ContractError("T_diff must be >= 1")
    if s <= 0:
        raise ContractError("schedule offset s must be > 0")
    t = np.arange(T_diff + 1, dtype=np.float64)
    f = np.cos(((t / T_diff + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    alpha_bar = f / f[0]
    alpha = np.ones(T_diff + 1)
    alpha[1:] = np.maximum(alpha_bar[1:] / alpha_bar[:-1], 0.001)
    sigma = np.zeros(T_diff + 1)
    sigma[1:] = np.sqrt(
        (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * (1.0 - alpha[1:])
    )
    return NoiseSchedule(T_diff, s, alpha, alpha_bar, sigma)


def _check_t(t, T_diff: int) -> np.ndarray:
    t = np.asarray(t)
    if t.size == 0 or np.any(t < 1) or np.any(t > T_diff) or t.dtype.kind not in "iu":
        raise ContractError(f"timesteps must be integers in [1, {T_diff}]")
    return t


def perturb(x0, t, eps, sched: NoiseSchedule) -> Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. t may be a
    scalar or one index per leading row of x0."""
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    eps = eps if isinstance(eps, Tensor) else Tensor(eps)
    t = _check_t(t, sched.T_diff)
    ab = sched.alpha_bar[t]
    if t.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    w0 = np.sqrt(ab).astype(x0.dtype)
    w1 = np.sqrt(1.0 - ab).astype(x0.dtype)
    return x0 * Tensor(w0) + eps * Tensor(w1)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of (integer) timesteps, float64, shape t.shape + (dim,)."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[..., None] * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros_like(emb[..., :1])], axis=-1)
    return emb


def _plain_ln(x: Tensor) -> Tensor:
    d = x.shape[-1]
    return layer_norm(x, Tensor(np.ones(d)), Tensor(np.zeros(d)))


class DiffusionHead(Module):
    """Noise estimator for one unit.

    The condition U = z + temb(t) is mapped by three linears into per-sample
    gate / scale / shift vectors at hidden width, shared by every residual
    block: Phi(v) = v + U_lam * f(U_gam * LN(v) + U_beta), with f a two-layer
    projection. Input/output projections move tokens between token width and
    hidden width.
    """

    def __init__(self, cfg: DiffusionSettings, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        d, c, w = cfg.token_dim, cfg.cond_dim, cfg.hidden
        self.in_proj = Linear(d, w, rng)
        self.temb_a = Linear(c, c, rng)
        self.temb_b = Linear(c, c, rng)
        self.lam = Linear(c, w, rng)
        self.gam = Linear(c, w, rng)
        self.beta = Linear(c, w, rng)
        self.f1 = ModuleList([Linear(w, w, rng) for _ in range(cfg.num_blocks)])
        self.f2 = ModuleList([Linear(w, w, rng) for _ in range(cfg.num_blocks)])
        self.out_proj = Linear(w, d, rng)

    def predict_noise(self, x_t, t, z) -> Tensor:
        """x_t (..., token_dim), z (..., cond_dim), t scalar or (...,) ints."""
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        z = z if isinstance(z, Tensor) else Tensor(z)
        if x_t.shape[:-1] != z.shape[:-1]:
            raise ContractError(f"x_t rows {x_t.shape} and z rows {z.shape} disagree")
        t = _check_t(t, self.cfg.T_diff)
        enc = timestep_embedding(t, self.cfg.cond_dim)
        if not t.ndim:
            enc = np.broadcast_to(enc, z.shape[:-1] + (self.cfg.cond_dim,))
        temb = Tensor(enc.astype(z.dtype))
        u = z + self.temb_b(activation(self.temb_a(temb), "silu"))
        u_lam, u_gam, u_beta = self.lam(u), self.gam(u), self.beta(u)
        v = self.in_proj(x_t)
        for f1, f2 in zip(self.f1, self.f2):
            h = u_gam * _plain_ln(v) + u_beta
            v = v + u_lam * f2(activation(f1(h), "silu"))
        return self.out_proj(v)

    __call__ = predict_noise


def _select_rows(x0, z, mask):
    """Flatten (..., L, d) tokens and conditioning to matching row sets,
    keeping only masked positions when a mask is given."""
    x0 = np.asarray(x0.data if isinstance(x0, Tensor) else x0)
    z = z if isinstance(z, Tensor) else Tensor(z)
    if mask is not None:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != x0.shape[:-1]:
            raise ContractError(f"mask shape {sel.shape} != token rows {x0.shape[:-1]}")
        if not sel.any():
            raise ContractError("diffusion loss needs at least one selected token")
        return x0[sel], z[sel]
    return x0.reshape(-1, x0.shape[-1]), z.reshape(-1, z.shape[-1])


def unit_diffusion_loss(x0, z, head: DiffusionHead, sched: NoiseSchedule,
                        rng: np.random.Generator, mask=None) -> Tensor:
    """Denoising loss for one unit: mean over selected tokens of
    ||eps - eps_hat||^2 (summed over token dims), t ~ U{1..T} per token.

    x0: (..., L, d) ground-truth tokens (constant); z: matching conditioning
    Tensor; mask (..., L) bool selects positions (None = all).
    """
    x0_rows, z_rows = _select_rows(x0, z, mask)
    m, d = x0_rows.shape
    t = rng.integers(1, sched.T_diff + 1, size=m)
    eps = rng.standard_normal((m, d)).astype(x0_rows.dtype)
    x_t = perturb(Tensor(x0_rows), t, Tensor(eps), sched)
    eps_hat = head.predict_noise(x_t, t, z_rows)
    diff = eps_hat - Tensor(eps)
    return (diff * diff).sum(axis=-1).mean()


def unit_l2_loss(x0, z, head: DiffusionHead, sched: NoiseSchedule,
                 mask=None) -> Tensor:
    """Direct-regression ablation: the head, evaluated at the all-noise
    timestep on a zero input, predicts the clean token outright and is fit
    with plain L2. No noise is drawn, so sampling becomes deterministic."""
    x0_rows, z_rows = _select_rows(x0, z, mask)
    blank = Tensor(np.zeros_like(x0_rows))
    x0_hat = head.predict_noise(blank, sched.T_diff, z_rows)
    diff = x0_hat - Tensor(x0_rows)
    return (diff * diff).sum(axis=-1).mean()


def diffusion_loss(x0_b, z_b, x0_h, z_h, head_b: DiffusionHead,
                   head_h: DiffusionHead, sched: NoiseSchedule,
                   rng: np.random.Generator, mask=None,
                   include_unmasked: bool = False) -> Tensor:
    """Two-unit denoising criterion; masked positions only unless
    include_unmasked (ablation). Body draws its (t, eps) before hands, so a
    fixed rng gives a reproducible loss."""
    sel = None if include_unmasked else mask
    return (unit_diffusion_loss(x0_b, z_b, head_b, sched, rng, sel)
            + unit_diffusion_loss(x0_h, z_h, head_h, sched, rng, sel))


def sampling_timesteps(T_diff: int, num_steps: int) -> np.ndarray:
    """Descending visited timesteps: round a linear spacing from T to 1 and
    drop duplicates. num_steps=1 visits only T; num_steps=T visits all."""
    if not 1 <= num_steps <= T_diff:
        raise ContractError(f"num_steps must lie in [1, {T_diff}], got {num_steps}")
    ts = np.unique(np.rint(np.linspace(T_diff, 1, num_steps)).astype(int))
    return ts[::-1]


def sample_token(z, head: DiffusionHead, sched: NoiseSchedule, rngs,
                 num_steps: int) -> np.ndarray:
    """Ancestral denoising from pure noise, conditioned on z.

    z: (cond_dim,) with a single Generator, or (M, cond_dim) with a sequence
    of M Generators — one independent stream per token, so a token's draw
    sequence does not depend on which batch it is sampled in. Noise is added
    at every visited step except the last.
    """
    zt = z if isinstance(z, Tensor) else Tensor(z)
    single = zt.ndim == 1
    if single:
        zt = zt.reshape(1, -1)
        rngs = [rngs] if isinstance(rngs, np.random.Generator) else list(rngs)
    else:
        rngs = list(rngs)
    m = zt.shape[0]
    if len(rngs) != m:
        raise ContractError(f"need {m} per-token rngs, got {len(rngs)}")
    d = head.cfg.token_dim
    ts = sampling_timesteps(sched.T_diff, num_steps)

    with no_grad():
        x = np.stack([r.standard_normal(d) for r in rngs]).astype(zt.dtype)
        for j, t in enumerate(ts):
            eps_hat = head.predict_noise(Tensor(x), int(t), zt).data
            a = float(sched.alpha[t])
            ab = float(sched.alpha_bar[t])
            coef = (1.0 - a) / float(np.sqrt(1.0 - ab))
            x = (x - coef * eps_hat) * float(1.0 / np.sqrt(a))
            if j + 1 < len(ts):
                noise = np.stack([r.standard_normal(d) for r in rngs])
                x = (x + float(sched.sigma[t]) * noise).astype(zt.dtype)
    return x[0] if single else x
