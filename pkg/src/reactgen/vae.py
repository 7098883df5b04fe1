"""Unit tokenizers: one 1D-convolutional VAE per unit (body, hands), mapping
(N, C) frame sequences to (L, d) Gaussian token distributions with L = N/r.

Every convolution is left-padded (block-causal), so token i of the encoder
depends only on frames < (i+1)*r, and decoded frame t depends only on tokens
<= t//r. Online generation leans on this: encoding a prefix of the frames
yields a prefix of the tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reactgen.errors import ConfigError, ContractError
from reactgen.tensor import (
    AdamW,
    Module,
    ModuleList,
    Parameter,
    Tensor,
    check_finite_loss,
    clip,
    conv1d,
    no_grad,
    pad_last,
    relu,
    repeat_last,
    smooth_l1,
    warmup_lr,
)
from reactgen.rng import stream


@dataclass(frozen=True)
class VaeSettings:
    downsample_rate: int = 4
    latent_dim: int = 64
    width: int = 128
    kl_weight: float = 1e-4
    smoothl1_beta: float = 1.0
    logvar_clamp: float = 10.0

    def __post_init__(self):
        r = self.downsample_rate
        if r < 1 or (r & (r - 1)) != 0:
            raise ConfigError(f"downsample_rate must be a power of two >= 1, got {r}")
        if self.latent_dim < 1 or self.width < 1:
            raise ConfigError("latent_dim and width must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be nonnegative")

    @property
    def num_stages(self) -> int:
        return int(np.log2(self.downsample_rate))


@dataclass
class LatentDist:
    mu: Tensor      # (..., L, d)
    log_var: Tensor


class CausalConv(Module):
    """conv1d with left-only padding of (kernel - stride) samples.

    gain scales the weight init: sqrt(2)/sqrt(fan_in) suits relu-followed
    convs, 1/sqrt(fan_in) linear heads, and 0 makes a residual branch start
    at identity.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator, gain: float = np.sqrt(2.0)):
        super().__init__()
        if kernel < stride:
            raise ContractError("kernel must be >= stride for causal padding")
        scale = gain / np.sqrt(c_in * kernel)
        self.weight = Parameter(rng.normal(0.0, scale, (c_out, c_in, kernel))
                                if gain else np.zeros((c_out, c_in, kernel)))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.pad_left = kernel - stride

    def __call__(self, x: Tensor) -> Tensor:
        if self.pad_left:
            x = pad_last(x, self.pad_left, 0)
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=0)


class ResBlock(Module):
    """3-then-1 kernel residual pair; the closing conv starts at zero so the
    block is identity at init."""

    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = CausalConv(width, width, 3, 1, rng)
        self.conv2 = CausalConv(width, width, 1, 1, rng, gain=0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(relu(self.conv1(relu(x))))


class UnitVae(Module):
    """Encoder downsamples immediately (one stride-2 conv per factor of 2 in
    r) and keeps all residual blocks at token rate; the decoder narrows to
    width/2 at the first upsample and finishes with a pointwise projection.
    Keeping the heavy blocks at low temporal resolution and the frame-rate
    layers narrow is what fits the overfit run in its CPU budget at the full
    desk width."""

    def __init__(self, channels: int, settings: VaeSettings, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.settings = settings
        w, d = settings.width, settings.latent_dim
        stages = settings.num_stages

        downs = []
        c = channels
        for _ in range(stages):
            downs.append(CausalConv(c, w, 4, 2, rng))
            c = w
        if not stages:  # r == 1: no downsampling, plain stem
            downs.append(CausalConv(c, w, 3, 1, rng))
        self.enc_down = ModuleList(downs)
        self.enc_res = ModuleList([ResBlock(w, rng) for _ in range(3)])
        self.enc_head = CausalConv(w, 2 * d, 3, 1, rng, gain=1.0)
        # Start the posterior tight (sigma ~ e^-2): with sigma ~ 1 the decoder
        # input is noise-dominated and training sits on a long plateau before
        # the latent channel opens.
        self.enc_head.bias.data[d:] = -4.0

        self.dec_stem = CausalConv(d, w, 3, 1, rng)
        self.dec_res = ModuleList([ResBlock(w, rng) for _ in range(3)])
        ups = []
        c = w
        for _ in range(stages):
            ups.append(CausalConv(c, w // 2, 3, 1, rng))
            c = w // 2
        self.dec_up = ModuleList(ups)
        self.dec_refine = ResBlock(c, rng)  # frame-rate detail pass
        self.dec_head = CausalConv(c, channels, 1, 1, rng, gain=1.0)

    # -- encode / decode ------------------------------------------------------

    def encode(self, unit_seq) -> LatentDist:
        """(N, C) or (B, N, C) frames -> LatentDist with (L, d) / (B, L, d)."""
        x = unit_seq if isinstance(unit_seq, Tensor) else Tensor(unit_seq)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        r = self.settings.downsample_rate
        if x.shape[1] % r != 0:
            raise ContractError(
                f"sequence length {x.shape[1]} not divisible by downsample rate {r}"
            )
        if x.shape[2] != self.channels:
            raise ContractError(f"expected {self.channels} channels, got {x.shape[2]}")
        h = x.swapaxes(1, 2)  # (B, C, N)
        for down in self.enc_down:
            h = relu(down(h))
        for res in self.enc_res:
            h = res(h)
        h = self.enc_head(h).swapaxes(1, 2)  # (B, L, 2d)
        d = self.settings.latent_dim
        mu, log_var = h[:, :, :d], h[:, :, d:]
        log_var = clip(log_var, -self.settings.logvar_clamp, self.settings.logvar_clamp)
        if squeeze:
            mu, log_var = mu[0], log_var[0]
        return LatentDist(mu=mu, log_var=log_var)

    def decode(self, z) -> Tensor:
        """(L, d) or (B, L, d) tokens -> (N, C) / (B, N, C) frames, N = L*r."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        squeeze = z.ndim == 2
        if squeeze:
            z = z.reshape(1, *z.shape)
        h = z.swapaxes(1, 2)  # (B, d, L)
        h = relu(self.dec_stem(h))
        for res in self.dec_res:
            h = res(h)
        for up in self.dec_up:
            h = relu(up(repeat_last(h, 2)))
        h = self.dec_refine(h)
        out = self.dec_head(h).swapaxes(1, 2)
        return out[0] if squeeze else out


def reparameterize(dist: LatentDist, rng: np.random.Generator) -> Tensor:
    """z = mu + exp(0.5 log_var) * eps with eps ~ N(0, I)."""
    eps = rng.standard_normal(dist.mu.shape).astype(dist.mu.dtype)
    return dist.mu + (0.5 * dist.log_var).exp() * Tensor(eps)


def kl_to_standard_normal(dist: LatentDist) -> Tensor:
    """KL(q || N(0,I)) averaged per token-dimension; zero iff mu=0, log_var=0."""
    mu, lv = dist.mu, dist.log_var
    return (-0.5 * (1.0 + lv - mu * mu - lv.exp())).mean()


def vae_loss(recon_x, x, recon_y, y, dist_x: LatentDist, dist_y: LatentDist,
             settings: VaeSettings) -> Tensor:
    """Mean smooth-L1 over reactor (x) and actor (y) reconstructions plus the
    weighted KL of both posteriors. kl_weight=0 drops the prior term."""
    loss = smooth_l1(recon_x, x, settings.smoothl1_beta).mean()
    loss = loss + smooth_l1(recon_y, y, settings.smoothl1_beta).mean()
    if settings.kl_weight > 0:
        kl = kl_to_standard_normal(dist_x) + kl_to_standard_normal(dist_y)
        loss = loss + settings.kl_weight * kl
    return loss


def build_unit_vaes(channel_groups: dict[str, np.ndarray], settings: VaeSettings,
                    seed: int) -> dict[str, UnitVae]:
    return {
        name: UnitVae(len(idx), settings, stream(seed, "vae-init", name))
        for name, idx in channel_groups.items()
    }


def train_vae(dataset, channel_groups: dict[str, np.ndarray],
              settings: VaeSettings, steps: int, batch_size: int, seed: int,
              lr: float = 2e-4, betas=(0.5, 0.99), warmup_steps: int = 1000,
              log_every: int = 50, progress=None, initial=None):
    """Train one VAE per unit on both the action and reaction sequences of
    every pair. Returns ({unit: UnitVae}, loss history [(step, loss), ...]).
    Passing `initial` continues from existing models instead of fresh ones
    (optimizer moments start over)."""
    if not dataset:
        raise ConfigError("train_vae needs a nonempty dataset")
    vaes = initial if initial is not None else build_unit_vaes(channel_groups, settings, seed)
    if set(vaes) != set(channel_groups):
        raise ContractError("initial VAE units do not match the channel groups")
    optim = AdamW([p for v in vaes.values() for p in v.parameters()],
                  lr=0.0, betas=betas)
    # Pre-gather unit arrays, actors stacked above reactors: (2P, N, C).
    pool = {name: np.concatenate([
                np.stack([p.action.frames[:, idx] for p in dataset]),
                np.stack([p.reaction.frames[:, idx] for p in dataset]),
            ]) for name, idx in channel_groups.items()}
    num_pairs = len(dataset)

    batch_rng = stream(seed, "vae-batches")
    noise_rng = stream(seed, "vae-noise")
    history: list[tuple[int, float]] = []
    b = min(batch_size, num_pairs)  # a batch is b distinct pairs
    for step in range(steps):
        idx = (np.arange(num_pairs) if b == num_pairs
               else batch_rng.choice(num_pairs, size=b, replace=False))
        rows = np.concatenate([idx, idx + num_pairs])  # actor half, reactor half
        loss = None
        for name, vae in vaes.items():
            batch = Tensor(pool[name][rows])
            dist = vae.encode(batch)
            recon = vae.decode(reparameterize(dist, noise_rng))
            dist_y = LatentDist(dist.mu[:b], dist.log_var[:b])
            dist_x = LatentDist(dist.mu[b:], dist.log_var[b:])
            unit_loss = vae_loss(recon[b:], batch[b:], recon[:b], batch[:b],
                                 dist_x, dist_y, settings)
            loss = unit_loss if loss is None else loss + unit_loss
        optim.zero_grad()
        loss.backward()
        optim.lr = warmup_lr(step, lr, warmup_steps)
        optim.step()
        value = check_finite_loss(loss.item(), step)
        if step % log_every == 0 or step == steps - 1:
            history.append((step, value))
            if progress is not None:
                progress(step, value)
    return vaes, history


def reconstruction_error(vae: UnitVae, frames: np.ndarray,
                         beta: float = 1.0) -> float:
    """Mean per-element smooth-L1 of the deterministic (posterior-mean)
    round trip; the overfit acceptance gate measures this."""
    with no_grad():
        recon = vae.decode(vae.encode(frames).mu)
        return smooth_l1(recon, Tensor(np.asarray(frames, dtype=recon.dtype)),
                         beta).mean().item()


def pad_frames(frames: np.ndarray, r: int) -> tuple[np.ndarray, int]:
    """Right-pad to a multiple of r by repeating the last frame; returns the
    padded array and the pad length so callers can crop after decode."""
    n = frames.shape[0]
    pad = (-n) % r
    if pad == 0:
        return frames, 0
    tail = np.repeat(frames[-1:], pad, axis=0)
    return np.concatenate([frames, tail], axis=0), pad
