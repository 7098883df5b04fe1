"""Reaction generation: iterative unmasking of reactive tokens.

Offline mode reveals cosine-schedule-sized batches of a randomly permuted
token order over T iterations. Online mode reveals tokens strictly left to
right, one per step, and at step i runs the whole stack on length-(i+1)
prefixes only — the encoder sees just the actor frames available so far.
Rerunning with a truncated actor therefore performs literally the same
arithmetic for the surviving steps, which makes prefix outputs bit-identical
rather than merely close (column-sliced BLAS calls do not round identically,
so "mathematically causal" alone would not suffice).

Every token draws its diffusion noise from a stream keyed by
(sequence seed, "token", unit, index), so a token's randomness does not
depend on which reveal batch it lands in. The batched entry points exist
because evaluation generates thousands of sequences; each sequence gets its
own seed, and all of them share one plan and one model pass per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reactgen.diffusion import build_cosine_schedule, sample_token
from reactgen.errors import ConfigError, ContractError
from reactgen.motion import MotionSequence
from reactgen.rng import stream
from reactgen.tensor import Tensor, no_grad

ATTENTION_MODES = ("offline", "online")
TOKEN_LOSSES = ("diffusion", "l2")


@dataclass(frozen=True)
class GenerationConfig:
    T_iters: int = 8
    mode: str = "offline"
    num_steps: int = 100
    seed: int = 0
    order_seed: int = 0
    loss: str = "diffusion"  # "l2": heads act as direct token regressors

    def __post_init__(self):
        if self.T_iters < 1:
            raise ConfigError("T_iters must be >= 1")
        if self.mode not in ATTENTION_MODES:
            raise ConfigError(f"mode must be one of {ATTENTION_MODES}, got {self.mode!r}")
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")
        if self.loss not in TOKEN_LOSSES:
            raise ConfigError(f"loss must be one of {TOKEN_LOSSES}, got {self.loss!r}")


def mask_ratio(t: int, T: int) -> float:
    """cos(pi*t / 2T), with the endpoints exact: 1 at t=0, 0 at t=T."""
    if T < 1 or not 0 <= t <= T:
        raise ContractError(f"mask_ratio needs 0 <= t <= T, T >= 1; got t={t}, T={T}")
    if t == 0:
        return 1.0
    if t == T:
        return 0.0
    return float(np.cos(np.pi * t / (2.0 * T)))


def build_unmask_plan(L: int, T: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Cut a random permutation of 0..L-1 into T batches sized by
    largest-remainder rounding of the cosine decrements, summing to L.
    Batches may be empty when T > L; generation skips those."""
    if L < 1 or T < 1:
        raise ContractError(f"plan needs L >= 1 and T >= 1, got L={L}, T={T}")
    perm = rng.permutation(L)
    keep = np.array([mask_ratio(t, T) * L for t in range(T + 1)])
    dec = keep[:-1] - keep[1:]
    sizes = np.floor(dec).astype(int)
    deficit = L - int(sizes.sum())
    if deficit < 0 or deficit > T:
        raise ContractError(f"plan rounding out of range (deficit {deficit})")
    if deficit:
        order = np.argsort(-(dec - np.floor(dec)), kind="stable")
        sizes[order[:deficit]] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [perm[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def attention_mask_for(mode: str, L: int) -> np.ndarray:
    """(L, L) attend-mask: offline lets everything see everything; online is
    lower-triangular (query i may read keys j <= i)."""
    if mode not in ATTENTION_MODES:
        raise ConfigError(f"mode must be one of {ATTENTION_MODES}, got {mode!r}")
    if L < 1:
        raise ContractError("attention mask needs L >= 1")
    full = np.ones((L, L), dtype=bool)
    return full if mode == "offline" else np.tril(full)


def _pad_batch(frames: np.ndarray, r: int) -> np.ndarray:
    """Right-pad (B, N, D) to a frame count divisible by r by repeating the
    final frame, mirroring the single-sequence padding policy."""
    n = frames.shape[1]
    pad = (-n) % r
    if pad == 0:
        return frames
    tail = np.repeat(frames[:, -1:], pad, axis=1)
    return np.concatenate([frames, tail], axis=1)


def _encode_means(vaes, frames: np.ndarray, channel_groups) -> dict:
    """Posterior means per unit for (B, N, D) frames -> {unit: (B, L, d)}."""
    out = {}
    with no_grad():
        for name, idx in channel_groups.items():
            out[name] = vaes[name].encode(Tensor(frames[:, :, idx])).mu.data
    return out


def _draw_tokens(z_rows: Tensor, head, sched, rngs, cfg: GenerationConfig):
    """Sample (M, d) tokens for their conditioning rows; the l2 ablation
    treats the head as a plain regressor evaluated at the all-noise step."""
    if cfg.loss == "l2":
        blank = Tensor(np.zeros((z_rows.shape[0], head.cfg.token_dim),
                                dtype=z_rows.data.dtype))
        return head.predict_noise(blank, sched.T_diff, z_rows).data
    return sample_token(z_rows, head, sched, rngs, cfg.num_steps)


def _check_setup(vaes, reactor, heads, channel_groups):
    units = reactor.cfg.units
    for name in units:
        if name not in vaes or name not in heads or name not in channel_groups:
            raise ContractError(f"unit {name!r} missing a vae, head or channel group")
    return units


def _offline_tokens(padded, vaes, reactor, heads, sched, cfg, channel_groups,
                    seeds) -> dict:
    units = reactor.cfg.units
    r = next(iter(vaes.values())).settings.downsample_rate
    n_seq, n_frames = padded.shape[:2]
    L = n_frames // r
    actor = _encode_means(vaes, padded, channel_groups)
    d = reactor.cfg.latent_dim
    tokens = {u: np.zeros((n_seq, L, d), dtype=actor[units[0]].dtype) for u in units}
    masked = np.ones(L, dtype=bool)
    plan = build_unmask_plan(L, cfg.T_iters, stream(cfg.order_seed, "plan"))
    mask_rows = {u: None for u in units}

    with no_grad():
        for batch in plan:
            if batch.size == 0:
                continue
            for u in units:
                mask_rows[u] = np.broadcast_to(masked, (n_seq, L))
            cond = reactor({u: Tensor(actor[u]) for u in units},
                           {u: Tensor(tokens[u]) for u in units},
                           mask=mask_rows)
            for u in units:
                z_rows = Tensor(cond[u].data[:, batch].reshape(-1, cond[u].shape[-1]))
                rngs = [stream(seeds[b], "token", u, int(i))
                        for b in range(n_seq) for i in batch]
                drawn = _draw_tokens(z_rows, heads[u], sched, rngs, cfg)
                tokens[u][:, batch] = drawn.reshape(n_seq, batch.size, d)
            masked[batch] = False
    if masked.any():
        raise ContractError("unmask plan left tokens covered")  # unreachable
    return tokens


def _online_tokens(padded, vaes, reactor, heads, sched, cfg, channel_groups,
                   seeds) -> dict:
    """One token per step, left to right, all inputs sliced to the prefix."""
    units = reactor.cfg.units
    r = next(iter(vaes.values())).settings.downsample_rate
    n_seq, n_frames = padded.shape[:2]
    L = n_frames // r
    d = reactor.cfg.latent_dim
    tokens = None

    with no_grad():
        for i in range(L):
            n = i + 1
            actor = _encode_means(vaes, padded[:, : n * r], channel_groups)
            if tokens is None:
                tokens = {u: np.zeros((n_seq, L, d), dtype=actor[units[0]].dtype)
                          for u in units}
            masked = np.zeros((n_seq, n), dtype=bool)
            masked[:, i] = True
            attn = attention_mask_for("online", n)
            cond = reactor({u: Tensor(actor[u]) for u in units},
                           {u: Tensor(tokens[u][:, :n]) for u in units},
                           mask={u: masked for u in units},
                           attn_masks={"self": attn, "cross": attn, "actor": attn})
            for u in units:
                z_rows = Tensor(cond[u].data[:, i])
                rngs = [stream(seeds[b], "token", u, i) for b in range(n_seq)]
                tokens[u][:, i] = _draw_tokens(z_rows, heads[u], sched, rngs, cfg)
    return tokens


def generate_tokens_batch(frames: np.ndarray, vaes, reactor, heads,
                          cfg: GenerationConfig, channel_groups,
                          seeds) -> dict:
    """Unmasking loop over a stack of same-length actions.

    frames: (B, N, D); seeds: one per sequence (distinct seeds keep noise
    draws independent across the batch). Returns {unit: (B, L, token_dim)}.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ContractError(f"expected (B, N, D) action frames, got {frames.shape}")
    seeds = [int(s) for s in seeds]
    if len(seeds) != frames.shape[0]:
        raise ContractError(f"{frames.shape[0]} sequences but {len(seeds)} seeds")
    units = _check_setup(vaes, reactor, heads, channel_groups)
    r = next(iter(vaes.values())).settings.downsample_rate
    padded = _pad_batch(frames, r)
    head_cfg = heads[units[0]].cfg
    sched = build_cosine_schedule(head_cfg.T_diff, head_cfg.s_offset)
    run = _online_tokens if cfg.mode == "online" else _offline_tokens
    return run(padded, vaes, reactor, heads, sched, cfg, channel_groups, seeds)


def decode_tokens_batch(tokens: dict, vaes, channel_groups, n_frames: int,
                        total_channels: int) -> np.ndarray:
    """Decode per-unit tokens and scatter units back into (B, N, D) frames."""
    covered = np.concatenate([np.asarray(g) for g in channel_groups.values()])
    if len(np.unique(covered)) != total_channels:
        raise ContractError("channel groups must partition the layout")
    n_seq = next(iter(tokens.values())).shape[0]
    frames = None
    with no_grad():
        for name, toks in tokens.items():
            decoded = vaes[name].decode(Tensor(toks)).data
            if frames is None:
                frames = np.empty((n_seq, n_frames, total_channels), dtype=decoded.dtype)
            frames[:, :, np.asarray(channel_groups[name])] = decoded[:, :n_frames]
    return frames


def generate_batch(frames: np.ndarray, vaes, reactor, heads,
                   cfg: GenerationConfig, channel_groups, seeds) -> np.ndarray:
    """(B, N, D) actions -> (B, N, D) reactions."""
    tokens = generate_tokens_batch(frames, vaes, reactor, heads, cfg,
                                   channel_groups, seeds)
    return decode_tokens_batch(tokens, vaes, channel_groups,
                               np.asarray(frames).shape[1],
                               np.asarray(frames).shape[2])


def generate_tokens(action: MotionSequence, vaes, reactor, heads,
                    cfg: GenerationConfig, channel_groups) -> dict:
    """Single-sequence unmasking; returns {unit: (L, token_dim)}."""
    tokens = generate_tokens_batch(action.frames[None], vaes, reactor, heads,
                                   cfg, channel_groups, [cfg.seed])
    return {u: t[0] for u, t in tokens.items()}


def generate(action: MotionSequence, vaes, reactor, heads,
             cfg: GenerationConfig, channel_groups) -> MotionSequence:
    """Full pipeline for one action: encode, unmask, decode, merge units,
    crop any divisibility padding. Deterministic given cfg seeds."""
    out = generate_batch(action.frames[None], vaes, reactor, heads, cfg,
                         channel_groups, [cfg.seed])
    return MotionSequence(out[0], fps=action.fps, layout=action.layout)
