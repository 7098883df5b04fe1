"""From a run configuration to working models.

Assembles the per-unit VAEs, the reaction transformer and the diffusion
heads from one RunConfig, trains stage two on frozen stage-one tokens, and
packs/unpacks the whole stack into checkpoints. Also hosts the
generation-driven evaluation loop, which is the only place that needs
models, data and metrics at the same time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from reactgen.checkpoint import (load_checkpoint, namespace, save_checkpoint,
                                 strip_namespace)
from reactgen.config import RunConfig, config_hash
from reactgen.diffusion import (DiffusionHead, DiffusionSettings,
                                build_cosine_schedule, unit_diffusion_loss,
                                unit_l2_loss)
from reactgen.engine import GenerationConfig, attention_mask_for, generate_batch
from reactgen.errors import CheckpointMismatchError, ContractError
from reactgen.evalsuite import accuracy, ape_ave, diversity, fid, multimodality
from reactgen.motion import MotionLayout, MotionSequence, default_split
from reactgen.reactor import ReactionTransformer, ReactorSettings, sample_mask
from reactgen.rng import stream
from reactgen.tensor import AdamW, Tensor, check_finite_loss, no_grad, warmup_lr
from reactgen.vae import VaeSettings, build_unit_vaes


def unit_groups(cfg: RunConfig, layout: MotionLayout) -> dict:
    if cfg.ablations.unit_division:
        return default_split(layout).channel_groups()
    return {"body": np.arange(layout.channels, dtype=np.intp)}


def vae_settings(cfg: RunConfig) -> VaeSettings:
    return VaeSettings(
        downsample_rate=cfg.vae.downsample_rate,
        latent_dim=cfg.model.latent_dim,
        width=cfg.model.vae_width,
        kl_weight=cfg.vae.kl_weight,
        smoothl1_beta=cfg.vae.smoothl1_beta,
    )


def reactor_settings(cfg: RunConfig, units: tuple) -> ReactorSettings:
    mum = cfg.ablations.mum_mode if len(units) == 2 else "off"
    return ReactorSettings(
        latent_dim=cfg.model.latent_dim,
        d_model=cfg.model.d_model,
        num_heads=cfg.model.num_heads,
        num_blocks=cfg.model.num_blocks,
        ffn_hidden=cfg.model.ffn_hidden,
        max_tokens=cfg.reactor.max_tokens,
        units=units,
        fusion=cfg.ablations.fusion,
        mum_mode=mum,
    )


def diffusion_settings(cfg: RunConfig) -> DiffusionSettings:
    return DiffusionSettings(
        token_dim=cfg.model.latent_dim,
        cond_dim=cfg.model.d_model,
        hidden=cfg.model.diff_hidden,
        num_blocks=cfg.model.diff_blocks,
        T_diff=cfg.diffusion.T_diff,
        s_offset=cfg.diffusion.s,
        num_sample_steps=cfg.diffusion.num_steps,
        include_unmasked=cfg.diffusion.include_unmasked,
    )


def generation_config(cfg: RunConfig, *, seed=None, order_seed=None,
                      mode=None, num_steps=None) -> GenerationConfig:
    return GenerationConfig(
        T_iters=cfg.generation.T_iters,
        mode=mode if mode is not None else cfg.generation.mode,
        num_steps=num_steps if num_steps is not None else cfg.diffusion.num_steps,
        seed=cfg.seeds.generate if seed is None else seed,
        order_seed=cfg.seeds.generate if order_seed is None else order_seed,
        loss=cfg.ablations.loss,
    )


@dataclass
class Pipeline:
    cfg: RunConfig
    layout: MotionLayout
    groups: dict
    vaes: dict
    reactor: ReactionTransformer
    heads: dict

    @property
    def units(self) -> tuple:
        return self.reactor.cfg.units


def build_pipeline(cfg: RunConfig, layout: MotionLayout | None = None) -> Pipeline:
    layout = layout or MotionLayout()
    groups = unit_groups(cfg, layout)
    units = tuple(groups)
    vaes = build_unit_vaes(groups, vae_settings(cfg), cfg.seeds.vae)
    reactor = ReactionTransformer(reactor_settings(cfg, units), cfg.seeds.reactor)
    dset = diffusion_settings(cfg)
    heads = {u: DiffusionHead(dset, stream(cfg.seeds.reactor, "head-init", u))
             for u in units}
    return Pipeline(cfg, layout, groups, vaes, reactor, heads)


# ---------------------------------------------------------------------------
# Stage two: masked token modeling on a frozen stage one.

@dataclass
class EncodedDataset:
    actor: dict     # {unit: (P, L, d)} posterior means
    reaction: dict
    labels: np.ndarray
    tags: list

    @property
    def num_pairs(self) -> int:
        return len(self.labels)

    @property
    def num_tokens(self) -> int:
        return next(iter(self.actor.values())).shape[1]


def encode_dataset(vaes: dict, dataset, groups: dict) -> EncodedDataset:
    """Posterior-mean tokens for every pair's action and reaction. Means, not
    samples: stage two learns from the VAE's best point estimate, and the
    same choice at generation time keeps actor conditioning deterministic."""
    if not dataset:
        raise ContractError("cannot encode an empty dataset")
    actor, reaction = {}, {}
    with no_grad():
        for name, idx in groups.items():
            act = np.stack([p.action.frames[:, idx] for p in dataset])
            rea = np.stack([p.reaction.frames[:, idx] for p in dataset])
            actor[name] = vaes[name].encode(Tensor(act)).mu.data
            reaction[name] = vaes[name].encode(Tensor(rea)).mu.data
    labels = np.array([p.class_label for p in dataset], dtype=np.intp)
    return EncodedDataset(actor, reaction, labels, [p.split_tag for p in dataset])


def train_reactor(pipe: Pipeline, dataset, log_every: int = 50,
                  progress=None, encoded: EncodedDataset | None = None):
    """Fit the transformer and diffusion heads on frozen-VAE tokens.

    One positional mask per sequence, shared by all units — the inference
    plan reveals positions, not unit-position cells, so training matches.
    Returns (history, encoded) so callers can reuse the token cache.
    """
    cfg = pipe.cfg
    stage = cfg.training.reactor
    enc = encoded if encoded is not None else encode_dataset(pipe.vaes, dataset, pipe.groups)
    units = pipe.units
    length = enc.num_tokens
    sched = build_cosine_schedule(cfg.diffusion.T_diff, cfg.diffusion.s)

    attn_masks = None
    if cfg.generation.mode == "online":
        causal = attention_mask_for("online", length)
        attn_masks = {"self": causal, "cross": causal, "actor": causal}

    params = list(pipe.reactor.parameters())
    for head in pipe.heads.values():
        params += head.parameters()
    opt = AdamW(params, lr=0.0, betas=(cfg.training.beta1, cfg.training.beta2),
                weight_decay=cfg.training.weight_decay)

    rs = pipe.reactor.cfg
    batch_rng = stream(cfg.seeds.reactor, "reactor-batches")
    mask_rng = stream(cfg.seeds.reactor, "reactor-masks")
    loss_rng = stream(cfg.seeds.reactor, "reactor-noise")
    n = enc.num_pairs
    b = min(stage.batch_size, n)
    history: list[tuple[int, float]] = []

    for step in range(stage.steps):
        idx = (np.arange(n) if b == n
               else batch_rng.choice(n, size=b, replace=False))
        masks = np.stack([sample_mask(length, mask_rng, rs.mask_ratio_lo,
                                      rs.mask_ratio_hi) for _ in range(b)])
        cond = pipe.reactor(
            {u: Tensor(enc.actor[u][idx]) for u in units},
            {u: Tensor(enc.reaction[u][idx]) for u in units},
            mask={u: masks for u in units},
            attn_masks=attn_masks,
        )
        sel = None if cfg.diffusion.include_unmasked else masks
        loss = None
        for u in units:
            if cfg.ablations.loss == "l2":
                term = unit_l2_loss(enc.reaction[u][idx], cond[u],
                                    pipe.heads[u], sched, sel)
            else:
                term = unit_diffusion_loss(enc.reaction[u][idx], cond[u],
                                           pipe.heads[u], sched, loss_rng, sel)
            loss = term if loss is None else loss + term
        opt.zero_grad()
        loss.backward()
        opt.lr = warmup_lr(step, stage.lr, stage.warmup_steps)
        opt.step()
        value = check_finite_loss(loss.item(), step)
        if step % log_every == 0 or step == stage.steps - 1:
            history.append((step, value))
            if progress is not None:
                progress(step, value)
    return history, enc


# ---------------------------------------------------------------------------
# Checkpoint glue.

def checkpoint_header(cfg: RunConfig, kind: str) -> dict:
    return {
        "version": 1,
        "kind": kind,
        "config_hash": config_hash(cfg),
        "schedule": {"T_diff": cfg.diffusion.T_diff, "s": cfg.diffusion.s},
        "layout": {"num_joints": MotionLayout().num_joints},
    }


def vae_entries(pipe: Pipeline) -> dict:
    out = {}
    for u in pipe.units:
        out.update(namespace(f"vae.{u}", pipe.vaes[u].state()))
    return out


def full_entries(pipe: Pipeline, vae_part: dict | None = None) -> dict:
    """All tensors of the pipeline. A caller holding the stage-one file's
    entries passes them through so the bytes embed unchanged."""
    out = dict(vae_part) if vae_part is not None else vae_entries(pipe)
    out.update(namespace("reactor", pipe.reactor.state()))
    for u in pipe.units:
        out.update(namespace(f"diff.{u}", pipe.heads[u].state()))
    return out


def save_stage_one(path, pipe: Pipeline) -> None:
    save_checkpoint(path, vae_entries(pipe), checkpoint_header(pipe.cfg, "vae"))


def save_stage_two(path, pipe: Pipeline, vae_part: dict | None = None) -> None:
    save_checkpoint(path, full_entries(pipe, vae_part),
                    checkpoint_header(pipe.cfg, "full"))


def _verify_header(header: dict, cfg: RunConfig, path, kinds: tuple) -> None:
    kind = header.get("kind")
    if kind not in kinds:
        raise CheckpointMismatchError(
            f"{path}: checkpoint kind {kind!r}, expected one of {kinds}")
    want = config_hash(cfg)
    got = header.get("config_hash")
    if got != want:
        raise CheckpointMismatchError(
            f"{path}: config hash {str(got)[:12]}... does not match the "
            f"active config {want[:12]}...")
    sched = header.get("schedule", {})
    if (sched.get("T_diff"), sched.get("s")) != (cfg.diffusion.T_diff, cfg.diffusion.s):
        raise CheckpointMismatchError(f"{path}: schedule parameters disagree with config")


def _load_group(entries: dict, prefix: str, module, path) -> None:
    part = strip_namespace(prefix, entries)
    expected = set(module.state())
    if set(part) != expected:
        missing = sorted(expected - set(part))[:4]
        extra = sorted(set(part) - expected)[:4]
        raise CheckpointMismatchError(
            f"{path}: incomplete entries under {prefix}.* "
            f"(missing {missing}, extra {extra})")
    module.load_state(part)


def load_stage_one(path, pipe: Pipeline) -> dict:
    """Load vae.* into the pipeline; returns the raw entries so stage two
    can embed them verbatim."""
    header, entries = load_checkpoint(path)
    _verify_header(header, pipe.cfg, path, ("vae", "full"))
    for u in pipe.units:
        _load_group(entries, f"vae.{u}", pipe.vaes[u], path)
    return {k: v for k, v in entries.items() if k.startswith("vae.")}


def load_stage_two(path, pipe: Pipeline) -> None:
    header, entries = load_checkpoint(path)
    _verify_header(header, pipe.cfg, path, ("full",))
    expected = set(full_entries(pipe))
    if set(entries) != expected:
        raise CheckpointMismatchError(
            f"{path}: entry names do not cover the full pipeline")
    for u in pipe.units:
        _load_group(entries, f"vae.{u}", pipe.vaes[u], path)
        _load_group(entries, f"diff.{u}", pipe.heads[u], path)
    _load_group(entries, "reactor", pipe.reactor, path)


# ---------------------------------------------------------------------------
# Loss-curve records: plain "step value" rows for external plotting.

def write_curve(path, history) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# step loss\n")
        for step, value in history:
            fh.write(f"{step} {value:.10g}\n")


def read_curve(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            step, value = line.split()
            out.append((int(step), float(value)))
    return out


# ---------------------------------------------------------------------------
# Generation-driven evaluation.

def _pool_for(dataset, split: str):
    pool = [p for p in dataset if p.split_tag == split]
    if not pool:
        raise ContractError(f"dataset has no {split!r} pairs to condition on")
    return pool


def make_rep_fn(pipe: Pipeline, extractor, dataset, split: str,
                samples: int = 100, S: int = 32, mode: str | None = None,
                num_steps: int | None = None):
    """Build the per-repetition callable for the protocol runner.

    Each repetition draws `samples` conditioning actions from the given
    split (with replacement), generates reactions in one batch, and computes
    every metric against that split's real reactions. Multimodality
    generates S pairs per condition on top of that.
    """
    pool = _pool_for(dataset, split)
    real = np.stack([p.reaction.frames for p in pool])
    real_feats = extractor.featurize(real)
    labels_pool = np.array([p.class_label for p in pool], dtype=np.intp)
    classes = np.unique(labels_pool)
    by_class = {int(c): np.flatnonzero(labels_pool == c) for c in classes}
    base = generation_config(pipe.cfg, mode=mode, num_steps=num_steps)
    fps = pool[0].action.fps
    layout = pool[0].action.layout

    def rep(rep_index: int, rep_seed: int) -> dict:
        r = stream(rep_seed, "eval-rep")
        pick = r.integers(0, len(pool), size=samples)
        actions = np.stack([pool[i].action.frames for i in pick])
        labels = labels_pool[pick]
        cfg_rep = replace(base, order_seed=int(r.integers(2**63)))
        seeds = [int(s) for s in r.integers(2**63, size=samples)]
        gen = generate_batch(actions, pipe.vaes, pipe.reactor, pipe.heads,
                             cfg_rep, pipe.groups, seeds)
        feats = extractor.featurize(gen)

        values = {
            "fid": fid(feats, real_feats),
            "acc": accuracy(gen, labels, extractor),
            "diversity": diversity(feats, S, r),
        }

        # S pairs per condition, generated in one extra batch.
        group_sizes = {int(c): 2 * S for c in classes}
        idx_m = np.concatenate([
            r.choice(by_class[c], size=group_sizes[c], replace=True)
            for c in sorted(group_sizes)
        ])
        actions_m = np.stack([pool[i].action.frames for i in idx_m])
        seeds_m = [int(s) for s in r.integers(2**63, size=len(idx_m))]
        gen_m = generate_batch(actions_m, pipe.vaes, pipe.reactor, pipe.heads,
                               replace(cfg_rep, order_seed=int(r.integers(2**63))),
                               pipe.groups, seeds_m)
        feats_m = extractor.featurize(gen_m)
        grouped, lo = {}, 0
        for c in sorted(group_sizes):
            grouped[c] = feats_m[lo:lo + group_sizes[c]]
            lo += group_sizes[c]
        values["multimodality"] = multimodality(grouped, S, r)

        ape_parts, ave_parts = [], []
        for row, i in enumerate(pick):
            a, v = ape_ave(MotionSequence(gen[row], fps=fps, layout=layout),
                           pool[i].reaction)
            ape_parts.append(a)
            ave_parts.append(v)
        for key in ("hands", "root"):
            values[f"ape_{key}"] = float(np.mean([a[key] for a in ape_parts]))
            values[f"ave_{key}"] = float(np.mean([v[key] for v in ave_parts]))
        values["ape"] = (values["ape_hands"] + values["ape_root"]) / 2.0
        values["ave"] = (values["ave_hands"] + values["ave_root"]) / 2.0
        return values

    return rep
