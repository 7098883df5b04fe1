"""Finite-difference case registry.

Every differentiable op and every composite block gets one named case
returning grad_check's worst relative error. The unit tests parametrize
over these; the acceptance gate runs the same lists with a stopwatch.

Cases keep kinked functions (relu, abs, clip, smooth-L1, where) away from
their kinks — central differences straddling a kink measure the wrong
thing, not a gradient bug.
"""

from __future__ import annotations

import numpy as np

from reactgen.diffusion import (DiffusionHead, DiffusionSettings,
                                build_cosine_schedule, perturb,
                                unit_diffusion_loss, unit_l2_loss)
from reactgen.reactor import AcfBlock, MutualModulation, ReactorSettings
from reactgen.rng import stream
from reactgen.tensor import (Tensor, clip, concat, conv1d, gelu, grad_check,
                             layer_norm, matmul, pad_last, relu, repeat_last,
                             silu, smooth_l1, softmax_rows, take, using_dtype,
                             where)
from reactgen.vae import CausalConv, ResBlock, UnitVae, VaeSettings


def _rng(tag):
    return stream(20240817, "gradcases", tag)


def _t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _t_pos(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)


def _t_off_kink(rng, *shape, margin=0.3):
    """Values with |x| >= margin, both signs."""
    mag = rng.uniform(margin, 1.5, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


def _weighted(rng, out_shape):
    """A fixed projection to a scalar so the check sees non-uniform
    upstream gradients."""
    w = Tensor(rng.normal(size=out_shape))

    def reduce(t):
        return (t * w).sum()

    return reduce


# ---------------------------------------------------------------------------
# Primitive ops. Each entry: (name, zero-arg callable -> worst rel error).

def _case_add():
    r = _rng("add")
    a, b = _t(r, 3, 4), _t(r, 4)  # broadcast on purpose
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a + b), [a, b])


def _case_sub():
    r = _rng("sub")
    a, b = _t(r, 2, 3, 4), _t(r, 3, 1)
    red = _weighted(r, (2, 3, 4))
    return grad_check(lambda: red(a - b), [a, b])


def _case_mul():
    r = _rng("mul")
    a, b = _t(r, 3, 4), _t(r, 3, 1)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a * b), [a, b])


def _case_div():
    r = _rng("div")
    a, b = _t(r, 3, 4), _t_pos(r, 1, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a / b), [a, b])


def _case_scalar_mix():
    r = _rng("scalar")
    a = _t(r, 3, 3)
    red = _weighted(r, (3, 3))
    return grad_check(lambda: red(2.5 * a + 1.0 - a / 4.0), [a])


def _case_neg():
    r = _rng("neg")
    a = _t(r, 5)
    red = _weighted(r, (5,))
    return grad_check(lambda: red(-a), [a])


def _case_power_int():
    r = _rng("pow-int")
    a = _t(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a ** 3), [a])


def _case_power_frac():
    r = _rng("pow-frac")
    a = _t_pos(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a ** 1.5), [a])


def _case_exp():
    r = _rng("exp")
    a = _t(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a.exp()), [a])


def _case_log():
    r = _rng("log")
    a = _t_pos(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a.log()), [a])


def _case_sqrt():
    r = _rng("sqrt")
    a = _t_pos(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a.sqrt()), [a])


def _case_abs():
    r = _rng("abs")
    a = _t_off_kink(r, 3, 4)
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(a.abs()), [a])


def _case_clip():
    r = _rng("clip")
    a = _t(r, 4, 4)  # N(0,1): staying ~0.3 away from +-2 bounds
    red = _weighted(r, (4, 4))
    return grad_check(lambda: red(clip(a, -2.0, 2.0) * clip(a, -0.0001, 10.0)), [a])


def _case_where():
    r = _rng("where")
    a, b = _t_off_kink(r, 3, 4), _t(r, 3, 4)
    cond = np.asarray(a.data) > 0  # fixed condition, off the kink
    red = _weighted(r, (3, 4))
    return grad_check(lambda: red(where(cond, a * 2.0, b)), [a, b])


def _case_sum():
    r = _rng("sum")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (2, 4))
    return grad_check(lambda: red(a.sum(axis=1)) + a.sum(), [a])


def _case_mean():
    r = _rng("mean")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (2, 1, 4))
    return grad_check(lambda: red(a.mean(axis=1, keepdims=True)) + a.mean(), [a])


def _case_reshape():
    r = _rng("reshape")
    a = _t(r, 3, 4)
    red = _weighted(r, (2, 6))
    return grad_check(lambda: red(a.reshape(2, 6)), [a])


def _case_transpose():
    r = _rng("transpose")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (4, 2, 3))
    return grad_check(lambda: red(a.transpose(2, 0, 1)), [a])


def _case_swapaxes():
    r = _rng("swapaxes")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (2, 4, 3))
    return grad_check(lambda: red(a.swapaxes(1, 2)), [a])


def _case_getitem():
    r = _rng("getitem")
    a = _t(r, 4, 6)
    red = _weighted(r, (2, 3))
    return grad_check(lambda: red(a[1:3, ::2]) + a[0, 0] + a[..., -1].sum(), [a])


def _case_take():
    r = _rng("take")
    a = _t(r, 4, 5)
    rows = np.arange(4)
    cols = np.array([1, 3, 0, 4])
    return grad_check(lambda: take(a, (rows, cols)).sum() + take(a, np.array([2, 2])).sum(), [a])


def _case_concat():
    r = _rng("concat")
    a, b = _t(r, 2, 3), _t(r, 2, 2)
    red = _weighted(r, (2, 5))
    return grad_check(lambda: red(concat([a, b], axis=-1)), [a, b])


def _case_pad_last():
    r = _rng("pad")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (2, 3, 7))
    return grad_check(lambda: red(pad_last(a, 1, 2)), [a])


def _case_repeat_last():
    r = _rng("repeat")
    a = _t(r, 2, 3, 4)
    red = _weighted(r, (2, 3, 8))
    return grad_check(lambda: red(repeat_last(a, 2)), [a])


def _case_matmul_2d():
    r = _rng("matmul2")
    a, b = _t(r, 3, 4), _t(r, 4, 5)
    red = _weighted(r, (3, 5))
    return grad_check(lambda: red(matmul(a, b)), [a, b])


def _case_matmul_batched():
    r = _rng("matmul4")
    a, b = _t(r, 2, 2, 3, 4), _t(r, 2, 2, 4, 3)
    red = _weighted(r, (2, 2, 3, 3))
    return grad_check(lambda: red(matmul(a, b)), [a, b])


def _case_softmax():
    r = _rng("softmax")
    a = _t(r, 2, 3, 5)
    red = _weighted(r, (2, 3, 5))
    return grad_check(lambda: red(softmax_rows(a)), [a])


def _case_layer_norm():
    r = _rng("ln")
    a, g, b = _t(r, 2, 3, 6), _t(r, 6), _t(r, 6)
    red = _weighted(r, (2, 3, 6))
    return grad_check(lambda: red(layer_norm(a, g, b)), [a, g, b])


def _case_conv1d():
    r = _rng("conv")
    x = _t(r, 2, 3, 10)
    k = _t(r, 4, 3, 3)
    bias = _t(r, 4)
    red = _weighted(r, (2, 4, 6))
    return grad_check(lambda: red(conv1d(x, k, bias, stride=2, padding=2)), [x, k, bias])


def _case_conv1d_unbatched():
    r = _rng("conv1")
    x = _t(r, 3, 8)
    k = _t(r, 2, 3, 5)
    red = _weighted(r, (2, 8))
    return grad_check(lambda: red(conv1d(x, k, padding=2)), [x, k])


def _case_relu():
    r = _rng("relu")
    a = _t_off_kink(r, 3, 5)
    red = _weighted(r, (3, 5))
    return grad_check(lambda: red(relu(a)), [a])


def _case_silu():
    r = _rng("silu")
    a = _t(r, 3, 5)
    red = _weighted(r, (3, 5))
    return grad_check(lambda: red(silu(a)), [a])


def _case_gelu():
    r = _rng("gelu")
    a = _t(r, 3, 5)
    red = _weighted(r, (3, 5))
    return grad_check(lambda: red(gelu(a)), [a])


def _case_smooth_l1():
    r = _rng("sl1")
    pred = _t(r, 4, 3)
    # Half the residuals deep in the quadratic branch, half in the linear
    # branch, all >= 0.3 away from the |d| = beta seam.
    off = np.where(r.random((4, 3)) < 0.5, 0.4, 2.2)
    target = Tensor(pred.data + off * np.where(r.random((4, 3)) < 0.5, -1, 1))
    return grad_check(lambda: smooth_l1(pred, target, beta=1.0).mean(), [pred])


OP_CASES = [
    ("add-broadcast", _case_add),
    ("sub-broadcast", _case_sub),
    ("mul-broadcast", _case_mul),
    ("div-broadcast", _case_div),
    ("scalar-arithmetic", _case_scalar_mix),
    ("neg", _case_neg),
    ("power-cubic", _case_power_int),
    ("power-fractional", _case_power_frac),
    ("exp", _case_exp),
    ("log", _case_log),
    ("sqrt", _case_sqrt),
    ("abs", _case_abs),
    ("clip", _case_clip),
    ("where", _case_where),
    ("sum", _case_sum),
    ("mean", _case_mean),
    ("reshape", _case_reshape),
    ("transpose", _case_transpose),
    ("swapaxes", _case_swapaxes),
    ("getitem", _case_getitem),
    ("take", _case_take),
    ("concat", _case_concat),
    ("pad-last", _case_pad_last),
    ("repeat-last", _case_repeat_last),
    ("matmul-2d", _case_matmul_2d),
    ("matmul-batched", _case_matmul_batched),
    ("softmax-rows", _case_softmax),
    ("layer-norm", _case_layer_norm),
    ("conv1d-strided", _case_conv1d),
    ("conv1d-unbatched", _case_conv1d_unbatched),
    ("relu", _case_relu),
    ("silu", _case_silu),
    ("gelu", _case_gelu),
    ("smooth-l1", _case_smooth_l1),
]


# ---------------------------------------------------------------------------
# Composite blocks. Probe the block inputs plus every parameter (the tiny
# shapes keep full probing cheap); gradients w.r.t. the inputs traverse the
# entire graph, so the whole backward chain is exercised either way.

_TINY_REACTOR = ReactorSettings(latent_dim=6, d_model=8, num_heads=2,
                                num_blocks=1, ffn_hidden=12, max_tokens=8)


def _case_acf_block():
    r = _rng("acf")
    with using_dtype("f64"):
        block = AcfBlock(_TINY_REACTOR, r)
        x, y = _t(r, 1, 4, 8), _t(r, 1, 4, 8)
        causal = np.tril(np.ones((4, 4), dtype=bool))
        masks = {"self": causal, "cross": causal, "actor": causal}
        rx, ry = _weighted(r, (1, 4, 8)), _weighted(r, (1, 4, 8))

        def fn():
            ox, oy = block(x, y, masks)
            return rx(ox) + ry(oy)

        return grad_check(fn, [x, y] + block.parameters())


def _case_acf_block_concat_fusion():
    r = _rng("acf-concat")
    cfg = ReactorSettings(latent_dim=6, d_model=8, num_heads=2, num_blocks=1,
                          ffn_hidden=12, max_tokens=8, fusion="concat")
    with using_dtype("f64"):
        block = AcfBlock(cfg, r)
        x, y = _t(r, 1, 3, 8), _t(r, 1, 3, 8)
        rx = _weighted(r, (1, 3, 8))

        def fn():
            ox, _ = block(x, y, {})
            return rx(ox)

        return grad_check(fn, [x, y] + block.parameters())


def _case_mutual_modulation():
    r = _rng("mum")
    with using_dtype("f64"):
        mum = MutualModulation(8, "both", r)
        # The affine projections start at zero by design; probe a generic
        # point instead of the degenerate origin.
        for p in mum.parameters():
            p.data = r.normal(0.0, 0.1, p.data.shape)
        xb, xh = _t(r, 1, 3, 8), _t(r, 1, 3, 8)
        rb, rh = _weighted(r, (1, 3, 8)), _weighted(r, (1, 3, 8))

        def fn():
            ob, oh = mum(xb, xh)
            return rb(ob) + rh(oh)

        return grad_check(fn, [xb, xh] + mum.parameters())


def _case_diffusion_mlp():
    r = _rng("diff-mlp")
    cfg = DiffusionSettings(token_dim=5, cond_dim=6, hidden=7, num_blocks=2,
                            T_diff=50, num_sample_steps=10)
    with using_dtype("f64"):
        head = DiffusionHead(cfg, r)
        x_t, z = _t(r, 4, 5), _t(r, 4, 6)
        t = np.array([3, 17, 50, 1])
        red = _weighted(r, (4, 5))
        return grad_check(lambda: red(head.predict_noise(x_t, t, z)),
                          [x_t, z] + head.parameters())


def _case_diffusion_loss():
    r = _rng("diff-loss")
    cfg = DiffusionSettings(token_dim=4, cond_dim=5, hidden=6, num_blocks=1,
                            T_diff=40, num_sample_steps=10)
    sched = build_cosine_schedule(cfg.T_diff, cfg.s_offset)
    with using_dtype("f64"):
        head = DiffusionHead(cfg, r)
        x0 = r.normal(size=(2, 3, 4))
        z = _t(r, 2, 3, 5)
        mask = np.array([[True, False, True], [False, True, True]])
        draws = r.integers(0, 2**32)

        def fn():
            return unit_diffusion_loss(x0, z, head, sched,
                                       stream(int(draws), "loss"), mask)

        return grad_check(fn, [z] + head.parameters())


def _case_l2_loss():
    r = _rng("l2-loss")
    cfg = DiffusionSettings(token_dim=4, cond_dim=5, hidden=6, num_blocks=1,
                            T_diff=40, num_sample_steps=10)
    sched = build_cosine_schedule(cfg.T_diff, cfg.s_offset)
    with using_dtype("f64"):
        head = DiffusionHead(cfg, r)
        x0 = r.normal(size=(2, 3, 4))
        z = _t(r, 2, 3, 5)
        return grad_check(lambda: unit_l2_loss(x0, z, head, sched),
                          [z] + head.parameters())


def _case_perturb():
    r = _rng("perturb")
    sched = build_cosine_schedule(30)
    x0, eps = _t(r, 4, 3), _t(r, 4, 3)
    t = np.array([1, 10, 20, 30])
    red = _weighted(r, (4, 3))
    return grad_check(lambda: red(perturb(x0, t, eps, sched)), [x0, eps])


def _case_causal_conv():
    r = _rng("cconv")
    with using_dtype("f64"):
        conv = CausalConv(3, 4, kernel=3, stride=2, rng=r)
        x = _t(r, 1, 3, 8)
        out_len = conv(Tensor(np.zeros((1, 3, 8)))).shape[-1]
        red = _weighted(r, (1, 4, out_len))
        return grad_check(lambda: red(conv(x)), [x] + conv.parameters())


def _case_vae_resblock():
    r = _rng("resblock")
    with using_dtype("f64"):
        block = ResBlock(4, r)
        # The closing conv is zero-initialized; perturb it off the origin.
        for p in block.parameters():
            if not p.data.any():
                p.data = r.normal(0.0, 0.1, p.data.shape)
        x = _t(r, 1, 4, 6)
        red = _weighted(r, (1, 4, 6))
        return grad_check(lambda: red(block(x)), [x] + block.parameters())


def _case_vae_roundtrip():
    """Full encode -> posterior mean -> decode -> smooth-L1, probing the
    input and a parameter from every stage of the network."""
    r = _rng("vae-full")
    settings = VaeSettings(latent_dim=3, width=6, downsample_rate=2)
    with using_dtype("f64"):
        vae = UnitVae(4, settings, r)
        for p in vae.parameters():
            if not p.data.any():
                p.data = r.normal(0.0, 0.05, p.data.shape)
        x = _t(r, 1, 4, 4)  # (B, N, C) frames
        target = Tensor(x.data.copy())  # fixed: not re-read during probing

        def fn():
            dist = vae.encode(x)
            recon = vae.decode(dist.mu)
            return smooth_l1(recon, target).mean() + dist.log_var.mean() * 0.01

        named = dict(vae.named_parameters())
        picks = [named[k] for k in sorted(named)[::4]]
        return grad_check(fn, [x] + picks)


COMPOSITE_CASES = [
    ("acf-block", _case_acf_block),
    ("acf-block-concat-fusion", _case_acf_block_concat_fusion),
    ("mutual-modulation", _case_mutual_modulation),
    ("diffusion-mlp", _case_diffusion_mlp),
    ("diffusion-loss", _case_diffusion_loss),
    ("l2-regression-loss", _case_l2_loss),
    ("forward-noising", _case_perturb),
    ("causal-conv", _case_causal_conv),
    ("vae-residual-block", _case_vae_resblock),
    ("vae-roundtrip", _case_vae_roundtrip),
]
