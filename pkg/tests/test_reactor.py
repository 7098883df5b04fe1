"""Reaction transformer wiring: mask embedding substitution, causal
attention, cross-unit modulation directions, and input contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reactgen.errors import ConfigError, ContractError
from reactgen.reactor import (MultiHeadAttention, ReactionTransformer,
                              ReactorSettings, sample_mask)
from reactgen.rng import stream
from reactgen.tensor import Tensor, no_grad

CFG = ReactorSettings(latent_dim=6, d_model=16, num_heads=2, num_blocks=2,
                      ffn_hidden=32, max_tokens=12)


def _tokens(rng, b=2, l=5, d=6):
    return {"body": rng.normal(size=(b, l, d)).astype(np.float32),
            "hands": rng.normal(size=(b, l, d)).astype(np.float32)}


def _model(cfg=CFG, seed=51):
    return ReactionTransformer(cfg, seed)


def _run(model, actor, reactor, mask=None, attn=None):
    with no_grad():
        out = model(actor, reactor, mask, attn)
    return {k: v.data for k, v in out.items()}


def test_output_shapes_and_units():
    r = stream(52, "shapes")
    model = _model()
    out = _run(model, _tokens(r), _tokens(r))
    assert set(out) == {"body", "hands"}
    for v in out.values():
        assert v.shape == (2, 5, 16)


def test_masked_positions_ignore_token_content():
    """A masked slot is replaced by the learned embedding, so whatever sat
    there cannot influence any output."""
    r = stream(53, "mask")
    model = _model()
    actor, reactor = _tokens(r), _tokens(r)
    mask = {u: np.zeros((2, 5), dtype=bool) for u in reactor}
    mask["body"][:, 2] = True
    out1 = _run(model, actor, reactor, mask)
    reactor2 = {u: t.copy() for u, t in reactor.items()}
    reactor2["body"][:, 2] = 99.0
    out2 = _run(model, actor, reactor2, mask)
    for u in out1:
        np.testing.assert_array_equal(out1[u], out2[u])


def test_unmasked_positions_do_matter():
    r = stream(54, "unmask")
    model = _model()
    actor, reactor = _tokens(r), _tokens(r)
    out1 = _run(model, actor, reactor)
    reactor2 = {u: t.copy() for u, t in reactor.items()}
    reactor2["body"][:, 2] += 1.0
    out2 = _run(model, actor, reactor2)
    assert np.abs(out1["body"] - out2["body"]).max() > 1e-6


def test_causal_attention_blocks_future():
    """With causal masks on all three attention paths, outputs at position i
    are identical whether or not tokens after i change."""
    r = stream(55, "causal")
    model = _model()
    l = 5
    causal = np.tril(np.ones((l, l), dtype=bool))
    attn = {"self": causal, "cross": causal, "actor": causal}
    actor, reactor = _tokens(r), _tokens(r)
    out1 = _run(model, actor, reactor, None, attn)

    actor2 = {u: t.copy() for u, t in actor.items()}
    reactor2 = {u: t.copy() for u, t in reactor.items()}
    for u in actor2:
        actor2[u][:, 3:] = r.normal(size=(2, 2, 6))
        reactor2[u][:, 3:] = r.normal(size=(2, 2, 6))
    out2 = _run(model, actor2, reactor2, None, attn)
    for u in out1:
        np.testing.assert_array_equal(out1[u][:, :3], out2[u][:, :3])
        assert np.abs(out1[u][:, 3:] - out2[u][:, 3:]).max() > 1e-6


def test_full_attention_leaks_future():
    r = stream(56, "bidi")
    model = _model()
    actor, reactor = _tokens(r), _tokens(r)
    out1 = _run(model, actor, reactor)
    actor2 = {u: t.copy() for u, t in actor.items()}
    actor2["body"][:, 4] += 2.0
    out2 = _run(model, actor2, reactor)
    assert np.abs(out1["body"][:, 0] - out2["body"][:, 0]).max() > 1e-7


# ---------------------------------------------------------------------------
# Cross-unit modulation directions.

def _mum_sensitivity(mode):
    cfg = ReactorSettings(latent_dim=6, d_model=16, num_heads=2, num_blocks=1,
                          ffn_hidden=32, max_tokens=12, mum_mode=mode)
    model = _model(cfg, seed=57)
    # zero-init modulation projections block cross-unit flow at init;
    # randomize them so the sensitivity probe sees a generic operating point
    for name, p in model.named_parameters():
        if "mum" in name and not p.data.any():
            p.data = stream(58, name).normal(0.0, 0.2, p.data.shape).astype(p.data.dtype)
    r = stream(59, mode)
    actor, reactor = _tokens(r), _tokens(r)
    base = _run(model, actor, reactor)
    reactor2 = {u: t.copy() for u, t in reactor.items()}
    reactor2["hands"] += 1.0
    moved = _run(model, actor, reactor2)
    return {u: float(np.abs(base[u] - moved[u]).max()) for u in base}


def test_mum_off_isolates_units():
    sens = _mum_sensitivity("off")
    assert sens["hands"] > 1e-6      # its own tokens changed
    assert sens["body"] == 0.0       # no path from hands to body


def test_mum_b2h_is_one_way():
    sens = _mum_sensitivity("b2h")
    assert sens["body"] == 0.0       # body->hands only


def test_mum_h2b_and_both_feed_body():
    assert _mum_sensitivity("h2b")["body"] > 1e-6
    assert _mum_sensitivity("both")["body"] > 1e-6


def test_single_unit_model_runs():
    cfg = ReactorSettings(latent_dim=6, d_model=16, num_heads=2, num_blocks=1,
                          units=("body",), mum_mode="off", max_tokens=12)
    model = _model(cfg, seed=60)
    r = stream(61, "single")
    toks = {"body": r.normal(size=(1, 4, 6)).astype(np.float32)}
    out = _run(model, toks, toks)
    assert out["body"].shape == (1, 4, 16)


def test_concat_fusion_variant_runs():
    cfg = ReactorSettings(latent_dim=6, d_model=16, num_heads=2, num_blocks=1,
                          ffn_hidden=32, max_tokens=12, fusion="concat")
    model = _model(cfg, seed=62)
    r = stream(63, "concat")
    out = _run(model, _tokens(r), _tokens(r))
    assert out["body"].shape == (2, 5, 16)


# ---------------------------------------------------------------------------
# Contracts.

def test_settings_validation():
    with pytest.raises(ConfigError):
        ReactorSettings(d_model=10, num_heads=4)
    with pytest.raises(ConfigError):
        ReactorSettings(fusion="bilinear")
    with pytest.raises(ConfigError):
        ReactorSettings(mum_mode="h2h")
    with pytest.raises(ConfigError):
        ReactorSettings(units=("body", "body"))
    with pytest.raises(ConfigError):
        ReactorSettings(mask_ratio_lo=0.8, mask_ratio_hi=0.5)


def test_token_contract_errors():
    r = stream(64, "contract")
    model = _model()
    good = _tokens(r)
    with pytest.raises(ContractError, match="missing"):
        model({"body": good["body"]}, good)
    bad_width = {u: t[..., :4] for u, t in good.items()}
    with pytest.raises(ContractError, match="must be"):
        model(bad_width, good)
    too_long = {u: np.zeros((1, 13, 6), dtype=np.float32) for u in good}
    with pytest.raises(ContractError, match="max_tokens"):
        model(too_long, too_long)
    ragged = dict(good, hands=good["hands"][:, :4])
    with pytest.raises(ContractError, match="disagree"):
        model(ragged, good)


def test_attention_rows_with_no_keys_output_zero():
    r = stream(65, "nokey")
    attn = MultiHeadAttention(8, 2, r)
    x = Tensor(r.normal(size=(1, 3, 8)).astype(np.float32))
    mask = np.array([[True, False, False],
                     [True, True, False],
                     [False, False, False]])  # last row reads nothing
    with no_grad():
        out = attn(x, x, mask).data
    bias = attn.o.bias.data  # output projection bias still applies
    np.testing.assert_allclose(out[0, 2], bias, atol=1e-7)


def test_determinism_by_seed():
    a = _model(seed=66)
    b = _model(seed=66)
    c = _model(seed=67)
    pa, pb = dict(a.named_parameters()), dict(b.named_parameters())
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    pc = dict(c.named_parameters())
    assert any(not np.array_equal(pa[k].data, pc[k].data) for k in pa)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10**6))
def test_sample_mask_counts(length, seed):
    r = stream(seed, "mask-prop")
    mask = sample_mask(length, r, 0.7, 1.0)
    assert mask.shape == (length,)
    k = int(mask.sum())
    assert int(np.rint(0.7 * length)) <= k <= length
    full = sample_mask(length, stream(seed, "full"), 1.0, 1.0)
    assert full.all()
