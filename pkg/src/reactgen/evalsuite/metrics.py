"""Distribution and coordinate metrics over classifier features.

FID compares Gaussian fits of two feature clouds. The matrix square root is
taken through a symmetric eigendecomposition of S_a^(1/2) S_b S_a^(1/2),
which is similar to S_a S_b but Hermitian, so eigh applies and tiny negative
eigenvalues from roundoff can simply be clipped. Both covariances get a
1e-6 ridge: at desk-scale sample counts they are otherwise frequently
singular.

The coordinate metrics place every joint on its own unit-length bone
attached directly to the root — a star skeleton. That discards the real
kinematic tree, but it is a fixed, documented map from rotation channels to
positions, which is all a relative comparison needs: identical sequences
still score zero and rigid offsets still show up in every joint.
"""

from __future__ import annotations

import numpy as np

from reactgen.errors import ConfigError, ContractError, TrainingError
from reactgen.motion.layout import (GLOBAL_ORIENT_CHANNELS, NUM_BODY_JOINTS,
                                    NUM_FACE_JOINTS, ROT_CHANNELS,
                                    MotionSequence)

COV_RIDGE = 1e-6


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"feature sets must be (n, f)/(m, f); got {a.shape}, {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractError("need at least two samples per side for a covariance")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    f = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(f, f) + COV_RIDGE * np.eye(f)
    cov_b = np.cov(b, rowvar=False).reshape(f, f) + COV_RIDGE * np.eye(f)

    w, v = np.linalg.eigh(cov_a)
    root_a = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    inner = root_a @ cov_b @ root_a
    w_inner = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(w_inner, 0.0, None)).sum()

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    if not np.isfinite(value):
        raise TrainingError(f"fid produced a non-finite value ({value})")
    return value


def accuracy(motions: np.ndarray, labels: np.ndarray, extractor) -> float:
    """Fraction of motions the extractor assigns to their conditioning class."""
    labels = np.asarray(labels)
    predicted = extractor.classify(motions)
    if predicted.shape != labels.shape:
        raise ContractError(f"got {len(predicted)} motions for {len(labels)} labels")
    return float((predicted == labels).mean())


def diversity(feats: np.ndarray, S: int, rng: np.random.Generator) -> float:
    """Mean feature distance over S disjoint random pairs."""
    feats = np.asarray(feats)
    if S < 1:
        raise ContractError("S must be >= 1")
    if feats.ndim != 2 or feats.shape[0] < 2 * S:
        raise ContractError(
            f"diversity needs at least {2 * S} samples, got {feats.shape}")
    idx = rng.choice(feats.shape[0], size=2 * S, replace=False)
    gap = feats[idx[:S]] - feats[idx[S:]]
    return float(np.linalg.norm(gap, axis=1).mean())


def multimodality(feats_by_condition: dict, S: int, rng: np.random.Generator) -> float:
    """diversity() applied within each condition group, averaged over groups."""
    if not feats_by_condition:
        raise ContractError("multimodality needs at least one condition group")
    per_group = []
    for label in sorted(feats_by_condition):
        group = np.asarray(feats_by_condition[label])
        if group.shape[0] < 2 * S:
            raise ContractError(
                f"condition {label} has {group.shape[0]} samples, needs {2 * S}")
        per_group.append(diversity(group, S, rng))
    return float(np.mean(per_group))


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """(..., 6) continuous rotation representation -> (..., 3, 3) via
    Gram–Schmidt on the two embedded column vectors."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ContractError(f"rotation channels must come in sixes, got {r6.shape}")
    a1, a2 = r6[..., :3], r6[..., 3:]
    b1 = a1 / np.maximum(np.linalg.norm(a1, axis=-1, keepdims=True), 1e-8)
    a2p = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    b2 = a2p / np.maximum(np.linalg.norm(a2p, axis=-1, keepdims=True), 1e-8)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def star_positions(seq: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """Joint world positions under the star skeleton.

    Joint j sits at root + R_glob @ R_j @ u with u the unit z axis, so its
    position reflects the joint's own rotation, the global orientation and
    the root translation. Returns (positions (N, K, 3), root (N, 3))."""
    frames = seq.frames
    n = frames.shape[0]
    k = seq.layout.num_joints
    rot = rot6d_to_matrix(frames[:, : ROT_CHANNELS * k].reshape(n, k, 6))
    base = ROT_CHANNELS * k
    glob = rot6d_to_matrix(frames[:, base : base + GLOBAL_ORIENT_CHANNELS])
    root = frames[:, base + GLOBAL_ORIENT_CHANNELS :].astype(np.float64)
    bone = rot[..., :, 2]                     # R_j @ [0,0,1]
    world = np.einsum("nab,nkb->nka", glob, bone)
    return world + root[:, None, :], root


def ape_ave(generated: MotionSequence,
            reference: MotionSequence) -> tuple[dict, dict]:
    """Position and variance error in star-skeleton coordinate space,
    reported for the hands joints and the root: ({'hands', 'root'} APE,
    {'hands', 'root'} AVE). APE averages per-frame L2 error; AVE compares
    each sequence's temporal variance profile."""
    if generated.frames.shape != reference.frames.shape:
        raise ContractError(
            f"sequences disagree: {generated.frames.shape} vs {reference.frames.shape}")
    if generated.layout != reference.layout:
        raise ContractError("sequences use different layouts")
    if generated.layout.num_joints <= NUM_BODY_JOINTS + NUM_FACE_JOINTS:
        raise ConfigError("layout has no hand joints to report on")

    pos_g, root_g = star_positions(generated)
    pos_r, root_r = star_positions(reference)
    first_finger = NUM_BODY_JOINTS + NUM_FACE_JOINTS
    hands_g, hands_r = pos_g[:, first_finger:], pos_r[:, first_finger:]

    ape = {
        "hands": float(np.linalg.norm(hands_g - hands_r, axis=-1).mean()),
        "root": float(np.linalg.norm(root_g - root_r, axis=-1).mean()),
    }
    var_g, var_r = hands_g.var(axis=0), hands_r.var(axis=0)
    ave = {
        "hands": float(np.linalg.norm(var_g - var_r, axis=-1).mean()),
        "root": float(np.linalg.norm(root_g.var(axis=0) - root_r.var(axis=0))),
    }
    return ape, ave
