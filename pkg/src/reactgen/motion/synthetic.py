"""Procedural action-reaction dataset.

Actor motion for class c is a two-harmonic sum of sinusoids whose per-channel
frequencies and amplitudes are fixed by the class; the phase is random per
pair. The reaction follows the action with a fixed lag through a dataset-wide
diagonal affine map, shifted by a class-dependent channel offset, with
optional Gaussian noise; frames before the lag hold a rest pose. Classes are
therefore separable both by spectral signature and by offset, and the
reaction at frame i depends on action frames <= i only.
"""

from __future__ import annotations

import numpy as np

from reactgen.errors import ConfigError
from reactgen.motion.layout import InteractionPair, MotionLayout, MotionSequence
from reactgen.rng import stream

TRAIN_TEST_CYCLE = 5  # every 5th pair of each class goes to the test split


def make_synthetic_dataset(num_pairs: int, n_frames: int = 64, num_classes: int = 4,
                           lag: int = 4, noise_std: float = 0.02, seed: int = 0,
                           fps: float = 20.0,
                           layout: MotionLayout | None = None) -> list[InteractionPair]:
    if num_pairs < 1:
        raise ConfigError("num_pairs must be >= 1")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if n_frames < lag + 1:
        raise ConfigError(f"n_frames must be >= lag + 1 ({lag + 1})")
    if lag < 0 or noise_std < 0:
        raise ConfigError("lag and noise_std must be nonnegative")

    layout = layout or MotionLayout()
    d = layout.channels

    # Class signatures: two harmonics per channel plus a reaction offset.
    freqs, amps, offsets = [], [], []
    for c in range(num_classes):
        rc = stream(seed, "class", c)
        freqs.append(rc.uniform(0.5, 3.5, (2, d)))
        amps.append(rc.uniform(0.3, 1.0, (2, d)))
        offsets.append(rc.uniform(-0.8, 0.8, d))

    r_shared = stream(seed, "shared")
    affine_scale = r_shared.uniform(0.5, 1.5, d)
    rest_pose = r_shared.uniform(-0.2, 0.2, d)

    t = np.arange(n_frames)[:, None] / float(n_frames)  # (N, 1)
    pairs: list[InteractionPair] = []
    for i in range(num_pairs):
        c = i % num_classes
        rp = stream(seed, "pair", i)
        phase = rp.uniform(0.0, 2.0 * np.pi, (2, d))
        action = np.zeros((n_frames, d))
        for h in range(2):
            action += amps[c][h] * np.sin(2.0 * np.pi * freqs[c][h] * t + phase[h])

        reaction = np.empty_like(action)
        reaction[:lag] = rest_pose
        reaction[lag:] = affine_scale * action[: n_frames - lag] + offsets[c]
        if noise_std > 0:
            reaction = reaction + rp.normal(0.0, noise_std, (n_frames, d))

        tag = "test" if ((i // num_classes) % TRAIN_TEST_CYCLE) == TRAIN_TEST_CYCLE - 1 else "train"
        pairs.append(InteractionPair(
            action=MotionSequence(action.astype(np.float32), fps=fps, layout=layout),
            reaction=MotionSequence(reaction.astype(np.float32), fps=fps, layout=layout),
            class_label=c,
            split_tag=tag,
        ))
    return pairs
