"""Channel layout of whole-body motion and the body/hands unit split.

A frame is [6D rotation per joint | 6D global orientation | root translation],
giving D = 6K + 9 channels. With the default K = 54 the joint order is:
21 body joints, jaw, two eyeballs (indices 0..23), then 30 finger joints
(indices 24..53, 15 per hand). The hands unit takes the finger-joint
channels; everything else — including global orientation and root
translation, which have no per-hand analogue — belongs to the body unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reactgen.errors import ConfigError, ContractError

ROT_CHANNELS = 6
GLOBAL_ORIENT_CHANNELS = 6
ROOT_TRANSLATION_CHANNELS = 3

NUM_BODY_JOINTS = 21
NUM_FACE_JOINTS = 3  # jaw + two eyeballs
NUM_FINGER_JOINTS = 30
DEFAULT_NUM_JOINTS = NUM_BODY_JOINTS + NUM_FACE_JOINTS + NUM_FINGER_JOINTS  # 54


@dataclass(frozen=True)
class MotionLayout:
    num_joints: int = DEFAULT_NUM_JOINTS

    def __post_init__(self):
        if self.num_joints < 1:
            raise ContractError("layout needs at least one joint")

    @property
    def channels(self) -> int:
        return ROT_CHANNELS * self.num_joints + GLOBAL_ORIENT_CHANNELS + ROOT_TRANSLATION_CHANNELS

    def joint_channels(self, joint: int) -> np.ndarray:
        return np.arange(ROT_CHANNELS * joint, ROT_CHANNELS * (joint + 1))

    @property
    def global_orient_channels(self) -> np.ndarray:
        base = ROT_CHANNELS * self.num_joints
        return np.arange(base, base + GLOBAL_ORIENT_CHANNELS)

    @property
    def root_translation_channels(self) -> np.ndarray:
        base = ROT_CHANNELS * self.num_joints + GLOBAL_ORIENT_CHANNELS
        return np.arange(base, base + ROOT_TRANSLATION_CHANNELS)


@dataclass(frozen=True)
class MotionSequence:
    frames: np.ndarray  # (N, D) float32/float64
    fps: float = 20.0
    layout: MotionLayout = field(default_factory=MotionLayout)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ContractError(f"frames must be (N, D) with N >= 1, got {frames.shape}")
        if frames.shape[1] != self.layout.channels:
            raise ContractError(
                f"frames have {frames.shape[1]} channels but layout expects {self.layout.channels}"
            )
        if not np.isfinite(frames).all():
            raise ContractError("motion frames contain NaN/Inf")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class UnitSplit:
    body_channels: tuple[int, ...]
    hands_channels: tuple[int, ...]

    def __post_init__(self):
        body = tuple(int(c) for c in self.body_channels)
        hands = tuple(int(c) for c in self.hands_channels)
        if not body or not hands:
            raise ContractError("both units need at least one channel")
        if sorted(body) != list(body) or sorted(hands) != list(hands):
            raise ContractError("unit channel lists must be sorted")
        if set(body) & set(hands):
            raise ContractError("unit channel lists must be disjoint")
        object.__setattr__(self, "body_channels", body)
        object.__setattr__(self, "hands_channels", hands)

    def validate_for(self, layout: MotionLayout) -> None:
        total = set(self.body_channels) | set(self.hands_channels)
        if total != set(range(layout.channels)):
            raise ContractError(
                f"unit split covers {len(total)} channels, layout has {layout.channels}"
            )

    def channel_groups(self) -> dict[str, np.ndarray]:
        return {
            "body": np.asarray(self.body_channels, dtype=np.intp),
            "hands": np.asarray(self.hands_channels, dtype=np.intp),
        }


def default_split(layout: MotionLayout) -> UnitSplit:
    if layout.num_joints != DEFAULT_NUM_JOINTS:
        raise ConfigError(
            f"no default unit split for K={layout.num_joints}; supply one explicitly"
        )
    first_finger = NUM_BODY_JOINTS + NUM_FACE_JOINTS
    hands = np.arange(ROT_CHANNELS * first_finger, ROT_CHANNELS * layout.num_joints)
    body = np.concatenate([
        np.arange(0, ROT_CHANNELS * first_finger),
        layout.global_orient_channels,
        layout.root_translation_channels,
    ])
    return UnitSplit(tuple(body.tolist()), tuple(hands.tolist()))


def split_units(m: MotionSequence, split: UnitSplit) -> tuple[np.ndarray, np.ndarray]:
    """Gather unit columns; returns (body (N, Db), hands (N, Dh))."""
    split.validate_for(m.layout)
    body_idx = np.asarray(split.body_channels, dtype=np.intp)
    hands_idx = np.asarray(split.hands_channels, dtype=np.intp)
    return m.frames[:, body_idx], m.frames[:, hands_idx]


def merge_units(body: np.ndarray, hands: np.ndarray, split: UnitSplit,
                layout: MotionLayout | None = None, fps: float = 20.0) -> MotionSequence:
    """Exact inverse of split_units (column scatter)."""
    layout = layout or MotionLayout()
    split.validate_for(layout)
    body = np.asarray(body)
    hands = np.asarray(hands)
    if body.shape[1] != len(split.body_channels) or hands.shape[1] != len(split.hands_channels):
        raise ContractError(
            f"column counts ({body.shape[1]}, {hands.shape[1]}) do not match split "
            f"({len(split.body_channels)}, {len(split.hands_channels)})"
        )
    if body.shape[0] != hands.shape[0]:
        raise ContractError("units disagree on frame count")
    frames = np.empty((body.shape[0], layout.channels), dtype=body.dtype)
    frames[:, np.asarray(split.body_channels, dtype=np.intp)] = body
    frames[:, np.asarray(split.hands_channels, dtype=np.intp)] = hands
    return MotionSequence(frames, fps=fps, layout=layout)


@dataclass(frozen=True)
class InteractionPair:
    action: MotionSequence
    reaction: MotionSequence
    class_label: int
    split_tag: str  # "train" | "test"

    def __post_init__(self):
        if self.action.num_frames != self.reaction.num_frames:
            raise ContractError("action and reaction lengths differ")
        if self.action.layout != self.reaction.layout:
            raise ContractError("action and reaction layouts differ")
        if self.split_tag not in ("train", "test"):
            raise ContractError(f"split_tag must be train/test, got {self.split_tag!r}")
