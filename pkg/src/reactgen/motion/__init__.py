from reactgen.motion.layout import (
    InteractionPair,
    MotionLayout,
    MotionSequence,
    UnitSplit,
    default_split,
    merge_units,
    split_units,
)
from reactgen.motion.io import read_motion, write_motion
from reactgen.motion.synthetic import make_synthetic_dataset

__all__ = [
    "InteractionPair", "MotionLayout", "MotionSequence", "UnitSplit",
    "default_split", "make_synthetic_dataset", "merge_units", "read_motion",
    "split_units", "write_motion",
]
