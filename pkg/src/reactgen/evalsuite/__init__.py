from reactgen.evalsuite.classifier import (
    ClassifierSettings,
    FeatureExtractor,
    build_classifier,
    cross_entropy,
    train_classifier,
)
from reactgen.evalsuite.metrics import (
    accuracy,
    ape_ave,
    diversity,
    fid,
    multimodality,
    rot6d_to_matrix,
    star_positions,
)
from reactgen.evalsuite.protocol import (
    MetricReport,
    format_report,
    read_report,
    run_protocol,
    write_report,
)

__all__ = [
    "ClassifierSettings", "FeatureExtractor", "MetricReport", "accuracy",
    "ape_ave", "build_classifier", "cross_entropy", "diversity", "fid",
    "format_report", "multimodality", "read_report", "rot6d_to_matrix",
    "run_protocol", "star_positions", "train_classifier", "write_report",
]
