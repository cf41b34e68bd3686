"""Data ingestion, binary formats, preprocessing, and synthetic generation."""

from .formats import (
    EpochTensor,
    FeatureCache,
    LEVELS,
    read_epochs,
    read_feature_cache,
    read_pnm,
    read_raster,
    write_epochs,
    write_feature_cache,
    write_pnm,
    write_raster,
)
from .preprocess import (
    OCCIPITAL_PARIETAL_17,
    STANDARD_63,
    average_repetitions,
    crop_and_downsample,
    select_channels,
    subject_variability,
)
from .synthetic import (
    GroundTruth,
    SyntheticDataset,
    SyntheticSpec,
    box_resize,
    build_feature_cache,
    build_fixed_radius_cache,
    generate_synthetic,
    toy_vision_encoder,
)

__all__ = [
    "EpochTensor", "FeatureCache", "LEVELS",
    "read_epochs", "read_feature_cache", "read_pnm", "read_raster",
    "write_epochs", "write_feature_cache", "write_pnm", "write_raster",
    "OCCIPITAL_PARIETAL_17", "STANDARD_63",
    "average_repetitions", "crop_and_downsample", "select_channels",
    "subject_variability",
    "GroundTruth", "SyntheticDataset", "SyntheticSpec",
    "box_resize", "build_feature_cache", "build_fixed_radius_cache",
    "generate_synthetic", "toy_vision_encoder",
]
