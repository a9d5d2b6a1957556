"""Procedural multi-modal toy face dataset: images, texts, sketches, labels."""

from .attributes import (
    SLOTS,
    DISCRETE_DOMAINS,
    DISCRETE_SLOTS,
    AttributeVector,
    AttributeQuery,
    query_contradicts,
    sample_attributes,
)
from .renderer import (
    PART_IDS,
    SUPPORTED_RESOLUTIONS,
    render,
    extract_label_map,
    glasses_bbox,
)
from .grammar import Grammar, describe, parse_text, GrammarError
from .sketch import extract_sketch
from .dataset import DatasetConfig, FaceSample, DatasetManifest, build_dataset, load_manifest

__all__ = [
    "SLOTS",
    "DISCRETE_DOMAINS",
    "DISCRETE_SLOTS",
    "AttributeVector",
    "AttributeQuery",
    "query_contradicts",
    "sample_attributes",
    "PART_IDS",
    "SUPPORTED_RESOLUTIONS",
    "render",
    "extract_label_map",
    "glasses_bbox",
    "Grammar",
    "describe",
    "parse_text",
    "GrammarError",
    "extract_sketch",
    "DatasetConfig",
    "FaceSample",
    "DatasetManifest",
    "build_dataset",
    "load_manifest",
]
