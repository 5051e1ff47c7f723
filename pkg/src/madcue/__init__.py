"""Multi-cue CCA answer ranking for fill-in-the-blank visual questions."""

from .cca import CcaConfig, CcaModel, fit_cca, load_model, project_x, project_y, save_model, similarity
from .ensemble import (
    EnsembleConfig,
    attach_auxiliary,
    choose_answer,
    combination_weights,
    combine_scores,
)
from .features import CueKind, FeatureRecord, FeatureStore, Region, pool_regions, stack_features
from .harness import AccuracyTable, evaluate, render_table
from .pipeline import CueModelSpec, CuePart, Pipeline
from .questions import Question
from .regions import (
    BoundingBox,
    DetectionSet,
    filter_person_boxes,
    kernel_score,
    select_object_box,
    select_person_box,
    union_box,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .text import EmbeddingTable, PhraseChunk, embed_text, extract_chunks, load_embeddings

__version__ = "0.1.0"
