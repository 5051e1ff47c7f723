"""Shared fixed-seed synthetic benchmark runs (cached per pytest session)."""

from __future__ import annotations

from madcue.cca import CcaConfig
from madcue.ensemble import EnsembleConfig
from madcue.harness import AccuracyTable, evaluate
from madcue.pipeline import CueModelSpec, CuePart, Pipeline
from madcue.synthetic import SyntheticSpec, generate_synthetic

SEED = 11
N_TRAIN = 1000
N_TEST = 2000

# two single-feature cue models over the whole image
CUE_MODELS = {
    "a": CueModelSpec("a", (CuePart("places_fc7", "image"),)),
    "b": CueModelSpec("b", (CuePart("vgg_fc7", "image"),)),
}
COLUMNS = {
    "a": {"Scene": EnsembleConfig.single("Scene", "a")},
    "b": {"Scene": EnsembleConfig.single("Scene", "b")},
    "ensemble": {"Scene": EnsembleConfig("Scene", ("a", "b"), 0)},
}

_cache: dict[str, AccuracyTable] = {}


def scene_run(threads: int = 1, **overrides) -> AccuracyTable:
    """Fit both cue models on the training split and evaluate the three columns."""
    key = repr((threads, sorted(overrides.items())))
    if key not in _cache:
        spec = SyntheticSpec(
            seed=SEED, n_train=N_TRAIN, n_test=N_TEST, question_types=("Scene",),
            cue_dims={"places_fc7": 32, "vgg_fc7": 32}, **overrides,
        )
        ds = generate_synthetic(spec)
        pipeline = Pipeline(ds.store, ds.embeddings, cue_models=CUE_MODELS)
        models = {("Scene", c): pipeline.fit_cue_model(ds.train, c, CcaConfig()) for c in CUE_MODELS}
        _cache[key] = evaluate(ds.test, pipeline, models, COLUMNS, threads=threads)
    return _cache[key]


def scene_accuracy(**overrides) -> dict[str, float]:
    """Accuracy in percent per column."""
    table = scene_run(**overrides)
    return {c: 100.0 * table.overall(c) for c in COLUMNS}
