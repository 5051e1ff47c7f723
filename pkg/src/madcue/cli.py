"""Command-line entry point: ``madcue {synth,fit,eval,select-regions,inspect-model}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .cca import DEFAULT_POWER, DEFAULT_RELATIVE_RIDGE, CcaModel, load_model, save_model
from .config import ConfigError, RunConfig, format_config, load_config
from .ensemble import AUX_WEIGHT, AUXILIARY_ORDER, MINOR_WEIGHT
from .features import FeatureStore, load_features
from .harness import evaluate, render_table
from .pipeline import (
    OBJECT_SELECTOR,
    PERSON_SELECTOR,
    Pipeline,
    fit_selection_model,
    load_grounding_pairs,
)
from .questions import load_questions
from .regions import load_detections
from .synthetic import SyntheticSpec, generate_synthetic, write_dataset
from .text import OBJECT, PERSON, extract_chunks, load_embeddings, load_vocabulary, tokenize

log = logging.getLogger("madcue")


class CliError(Exception):
    pass


def model_path(models_dir: Path, qtype: str, cue: str) -> Path:
    return models_dir / f"{qtype}__{cue}.cca"


def defaults_header(cfg: RunConfig) -> list[str]:
    s = cfg.selection
    reg = cfg.cca.regularization
    return [
        f"# madcue {__version__}",
        "# cca: regularization = "
        + (f"{DEFAULT_RELATIVE_RIDGE:g} * trace(C)/dim per view" if reg is None else f"{reg:g}")
        + f", components = {cfg.cca.components or 'min(dim_x, dim_y, 300)'}"
        + f", correlation_power = {cfg.cca.correlation_power:g}"
        + ("" if cfg.cca.correlation_power == DEFAULT_POWER else f" (default {DEFAULT_POWER:g})"),
        f"# person boxes: confidence >= {s.conf_threshold:g}, sides >= {s.min_side:g} px, plus union box;"
        f" selection cue {s.person_cue}",
        f"# object boxes: top {s.max_candidates} by confidence; selection cue {s.object_cue};"
        f" kernel p = {s.kernel_power:g}",
        f"# ensemble weights: preferred 1 - (C-1) * {MINOR_WEIGHT:g}, others {MINOR_WEIGHT:g};"
        f" auxiliary scores mixed {1 - AUX_WEIGHT:g}/{AUX_WEIGHT:g} after the main combination"
        f" in order {', '.join(AUXILIARY_ORDER)}",
    ]


def load_store(cfg: RunConfig) -> FeatureStore:
    registry = cfg.registry
    store = FeatureStore()
    if not cfg.feature_paths:
        raise CliError("config has no [features] entries")
    for cue, path in cfg.feature_paths.items():
        if not path.exists():
            raise CliError(f"feature file for cue {cue} not found: {path}")
        try:
            store.extend(load_features(path, registry[cue]))
        except ValueError as exc:
            raise CliError(f"cue {cue} ({path}): {exc}") from None
    return store


def build_pipeline(cfg: RunConfig, with_selectors: bool) -> Pipeline:
    cfg.require_existing("embeddings")
    embeddings = load_embeddings(cfg.path("embeddings"))
    detections = {}
    det_path = cfg.path("detections", required=False)
    if det_path is not None:
        cfg.require_existing("detections")
        detections = load_detections(det_path)
    person_vocab = object_vocab = ()
    if cfg.path("person_vocab", required=False) and cfg.path("object_vocab", required=False):
        cfg.require_existing("person_vocab", "object_vocab")
        person_vocab = load_vocabulary(cfg.path("person_vocab"))
        object_vocab = load_vocabulary(cfg.path("object_vocab"))
    pipeline = Pipeline(
        load_store(cfg),
        embeddings,
        cue_models=cfg.cue_models,
        detections=detections,
        person_vocab=person_vocab,
        object_vocab=object_vocab,
        selection=cfg.selection,
    )
    if with_selectors:
        models_dir = cfg.path("models")
        for name, attr in ((PERSON_SELECTOR, "person_model"), (OBJECT_SELECTOR, "object_model")):
            p = models_dir / f"{name}.cca"
            if p.exists():
                setattr(pipeline, attr, load_model(p))
    return pipeline


def describe_model(name: str, model: CcaModel) -> str:
    top = ", ".join(f"{c:.4f}" for c in model.correlations[:5])
    return f"{name}: dim_x={model.dim_x} dim_y={model.dim_y} k={model.components} top5=[{top}]"


def cmd_synth(cfg: RunConfig, args) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        seed = cfg.synth.get("seed")
    if seed is None:
        raise CliError("synth needs a seed (--seed or [run] seed)")
    fields = {f.name for f in dataclasses.fields(SyntheticSpec)}
    unknown = set(cfg.synth) - fields
    if unknown:
        raise CliError(f"[synth] unknown keys: {', '.join(sorted(unknown))}")
    params = {k: v for k, v in cfg.synth.items() if k != "seed"}
    spec = SyntheticSpec(seed=int(seed), **params)
    ds = generate_synthetic(spec)
    out = Path(args.out)
    paths, feature_paths = write_dataset(ds, out)
    run = RunConfig(
        base_dir=out.resolve(),
        paths={k: p.resolve() for k, p in paths.items()},
        feature_paths={k: p.resolve() for k, p in feature_paths.items()},
        cue_dims={c: k.declared_dim for c, k in ds.registry.items()},
        cca=cfg.cca,
        cca_overrides=cfg.cca_overrides,
        selection=cfg.selection,
        cue_models=cfg.cue_models,
        ensembles=cfg.ensembles,
        columns=cfg.columns,
        seed=int(seed),
        threads=cfg.threads,
    )
    (out / "config.ini").write_text(format_config(run), encoding="utf-8")
    print(
        f"wrote {len(ds.train)} train / {len(ds.test)} test questions, "
        f"{len(ds.store)} feature records, {len(ds.grounding)} grounding pairs to {out}"
    )
    print(f"config: {out / 'config.ini'}")
    return 0


def cmd_fit(cfg: RunConfig, args) -> int:
    cfg.require_existing("train_questions")
    pipeline = build_pipeline(cfg, with_selectors=False)
    train = load_questions(cfg.path("train_questions"))
    models_dir = cfg.path("models")
    models_dir.mkdir(parents=True, exist_ok=True)
    report = defaults_header(cfg)

    grounding_path = cfg.path("grounding", required=False)
    if grounding_path is not None:
        cfg.require_existing("grounding")
        pairs = load_grounding_pairs(grounding_path)
        for kind, name, attr in ((PERSON, PERSON_SELECTOR, "person_model"),
                                 (OBJECT, OBJECT_SELECTOR, "object_model")):
            if not any(p.kind == kind for p in pairs):
                continue
            model = fit_selection_model(pipeline, pairs, kind, cfg.cca_for(name))
            setattr(pipeline, attr, model)
            save_model(model, models_dir / f"{name}.cca")
            report.append(describe_model(name, model))

    qtypes = list(dict.fromkeys(q.qtype for q in train))
    for qtype, cue in cfg.model_pairs(qtypes):
        subset = [q for q in train if q.qtype == qtype]
        try:
            model = pipeline.fit_cue_model(subset, cue, cfg.cca_for(cue))
        except ValueError as exc:
            raise CliError(f"fitting {qtype}/{cue}: {exc}") from None
        save_model(model, model_path(models_dir, qtype, cue))
        report.append(describe_model(f"{qtype}/{cue}", model))
    text = "\n".join(report) + "\n"
    (models_dir / "fit_report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def load_models(cfg: RunConfig, qtypes) -> dict:
    models = {}
    for qtype, cue in cfg.model_pairs(qtypes):
        p = model_path(cfg.path("models"), qtype, cue)
        if not p.exists():
            raise CliError(f"missing model for {qtype}/{cue}: {p} (run `madcue fit` first)")
        models[(qtype, cue)] = load_model(p)
    return models


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg.require_existing("questions")
    questions = load_questions(cfg.path("questions"))
    pipeline = build_pipeline(cfg, with_selectors=True)
    qtypes = list(dict.fromkeys(q.qtype for q in questions))
    models = load_models(cfg, qtypes)
    threads = args.threads if args.threads is not None else cfg.threads
    if threads == 0:
        threads = os.cpu_count() or 1
    score_log = [] if args.json_scores else None
    table = evaluate(questions, pipeline, models, cfg.column_configs(qtypes), threads, score_log)
    fmt = args.format
    if fmt == "text":
        sys.stdout.write("\n".join(defaults_header(cfg)) + "\n")
    sys.stdout.write(render_table(table, fmt))
    if score_log is not None:
        Path(args.json_scores).write_text(json.dumps(score_log, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_select_regions(cfg: RunConfig, args) -> int:
    pipeline = build_pipeline(cfg, with_selectors=True)
    if not pipeline.person_vocab:
        raise CliError("select-regions needs [paths] person_vocab and object_vocab")
    image_id = args.image_id
    if image_id not in pipeline.detections:
        raise CliError(f"unknown image id {image_id!r} (not in the detections file)")
    answer = args.answer
    g = pipeline.ground_answer(image_id, answer)
    chunks = extract_chunks(tokenize(answer), pipeline.person_vocab, pipeline.object_vocab)
    print(f"image {image_id}: {answer!r}")
    if not chunks:
        print("no person or object phrases found")
    for c in chunks:
        print(f"  {c.kind} phrase {c.text!r} (tokens {c.span[0]}-{c.span[1]}, label {c.matched_label!r})")
    if not any(c.kind == PERSON for c in chunks):
        print(f"  person: no person phrase; all person boxes selected -> "
              f"{', '.join(str(r) for r in g.person_regions)}")
    for sel in g.person_selections:
        print(f"  person {sel.phrase.text!r} -> {sel.chosen} (score {sel.score:.4f})")
    for sel in g.object_selections:
        print(f"  object {sel.phrase.text!r} -> {sel.chosen} (score {sel.score:.4f})")
    print(f"  person score {g.person_score:.4f}; object kernel score {g.object_score:.6f}")
    for note in g.notes:
        print(f"  note: {note}")
    return 0


def cmd_inspect_model(cfg: RunConfig | None, args) -> int:
    model = load_model(args.model)
    reg = model.config.regularization
    print(f"{args.model}")
    print(f"  dim_x = {model.dim_x}, dim_y = {model.dim_y}, k = {model.components}")
    print(f"  correlation_power = {model.config.correlation_power:g}")
    print(f"  regularization = {'scale-relative default' if reg is None else f'{reg:g}'}")
    shown = model.correlations[: args.top]
    print("  correlations: " + " ".join(f"{c:.6f}" for c in shown))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madcue", description=__doc__)
    parser.add_argument("--version", action="version", version=f"madcue {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="random seed (synth)")
    common.add_argument("--threads", type=int, help="evaluation worker threads (0 = auto)")
    common.add_argument("--format", choices=("text", "csv"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit selection and per-type cue CCA models")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="evaluate test questions into an accuracy table")
    p.add_argument("--json-scores", metavar="PATH", help="dump per-question per-cue scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select-regions", parents=[common], help="ground an answer's phrases in an image")
    p.add_argument("image_id")
    p.add_argument("answer")
    p.set_defaults(func=cmd_select_regions)

    p = sub.add_parser("inspect-model", parents=[common], help="print a saved CCA model summary")
    p.add_argument("model", type=Path)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_inspect_model)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        elif args.command in ("synth", "inspect-model"):
            cfg = RunConfig()
        else:
            raise CliError(f"{args.command} needs --config")
        if args.seed is not None:
            cfg.seed = args.seed
        return args.func(cfg, args)
    except (CliError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
