"""INI run configuration shared by every CLI command.

Relative paths resolve against the directory holding the config file. Sections::

    [run]        seed, threads
    [paths]      embeddings, train_questions, questions, detections,
                 person_vocab, object_vocab, grounding, models
    [features]   <cue> = <feature file>        (.csv files use the text import)
    [cue_dims]   <cue> = <dimension>           (overrides the default registry)
    [cca]        regularization, components, correlation_power  ("default" allowed)
    [cca.<cue model>]  same keys, per cue model
    [selection]  person_cue, object_cue, conf_threshold, min_side, max_candidates, kernel_power
    [cue_models] <name> = <cue>@<source>, ...  (adds to / replaces the defaults)
    [ensemble.<QuestionType>]  cues, preferred, auxiliary, standardize
    [eval]       columns = baseline, ensemble
    [synth]      SyntheticSpec fields (synth command only)
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .cca import CcaConfig
from .ensemble import (
    GROUPS,
    QUESTION_TYPES,
    EnsembleConfig,
    default_ensembles,
    format_ensembles,
    parse_ensembles,
)
from .features import CueKind, cue_registry
from .pipeline import DEFAULT_CUE_MODELS, CueModelSpec, CuePart, SelectionSettings

ENSEMBLE_COLUMN = "ensemble"
PATH_KEYS = (
    "embeddings", "train_questions", "questions", "detections",
    "person_vocab", "object_vocab", "grounding", "models",
)


class ConfigError(ValueError):
    pass


def _cca_from(section: Mapping[str, str], base: CcaConfig, where: str) -> CcaConfig:
    def value(key, cast, current):
        raw = section.get(key)
        if raw is None:
            return current
        raw = raw.strip()
        if raw.lower() in ("default", "none", ""):
            return None
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{where}] {key} = {raw!r} is not a valid {cast.__name__}") from None

    power = value("correlation_power", float, base.correlation_power)
    try:
        return CcaConfig(
            regularization=value("regularization", float, base.regularization),
            components=value("components", int, base.components),
            correlation_power=base.correlation_power if power is None else power,
        )
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass
class RunConfig:
    base_dir: Path = field(default_factory=Path.cwd)
    paths: dict[str, Path] = field(default_factory=dict)
    feature_paths: dict[str, Path] = field(default_factory=dict)
    cue_dims: dict[str, int] = field(default_factory=dict)
    cca: CcaConfig = field(default_factory=CcaConfig)
    cca_overrides: dict[str, CcaConfig] = field(default_factory=dict)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    cue_models: dict[str, CueModelSpec] = field(default_factory=lambda: dict(DEFAULT_CUE_MODELS))
    ensembles: dict[str, EnsembleConfig] = field(default_factory=default_ensembles)
    columns: list[str] = field(default_factory=lambda: [ENSEMBLE_COLUMN])
    seed: int | None = None
    threads: int = 1
    synth: dict[str, object] = field(default_factory=dict)

    @property
    def registry(self) -> dict[str, CueKind]:
        return cue_registry(self.cue_dims)

    def path(self, key: str, required: bool = True) -> Path | None:
        p = self.paths.get(key)
        if p is None and required:
            raise ConfigError(f"config is missing [paths] {key}")
        return p

    def require_existing(self, *keys: str) -> None:
        for key in keys:
            p = self.path(key)
            if not p.exists():
                raise ConfigError(f"[paths] {key}: {p} does not exist")

    def cca_for(self, cue: str) -> CcaConfig:
        return self.cca_overrides.get(cue, self.cca)

    def column_configs(self, qtypes) -> dict[str, dict[str, EnsembleConfig]]:
        """Per-column, per-question-type ensemble settings for ``qtypes``."""
        out: dict[str, dict[str, EnsembleConfig]] = {}
        for column in self.columns:
            per_type = {}
            for qtype in qtypes:
                if column == ENSEMBLE_COLUMN:
                    if qtype in self.ensembles:
                        per_type[qtype] = self.ensembles[qtype]
                elif self.cue_models[column].supports(qtype):
                    per_type[qtype] = EnsembleConfig.single(qtype, column)
            out[column] = per_type
        return out

    def model_pairs(self, qtypes) -> list[tuple[str, str]]:
        """(question type, cue model) pairs that need a fitted CCA model."""
        pairs = []
        for per_type in self.column_configs(qtypes).values():
            for qtype, cfg in per_type.items():
                for cue in cfg.cues:
                    if (qtype, cue) not in pairs:
                        pairs.append((qtype, cue))
        order = {q: i for i, q in enumerate(QUESTION_TYPES)}
        return sorted(pairs, key=lambda p: (order[p[0]], p[1]))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep cue names case-sensitive
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(parser, path.parent.resolve())


def parse_config(parser: configparser.ConfigParser, base_dir: Path) -> RunConfig:
    cfg = RunConfig(base_dir=base_dir)

    def resolve(p: str) -> Path:
        q = Path(p.strip())
        return q if q.is_absolute() else base_dir / q

    if parser.has_section("run"):
        run = parser["run"]
        if "seed" in run:
            cfg.seed = run.getint("seed")
        threads = run.get("threads", "1").strip()
        cfg.threads = 0 if threads == "auto" else int(threads)
    if parser.has_section("paths"):
        for key, value in parser["paths"].items():
            if key not in PATH_KEYS:
                raise ConfigError(f"[paths] unknown key {key!r} (known: {', '.join(PATH_KEYS)})")
            cfg.paths[key] = resolve(value)
    if parser.has_section("cue_dims"):
        for cue, dim in parser["cue_dims"].items():
            cfg.cue_dims[cue] = int(dim)
    registry = cfg.registry
    if parser.has_section("features"):
        for cue, value in parser["features"].items():
            if cue not in registry:
                raise ConfigError(f"[features] unknown cue {cue!r}; add it under [cue_dims]")
            cfg.feature_paths[cue] = resolve(value)

    if parser.has_section("cue_models"):
        for name, value in parser["cue_models"].items():
            try:
                parts = tuple(CuePart.parse(p) for p in value.split(",") if p.strip())
                cfg.cue_models[name] = CueModelSpec(name, parts)
            except ValueError as exc:
                raise ConfigError(f"[cue_models] {name}: {exc}") from None
    for spec in cfg.cue_models.values():
        for part in spec.parts:
            if part.cue not in registry:
                raise ConfigError(f"cue model {spec.name} uses unknown cue {part.cue!r}")

    if parser.has_section("cca"):
        cfg.cca = _cca_from(parser["cca"], cfg.cca, "cca")
    for section in parser.sections():
        if section.startswith("cca."):
            cue = section.split(".", 1)[1]
            if cue not in cfg.cue_models and cue not in ("person_select", "object_select"):
                raise ConfigError(f"[{section}] names an unknown cue model")
            cfg.cca_overrides[cue] = _cca_from(parser[section], cfg.cca, section)

    if parser.has_section("selection"):
        sec = parser["selection"]
        base = SelectionSettings()
        cfg.selection = SelectionSettings(
            person_cue=sec.get("person_cue", base.person_cue).strip(),
            object_cue=sec.get("object_cue", base.object_cue).strip(),
            conf_threshold=sec.getfloat("conf_threshold", base.conf_threshold),
            min_side=sec.getfloat("min_side", base.min_side),
            max_candidates=sec.getint("max_candidates", base.max_candidates),
            kernel_power=sec.getfloat("kernel_power", base.kernel_power),
        )
        for cue in (cfg.selection.person_cue, cfg.selection.object_cue):
            if cue not in registry:
                raise ConfigError(f"[selection] unknown cue {cue!r}")

    try:
        cfg.ensembles = parse_ensembles(parser, cfg.cue_models)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for qtype, ens in cfg.ensembles.items():
        for cue in ens.cues:
            if not cfg.cue_models[cue].supports(qtype):
                raise ConfigError(
                    f"ensemble for {qtype}: cue model {cue} uses regions that "
                    f"{qtype} (group {GROUPS[qtype]}) questions do not have"
                )

    if parser.has_section("eval"):
        cols = [c.strip() for c in parser["eval"].get("columns", "").split(",") if c.strip()]
        for c in cols:
            if c != ENSEMBLE_COLUMN and c not in cfg.cue_models:
                raise ConfigError(f"[eval] columns: unknown cue model {c!r}")
        if cols:
            cfg.columns = cols

    if parser.has_section("synth"):
        for key, value in parser["synth"].items():
            try:
                cfg.synth[key] = ast.literal_eval(value)
            except (ValueError, SyntaxError):
                cfg.synth[key] = value.strip()
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Serialize a config back to INI text, paths relative to ``cfg.base_dir`` where possible."""

    def rel(p: Path) -> str:
        try:
            return str(p.relative_to(cfg.base_dir))
        except ValueError:
            return str(p)

    def opt(v) -> str:
        return "default" if v is None else repr(v)

    lines = ["[run]"]
    if cfg.seed is not None:
        lines.append(f"seed = {cfg.seed}")
    lines += [f"threads = {cfg.threads}", "", "[paths]"]
    lines += [f"{k} = {rel(v)}" for k, v in cfg.paths.items()]
    lines += ["", "[features]"]
    lines += [f"{k} = {rel(v)}" for k, v in cfg.feature_paths.items()]
    if cfg.cue_dims:
        lines += ["", "[cue_dims]"]
        lines += [f"{k} = {v}" for k, v in cfg.cue_dims.items()]
    lines += [
        "", "[cca]",
        f"regularization = {opt(cfg.cca.regularization)}",
        f"components = {opt(cfg.cca.components)}",
        f"correlation_power = {cfg.cca.correlation_power!r}",
    ]
    for cue, c in cfg.cca_overrides.items():
        lines += [
            "", f"[cca.{cue}]",
            f"regularization = {opt(c.regularization)}",
            f"components = {opt(c.components)}",
            f"correlation_power = {c.correlation_power!r}",
        ]
    s = cfg.selection
    lines += ["", "[selection]"]
    lines += [f"{f.name} = {getattr(s, f.name)}" for f in fields(s)]
    lines += ["", "[cue_models]"]
    lines += [f"{n} = {', '.join(str(p) for p in m.parts)}" for n, m in cfg.cue_models.items()]
    lines += ["", "[eval]", f"columns = {', '.join(cfg.columns)}", ""]
    lines.append(format_ensembles(cfg.ensembles))
    return "\n".join(lines)
