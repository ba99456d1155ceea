"""Flat ``key = value`` experiment configuration with presets and provenance.

Every key has a documented default. A preset (``protocol``) may replace
some defaults; a config file and command-line overrides apply on top, in
that order. The resolved config records where each value came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ultrkit.clicks import ClickNoiseConfig, make_curve
from ultrkit.dla import LR_SCHEDULES, TrainConfig
from ultrkit.letor import ConfigError, GenConfig
from ultrkit.prod import ProdConfig
from ultrkit.scorers import Arch, ScorerKind


class ConfigErrors(ConfigError):
    """All problems found while validating one config."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class Key:
    name: str
    default: str
    parse: Callable[[str], object]
    doc: str


SCHEMA: tuple[Key, ...] = (
    Key("protocol", "desk", str, "preset supplying defaults: desk or paper"),
    Key("output_dir", "results", str, "result bundle directory"),
    Key("master_seed", "0", int, "root of every derived seed"),
    Key("repetitions", "5", int, "independent runs per scorer kind"),
    Key("kinds", "univariate_mlp,set_attention,sequence_gru(init),sequence_gru(rever)", _words,
        "DLA-trained scorer kinds; the first univariate_mlp is the significance baseline"),
    Key("naive", "true", _bool, "also train univariate_mlp on raw clicks"),
    Key("data.source", "synthetic", str, "'synthetic' or a path to a LETOR-format file"),
    Key("data.split", "0.7,0.1,0.2", _floats, "train/valid/test query fractions"),
    Key("data.normalize", "auto", lambda t: t if t == "auto" else _bool(t),
        "min-max scale features using training-split ranges; auto = on for files, off for synthetic"),
    Key("gen.n_queries", "4000", int, "synthetic queries"),
    Key("gen.docs_per_query", "10", int, "documents per synthetic query"),
    Key("gen.feature_dim", "64", int, "synthetic feature dimension H"),
    Key("gen.max_label", "4", int, "largest relevance grade"),
    Key("gen.context_mix", "0.0", float, "weight of the list-context interaction in relevance"),
    Key("gen.label_noise", "1.0", float, "std of Gaussian noise on the latent relevance score"),
    Key("gen.query_shift", "1.0", float, "std of the per-query shared feature offset"),
    Key("prod.fraction", "0.01", float, "fraction of training queries labelled for the production ranker"),
    Key("prod.epochs", "5", int, "production ranker SGD epochs"),
    Key("prod.learning_rate", "0.01", float, "production ranker step size"),
    Key("prod.reg", "0.01", float, "production ranker L2 weight"),
    Key("clicks.curve", "inverse_power", str, "propensity family: inverse_power or custom_file"),
    Key("clicks.eta", "1.0", float, "inverse_power exponent"),
    Key("clicks.curve_file", "", str, "file of propensities for custom_file"),
    Key("clicks.positions", "10", int, "positions covered by the inverse_power curve"),
    Key("clicks.epsilon", "0.1", float, "click noise floor"),
    Key("train.batch_size", "64", int, "lists per SGD step"),
    Key("train.learning_rate_S", "0.05", float, "ranker step size"),
    Key("train.learning_rate_E", "0.3", float, "propensity step size"),
    Key("train.steps", "12000", int, "SGD steps"),
    Key("train.list_size", "10", int, "displayed list length"),
    Key("train.eval_interval", "1000", int, "steps between history rows"),
    Key("train.weight_cap", "100.0", float, "cap on inverse weights"),
    Key("train.update_mode", "simultaneous", str, "simultaneous or alternating"),
    Key("train.click_log_size", "0", int, "replay a fixed log of this many impressions (0 = fresh clicks)"),
    Key("train.lr_schedule", "linear", str, "step size schedule: " + " or ".join(LR_SCHEDULES)),
    Key("train.weight_decay", "0.0", float, "L2 penalty on scorer parameters"),
    Key("arch.mlp_hidden", "64,32", _ints, "univariate_mlp hidden widths"),
    Key("arch.d_model", "32", int, "set_attention width"),
    Key("arch.n_heads", "4", int, "set_attention heads"),
    Key("arch.n_blocks", "2", int, "set_attention blocks"),
    Key("arch.ffn_width", "64", int, "set_attention feed-forward width"),
    Key("arch.gru_hidden", "64", int, "sequence_gru hidden size"),
)
KEYS = {k.name: k for k in SCHEMA}

PRESETS: dict[str, dict[str, str]] = {
    "desk": {},
    "paper": {
        "train.steps": "60000",
        "train.eval_interval": "5000",
        "arch.d_model": "64",
        "arch.ffn_width": "128",
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, object]
    sources: dict[str, str]
    raw: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self, skip=()) -> str:
        """Every key (minus ``skip``) with its value and where it came from."""
        keys = [k for k in self.raw if k not in skip]
        width = max(len(k) for k in keys)
        return "".join(f"{k.ljust(width)} = {self.raw[k]}  # {self.sources[k]}\n" for k in keys)

    @property
    def normalize(self) -> bool:
        flag = self.values["data.normalize"]
        return self.values["data.source"] != "synthetic" if flag == "auto" else bool(flag)

    @property
    def kinds(self) -> list[ScorerKind]:
        return [ScorerKind.parse(k) for k in self.values["kinds"]]

    @property
    def gen(self) -> GenConfig:
        v = self.values
        return GenConfig(v["gen.n_queries"], v["gen.docs_per_query"], v["gen.feature_dim"],
                         v["gen.max_label"], v["gen.context_mix"], v["gen.label_noise"],
                         v["gen.query_shift"])

    @property
    def prod(self) -> ProdConfig:
        v = self.values
        return ProdConfig(v["prod.epochs"], v["prod.learning_rate"], v["prod.reg"])

    @property
    def arch(self) -> Arch:
        v = self.values
        return Arch(tuple(v["arch.mlp_hidden"]), v["arch.d_model"], v["arch.n_heads"],
                    v["arch.n_blocks"], v["arch.ffn_width"], v["arch.gru_hidden"])

    def curve(self):
        v = self.values
        if v["clicks.curve"] == "custom_file":
            return make_curve("custom_file", v["clicks.curve_file"])
        return make_curve(v["clicks.curve"], v["clicks.eta"], v["clicks.positions"])

    @property
    def noise(self) -> ClickNoiseConfig:
        return ClickNoiseConfig(self.values["clicks.epsilon"], self.values["gen.max_label"])

    def train_config(self, kind: ScorerKind, seed: int) -> TrainConfig:
        v = self.values
        return TrainConfig(
            kind=kind.tag, arch=self.arch, batch_size=v["train.batch_size"],
            learning_rate_S=v["train.learning_rate_S"], learning_rate_E=v["train.learning_rate_E"],
            steps=v["train.steps"], list_size=v["train.list_size"], seed=seed,
            eval_interval=v["train.eval_interval"], weight_cap=v["train.weight_cap"],
            update_mode=v["train.update_mode"], click_log_size=v["train.click_log_size"],
            lr_schedule=v["train.lr_schedule"], weight_decay=v["train.weight_decay"],
        )


def parse_lines(text: str, origin: str = "file") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigErrors([f"{origin}:{lineno}: expected key = value, got {line!r}"])
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read an optional config file, apply ``key=value`` overrides, validate."""
    entries: list[tuple[str, str, str]] = []
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        entries += [(k, v, "file") for k, v in parse_lines(text, str(path)).items()]
    for item in overrides:
        entries += [(k, v, "override") for k, v in parse_lines(item, "override").items()]
    return validate_config(entries)


def validate_config(entries) -> ExperimentConfig:
    """Fill defaults, parse and cross-check values; every problem is reported at once.

    ``entries`` is a mapping or a sequence of ``(key, value, source)``.
    """
    if isinstance(entries, dict):
        entries = [(k, str(v), "given") for k, v in entries.items()]
    problems: list[str] = []
    given: dict[str, tuple[str, str]] = {}
    for key, value, source in entries:
        if key not in KEYS:
            problems.append(f"unknown key {key!r}")
            continue
        given[key] = (value, source)

    protocol = given.get("protocol", ("desk", "default"))[0]
    if protocol not in PRESETS:
        problems.append(f"protocol must be one of {sorted(PRESETS)}, got {protocol!r}")
        protocol = "desk"
    raw, sources = {}, {}
    for k in SCHEMA:
        if k.name in given:
            raw[k.name], sources[k.name] = given[k.name]
        elif k.name in PRESETS[protocol]:
            raw[k.name], sources[k.name] = PRESETS[protocol][k.name], f"preset {protocol}"
        else:
            raw[k.name], sources[k.name] = k.default, "default"

    values: dict[str, object] = {}
    for k in SCHEMA:
        try:
            values[k.name] = k.parse(raw[k.name])
        except ValueError as exc:
            problems.append(f"{k.name}: cannot parse {raw[k.name]!r} ({exc})")
    if len(values) < len(SCHEMA):
        # cross-field checks need every value parsed
        raise ConfigErrors(problems)

    cfg = ExperimentConfig(values, sources, raw)
    problems += _cross_checks(cfg)
    if problems:
        raise ConfigErrors(problems)
    return cfg


def _cross_checks(cfg: ExperimentConfig) -> list[str]:
    v = cfg.values
    problems = []
    if v["repetitions"] < 1:
        problems.append("repetitions must be >= 1")
    split = v["data.split"]
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1) > 1e-9 or split[0] == 0 or split[2] == 0:
        problems.append(f"data.split must be three non-negative fractions summing to 1 with nonempty train and test, got {split}")
    if not 0 < v["prod.fraction"] <= 1:
        problems.append(f"prod.fraction must lie in (0, 1], got {v['prod.fraction']}")
    try:
        cfg.kinds
    except ConfigError as exc:
        problems.append(f"kinds: {exc}")
    if not v["kinds"]:
        problems.append("kinds must name at least one scorer")
    for build, label in ((lambda: cfg.gen.validate(), "gen"), (lambda: cfg.arch.validate(), "arch"),
                         (lambda: cfg.noise, "clicks.epsilon")):
        try:
            build()
        except ConfigError as exc:
            problems.append(f"{label}: {exc}")
    curve = None
    try:
        curve = cfg.curve()
    except (ConfigError, OSError) as exc:
        problems.append(f"clicks: {exc}")
    if curve is not None and v["train.list_size"] > len(curve):
        problems.append(
            f"train.list_size ({v['train.list_size']}) exceeds the curve length "
            f"(clicks.positions / curve file: {len(curve)})"
        )
    try:
        cfg.train_config(ScorerKind("univariate_mlp"), 0).validate(None)
    except ConfigError as exc:
        problems.append(f"train: {exc}")
    source = v["data.source"]
    if source != "synthetic" and not Path(source).is_file():
        problems.append(f"data.source: no such file {source!r}")
    return problems


def schema_doc() -> str:
    """The documented schema, one key per line."""
    return "".join(f"{k.name} = {k.default}    # {k.doc}\n" for k in SCHEMA)
