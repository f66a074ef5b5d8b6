"""Composite run configuration and its flat ``section.key = value`` text form."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass, replace

from .beam_map import KeyGenConfig
from .charting import TrainConfig
from .experiments import SystemConfig
from .tracker import TrackerConfig
from .trajectory import ScenarioConfig

CODEBOOK_SIZES = (16, 64, 128)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    keygen: KeyGenConfig = field(default_factory=KeyGenConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    n_trajectories: int = 100
    timeliness_k: int = 12
    out_dir: str = "out"

    def validate(self) -> "RunConfig":
        for sub in (self.scenario, self.train):
            sub.validate()
        for n in (self.scenario.n_tx, self.scenario.n_rx):
            if n not in CODEBOOK_SIZES:
                raise ConfigError(f"codebook size {n} not in {CODEBOOK_SIZES}")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if self.timeliness_k < 1:
            raise ConfigError("timeliness_k must be >= 1")
        return self

    def system_config(self) -> SystemConfig:
        """The offline build settings with the train and keygen sections folded in."""
        return replace(self.system, train=self.train, keygen=self.keygen)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, scenario=self.scenario.replace(seed=seed),
                       train=replace(self.train, seed=seed),
                       system=replace(self.system, seed=seed))


# sections written to / read from the flat file; system.train and system.keygen
# are not separate sections since train/keygen already cover them
SECTIONS = ("scenario", "train", "keygen", "system", "tracker")


def _scalar_fields(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if not is_dataclass(v):
            yield f, v


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, annotation: str, default):
    t = text.strip()
    low = t.lower()
    if low == "none":
        if "None" not in annotation:
            raise ConfigError(f"value none not allowed for type {annotation}")
        return None
    if "bool" in annotation:
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {t!r}")
        return low in ("true", "1", "yes")
    if "tuple" in annotation:
        item = float if "float" in annotation else int
        return tuple(item(p) for p in t.split(",") if p.strip())
    if "int" in annotation and "float" not in annotation:
        return int(t)
    if "float" in annotation:
        return float(t) if low not in ("inf", "+inf") else math.inf
    if "str" in annotation:
        return t
    return type(default)(t)


def dump_config(cfg: RunConfig) -> str:
    lines = ["# ccbeam run configuration"]
    for f, v in _scalar_fields(cfg):
        lines.append(f"{f.name} = {_format(v)}")
    for sec in SECTIONS:
        lines.append("")
        for f, v in _scalar_fields(getattr(cfg, sec)):
            lines.append(f"{sec}.{f.name} = {_format(v)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    base = base or RunConfig()
    updates: dict[str, dict] = {sec: {} for sec in SECTIONS}
    top = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        sec, _, name = key.rpartition(".")
        if sec and sec not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        target = getattr(base, sec) if sec else base
        known = {f.name: f for f in fields(target)}
        if name not in known or is_dataclass(getattr(target, name)):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _parse(val, str(known[name].type), getattr(target, name))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        (updates[sec] if sec else top)[name] = parsed
    try:
        subs = {sec: replace(getattr(base, sec), **updates[sec]) for sec in SECTIONS}
        cfg = replace(base, **subs, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)
