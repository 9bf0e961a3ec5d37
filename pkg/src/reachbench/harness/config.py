"""Run configuration: a line-based ``key = value`` grammar with sections.

Grammar::

    # comment
    [run]
    pipeline = ball_pixels
    [sac]
    hidden = 64, 64
    [task]
    target_low = 0.29, -0.05, 0.10

Keys before any section header are looked up in every section.  Values are
resolved in three layers: dataclass defaults, then the scale preset, then
keys given explicitly (file first, command-line overrides last).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable

from ..env import TaskConfig
from ..pipelines import PIPELINES
from ..sac.agent import SacConfig

SCALES = ("paper", "reduced")
REWARDS = ("sparse", "continuous")
IMAGE_PIPELINES = ("raw_image", "contrastive")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class RunSettings:
    pipeline: str = "cheat_coords"
    reward: str = "continuous"
    imitation: bool = False
    demo_episodes: int = 200
    seed: int = 0
    scale: str = "paper"
    out: str = "runs/default"
    window: int = 100
    max_resamples: int = 20
    momentum: float = 0.99
    crop_size: int = 56
    contrastive_lr: float = 1e-3
    encoder_critic_grad: bool = True
    learn_w: bool = True
    checkpoint_every: int = 0
    record_wall_clock: bool = False


@dataclass
class ChainSettings:
    v_max: float = 1.0
    dt: float = 0.05
    joint_limit: float = math.pi


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    sac: SacConfig = field(default_factory=SacConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    chain: ChainSettings = field(default_factory=ChainSettings)

    @property
    def task_config(self) -> TaskConfig:
        return replace(self.task, reward_kind=self.run.reward)


# section -> (attribute on RunConfig, dataclass, keys hidden from the grammar)
SECTIONS: dict[str, list[tuple[str, type, tuple[str, ...]]]] = {
    "run": [("run", RunSettings, ())],
    "sac": [("sac", SacConfig, ())],
    "task": [("task", TaskConfig, ("reward_kind",)), ("chain", ChainSettings, ())],
}


def _between(lo, hi, lo_open=False, hi_open=False):
    def check(v):
        ok_lo = v > lo if lo_open else v >= lo
        ok_hi = v < hi if hi_open else v <= hi
        return ok_lo and ok_hi
    a = "(" if lo_open else "["
    b = ")" if hi_open else "]"
    return check, f"must be in {a}{lo}, {hi}{b}"


def _positive():
    return (lambda v: v > 0), "must be positive"


def _at_least(n):
    return (lambda v: v >= n), f"must be >= {n}"


def _one_of(options):
    return (lambda v: v in options), f"must be one of {', '.join(options)}"


RANGES: dict[str, tuple[Callable[[Any], bool], str]] = {
    "run.pipeline": _one_of(PIPELINES),
    "run.reward": _one_of(REWARDS),
    "run.scale": _one_of(SCALES),
    "run.demo_episodes": _at_least(0),
    "run.window": _at_least(1),
    "run.max_resamples": _at_least(0),
    "run.momentum": _between(0.0, 1.0),
    "run.crop_size": _at_least(1),
    "run.contrastive_lr": _at_least(0.0),
    "run.checkpoint_every": _at_least(0),
    "sac.gamma": _between(0.0, 1.0),
    "sac.tau": _between(0.0, 1.0, lo_open=True),
    "sac.init_temperature": _positive(),
    "sac.temperature_lr": _at_least(0.0),
    "sac.actor_lr": _at_least(0.0),
    "sac.critic_lr": _at_least(0.0),
    "sac.buffer_size": _at_least(1),
    "sac.batch_size": _at_least(1),
    "sac.episodes": _at_least(0),
    "sac.steps_per_episode": _at_least(1),
    "sac.update_every": _at_least(1),
    "sac.warmup_steps": _at_least(0),
    "sac.hidden": ((lambda v: len(v) > 0 and min(v) >= 1), "must be positive widths"),
    "task.epsilon": _positive(),
    "task.success_bonus": _at_least(0.0),
    "task.active_joints": _between(1, 6),
    "task.v_max": _positive(),
    "task.dt": _positive(),
    "task.joint_limit": _between(0.0, 2 * math.pi, lo_open=True),
}


def reduced_preset(pipeline: str) -> dict[str, Any]:
    """Desk-scale knobs: 3 active joints, T = 50, M = 3000, image B = 2e4."""
    preset = {
        "task.active_joints": 3,
        "task.epsilon": 0.05,
        "task.target_low": (0.29, -0.05, 0.10),
        "task.target_high": (0.31, 0.25, 0.35),
        "sac.steps_per_episode": 50,
        "sac.episodes": 3000,
        "sac.hidden": (64, 64),
    }
    if pipeline in IMAGE_PIPELINES:
        preset["sac.buffer_size"] = 20_000
    return preset


def scale_preset(scale: str, pipeline: str) -> dict[str, Any]:
    if scale == "reduced":
        return reduced_preset(pipeline)
    if pipeline in IMAGE_PIPELINES:
        return {"sac.buffer_size": 20_000}
    return {}


def _schema() -> dict[str, tuple[str, str, Any]]:
    """Qualified key -> (section attribute, field name, default value)."""
    out = {}
    for section, parts in SECTIONS.items():
        for attr, cls, hidden in parts:
            defaults = cls()
            for f in fields(cls):
                if f.name in hidden:
                    continue
                out[f"{section}.{f.name}"] = (attr, f.name, getattr(defaults, f.name))
    return out


SCHEMA = _schema()


def _parse_value(raw: str, like: Any, key: str, line: int | None) -> Any:
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = [s for s in (p.strip() for p in raw.split(",")) if s]
            kind = int if like and all(isinstance(x, int) for x in like) else float
            value = tuple(kind(s) for s in items)
            if like and kind is float and len(value) != len(like):
                raise ConfigError(f"{key} needs {len(like)} values, got {len(value)}", line)
            return value
        return raw
    except ConfigError:
        raise
    except ValueError:
        kind = type(like).__name__
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}", line) from None


def _check_range(key: str, value: Any, line: int | None) -> None:
    rule = RANGES.get(key)
    if rule is None:
        return
    ok, msg = rule
    if not ok(value):
        raise ConfigError(f"{key} = {value!r} out of range: {msg}", line)


def _resolve_key(section: str | None, key: str, line: int | None) -> str:
    if section is not None:
        qual = f"{section}.{key}"
        if qual not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", line)
        return qual
    hits = [q for q in SCHEMA if q.split(".", 1)[1] == key]
    if not hits:
        raise ConfigError(f"unknown key {key!r}", line)
    if len(hits) > 1:
        raise ConfigError(f"key {key!r} is ambiguous; put it under a section", line)
    return hits[0]


def _read_lines(text: str) -> list[tuple[str, Any, int]]:
    entries: list[tuple[str, Any, int]] = []
    section: str | None = None
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", n)
            section = body[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", n)
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", n)
        key, raw = (s.strip() for s in body.split("=", 1))
        qual = _resolve_key(section, key, n)
        value = _parse_value(raw, SCHEMA[qual][2], qual, n)
        _check_range(qual, value, n)
        entries.append((qual, value, n))
    return entries


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse config text into a fully defaulted RunConfig.

    ``overrides`` maps keys (bare or ``section.key``) to raw strings and wins
    over the file; command-line flags use it.
    """
    explicit: dict[str, tuple[Any, int | None]] = {}
    for qual, value, n in _read_lines(text):
        explicit[qual] = (value, n)
    for key, raw in (overrides or {}).items():
        section, _, bare = key.rpartition(".")
        qual = _resolve_key(section or None, bare, None)
        value = _parse_value(str(raw), SCHEMA[qual][2], qual, None)
        _check_range(qual, value, None)
        explicit[qual] = (value, None)

    scale = explicit.get("run.scale", (SCHEMA["run.scale"][2], None))[0]
    pipeline = explicit.get("run.pipeline", (SCHEMA["run.pipeline"][2], None))[0]
    values = {q: d for q, (_, _, d) in SCHEMA.items()}
    values.update(scale_preset(scale, pipeline))
    values.update({q: v for q, (v, _) in explicit.items()})

    def line_of(*keys):
        found = [explicit[k][1] for k in keys if k in explicit and explicit[k][1] is not None]
        return max(found) if found else None

    parts: dict[str, dict[str, Any]] = {}
    for qual, value in values.items():
        attr, name, _ = SCHEMA[qual]
        parts.setdefault(attr, {})[name] = value
    parts["task"]["reward_kind"] = values["run.reward"]
    built = {}
    for section, specs in SECTIONS.items():
        for attr, cls, _ in specs:
            try:
                built[attr] = cls(**parts[attr])
            except ValueError as exc:
                keys = [q for q in explicit if q.startswith(section + ".")]
                raise ConfigError(str(exc), line_of(*keys)) from None
    return RunConfig(**built)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def render_config(config: RunConfig) -> str:
    """Every tunable, explicitly, in parseable form."""
    lines = []
    for section, specs in SECTIONS.items():
        lines.append(f"[{section}]")
        for attr, cls, hidden in specs:
            obj = getattr(config, attr)
            for f in fields(cls):
                if f.name in hidden:
                    continue
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def as_flat_dict(config: RunConfig) -> dict[str, Any]:
    out = {}
    for qual, (attr, name, _) in SCHEMA.items():
        out[qual] = getattr(getattr(config, attr), name)
    return out


def with_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Copy of ``config`` with ``section__key=value`` replacements (programmatic use)."""
    parts = {a: dataclasses.asdict(getattr(config, a)) for a in ("run", "sac", "task", "chain")}
    for key, value in overrides.items():
        section, name = key.split("__", 1)
        qual = f"{section}.{name}"
        if qual not in SCHEMA:
            raise ConfigError(f"unknown key {qual!r}")
        _check_range(qual, value, None)
        parts[SCHEMA[qual][0]][name] = value
    parts["task"]["reward_kind"] = parts["run"]["reward"]
    for attr in ("task",):
        for k in ("target_low", "target_high", "home"):
            parts[attr][k] = tuple(parts[attr][k])
    parts["sac"]["hidden"] = tuple(parts["sac"]["hidden"])
    return RunConfig(RunSettings(**parts["run"]), SacConfig(**parts["sac"]),
                     TaskConfig(**parts["task"]), ChainSettings(**parts["chain"]))
