"""Scenario configuration and the flat ``key = value`` scenario file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

SPEED_CLASSES = {"slow": (1.0, 5.0), "fast": (13.0, 17.0)}


class ConfigError(ValueError):
    """Invalid configuration value or file. Carries an optional location."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class MobilitySpec:
    model: str = "rwp"
    # ((class, count), ...) in node-id order: the first count ids get the first class
    speed_mix: tuple = (("slow", 25),)
    pause: float = 0.0
    group_count: int = 1
    group_radius: float = 50.0
    block_size: float = 50.0
    trace_path: str | None = None
    warmup: int = 5000

    def __post_init__(self):
        if self.model not in ("rwp", "rpgm", "grid", "trace", "static"):
            raise ConfigError(f"unknown mobility model {self.model!r}")
        mix = tuple((str(c), int(n)) for c, n in self.speed_mix)
        object.__setattr__(self, "speed_mix", mix)
        for cls, n in mix:
            if cls not in SPEED_CLASSES:
                raise ConfigError(f"unknown speed class {cls!r}")
            if n < 0:
                raise ConfigError("speed_mix counts must be non-negative")
        if self.pause < 0 or self.group_count < 1 or self.group_radius < 0:
            raise ConfigError("invalid mobility parameters")
        if self.model == "trace" and not self.trace_path:
            raise ConfigError("trace mobility requires trace_path")

    @property
    def n_nodes(self):
        return sum(n for _, n in self.speed_mix)

    def node_classes(self):
        """Speed class name per node id."""
        out = []
        for cls, n in self.speed_mix:
            out.extend([cls] * n)
        return out

    def mean_speed(self):
        """Nominal network mean speed (count-weighted class means)."""
        total = self.n_nodes
        if total == 0:
            return 0.0
        s = sum(n * 0.5 * sum(SPEED_CLASSES[c]) for c, n in self.speed_mix)
        return s / total


@dataclass(frozen=True)
class SimConfig:
    area_width: float = 500.0
    area_height: float = 500.0
    node_count: int = 25
    tx_range: float = 50.0
    timestep: float = 1.0
    duration: int = 100_000
    cooldown: int = 40_000
    buffer_cap: int = 200
    initial_ttl: int = 300
    flow_arrival_rate: float | None = None
    packet_rate: float = 0.01
    flow_duration_mean: float = 5000.0
    rng_seed: int = 0
    scenario_id: str = "scenario"
    mobility: MobilitySpec = field(default_factory=MobilitySpec)

    def __post_init__(self):
        if self.flow_arrival_rate is None:
            object.__setattr__(self, "flow_arrival_rate", 0.001 * self.node_count / 25)
        if not self.duration > self.cooldown >= 0:
            raise ConfigError("need duration > cooldown >= 0")
        if self.node_count < 2:
            raise ConfigError("node_count must be >= 2")
        if self.tx_range <= 0:
            raise ConfigError("tx_range must be positive")
        if self.buffer_cap < 1 or self.initial_ttl < 1:
            raise ConfigError("buffer_cap and initial_ttl must be >= 1")
        if min(self.flow_arrival_rate, self.packet_rate, self.flow_duration_mean) < 0:
            raise ConfigError("rates must be non-negative")
        if self.area_width <= 0 or self.area_height <= 0:
            raise ConfigError("area must be positive")
        if self.mobility.model != "trace" and self.mobility.n_nodes != self.node_count:
            raise ConfigError(
                f"speed_mix counts sum to {self.mobility.n_nodes}, node_count is {self.node_count}"
            )

    @property
    def traffic_end(self):
        """First timestep of the cool-down period."""
        return self.duration - self.cooldown

    def replace(self, **changes):
        mob_keys = {f.name for f in dataclasses.fields(MobilitySpec)}
        mob = {k: changes.pop(k) for k in list(changes) if k in mob_keys}
        if mob:
            changes["mobility"] = dataclasses.replace(self.mobility, **mob)
        if "node_count" in changes and "flow_arrival_rate" not in changes:
            changes["flow_arrival_rate"] = None
        return dataclasses.replace(self, **changes)

    def to_flat(self):
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "mobility":
                continue
            out[f.name] = getattr(self, f.name)
        for f in dataclasses.fields(MobilitySpec):
            val = getattr(self.mobility, f.name)
            out[f.name] = [list(x) for x in val] if f.name == "speed_mix" else val
        return out

    def digest(self):
        blob = json.dumps(self.to_flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"mobility"}
_MOB_KEYS = {f.name for f in dataclasses.fields(MobilitySpec)}


def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if text in ("none", "None", "null"):
        return None
    return text.strip("'\"")


def parse_config_text(text, path="<string>"):
    """Parse flat ``key = value`` text into a SimConfig. Unknown keys are rejected."""
    sim, mob = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key in _SIM_KEYS:
            target = sim
        elif key in _MOB_KEYS:
            target = mob
        else:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        if key in target:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        target[key] = _parse_value(value)
    try:
        if "speed_mix" in mob:
            mob["speed_mix"] = tuple(tuple(x) for x in mob["speed_mix"])
        if "node_count" in sim and "speed_mix" not in mob:
            mob["speed_mix"] = (("slow", int(sim["node_count"])),)
        if mob.get("trace_path") and path != "<string>":
            tp = Path(mob["trace_path"])
            if not tp.is_absolute():
                mob["trace_path"] = str((Path(path).parent / tp).resolve())
        return SimConfig(**sim, mobility=MobilitySpec(**mob))
    except ConfigError as exc:
        raise ConfigError(str(exc), path) from None
    except TypeError as exc:
        raise ConfigError(str(exc), path) from None


def load_config(path):
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def dump_config(cfg):
    lines = []
    for key, val in cfg.to_flat().items():
        lines.append(f"{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"
