"""
Scenario configuration: the pydantic model, the flat ``key=value`` scenario file
format and YAML sweep grids.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from yacsim.errors import ConfigError
from yacsim.netsim.byzantine import Behavior, HONEST, parse_behavior
from yacsim.netsim.network import NetworkModel, Partition

logger = logging.getLogger(__name__)


class ScriptedTransfer(BaseModel):
    """A client transfer injected at a fixed time. ``src``/``dst`` are client indices."""

    model_config = ConfigDict(frozen=True)

    time_ms: float = Field(0, ge=0)
    src: int = Field(ge=0)
    dst: int = Field(ge=0)
    amount: int = Field(ge=0)


class PartitionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    side_a: list[int]
    side_b: list[int]
    start_ms: float = Field(ge=0)
    end_ms: float = Field(ge=0)

    @model_validator(mode="after")
    def _check(self) -> "PartitionSpec":
        if not self.side_a or not self.side_b:
            raise ValueError("both partition sides need at least one peer")
        if set(self.side_a) & set(self.side_b):
            raise ValueError("a peer cannot be on both sides of a partition")
        if self.end_ms < self.start_ms:
            raise ValueError("partition ends before it starts")
        return self

    def to_partition(self) -> Partition:
        return Partition(
            frozenset(self.side_a), frozenset(self.side_b), int(self.start_ms * 1000), int(self.end_ms * 1000)
        )


class ScenarioConfig(BaseModel):
    """Everything one simulation run needs. Durations carry their unit in the field name."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "custom"
    n_peers: int = Field(4, ge=1)
    n_byzantine: int = Field(0, ge=0)
    byzantine_behavior: str = "silent"
    behaviors: dict[int, str] = Field(default_factory=dict)
    peer_names: list[str] = Field(default_factory=list)

    vote_step_delay_ms: float = Field(100.0, ge=0)
    batch_limit: int = Field(100, ge=1)
    batch_timeout_ms: float = Field(100.0, ge=0)

    tx_rate: float = Field(50.0, ge=0)
    duration_s: float = Field(10.0, gt=0)
    drain_s: float = Field(5.0, ge=0)
    n_clients: int = Field(8, ge=2)
    initial_balance: int = Field(1_000_000, ge=0)
    max_amount: int = Field(100, ge=1)
    transfers: list[ScriptedTransfer] = Field(default_factory=list)

    latency_us: int = Field(10_000, ge=0)
    jitter_us: int = Field(0, ge=0)
    link_spread_us: int = Field(0, ge=0)
    os_latency_us: int | None = Field(None, ge=0)
    drop_rate: float = Field(0.0, ge=0, le=1)
    partitions: list[PartitionSpec] = Field(default_factory=list)

    handle_cost_us: int = Field(0, ge=0)
    verify_cost_us: int = Field(0, ge=0)
    cpu_spread: float = Field(0.0, ge=0, lt=1)
    slow_fraction: float = Field(0.0, ge=0, lt=1)
    slow_cost_us: int = Field(0, ge=0)

    crypto: Literal["simulated", "ed25519"] = "simulated"
    seed: int = Field(1, ge=0)
    trials: int = Field(1, ge=1)

    @field_validator("behaviors", mode="before")
    @classmethod
    def _behaviors_from_text(cls, value: Any) -> Any:
        if isinstance(value, str):
            return parse_behavior_assignments(value)
        return value

    @field_validator("peer_names", mode="before")
    @classmethod
    def _names_from_text(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [name.strip() for name in value.split(",") if name.strip()]
        return value

    @model_validator(mode="after")
    def _cross_field(self) -> "ScenarioConfig":
        if self.n_byzantine > self.n_peers:
            raise ValueError(f"n_byzantine ({self.n_byzantine}) exceeds n_peers ({self.n_peers})")
        parse_behavior(self.byzantine_behavior)
        for index, text in self.behaviors.items():
            if not 0 <= index < self.n_peers:
                raise ValueError(f"behavior assigned to peer {index}, but there are {self.n_peers} peers")
            parse_behavior(text)
        if self.peer_names:
            if len(self.peer_names) != self.n_peers:
                raise ValueError(f"{len(self.peer_names)} peer names given for {self.n_peers} peers")
            if len(set(self.peer_names)) != len(self.peer_names):
                raise ValueError("peer names must be unique")
        for spec in self.partitions:
            if any(not 0 <= i < self.n_peers for i in (*spec.side_a, *spec.side_b)):
                raise ValueError(f"partition {spec} names a peer outside 0..{self.n_peers - 1}")
        for transfer in self.transfers:
            if transfer.src >= self.n_clients or transfer.dst >= self.n_clients:
                raise ValueError(f"scripted transfer {transfer} names a client outside 0..{self.n_clients - 1}")
        return self

    # derived values --------------------------------------------------------

    @property
    def vote_step_delay_us(self) -> int:
        return int(round(self.vote_step_delay_ms * 1000))

    @property
    def batch_timeout_us(self) -> int:
        return int(round(self.batch_timeout_ms * 1000))

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1_000_000))

    @property
    def time_limit_us(self) -> int:
        return self.duration_us + int(round(self.drain_s * 1_000_000))

    def peer_name(self, index: int) -> str:
        return self.peer_names[index] if self.peer_names else f"peer-{index}"

    def resolved_behaviors(self) -> list[Behavior]:
        """Behavior per peer index. ``n_byzantine`` fills the highest indices not set explicitly."""
        resolved = [HONEST] * self.n_peers
        fill = parse_behavior(self.byzantine_behavior)
        remaining = self.n_byzantine - sum(1 for text in self.behaviors.values() if not parse_behavior(text).honest)
        for index in range(self.n_peers - 1, -1, -1):
            if remaining <= 0:
                break
            if index not in self.behaviors:
                resolved[index] = fill
                remaining -= 1
        for index, text in self.behaviors.items():
            resolved[index] = parse_behavior(text)
        return resolved

    def network_model(self) -> NetworkModel:
        return NetworkModel(
            base_latency_us=self.latency_us,
            jitter_us=self.jitter_us,
            link_spread_us=self.link_spread_us,
            drop_rate=self.drop_rate,
            partitions=tuple(spec.to_partition() for spec in self.partitions),
            os_latency_us=self.os_latency_us,
        )

    def with_overrides(self, **updates: Any) -> "ScenarioConfig":
        """Validated copy with ``updates`` applied."""
        return build_config({**self.model_dump(), **updates})


def build_config(values: dict[str, Any]) -> ScenarioConfig:
    """Validate ``values`` into a config, turning pydantic errors into :class:`ConfigError`."""
    try:
        return ScenarioConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario: {e}") from e


# text formats ----------------------------------------------------------------

def parse_behavior_assignments(text: str) -> dict[int, str]:
    """Parse ``"2=silent,3=delayed:1"`` into ``{2: "silent", 3: "delayed:1"}``."""
    assignments: dict[int, str] = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        index, sep, behavior = item.partition("=")
        if not sep:
            raise ConfigError(f"behavior assignment '{item}' must look like INDEX=BEHAVIOR")
        try:
            assignments[int(index)] = behavior.strip()
        except ValueError:
            raise ConfigError(f"bad peer index in behavior assignment '{item}'") from None
    return assignments


def parse_partition(text: str) -> PartitionSpec:
    """Parse ``"3|0,1,2@5-250"``: peers 3 and 0,1,2 cut apart from 5 ms to 250 ms."""
    try:
        sides, _, window = text.partition("@")
        side_a, _, side_b = sides.partition("|")
        start, _, end = window.partition("-")
        return PartitionSpec(
            side_a=[int(i) for i in side_a.split(",") if i.strip()],
            side_b=[int(i) for i in side_b.split(",") if i.strip()],
            start_ms=float(start),
            end_ms=float(end),
        )
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"bad partition '{text}', expected A,B|C,D@START_MS-END_MS: {e}") from None


def parse_transfer(text: str) -> ScriptedTransfer:
    """Parse ``"TIME_MS:SRC:DST:AMOUNT"``."""
    try:
        time_ms, src, dst, amount = text.split(":")
        return ScriptedTransfer(time_ms=float(time_ms), src=int(src), dst=int(dst), amount=int(amount))
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"bad transfer '{text}', expected TIME_MS:SRC:DST:AMOUNT: {e}") from None


# flag or file key -> config field
FLAG_FIELDS = {
    "peers": "n_peers",
    "byzantine": "n_byzantine",
    "behavior": "behaviors",
    "vote-delay-ms": "vote_step_delay_ms",
    "latency-us": "latency_us",
    "partition": "partitions",
    "transfer": "transfers",
}
_REPEATABLE = {"partitions": parse_partition, "transfers": parse_transfer}


def field_for_key(key: str) -> str:
    key = key.strip()
    if key in FLAG_FIELDS:
        return FLAG_FIELDS[key]
    name = key.replace("-", "_")
    if name not in ScenarioConfig.model_fields:
        raise ConfigError(f"unknown scenario key '{key}'")
    return name


def parse_scenario_text(text: str, source: str = "<text>") -> dict[str, Any]:
    """Parse the flat scenario format into raw config values.

    One ``key=value`` per line, ``#`` starts a comment, keys mirror the CLI
    flags. ``partition`` and ``transfer`` may repeat.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got '{line}'")
        name = field_for_key(key)
        value = value.strip()
        if name in _REPEATABLE:
            values.setdefault(name, []).append(_REPEATABLE[name](value))
        elif name == "behaviors":
            values.setdefault(name, {}).update(parse_behavior_assignments(value))
        else:
            values[name] = value
    return values


def load_scenario_file(path: Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    logger.info(f"Loading scenario file {path}")
    values = parse_scenario_text(path.read_text(encoding="utf-8"), str(path))
    values.setdefault("name", path.stem)
    return build_config(values)


# sweep grids -----------------------------------------------------------------

def build_grid(base: ScenarioConfig, peers: list[int], vote_delays_ms: list[float]) -> list[ScenarioConfig]:
    """Cartesian grid over network size and vote-step delay, peers-major."""
    if not peers or not vote_delays_ms:
        raise ConfigError("a sweep grid needs at least one peer count and one vote delay")
    return [base.with_overrides(n_peers=n, vote_step_delay_ms=d) for n in peers for d in vote_delays_ms]


def load_grid(path: Path) -> list[ScenarioConfig]:
    """Read a YAML grid: a ``base`` mapping of scenario keys plus ``peers`` and ``vote_delays_ms`` lists."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"grid file not found: {path}")
    with open(path, "r") as f:
        conf = yaml.safe_load(f) or {}
    if not isinstance(conf, dict):
        raise ConfigError(f"{path}: grid file must hold a mapping")
    base_values: dict[str, Any] = {}
    for key, value in (conf.get("base") or {}).items():
        name = field_for_key(str(key))
        if name in _REPEATABLE and isinstance(value, list):
            value = [_REPEATABLE[name](v) if isinstance(v, str) else v for v in value]
        base_values[name] = value
    base = build_config(base_values)
    return build_grid(base, list(conf.get("peers") or []), list(conf.get("vote_delays_ms") or []))
