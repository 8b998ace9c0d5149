"""Trace records emitted by the simulator and their NDJSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class TraceRecord:
    """One observable step of a run.

    ``peer`` is a peer display name, ``"os"`` for the ordering service or
    ``"sim"`` for run-level events.
    """

    time: int
    peer: str
    kind: str
    detail: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "peer": self.peer, "kind": self.kind, "detail": self.detail},
            separators=(",", ":"),
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        raw = json.loads(line)
        return cls(raw["time"], raw["peer"], raw["kind"], raw.get("detail", {}))
