"""
Event dispatcher for trace records produced by a simulation run.

This module provides an extensible dispatching system that routes trace
records to registered handlers based on record kind (``send``, ``commit``,
``alarm``...). Handlers can keep records in memory, stream them to an NDJSON
file, or print them live.
"""

from abc import ABC, abstractmethod
from collections import defaultdict
from pathlib import Path
from typing import Callable, TextIO

from rich.console import Console
from rich.text import Text

from yacsim.netsim.trace import TraceRecord


class EventHandler(ABC):
    """Abstract base class for trace handlers."""

    @abstractmethod
    def handle(self, record: TraceRecord) -> None:
        """Handle a trace record.

        Args:
            record: The trace record to handle.
        """
        raise NotImplementedError("Subclasses must implement this method")


class TraceRecorder(EventHandler):
    """Keeps every record in memory, in dispatch order."""

    def __init__(self):
        self.records: list[TraceRecord] = []

    def handle(self, record: TraceRecord) -> None:
        self.records.append(record)


class NdjsonTraceWriter(EventHandler):
    """Writes each record as one JSON line.

    The writer can either open its own file or use an externally-provided stream,
    in which case it leaves the stream open on cleanup.
    """

    def __init__(self, path: Path | None = None, stream: TextIO | None = None):
        """Initialize the writer.

        Args:
            path: File to create. Ignored when ``stream`` is given.
            stream: Optional already-open text stream to write to.
        """
        self._owns_stream = stream is None
        if stream is not None:
            self._stream = stream
        else:
            if path is None:
                raise ValueError("NdjsonTraceWriter needs a path or a stream")
            self._stream = open(path, "w", encoding="utf-8", newline="\n")

    def handle(self, record: TraceRecord) -> None:
        self._stream.write(record.to_json())
        self._stream.write("\n")

    def cleanup(self) -> None:
        """Close the file if this handler opened it."""
        if self._owns_stream and not self._stream.closed:
            self._stream.close()


class RichTraceHandler(EventHandler):
    """
    Prints trace records as they happen using Rich formatting.

    Commits are green, alarms and drops red, everything else dim, so the
    interesting parts of a long run stand out.
    """

    STYLES = {
        "commit": "bold green",
        "alarm": "bold red",
        "dropped": "red",
        "partitioned": "red",
        "silenced": "red",
        "proposal": "cyan",
        "send": "dim",
    }

    def __init__(self, console: Console = None):
        """Initialize the Rich trace handler.

        Args:
            console: Rich Console instance (creates one if not provided).
        """
        self.console = console or Console()

    def handle(self, record: TraceRecord) -> None:
        detail = " ".join(f"{k}={v}" for k, v in record.detail.items())
        line = Text()
        line.append(f"{record.time / 1000:>10.3f}ms ", style="bright_blue")
        line.append(f"{record.peer:<10} ", style="bold")
        line.append(f"{record.kind:<12} ", style=self.STYLES.get(record.kind, "white"))
        line.append(detail, style="dim")
        self.console.print(line)


class EventDispatcher:
    """
    Dispatches trace records to registered handlers based on record kind.

    The dispatcher supports multiple handlers per kind and allows both
    class-based handlers (EventHandler subclasses) and simple callables.

    Example usage:
        dispatcher = EventDispatcher()

        # Register a class-based handler
        dispatcher.register("commit", RichTraceHandler())

        # Register a simple callable
        dispatcher.register("alarm", lambda r: print(f"alarm at {r.peer}"))

        # Dispatch records
        dispatcher.dispatch(TraceRecord(0, "peer-0", "commit", {}))
    """

    def __init__(self):
        """Initialize the event dispatcher with empty handler registry."""
        self._handlers: dict[str, list[Callable[[TraceRecord], None]]] = defaultdict(list)
        self._global_handlers: list[Callable[[TraceRecord], None]] = []

    def register(self, kind: str, handler: EventHandler | Callable[[TraceRecord], None]) -> "EventDispatcher":
        """Register a handler for a specific record kind.

        Args:
            kind: The record kind to handle (e.g., "commit").
            handler: Either an EventHandler instance or a callable that takes a record.

        Returns:
            Self, for method chaining.
        """
        if isinstance(handler, EventHandler):
            self._handlers[kind].append(handler.handle)
        else:
            self._handlers[kind].append(handler)
        return self

    def register_global(self, handler: EventHandler | Callable[[TraceRecord], None]) -> "EventDispatcher":
        """Register a handler that receives all records.

        Args:
            handler: Either an EventHandler instance or a callable that takes a record.

        Returns:
            Self, for method chaining.
        """
        if isinstance(handler, EventHandler):
            self._global_handlers.append(handler.handle)
        else:
            self._global_handlers.append(handler)
        return self

    def dispatch(self, record: TraceRecord) -> None:
        """Dispatch a record to all registered handlers.

        Args:
            record: The trace record to dispatch.
        """
        for handler in self._handlers.get(record.kind, []):
            handler(record)
        for handler in self._global_handlers:
            handler(record)


def create_recording_dispatcher() -> tuple[EventDispatcher, TraceRecorder]:
    """Create a dispatcher that keeps every record in memory.

    Returns:
        The dispatcher and the recorder holding the records.
    """
    recorder = TraceRecorder()
    dispatcher = EventDispatcher()
    dispatcher.register_global(recorder)
    return dispatcher, recorder

