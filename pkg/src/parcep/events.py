"""
Event model
===========

Primitive and composite events on a single integer-microsecond clock,
plus the line-based wire format used for record/replay files.

A primitive event occurs at one instant (``start_ts == end_ts``). A
composite event spans the interval covered by its constituents.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence, TextIO, Union

Scalar = Union[int, float, str]

US_PER_S = 1_000_000
MAX_STR_ATTR = 64


def seconds(value: float) -> int:
    """Convert seconds to integer microseconds (rounded)."""
    return int(round(value * US_PER_S))


class EventType:
    """Symbolic event type. Instances are interned: equal names are the same object."""

    __slots__ = ("name",)
    _registry: dict[str, "EventType"] = {}

    def __new__(cls, name: str) -> "EventType":
        t = cls._registry.get(name)
        if t is None:
            if not isinstance(name, str) or not name:
                raise ValueError("event type name must be a non-empty string")
            t = object.__new__(cls)
            object.__setattr__(t, "name", name)
            cls._registry[name] = t
        return t

    def __setattr__(self, key, value):
        raise AttributeError("EventType is immutable")

    def __reduce__(self):
        return (EventType, (self.name,))

    def __lt__(self, other: "EventType") -> bool:
        return self.name < other.name

    def __repr__(self) -> str:
        return f"EventType({self.name!r})"

    def __str__(self) -> str:
        return self.name


intern_type = EventType


def _check_attr(key: str, value: Scalar) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise TypeError(f"attribute {key!r}: unsupported value type {type(value).__name__}")
    if isinstance(value, int) and not -(2**63) <= value < 2**63:
        raise ValueError(f"attribute {key!r}: integer out of 64-bit range")
    if isinstance(value, str) and len(value) > MAX_STR_ATTR:
        raise ValueError(f"attribute {key!r}: string longer than {MAX_STR_ATTR} chars")


@dataclass(frozen=True, slots=True)
class PrimitiveEvent:
    """Single occurrence of interest. Immutable; stamping returns a copy."""

    event_type: EventType
    start_ts: int
    end_ts: int
    attributes: tuple[tuple[str, Scalar], ...] = ()
    eid: int = -1
    arrival_ts: Optional[int] = None
    departure_ts: Optional[int] = None
    nbytes: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        # nominal in-memory footprint used by the memory-load model
        object.__setattr__(self, "nbytes", 64 + 16 * len(self.attributes))
        if self.start_ts != self.end_ts:
            raise ValueError("primitive events have start_ts == end_ts")
        if self.departure_ts is not None and (
            self.arrival_ts is None or self.departure_ts < self.arrival_ts
        ):
            raise ValueError("departure_ts requires arrival_ts <= departure_ts")

    @property
    def ts(self) -> int:
        return self.start_ts

    def get(self, key: str, default: Optional[Scalar] = None) -> Optional[Scalar]:
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def with_arrival(self, ts: int) -> PrimitiveEvent:
        if self.arrival_ts is not None:
            raise ValueError(f"event {self.eid}: arrival_ts already set")
        return PrimitiveEvent(self.event_type, self.start_ts, self.end_ts, self.attributes, self.eid, ts,
                              self.departure_ts)

    def with_departure(self, ts: int) -> PrimitiveEvent:
        if self.departure_ts is not None:
            raise ValueError(f"event {self.eid}: departure_ts already set")
        return replace(self, departure_ts=ts)


@dataclass(frozen=True, slots=True)
class CompositeEvent:
    event_type: EventType
    constituents: tuple[PrimitiveEvent, ...]
    start_ts: int
    end_ts: int
    attributes: tuple[tuple[str, Scalar], ...] = field(default=())

    @property
    def key(self) -> tuple[int, ...]:
        """Constituent event ids; identifies a match within one stream."""
        return tuple([c.eid for c in self.constituents])

    @property
    def nbytes(self) -> int:
        return 32 + sum([c.nbytes for c in self.constituents])


def make_primitive(
    event_type: EventType | str,
    ts: int,
    attributes: Iterable[tuple[str, Scalar]] | dict[str, Scalar] = (),
    eid: int = -1,
) -> PrimitiveEvent:
    if isinstance(event_type, str):
        event_type = intern_type(event_type)
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise TypeError("timestamps are integer microseconds")
    if ts < 0:
        raise ValueError(f"negative timestamp {ts}")
    items = tuple(attributes.items() if isinstance(attributes, dict) else attributes)
    for k, v in items:
        _check_attr(k, v)
    return PrimitiveEvent(event_type, ts, ts, items, eid)


def compose(event_type: EventType | str, parts: Sequence[PrimitiveEvent]) -> CompositeEvent:
    """Build a composite event spanning ``parts``; constituents keep input order."""
    if isinstance(event_type, str):
        event_type = intern_type(event_type)
    if not parts:
        raise ValueError("compose() needs at least one constituent")
    st = min(p.start_ts for p in parts)
    et = max(p.end_ts for p in parts)
    return CompositeEvent(event_type, tuple(parts), st, et)


@dataclass(frozen=True, slots=True)
class StreamDescriptor:
    source_id: str
    rate: float
    event_type: EventType

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ValueError("stream rate must be positive")


# -- wire format: ``type,ts,key=value,...`` ---------------------------------


def _format_value(v: Scalar) -> str:
    if isinstance(v, str):
        if any(c in v for c in ",=\n"):
            raise ValueError(f"string attribute {v!r} not representable in wire format")
        # strings that would parse back as numbers get a quote prefix
        try:
            float(v)
        except ValueError:
            return v
        return "'" + v
    return repr(v)


def _parse_value(text: str) -> Scalar:
    if text.startswith("'"):
        return text[1:]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def format_event(e: PrimitiveEvent) -> str:
    parts = [e.event_type.name, str(e.start_ts)]
    parts += [f"{k}={_format_value(v)}" for k, v in e.attributes]
    return ",".join(parts)


def parse_event(line: str, eid: int = -1) -> PrimitiveEvent:
    fields = line.strip().split(",")
    if len(fields) < 2:
        raise ValueError(f"malformed event line: {line!r}")
    attrs = []
    for item in fields[2:]:
        k, sep, v = item.partition("=")
        if not sep or not k:
            raise ValueError(f"malformed attribute {item!r} in line {line!r}")
        attrs.append((k, _parse_value(v)))
    return make_primitive(fields[0], int(fields[1]), attrs, eid)


def write_events(events: Iterable[PrimitiveEvent], fh: TextIO) -> None:
    for e in events:
        fh.write(format_event(e) + "\n")


def read_events(fh: TextIO) -> Iterator[PrimitiveEvent]:
    """Read events, numbering them in file order. Blank and ``#`` lines are skipped."""
    n = 0
    for line in fh:
        if not line.strip() or line.startswith("#"):
            continue
        yield parse_event(line, eid=n)
        n += 1
