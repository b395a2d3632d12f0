"""Newline-delimited metocean records.

Each line is one JSON object::

    {"ts": "2024-05-01T12:00:00Z", "cs": 0.31, "cd": 270.0, "hs": 0.8, "tp": 4.1, "wd": 250.0}

``ts`` is RFC 3339, ``cs`` the current speed (m/s), ``cd`` the current
heading (deg); the wave fields ``hs`` (m), ``tp`` (s) and ``wd`` (deg) are
optional and default to 0. An optional first line
``{"schema": "cagetwin.metocean", "version": 1}`` declares the format; any
other declaration is refused.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from ..errors import InvalidRange, SchemaViolation, UnreadableSource
from ..sim.seastate import SeaState

log = logging.getLogger(__name__)

SCHEMA_NAME = "cagetwin.metocean"
SCHEMA_VERSION = 1
REQUIRED = ("ts", "cs", "cd")
OPTIONAL = ("hs", "tp", "wd")


@dataclass(frozen=True)
class MetoceanRecord:
    timestamp: datetime
    sea_state: SeaState
    out_of_range: tuple = ()  # fields outside the training domain

    def to_json(self):
        s = self.sea_state
        return json.dumps({"ts": format_timestamp(self.timestamp), "cs": s.current_speed, "cd": s.current_dir,
                           "hs": s.sig_wave_height, "tp": s.peak_period, "wd": s.wave_dir})


@dataclass
class IngestResult:
    records: list
    skipped: int = 0
    skipped_lines: list = field(default_factory=list)  # (line number, reason)

    @property
    def flagged(self):
        return sum(1 for r in self.records if r.out_of_range)

    def __iter__(self):
        return ((r.timestamp, r.sea_state) for r in self.records)

    def __len__(self):
        return len(self.records)


def parse_timestamp(text):
    """RFC 3339 timestamp to an aware UTC datetime."""
    if not isinstance(text, str):
        raise ValueError("timestamp must be a string")
    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    if "T" not in value and "t" not in value:
        raise ValueError(f"not an RFC 3339 timestamp: {text!r}")
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts):
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_record(obj) -> MetoceanRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    missing = [k for k in REQUIRED if k not in obj]
    if missing:
        raise ValueError(f"missing field(s) {', '.join(missing)}")
    values = {}
    for key in REQUIRED[1:] + OPTIONAL:
        raw = obj.get(key, 0.0)
        if raw is None:
            raw = 0.0
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ValueError(f"field {key} is not a number")
        if not math.isfinite(raw):
            raise ValueError(f"field {key} is not finite")
        values[key] = float(raw)
    sea = SeaState(values["cs"], values["cd"], values["hs"], values["tp"], values["wd"])
    return MetoceanRecord(parse_timestamp(obj["ts"]), sea, tuple(sea.out_of_domain()))


def _lines(source):
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise UnreadableSource(f"cannot read {source}: {exc}") from exc
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        try:
            data = source.read()
        except (OSError, ValueError) as exc:
            raise UnreadableSource(f"cannot read stream: {exc}") from exc
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UnreadableSource(f"source is not UTF-8 text: {exc}") from exc
    return io.StringIO(data)


def _check_header(obj):
    if obj.get("schema") != SCHEMA_NAME or obj.get("version") != SCHEMA_VERSION:
        raise SchemaViolation(
            f"unsupported stream declaration {obj!r}; expected schema {SCHEMA_NAME!r} version {SCHEMA_VERSION}"
        )


def iter_records(lines, result: IngestResult):
    """Parse lines one at a time; bad lines are recorded in ``result``."""
    first = True
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            result.skipped += 1
            result.skipped_lines.append((lineno, f"invalid JSON: {exc.msg}"))
            first = False
            continue
        if first and isinstance(obj, dict) and "schema" in obj:
            _check_header(obj)
            first = False
            continue
        first = False
        try:
            record = parse_record(obj)
        except (ValueError, InvalidRange) as exc:
            result.skipped += 1
            result.skipped_lines.append((lineno, str(exc)))
            continue
        if record.out_of_range:
            log.warning("line %d: outside the training domain (%s)", lineno, ", ".join(record.out_of_range))
        yield record


def ingest_metocean(source) -> IngestResult:
    """Read a whole source and return its valid records sorted by timestamp.

    ``source`` is a path or raw bytes; readable file objects work too.
    """
    result = IngestResult([])
    records = list(iter_records(_lines(source), result))
    # stable sort keeps arrival order among equal timestamps
    records.sort(key=lambda r: r.timestamp)
    result.records = records
    if result.skipped:
        log.warning("skipped %d malformed line(s)", result.skipped)
    return result
