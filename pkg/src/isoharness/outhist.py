"""Output histories: what actually happened when a history ran.

One record per line:

    seq submit_seq OP_TEXT STATUS [VALUES=...] [BEFORE=... AFTER=...]...

``seq`` is the record's position in completion order, ``submit_seq`` the
operation's position in submission order; the two records of a blocked
operation (BLOCKED, then RESUMED / ABORTED_DEADLOCK / ERROR) share a
submit_seq.  Header lines are prefixed ``#`` and echo the run configuration
plus the isolation level of every transaction; the trailer carries per-
transaction final statuses.  Every successful write record carries full
before/after row images (one BEFORE/AFTER pair per written row), which is
what lets the analyzer decide predicate membership after the fact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .dataset import Row
from .engine import WriteImage
from .notation import SCHEMA_COLUMNS


class FormatError(Exception):
    def __init__(self, message: str, line_no: int = 0, line: str = ""):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {message}: {line!r}")


STATUS_OK = "OK"
STATUS_BLOCKED = "BLOCKED"
STATUS_RESUMED = "RESUMED"
STATUS_ERROR = "ERROR"
STATUS_DEADLOCK = "ABORTED_DEADLOCK"
STATUS_READONLY = "READONLY_VIOLATION"

_PLAIN_STATUSES = {STATUS_OK, STATUS_BLOCKED, STATUS_DEADLOCK, STATUS_READONLY}


@dataclass
class OutputRecord:
    seq: int
    submit_seq: int
    txn: int
    op_text: str
    status: str
    resumed_of: Optional[int] = None
    error_code: Optional[str] = None
    values: Optional[list] = None
    images: List[WriteImage] = field(default_factory=list)

    def completes(self) -> bool:
        """True for records that finish an operation (everything but BLOCKED)."""
        return self.status != STATUS_BLOCKED

    def succeeded(self) -> bool:
        return self.status in (STATUS_OK, STATUS_RESUMED)


@dataclass
class RunHeader:
    name: str = "<history>"
    mode: str = "SYNC"
    lock_scope: str = "PREDICATE"
    strictness: str = "PER_LEVEL"
    default_level: str = "RC"
    rows: int = 200
    timeout: float = 2.0
    ru_writes_allowed: bool = False
    stuck: bool = False
    levels: Dict[int, str] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)


@dataclass
class OutputHistory:
    header: RunHeader = field(default_factory=RunHeader)
    records: List[OutputRecord] = field(default_factory=list)
    finals: Dict[int, str] = field(default_factory=dict)

    def by_submit(self) -> Dict[int, list]:
        """Records grouped by submit_seq, preserving completion order."""
        groups: Dict[int, list] = {}
        for rec in self.records:
            groups.setdefault(rec.submit_seq, []).append(rec)
        return groups


# ----------------------------------------------------------------- encoding


def encode_image_side(row: Optional[Row]) -> str:
    if row is None:
        return "ABSENT"
    return ";".join(f"{col}:{row.values[col]}" for col in SCHEMA_COLUMNS)


def decode_image_side(text: str) -> Optional[Row]:
    if text == "ABSENT":
        return None
    values = {}
    for part in text.split(";"):
        col, _, num = part.partition(":")
        if col not in SCHEMA_COLUMNS or not re.fullmatch(r"-?\d+", num):
            raise ValueError(f"bad image field {part!r}")
        values[col] = int(num)
    if set(values) != set(SCHEMA_COLUMNS):
        raise ValueError("incomplete row image")
    return Row(values)


def encode_values(values: list) -> str:
    if not values:
        return "-"
    parts = []
    for v in values:
        if isinstance(v, tuple):
            parts.append(":".join(str(x) for x in v))
        else:
            parts.append(str(v))
    return ",".join(parts)


def decode_values(text: str) -> list:
    if text == "-":
        return []
    out = []
    for part in text.split(","):
        if ":" in part:
            out.append(tuple(int(x) for x in part.split(":")))
        else:
            out.append(int(part))
    return out


def _status_text(rec: OutputRecord) -> str:
    if rec.status == STATUS_RESUMED:
        return f"RESUMED={rec.resumed_of}"
    if rec.status == STATUS_ERROR:
        return f"ERROR={rec.error_code}"
    return rec.status


def _record_line(rec: OutputRecord) -> str:
    parts = [str(rec.seq), str(rec.submit_seq), rec.op_text, _status_text(rec)]
    if rec.values is not None:
        parts.append("VALUES=" + encode_values(rec.values))
    for img in rec.images:
        parts.append("BEFORE=" + encode_image_side(img.before))
        parts.append("AFTER=" + encode_image_side(img.after))
    return " ".join(parts)


_BOOL = {"yes": True, "no": False}


def serialize(oh: OutputHistory) -> str:
    h = oh.header
    lines = [
        f"# name: {h.name}",
        f"# mode: {h.mode}",
        f"# lock-scope: {h.lock_scope}",
        f"# strictness: {h.strictness}",
        f"# default-level: {h.default_level}",
        f"# rows: {h.rows}",
        f"# timeout: {h.timeout}",
        f"# ru-writes-allowed: {'yes' if h.ru_writes_allowed else 'no'}",
    ]
    if h.stuck:
        lines.append("# stuck: yes")
    lines.append("# levels: " + " ".join(f"{t}={lvl}" for t, lvl in sorted(h.levels.items())))
    if h.meta:
        lines.append("# meta: " + " ".join(f"{k}={v}" for k, v in h.meta.items()))
    lines.extend(_record_line(rec) for rec in oh.records)
    lines.append("# final: " + " ".join(f"{t}={s}" for t, s in sorted(oh.finals.items())))
    return "\n".join(lines) + "\n"


_TXN_FROM_OP = re.compile(r"^[A-Za-z]+(\d+)")


def _parse_record_line(line: str, line_no: int) -> OutputRecord:
    parts = line.split(" ")
    if len(parts) < 4:
        raise FormatError("record needs seq, submit_seq, op, status", line_no, line)
    try:
        seq = int(parts[0])
        submit_seq = int(parts[1])
    except ValueError:
        raise FormatError("bad sequence numbers", line_no, line)
    op_text = parts[2]
    status_token = parts[3]
    m = _TXN_FROM_OP.match(op_text)
    txn = int(m.group(1)) if m else 0
    rec = OutputRecord(seq, submit_seq, txn, op_text, STATUS_OK)
    name, _, arg = status_token.partition("=")
    if name == STATUS_RESUMED and arg.isdigit():
        rec.status = STATUS_RESUMED
        rec.resumed_of = int(arg)
    elif name == STATUS_ERROR and arg:
        rec.status = STATUS_ERROR
        rec.error_code = arg
    elif status_token in _PLAIN_STATUSES:
        rec.status = status_token
    else:
        raise FormatError(f"unknown status {status_token!r}", line_no, line)
    pending_before: Optional[str] = None
    for token in parts[4:]:
        key, sep, payload = token.partition("=")
        if not sep:
            raise FormatError(f"stray token {token!r}", line_no, line)
        try:
            if key == "VALUES":
                rec.values = decode_values(payload)
            elif key == "BEFORE":
                if pending_before is not None:
                    raise ValueError("BEFORE without matching AFTER")
                pending_before = payload
            elif key == "AFTER":
                if pending_before is None:
                    raise ValueError("AFTER without BEFORE")
                before = decode_image_side(pending_before)
                after = decode_image_side(payload)
                key_src = after if after is not None else before
                if key_src is None:
                    raise ValueError("image with both sides ABSENT")
                rec.images.append(WriteImage(submit_seq, key_src.reckey, before, after))
                pending_before = None
            else:
                raise ValueError(f"unknown field {key!r}")
        except ValueError as exc:
            raise FormatError(str(exc), line_no, line)
    if pending_before is not None:
        raise FormatError("BEFORE without matching AFTER", line_no, line)
    return rec


def parse_output(text: str) -> OutputHistory:
    """Inverse of :func:`serialize`; raises :class:`FormatError` per line."""
    oh = OutputHistory()
    h = oh.header
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*([\w-]+):\s*(.*)$", line)
            if not m:
                raise FormatError("bad header line", line_no, line)
            key, value = m.group(1), m.group(2).strip()
            try:
                if key == "name":
                    h.name = value
                elif key == "mode":
                    h.mode = value
                elif key == "lock-scope":
                    h.lock_scope = value
                elif key == "strictness":
                    h.strictness = value
                elif key == "default-level":
                    h.default_level = value
                elif key == "rows":
                    h.rows = int(value)
                elif key == "timeout":
                    h.timeout = float(value)
                elif key == "ru-writes-allowed":
                    h.ru_writes_allowed = _BOOL[value]
                elif key == "stuck":
                    h.stuck = _BOOL[value]
                elif key == "levels":
                    h.levels = _parse_assignments(value)
                elif key == "meta":
                    h.meta = dict(
                        part.split("=", 1) for part in value.split(" ") if part
                    )
                elif key == "final":
                    oh.finals = _parse_assignments(value)
                else:
                    raise ValueError(f"unknown header key {key!r}")
            except (ValueError, KeyError) as exc:
                raise FormatError(str(exc), line_no, line)
            continue
        oh.records.append(_parse_record_line(line, line_no))
    return oh


def _parse_assignments(value: str) -> dict:
    out = {}
    for part in value.split(" "):
        if not part:
            continue
        txn, _, status = part.partition("=")
        out[int(txn)] = status
    return out
