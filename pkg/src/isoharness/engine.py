"""Reference lock-based transaction engine.

Locking policy, which is the whole point of this module:

  * Item writes (W, RW, I, D, and each row of a set update) take LONG
    exclusive locks at every level above RU.
  * Item reads take SHORT shared locks at RC and LONG at RR/SR.
  * Predicate reads take a shared lock on the predicate (or on key ranges in
    incremental mode) that is SHORT at RC/RR and LONG at SR.
  * RU transactions take no locks at all and are read only; write attempts
    fail unless ``ru_writes_allowed`` is set (that flag exists to reproduce
    permissive behavior observed in real systems).

LONG locks are released only at commit/rollback (strict two-phase); SHORT
locks are released when the acquiring operation returns.  A shared predicate
or range lock conflicts with an exclusive item lock when the written row's
before- or after-image satisfies the predicate / falls in the range.  Lock
grants are FIFO per resource; a request never overtakes an earlier
conflicting waiter.

Engine calls may block the calling thread until the request is granted or
the transaction is chosen as a deadlock victim (youngest in the cycle, by
begin order).  The shared state is guarded by one mutex which is never held
while waiting.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from .dataset import CanonicalTable, Row, eval_predicate
from .notation import IsolationLevel, PredicateExpr, SCHEMA_COLUMNS, UnknownColumn


class EngineError(Exception):
    """Base engine failure; ``code`` is the stable wire/status name."""

    code = "EngineError"


class DuplicateTxn(EngineError):
    code = "DuplicateTxn"


class UnknownTxn(EngineError):
    code = "UnknownTxn"


class RowNotFound(EngineError):
    code = "RowNotFound"


class ReadOnlyViolation(EngineError):
    code = "ReadOnlyViolation"


class DuplicateKey(EngineError):
    code = "DuplicateKey"


class CursorLimitExceeded(EngineError):
    code = "CursorLimitExceeded"


class InvalidWrite(EngineError):
    code = "InvalidWrite"


class DeadlockAbort(EngineError):
    """Raised in the victim's thread after its transaction was rolled back."""

    code = "Deadlock"


class EngineShutdown(EngineError):
    """Pending request abandoned because the engine is shutting down."""

    code = "Abandoned"


class LockMode(Enum):
    S = "S"
    X = "X"


class LockDuration(Enum):
    SHORT = "SHORT"
    LONG = "LONG"


class LockScope(Enum):
    PREDICATE = "PREDICATE"
    INCREMENTAL_RANGE = "INCREMENTAL_RANGE"


class Strictness(Enum):
    PER_LEVEL = "PER_LEVEL"
    STRICT_ALL_LONG = "STRICT_ALL_LONG"


class TxnStatus(Enum):
    ACTIVE = "ACTIVE"
    BLOCKED = "BLOCKED"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


@dataclass(frozen=True)
class ItemResource:
    reckey: int


@dataclass(frozen=True)
class PredicateResource:
    predicate: PredicateExpr


@dataclass(frozen=True)
class RangeResource:
    """Key range (low, high]: low exclusive, high inclusive."""

    low: float
    high: float

    def contains(self, reckey: int) -> bool:
        return self.low < reckey <= self.high


@dataclass
class WriteImage:
    op_seq: int
    reckey: int
    before: Optional[Row]  # None means ABSENT (insert)
    after: Optional[Row]  # None means ABSENT (delete)

    def value_dicts(self) -> list:
        out = []
        if self.before is not None:
            out.append(self.before.values)
        if self.after is not None:
            out.append(self.after.values)
        return out


@dataclass
class LockGrant:
    txn: int
    resource: object
    mode: LockMode
    duration: LockDuration
    # Intended-write images, set while an exclusive item lock has been
    # granted but the write not yet applied; afterwards the undo log is
    # authoritative.
    intent: Optional[Callable[[], list]] = None


class _Outcome(Enum):
    GRANTED = "GRANTED"
    DEADLOCK = "DEADLOCK"
    ABANDONED = "ABANDONED"


@dataclass
class _LockRequest:
    txn: int
    resource: object
    mode: LockMode
    duration: LockDuration
    intent: Optional[Callable[[], list]] = None
    event: threading.Event = field(default_factory=threading.Event)
    outcome: Optional[_Outcome] = None
    grant: Optional[LockGrant] = None


@dataclass
class CursorState:
    cursor_id: int
    predicate: PredicateExpr
    columns: Optional[tuple]
    aggregate: Optional[str]
    position: int = 0  # last reckey returned
    frontier: float = 0.0  # highest key covered by range locks (incremental)
    open: bool = True
    exhausted: bool = False


MAX_CURSORS_PER_TXN = 8


@dataclass
class TxnState:
    txn: int
    level: IsolationLevel
    begin_seq: int
    status: TxnStatus = TxnStatus.ACTIVE
    cursors: Dict[str, CursorState] = field(default_factory=dict)
    undo: List[WriteImage] = field(default_factory=list)


@dataclass
class EngineConfig:
    lock_scope: LockScope = LockScope.PREDICATE
    strictness: Strictness = Strictness.PER_LEVEL
    ru_writes_allowed: bool = False
    victim_rule: str = "youngest"
    wait_policy: str = "fifo"

    def __post_init__(self):
        if self.victim_rule != "youngest":
            raise ValueError(f"unsupported victim rule {self.victim_rule!r}")
        if self.wait_policy != "fifo":
            raise ValueError(f"unsupported wait policy {self.wait_policy!r}")


@dataclass
class LockEvent:
    """Acquire/release trace entry, used by the two-phase-locking checks."""

    seq: int
    txn: int
    action: str  # ACQUIRE | RELEASE
    resource: object
    mode: LockMode
    duration: LockDuration
    reason: str = ""  # for RELEASE: OP_END | TERMINATION | SHUTDOWN


_INF = math.inf


class Engine:
    def __init__(self, table: CanonicalTable, config: Optional[EngineConfig] = None):
        self.table = table
        self.config = config or EngineConfig()
        self.txns: Dict[int, TxnState] = {}
        self.lock_events: List[LockEvent] = []
        self._mu = threading.Lock()
        self._grants: List[LockGrant] = []
        self._waiters: List[_LockRequest] = []
        self._begin_counter = 0
        self._op_counter = 0
        self._event_counter = 0
        self._shutdown = False

    # ------------------------------------------------------------------ txns

    def begin(self, txn: int, level: IsolationLevel) -> TxnState:
        with self._mu:
            if txn in self.txns:
                raise DuplicateTxn(f"transaction {txn} already began")
            self._begin_counter += 1
            state = TxnState(txn=txn, level=level, begin_seq=self._begin_counter)
            self.txns[txn] = state
            return state

    def commit(self, txn: int) -> None:
        with self._mu:
            st = self._require_active(txn)
            if st.status is not TxnStatus.ACTIVE:
                raise UnknownTxn(f"transaction {txn} has a pending operation")
            for img in st.undo:
                if img.after is None:  # delete becomes permanent
                    row = self.table.rows.get(img.reckey)
                    if row is not None and row.tombstone:
                        del self.table.rows[img.reckey]
            st.undo.clear()
            st.cursors.clear()
            st.status = TxnStatus.COMMITTED
            self._release_all(st, "TERMINATION")

    def rollback(self, txn: int) -> None:
        with self._mu:
            st = self._require_active(txn)
            if st.status is not TxnStatus.ACTIVE:
                raise UnknownTxn(f"transaction {txn} has a pending operation")
            self._rollback_locked(st)

    def _rollback_locked(self, st: TxnState) -> None:
        for img in reversed(st.undo):
            if img.before is None:
                self.table.rows.pop(img.reckey, None)
            else:
                self.table.rows[img.reckey] = Row(dict(img.before.values))
        st.undo.clear()
        st.cursors.clear()
        st.status = TxnStatus.ABORTED
        self._release_all(st, "TERMINATION")

    def _require_active(self, txn: int) -> TxnState:
        st = self.txns.get(txn)
        if st is None:
            raise UnknownTxn(f"transaction {txn} never began")
        if st.status not in (TxnStatus.ACTIVE, TxnStatus.BLOCKED):
            raise UnknownTxn(f"transaction {txn} is {st.status.value}")
        return st

    # ------------------------------------------------------------- durations

    def _dur(self, duration: LockDuration) -> LockDuration:
        if self.config.strictness is Strictness.STRICT_ALL_LONG:
            return LockDuration.LONG
        return duration

    def _item_read_duration(self, level: IsolationLevel) -> LockDuration:
        return self._dur(LockDuration.SHORT if level == IsolationLevel.RC else LockDuration.LONG)

    def _pred_read_duration(self, level: IsolationLevel) -> LockDuration:
        return self._dur(
            LockDuration.SHORT if level in (IsolationLevel.RC, IsolationLevel.RR) else LockDuration.LONG
        )

    # ----------------------------------------------------------------- locks

    def _images_of(self, entry) -> list:
        """Value dicts an exclusive item lock stands for (realized + intended)."""
        out = []
        holder = self.txns.get(entry.txn)
        if holder is not None:
            key = entry.resource.reckey
            for img in holder.undo:
                if img.reckey == key:
                    out.extend(img.value_dicts())
        if entry.intent is not None:
            out.extend(entry.intent())
        return out

    def _conflict(self, a, b) -> bool:
        """True when two lock entries (grants or requests) are incompatible."""
        if a.txn == b.txn:
            return False
        if a.mode is LockMode.S and b.mode is LockMode.S:
            return False
        x, other = (a, b) if a.mode is LockMode.X else (b, a)
        key = x.resource.reckey  # X locks are always item locks
        res = other.resource
        if isinstance(res, ItemResource):
            return res.reckey == key
        if isinstance(res, RangeResource):
            return res.contains(key)
        images = self._images_of(x)
        return any(res.predicate.holds(values) for values in images)

    def _held(self, txn: int, resource, mode: LockMode) -> Optional[LockGrant]:
        for g in self._grants:
            if g.txn == txn and g.resource == resource and g.mode is mode:
                return g
        return None

    def _log(self, txn, action, resource, mode, duration, reason=""):
        self._event_counter += 1
        self.lock_events.append(
            LockEvent(self._event_counter, txn, action, resource, mode, duration, reason)
        )

    def _grant_now(self, req: _LockRequest) -> LockGrant:
        grant = LockGrant(req.txn, req.resource, req.mode, req.duration, req.intent)
        self._grants.append(grant)
        self._log(req.txn, "ACQUIRE", req.resource, req.mode, req.duration)
        req.grant = grant
        req.outcome = _Outcome.GRANTED
        return grant

    def _blockers(self, req: _LockRequest, queue_prefix) -> set:
        out = set()
        for g in self._grants:
            if self._conflict(req, g):
                out.add(g.txn)
        for other in queue_prefix:
            if other.outcome is None and self._conflict(req, other):
                out.add(other.txn)
        return out

    def _grant_pass(self) -> None:
        """FIFO scan of the wait queue, granting whatever no longer conflicts."""
        remaining = []
        woke = []
        for req in self._waiters:
            if req.outcome is not None:
                continue
            if self._blockers(req, remaining):
                remaining.append(req)
                continue
            self._grant_now(req)
            st = self.txns.get(req.txn)
            if st is not None and st.status is TxnStatus.BLOCKED:
                st.status = TxnStatus.ACTIVE
            woke.append(req)
        self._waiters = remaining
        for req in woke:
            req.event.set()

    def _release_all(self, st: TxnState, reason: str) -> None:
        kept = []
        for g in self._grants:
            if g.txn == st.txn:
                self._log(g.txn, "RELEASE", g.resource, g.mode, g.duration, reason)
            else:
                kept.append(g)
        self._grants = kept
        self._grant_pass()

    def _release_grants(self, grants, reason: str) -> None:
        with self._mu:
            for g in grants:
                if g in self._grants:
                    self._grants.remove(g)
                    self._log(g.txn, "RELEASE", g.resource, g.mode, g.duration, reason)
            self._grant_pass()

    def _waits_for_edges(self) -> dict:
        edges: Dict[int, set] = {}
        for i, req in enumerate(self._waiters):
            if req.outcome is not None:
                continue
            blockers = self._blockers(req, self._waiters[:i])
            if blockers:
                edges[req.txn] = blockers
        return edges

    def _cycle_through(self, start: int, edges: dict) -> Optional[tuple]:
        stack = [(start, (start,))]
        visited = set()
        while stack:
            node, path = stack.pop()
            for nxt in edges.get(node, ()):
                if nxt == start:
                    return path
                if nxt not in visited:
                    visited.add(nxt)
                    stack.append((nxt, path + (nxt,)))
        return None

    def _resolve_deadlocks(self, requester: _LockRequest) -> None:
        while True:
            edges = self._waits_for_edges()
            cycle = self._cycle_through(requester.txn, edges)
            if cycle is None:
                return
            victim_txn = max(cycle, key=lambda t: self.txns[t].begin_seq)
            for req in self._waiters:
                if req.txn == victim_txn and req.outcome is None:
                    req.outcome = _Outcome.DEADLOCK
                    req.event.set()
            self._waiters = [r for r in self._waiters if r.txn != victim_txn]
            if victim_txn == requester.txn:
                return

    def _acquire(self, st: TxnState, resource, mode: LockMode, duration: LockDuration,
                 intent: Optional[Callable[[], list]] = None) -> Tuple[LockGrant, bool]:
        """Acquire a lock, blocking as needed.

        Returns (grant, fresh): ``fresh`` is False when an identical grant was
        already held (nothing to release at op end).  Raises
        :class:`DeadlockAbort` after rolling the transaction back if it was
        picked as a deadlock victim while waiting.
        """
        with self._mu:
            if self._shutdown:
                raise EngineShutdown("engine is shut down")
            held = self._held(st.txn, resource, mode)
            if held is not None:
                if intent is not None:
                    held.intent = intent
                return held, False
            req = _LockRequest(st.txn, resource, mode, duration, intent)
            if not self._blockers(req, self._waiters):
                return self._grant_now(req), True
            self._waiters.append(req)
            st.status = TxnStatus.BLOCKED
            self._resolve_deadlocks(req)
            if req.outcome is _Outcome.DEADLOCK:
                self._rollback_locked(st)
                raise DeadlockAbort(f"transaction {st.txn} chosen as deadlock victim")
        req.event.wait()
        with self._mu:
            if req.outcome is _Outcome.GRANTED:
                st.status = TxnStatus.ACTIVE
                return req.grant, True
            if req.outcome is _Outcome.DEADLOCK:
                self._rollback_locked(st)
                raise DeadlockAbort(f"transaction {st.txn} chosen as deadlock victim")
            raise EngineShutdown("pending lock request abandoned")

    # ------------------------------------------------------------ inspection

    def request_state(self, txn: int) -> Optional[str]:
        """'WAITING' while the transaction has a pending lock request."""
        with self._mu:
            for req in self._waiters:
                if req.txn == txn and req.outcome is None:
                    return "WAITING"
            return None

    def waiting_txns(self) -> set:
        with self._mu:
            return {r.txn for r in self._waiters if r.outcome is None}

    def held_locks(self, txn: int) -> list:
        with self._mu:
            return [g for g in self._grants if g.txn == txn]

    def shutdown(self) -> None:
        with self._mu:
            self._shutdown = True
            for req in self._waiters:
                if req.outcome is None:
                    req.outcome = _Outcome.ABANDONED
                    req.event.set()
            self._waiters = []

    def detect_deadlock(self) -> Optional[int]:
        """Victim the youngest member of any wait cycle, or return None.

        Normal operation resolves deadlocks at request time; this entry point
        exists for direct inspection and for safety sweeps.
        """
        with self._mu:
            edges = self._waits_for_edges()
            for start in list(edges):
                cycle = self._cycle_through(start, edges)
                if cycle is None:
                    continue
                victim_txn = max(cycle, key=lambda t: self.txns[t].begin_seq)
                for req in self._waiters:
                    if req.txn == victim_txn and req.outcome is None:
                        req.outcome = _Outcome.DEADLOCK
                        req.event.set()
                self._waiters = [r for r in self._waiters if r.txn != victim_txn]
                return victim_txn
            return None

    # ------------------------------------------------------------- item ops

    def _next_op_seq(self) -> int:
        self._op_counter += 1
        return self._op_counter

    def _check_writable(self, st: TxnState) -> None:
        if st.level == IsolationLevel.RU and not self.config.ru_writes_allowed:
            raise ReadOnlyViolation(f"transaction {st.txn} is READ UNCOMMITTED (read only)")

    def _visible_row(self, st: TxnState, reckey: int) -> Row:
        """Row object for pre-checks; own tombstones read as missing."""
        row = self.table.rows.get(reckey)
        if row is None:
            raise RowNotFound(f"no row with reckey {reckey}")
        if row.tombstone and self._tombstoned_by(st, reckey):
            raise RowNotFound(f"row {reckey} deleted by this transaction")
        return row

    def _tombstoned_by(self, st: TxnState, reckey: int) -> bool:
        for img in reversed(st.undo):
            if img.reckey == reckey:
                return img.after is None
        return False

    def read_item(self, txn: int, reckey: int, column: str = "recval") -> int:
        if column not in SCHEMA_COLUMNS:
            raise UnknownColumn(column)
        with self._mu:
            st = self._require_active(txn)
            row = self._visible_row(st, reckey)
            if st.level == IsolationLevel.RU:
                if row.tombstone:
                    raise RowNotFound(f"row {reckey} is deleted (uncommitted)")
                return row.values[column]
            duration = self._item_read_duration(st.level)
        grant, fresh = self._acquire(st, ItemResource(reckey), LockMode.S, duration)
        try:
            with self._mu:
                row = self.table.rows.get(reckey)
                if row is None or row.tombstone:
                    raise RowNotFound(f"no row with reckey {reckey}")
                return row.values[column]
        finally:
            if fresh and grant.duration is LockDuration.SHORT:
                self._release_grants([grant], "OP_END")

    def _write_intent(self, reckey: int, updates: Optional[dict], delta: int = 1):
        def images() -> list:
            row = self.table.rows.get(reckey)
            if row is None:
                return []
            after = dict(row.values)
            if updates is None:
                after["recval"] += delta
            else:
                after.update(updates)
            return [row.values, after]

        return images

    def write_item(self, txn: int, reckey: int, column_values: Optional[dict] = None) -> WriteImage:
        """Update a row; ``column_values`` None means the default recval += 1."""
        if column_values:
            for col in column_values:
                if col not in SCHEMA_COLUMNS:
                    raise UnknownColumn(col)
            if "reckey" in column_values:
                raise InvalidWrite("primary key cannot be updated")
        with self._mu:
            st = self._require_active(txn)
            self._check_writable(st)
            self._visible_row(st, reckey)
        grant, _ = self._acquire(
            st, ItemResource(reckey), LockMode.X, LockDuration.LONG,
            intent=self._write_intent(reckey, column_values),
        )
        with self._mu:
            row = self.table.rows.get(reckey)
            if row is None or row.tombstone:
                raise RowNotFound(f"no row with reckey {reckey}")
            before = row.copy()
            if column_values is None:
                row.values["recval"] += 1
            else:
                row.values.update(column_values)
            image = WriteImage(self._next_op_seq(), reckey, before, row.copy())
            st.undo.append(image)
            grant.intent = None
            return image

    def rw_item(self, txn: int, reckey: int) -> Tuple[int, WriteImage]:
        """Indivisible read-then-increment of recval; returns the value read."""
        with self._mu:
            st = self._require_active(txn)
            self._check_writable(st)
            self._visible_row(st, reckey)
        grant, _ = self._acquire(
            st, ItemResource(reckey), LockMode.X, LockDuration.LONG,
            intent=self._write_intent(reckey, None),
        )
        with self._mu:
            row = self.table.rows.get(reckey)
            if row is None or row.tombstone:
                raise RowNotFound(f"no row with reckey {reckey}")
            value = row.values["recval"]
            before = row.copy()
            row.values["recval"] = value + 1
            image = WriteImage(self._next_op_seq(), reckey, before, row.copy())
            st.undo.append(image)
            grant.intent = None
            return value, image

    def _default_insert_values(self, reckey: int) -> dict:
        values = {"reckey": reckey, "recval": reckey * 100}
        for col in SCHEMA_COLUMNS[2:]:
            values[col] = 0
        return values

    def _allocate_reckey(self) -> int:
        j = 1
        while True:
            key = 100 * j + 50
            if key not in self.table.rows:
                return key
            j += 1

    def insert_item(self, txn: int, reckey: Optional[int] = None,
                    column_values: Optional[dict] = None) -> Tuple[int, WriteImage]:
        """Insert a row; reckey None allocates the lowest free 100j+50 key.

        Unspecified columns default to recval = reckey*100 and 0 elsewhere.
        """
        column_values = dict(column_values or {})
        for col in column_values:
            if col not in SCHEMA_COLUMNS:
                raise UnknownColumn(col)
        explicit_key = reckey if reckey is not None else column_values.get("reckey")
        with self._mu:
            st = self._require_active(txn)
            self._check_writable(st)
            if explicit_key is None:
                key = self._allocate_reckey()
            else:
                key = int(explicit_key)
                if key < 1:
                    raise InvalidWrite("reckey must be positive")
            column_values["reckey"] = key
            values = self._default_insert_values(key)
            values.update(column_values)
            existing = self.table.rows.get(key)
            reserve_now = existing is None
            if reserve_now:
                # Reserve the key as an invisible row so concurrent inserts
                # allocate elsewhere; visible once the lock is held.
                row = Row(values, tombstone=True)
                self.table.rows[key] = row
                image = WriteImage(self._next_op_seq(), key, None, Row(dict(values)))
                st.undo.append(image)
        grant, _ = self._acquire(
            st, ItemResource(key), LockMode.X, LockDuration.LONG,
            intent=(lambda: [values]) if not reserve_now else None,
        )
        with self._mu:
            if reserve_now:
                self.table.rows[key].tombstone = False
                grant.intent = None
                return key, image
            existing = self.table.rows.get(key)
            if existing is not None and not existing.tombstone:
                grant.intent = None
                raise DuplicateKey(f"reckey {key} already present")
            row = Row(dict(values))
            self.table.rows[key] = row
            image = WriteImage(self._next_op_seq(), key, None, row.copy())
            st.undo.append(image)
            grant.intent = None
            return key, image

    def delete_item(self, txn: int, reckey: int) -> WriteImage:
        with self._mu:
            st = self._require_active(txn)
            self._check_writable(st)
            self._visible_row(st, reckey)

        def intent() -> list:
            row = self.table.rows.get(reckey)
            return [row.values] if row is not None else []

        grant, _ = self._acquire(st, ItemResource(reckey), LockMode.X, LockDuration.LONG, intent=intent)
        with self._mu:
            row = self.table.rows.get(reckey)
            if row is None or row.tombstone:
                raise RowNotFound(f"no row with reckey {reckey}")
            before = row.copy()
            row.tombstone = True
            image = WriteImage(self._next_op_seq(), reckey, before, None)
            st.undo.append(image)
            grant.intent = None
            return image

    # -------------------------------------------------------- predicate ops

    def _open_cursor(self, st: TxnState, pred_var: str, predicate: PredicateExpr,
                     columns: Optional[tuple], aggregate: Optional[str]) -> CursorState:
        cursor = st.cursors.get(pred_var)
        if cursor is not None and cursor.open:
            return cursor
        if len(st.cursors) >= MAX_CURSORS_PER_TXN:
            raise CursorLimitExceeded(
                f"transaction {st.txn} already has {MAX_CURSORS_PER_TXN} open cursors"
            )
        used = {c.cursor_id for c in st.cursors.values()}
        cursor_id = min(i for i in range(1, MAX_CURSORS_PER_TXN + 1) if i not in used)
        cursor = CursorState(cursor_id, predicate, columns, aggregate)
        st.cursors[pred_var] = cursor
        return cursor

    def _next_match(self, st: TxnState, predicate: PredicateExpr, after: int) -> Optional[int]:
        for key in self.table.keys_ascending():
            if key <= after:
                continue
            row = self.table.rows[key]
            if row.tombstone:
                continue
            if eval_predicate(row, predicate):
                return key
        return None

    def _scan_lock_plan(self, st: TxnState, cursor: CursorState, to_key: float):
        """Next range resource needed to cover keys up to ``to_key``, or None."""
        if st.level == IsolationLevel.RU:
            return None
        if self.config.lock_scope is not LockScope.INCREMENTAL_RANGE:
            return None
        if "reckey" not in self.table.indexed_columns:
            # no usable index: the first fetch scans (and locks) everything
            to_key = _INF
        if cursor.frontier >= to_key:
            return None
        return RangeResource(cursor.frontier, to_key)

    def predicate_read(self, txn: int, pred_var: str, predicate: PredicateExpr,
                       columns: Optional[tuple] = ("recval",), row_limit=1,
                       aggregate: Optional[str] = None):
        """Open-or-continue a cursor over the predicate and fetch rows.

        Returns (rows, closed, cursor_id): rows are (reckey, col...) tuples,
        or a single (count,) tuple for count(*).  row_limit "all" drains,
        closes, and frees the cursor; a numbered limit leaves the cursor
        allocated even when exhausted.
        """
        drain = row_limit == "all"
        limit = None if drain else int(row_limit)
        rows: list = []
        with self._mu:
            st = self._require_active(txn)
            cursor = self._open_cursor(st, pred_var, predicate, columns, aggregate)
            cursor_id = cursor.cursor_id
        short_grants = []
        try:
            # Predicate-scope locking: one shared lock on the predicate itself.
            if st.level != IsolationLevel.RU and self.config.lock_scope is LockScope.PREDICATE:
                grant, fresh = self._acquire(
                    st, PredicateResource(predicate), LockMode.S, self._pred_read_duration(st.level)
                )
                if fresh and grant.duration is LockDuration.SHORT:
                    short_grants.append(grant)
            if aggregate:
                plan_key = _INF
                while True:
                    with self._mu:
                        need = self._scan_lock_plan(st, cursor, plan_key)
                        if need is None:
                            if not cursor.exhausted:
                                count = sum(
                                    1 for _ in self._iter_matches(st, predicate)
                                )
                                rows = [(count,)]
                                cursor.exhausted = True
                            cursor.frontier = max(cursor.frontier, plan_key)
                            break
                    grant, fresh = self._acquire(
                        st, need, LockMode.S, self._pred_read_duration(st.level)
                    )
                    if fresh and grant.duration is LockDuration.SHORT:
                        short_grants.append(grant)
                    with self._mu:
                        cursor.frontier = max(cursor.frontier, need.high)
            else:
                while True:
                    with self._mu:
                        if limit is not None and len(rows) >= limit:
                            break
                        key = self._next_match(st, predicate, cursor.position)
                        if key is None:
                            cursor.exhausted = True
                            tail = self._scan_lock_plan(st, cursor, _INF) if drain else None
                            if tail is None:
                                break
                        else:
                            need = self._scan_lock_plan(st, cursor, key)
                            if need is None:
                                row = self.table.rows[key]
                                out = (key,) if columns == ("reckey",) else (
                                    (key,) + tuple(row.values[c] for c in columns)
                                )
                                rows.append(out)
                                cursor.position = key
                                continue
                            tail = need
                    grant, fresh = self._acquire(
                        st, tail, LockMode.S, self._pred_read_duration(st.level)
                    )
                    if fresh and grant.duration is LockDuration.SHORT:
                        short_grants.append(grant)
                    with self._mu:
                        cursor.frontier = max(cursor.frontier, tail.high)
            closed = False
            with self._mu:
                if drain:
                    cursor.open = False
                    st.cursors.pop(pred_var, None)
                    closed = True
            return rows, closed, cursor_id
        finally:
            if short_grants:
                self._release_grants(short_grants, "OP_END")

    def _iter_matches(self, st: TxnState, predicate: PredicateExpr):
        for key in self.table.keys_ascending():
            row = self.table.rows[key]
            if row.tombstone:
                continue
            if eval_predicate(row, predicate):
                yield row

    def set_update(self, txn: int, predicate: PredicateExpr, delta: int = 1):
        """recval += delta on every matching row; LONG X lock per row.

        Rows are visited in ascending reckey order, blocking at the first
        conflict; matching is evaluated on current values at visit time.
        """
        with self._mu:
            st = self._require_active(txn)
            self._check_writable(st)
        images: List[WriteImage] = []
        position = 0
        while True:
            with self._mu:
                key = self._next_match(st, predicate, position)
                if key is None:
                    break
            grant, _ = self._acquire(
                st, ItemResource(key), LockMode.X, LockDuration.LONG,
                intent=self._write_intent(key, None, delta),
            )
            with self._mu:
                position = key
                row = self.table.rows.get(key)
                if row is None or row.tombstone or not eval_predicate(row, predicate):
                    grant.intent = None
                    continue
                before = row.copy()
                row.values["recval"] += delta
                image = WriteImage(self._next_op_seq(), key, before, row.copy())
                st.undo.append(image)
                images.append(image)
                grant.intent = None
        return len(images), images

    def set_select(self, txn: int, predicate: PredicateExpr, aggregate: str = "sum") -> int:
        """sum(recval) or count(*) over the predicate, locking like a full
        predicate read at the transaction's level (no variable binding)."""
        with self._mu:
            st = self._require_active(txn)
        short_grants = []
        try:
            if st.level != IsolationLevel.RU:
                if self.config.lock_scope is LockScope.PREDICATE:
                    resource = PredicateResource(predicate)
                else:
                    resource = RangeResource(0.0, _INF)
                grant, fresh = self._acquire(
                    st, resource, LockMode.S, self._pred_read_duration(st.level)
                )
                if fresh and grant.duration is LockDuration.SHORT:
                    short_grants.append(grant)
            with self._mu:
                if aggregate == "count":
                    return sum(1 for _ in self._iter_matches(st, predicate))
                return sum(row.values["recval"] for row in self._iter_matches(st, predicate))
        finally:
            if short_grants:
                self._release_grants(short_grants, "OP_END")
