"""Monitor and per-transaction workers.

The monitor owns variable bindings, turns steps into newline-terminated text
frames, and sends them to one worker thread per transaction.  Workers parse
frames, call the engine (possibly blocking inside it), and respond with
``SUCCESS ...`` or ``FAILURE <code> ...`` frames.  The monitor never touches
table or lock state through anything but these channels; it may only ask the
engine's scheduler whether a transaction currently has a pending lock
request, which is what lets it declare a step BLOCKED deterministically.

Synchronous mode submits one step at a time.  A step that blocks is recorded
BLOCKED and its transaction's later steps are deferred; steps of other
transactions continue.  When a pending operation completes, a RESUMED (or
terminal) record is appended and the deferred steps run.  Asynchronous mode
submits steps in program order until it reaches a step of a transaction with
an outstanding operation, then waits for any worker to respond.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from . import outhist
from .dataset import build_canonical_table
from .engine import (
    DeadlockAbort,
    Engine,
    EngineConfig,
    EngineError,
    ReadOnlyViolation,
    TxnStatus,
)
from .notation import (
    HistoryProgram,
    IsolationLevel,
    OpKind,
    PredicateExpr,
    Step,
    parse_predicate,
    render_predicate,
    render_step,
)
from .outhist import (
    OutputHistory,
    OutputRecord,
    RunHeader,
    STATUS_BLOCKED,
    STATUS_DEADLOCK,
    STATUS_ERROR,
    STATUS_OK,
    STATUS_READONLY,
    STATUS_RESUMED,
    WriteImage,
    decode_image_side,
    decode_values,
    encode_image_side,
    encode_values,
)


class ProtocolError(Exception):
    """Malformed monitor/worker frame."""


class Mode(Enum):
    SYNC = "SYNC"
    ASYNC = "ASYNC"


@dataclass
class ExecutorConfig:
    mode: Mode = Mode.SYNC
    timeout: float = 2.0
    global_timeout: Optional[float] = None  # default: 4 * timeout
    # None: honor the program's default_level metadata, falling back to RC.
    default_level: Optional[IsolationLevel] = None
    rows: int = 200
    engine: EngineConfig = field(default_factory=EngineConfig)
    indexes: bool = True
    verbose: bool = False
    # In SYNC mode a request observed waiting in the lock table cannot
    # resolve before the monitor acts, so BLOCKED can be declared before the
    # timeout elapses without changing any outcome.
    fast_block_detect: bool = True

    def stuck_timeout(self) -> float:
        return self.global_timeout if self.global_timeout is not None else 4 * self.timeout


@dataclass
class BindingEnv:
    row_vars: Dict[str, int] = field(default_factory=dict)
    value_vars: Dict[str, int] = field(default_factory=dict)
    pred_vars: Dict[str, PredicateExpr] = field(default_factory=dict)
    pred_cursors: Dict[Tuple[int, str], int] = field(default_factory=dict)


@dataclass
class DispatchRecord:
    step_index: int
    txn: int
    submit_event: int
    completion_event: Optional[int] = None  # None while PENDING
    status: str = "PENDING"


# ------------------------------------------------------------ frame protocol


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ProtocolError(message)


def build_frame(*tokens) -> str:
    return " ".join(str(t) for t in tokens) + "\n"


def handle_frame(engine: Engine, txn: int, frame: str) -> str:
    """Execute one monitor request frame against the engine.

    This is the worker body: it may block inside the engine.  Returns the
    response frame; raises :class:`ProtocolError` for malformed requests and
    lets engine errors propagate to the caller.
    """
    _require(frame.endswith("\n"), "frame must be newline terminated")
    tokens = frame[:-1].split(" ")
    _require(bool(tokens) and bool(tokens[0]), "empty frame")
    op = tokens[0]
    args = tokens[1:]

    if op == "BEGIN":
        _require(len(args) == 1 and args[0] in IsolationLevel.__members__, "BEGIN <level>")
        engine.begin(txn, IsolationLevel[args[0]])
        return "SUCCESS\n"
    if op == "READ":
        _require(len(args) == 2, "READ <reckey> <column>")
        value = engine.read_item(txn, int(args[0]), args[1])
        return f"SUCCESS {value}\n"
    if op == "WRITE":
        _require(len(args) == 2, "WRITE <reckey> DEFAULT|<int>")
        updates = None if args[1] == "DEFAULT" else {"recval": int(args[1])}
        image = engine.write_item(txn, int(args[0]), updates)
        return f"SUCCESS BEFORE={encode_image_side(image.before)} AFTER={encode_image_side(image.after)}\n"
    if op == "RW":
        _require(len(args) == 1, "RW <reckey>")
        value, image = engine.rw_item(txn, int(args[0]))
        return (
            f"SUCCESS {value} BEFORE={encode_image_side(image.before)}"
            f" AFTER={encode_image_side(image.after)}\n"
        )
    if op == "INSERT":
        _require(len(args) == 3, "INSERT AUTO|<key> <colspec|-> <valspec|->")
        reckey = None if args[0] == "AUTO" else int(args[0])
        values = {}
        if args[1] != "-":
            cols = args[1].split(";")
            vals = args[2].split(";")
            _require(len(cols) == len(vals), "column/value lists differ")
            values = {c: int(v) for c, v in zip(cols, vals)}
        key, image = engine.insert_item(txn, reckey, values)
        return f"SUCCESS {key} BEFORE=ABSENT AFTER={encode_image_side(image.after)}\n"
    if op == "DELETE":
        _require(len(args) == 1, "DELETE <reckey>")
        image = engine.delete_item(txn, int(args[0]))
        return f"SUCCESS BEFORE={encode_image_side(image.before)} AFTER=ABSENT\n"
    if op == "PR":
        _require(len(args) == 4, "PR <pred_var> <columns> <limit|all> <predicate>")
        pred_var, columns_text, limit_text, pred_text = args
        predicate = parse_predicate(pred_text)
        aggregate = "count" if columns_text == "count(*)" else None
        columns = None if aggregate else tuple(columns_text.split(";"))
        limit = "all" if limit_text == "all" else int(limit_text)
        rows, closed, cursor_id = engine.predicate_read(
            txn, pred_var, predicate, columns, limit, aggregate
        )
        flat = [t[0] if len(t) == 1 else t for t in rows]
        closed_text = "yes" if closed else "no"
        return f"SUCCESS VALUES={encode_values(flat)} CURSOR={cursor_id} CLOSED={closed_text}\n"
    if op == "SU":
        _require(len(args) == 2, "SU <delta> <predicate>")
        count, images = engine.set_update(txn, parse_predicate(args[1]), int(args[0]))
        parts = [f"SUCCESS {count}"]
        for img in images:
            parts.append(f"BEFORE={encode_image_side(img.before)}")
            parts.append(f"AFTER={encode_image_side(img.after)}")
        return " ".join(parts) + "\n"
    if op == "SS":
        _require(len(args) == 2 and args[0] in ("sum", "count"), "SS sum|count <predicate>")
        value = engine.set_select(txn, parse_predicate(args[1]), args[0])
        return f"SUCCESS {value}\n"
    if op == "COMMIT":
        _require(not args, "COMMIT takes no arguments")
        engine.commit(txn)
        return "SUCCESS\n"
    if op == "ROLLBACK":
        _require(not args, "ROLLBACK takes no arguments")
        engine.rollback(txn)
        return "SUCCESS\n"
    if op == "FINALIZE":
        _require(not args, "FINALIZE takes no arguments")
        return "SUCCESS\n"
    raise ProtocolError(f"unknown request {op!r}")


class Worker:
    """One long-lived thread per transaction, driven by framed messages."""

    def __init__(self, txn: int, engine: Engine):
        self.txn = txn
        self.engine = engine
        self.requests: "queue.SimpleQueue[str]" = queue.SimpleQueue()
        self.responses: "queue.SimpleQueue[str]" = queue.SimpleQueue()
        self.thread = threading.Thread(target=self._run, daemon=True, name=f"txn-worker-{txn}")
        self.thread.start()

    def send(self, frame: str) -> None:
        self.requests.put(frame)

    def _run(self) -> None:
        while True:
            frame = self.requests.get()
            try:
                response = handle_frame(self.engine, self.txn, frame)
            except ProtocolError as exc:
                response = f"FAILURE ProtocolError {exc}\n"
            except EngineError as exc:
                detail = str(exc).replace("\n", " ")
                response = f"FAILURE {exc.code} {detail}\n"
            except Exception as exc:  # keep the channel alive no matter what
                detail = str(exc).replace("\n", " ")
                response = f"FAILURE InternalError {type(exc).__name__}: {detail}\n"
            self.responses.put(response)
            if frame.strip() == "FINALIZE":
                return


# ----------------------------------------------------------------- monitor


@dataclass
class _Pending:
    step_index: int
    step: Step
    op_text: str
    submit_seq: int
    dispatch: DispatchRecord
    blocked_seq: Optional[int] = None  # seq of the BLOCKED record, once emitted
    submitted_at: float = 0.0


class Monitor:
    def __init__(self, prog: HistoryProgram, config: Optional[ExecutorConfig] = None):
        self.prog = prog
        self.config = config or ExecutorConfig()
        self.table = build_canonical_table(self.config.rows)
        if not self.config.indexes:
            self.table.indexed_columns = set()
        self.engine = Engine(self.table, self.config.engine)
        self.env = BindingEnv()
        self.workers: Dict[int, Worker] = {}
        self.levels: Dict[int, IsolationLevel] = {}
        self.records: List[OutputRecord] = []
        self.dispatch: List[DispatchRecord] = []
        self.pending: Dict[int, _Pending] = {}
        self.deferred: Dict[int, List[Tuple[int, Step]]] = {}
        self.stuck = False
        self._submit_seq = 0
        self._record_seq = 0
        self._event_counter = 0

    # ------------------------------------------------------------- plumbing

    def _default_level(self) -> IsolationLevel:
        if self.config.default_level is not None:
            return self.config.default_level
        meta = self.prog.metadata.get("default_level")
        if meta and meta.upper() in IsolationLevel.__members__:
            return IsolationLevel[meta.upper()]
        return IsolationLevel.RC

    def _tick(self) -> int:
        self._event_counter += 1
        return self._event_counter

    def _emit(self, rec: OutputRecord) -> OutputRecord:
        self._record_seq += 1
        rec.seq = self._record_seq
        self.records.append(rec)
        if self.config.verbose:
            print(outhist._record_line(rec))
        return rec

    def _worker(self, txn: int) -> Worker:
        worker = self.workers.get(txn)
        if worker is None:
            worker = Worker(txn, self.engine)
            self.workers[txn] = worker
        return worker

    def _begin(self, txn: int, level: IsolationLevel) -> str:
        worker = self._worker(txn)
        worker.send(build_frame("BEGIN", level.name))
        response = worker.responses.get()
        if response.startswith("SUCCESS"):
            self.levels[txn] = level
        return response

    def _ensure_begun(self, txn: int) -> None:
        if txn not in self.levels:
            self._begin(txn, self._default_level())

    # ------------------------------------------------------------- bindings

    def _auto_bind_row(self, name: str) -> int:
        claimed = set(self.env.row_vars.values())
        for i in range(1, self.table.row_count + 1):
            key = 100 * i
            if key not in claimed:
                self.env.row_vars[name] = key
                return key
        raise RuntimeError("no canonical row left for auto binding")

    def _resolve_row(self, name: str) -> int:
        if name in self.env.row_vars:
            return self.env.row_vars[name]
        return self._auto_bind_row(name)

    def resolve_step(self, step: Step):
        """Turn a non-declarative step into a request frame.

        Returns (frame, error): ``error`` is an (code, message) pair when the
        step cannot be dispatched (unbound predicate, rebound row variable,
        unbound value variable).
        """
        k = step.kind
        if k is OpKind.C:
            return build_frame("COMMIT"), None
        if k is OpKind.A:
            return build_frame("ROLLBACK"), None
        if k is OpKind.R:
            return build_frame("READ", self._resolve_row(step.row_var), "recval"), None
        if k is OpKind.W:
            if step.value_var is not None:
                if step.value_var not in self.env.value_vars:
                    return None, ("UnboundValueVar", f"value variable {step.value_var} is unbound")
                value = self.env.value_vars[step.value_var]
            elif step.literal is not None:
                value = step.literal
            else:
                value = "DEFAULT"
            return build_frame("WRITE", self._resolve_row(step.row_var), value), None
        if k is OpKind.RW:
            return build_frame("RW", self._resolve_row(step.row_var)), None
        if k is OpKind.D:
            return build_frame("DELETE", self._resolve_row(step.row_var)), None
        if k is OpKind.I:
            if step.row_var in self.env.row_vars:
                return None, (
                    "RowVarRebound",
                    f"row variable {step.row_var} is already bound; inserts bind fresh rows",
                )
            if step.column_spec:
                cols = ";".join(step.column_spec)
                vals = ";".join(str(v) for v in step.value_spec)
            else:
                cols = vals = "-"
            return build_frame("INSERT", "AUTO", cols, vals), None
        if k in (OpKind.PR, OpKind.SU, OpKind.SS):
            predicate = self.env.pred_vars.get(step.pred_var)
            if predicate is None:
                return None, ("UnboundPredicate", f"predicate {step.pred_var} was never declared")
            compact = render_predicate(predicate, compact=True)
            if k is OpKind.PR:
                columns = "count(*)" if step.aggregate == "count" else ";".join(step.column_spec)
                return build_frame("PR", step.pred_var, columns, step.row_limit, compact), None
            if k is OpKind.SU:
                return build_frame("SU", step.literal, compact), None
            agg = "count" if step.aggregate == "count" else "sum"
            return build_frame("SS", agg, compact), None
        raise ValueError(f"cannot resolve step kind {k}")

    def _apply_result_bindings(self, step: Step, values, extras: dict) -> None:
        k = step.kind
        if k in (OpKind.R, OpKind.RW) and step.value_var and values:
            self.env.value_vars[step.value_var] = values[0]
        elif k is OpKind.I:
            new_key = extras.get("key")
            if step.row_var and new_key is not None:
                self.env.row_vars[step.row_var] = new_key
        elif k is OpKind.PR:
            if "cursor" in extras:
                binding = (step.txn, step.pred_var)
                if extras.get("closed"):
                    self.env.pred_cursors.pop(binding, None)
                else:
                    self.env.pred_cursors[binding] = extras["cursor"]
            if values and not step.aggregate:
                last = values[-1]
                reckey = last[0] if isinstance(last, tuple) else last
                if step.row_var and step.row_var not in self.env.row_vars:
                    self.env.row_vars[step.row_var] = reckey
                if step.value_var and isinstance(last, tuple) and len(last) > 1:
                    self.env.value_vars[step.value_var] = last[1]

    # ------------------------------------------------------------ responses

    @staticmethod
    def _parse_response(response: str):
        """Split a worker response into (ok, code, values, images, extras)."""
        if not response.endswith("\n"):
            raise ProtocolError("response must be newline terminated")
        tokens = response[:-1].split(" ")
        if tokens[0] == "FAILURE":
            code = tokens[1] if len(tokens) > 1 else "Unknown"
            return False, code, None, [], {}
        if tokens[0] != "SUCCESS":
            raise ProtocolError(f"bad response head {tokens[0]!r}")
        values = None
        images: List[WriteImage] = []
        extras: dict = {}
        pending_before: Optional[str] = None
        for token in tokens[1:]:
            key, sep, payload = token.partition("=")
            if not sep:
                if values is None:
                    values = []
                values.append(int(token))
                if "key" not in extras:
                    extras["key"] = int(token)
                continue
            if key == "VALUES":
                values = decode_values(payload)
            elif key == "BEFORE":
                pending_before = payload
            elif key == "AFTER":
                before = decode_image_side(pending_before) if pending_before is not None else None
                after = decode_image_side(payload)
                src = after if after is not None else before
                if src is not None:
                    images.append(WriteImage(0, src.reckey, before, after))
                pending_before = None
            elif key == "CURSOR":
                extras["cursor"] = int(payload)
            elif key == "CLOSED":
                extras["closed"] = payload == "yes"
            else:
                raise ProtocolError(f"unknown response field {key!r}")
        return True, None, values, images, extras

    def _status_for_failure(self, code: str) -> Tuple[str, Optional[str]]:
        if code == DeadlockAbort.code:
            return STATUS_DEADLOCK, None
        if code == ReadOnlyViolation.code:
            return STATUS_READONLY, None
        return STATUS_ERROR, code

    # ------------------------------------------------------------ execution

    def run(self) -> OutputHistory:
        steps = list(enumerate(self.prog.steps))
        if self.config.mode is Mode.SYNC:
            self._run_sync(steps)
        else:
            self._run_async(steps)
        return self._finish()

    # - sync -

    def _run_sync(self, steps) -> None:
        work = list(steps)
        while work or self.pending:
            self._drain_completions(work)
            if not work:
                if not self.pending:
                    break
                if not any(self.deferred.values()):
                    break  # unterminated history with hanging operations
                if not self._await_any_completion(self.config.stuck_timeout()):
                    self.stuck = True
                    break
                continue
            index, step = work.pop(0)
            txn = step.txn
            if txn and txn in self.pending:
                self.deferred.setdefault(txn, []).append((index, step))
                continue
            self._run_step_sync(index, step)

    def _run_step_sync(self, index: int, step: Step) -> None:
        if step.kind in (OpKind.PRED, OpKind.MAP):
            self._execute_declarative(index, step)
            return
        if step.kind is OpKind.IL:
            self._execute_il(index, step)
            return
        self._ensure_begun(step.txn)
        frame, error = self.resolve_step(step)
        self._submit_seq += 1
        submit_seq = self._submit_seq
        dispatch = DispatchRecord(index, step.txn, self._tick())
        self.dispatch.append(dispatch)
        op_text = render_step(step, self.env.row_vars, compact=True)
        if error is not None:
            code, message = error
            dispatch.completion_event = self._tick()
            dispatch.status = STATUS_ERROR
            self._emit(OutputRecord(0, submit_seq, step.txn, op_text, STATUS_ERROR, error_code=code))
            return
        worker = self._worker(step.txn)
        worker.send(frame)
        pend = _Pending(index, step, op_text, submit_seq, dispatch, submitted_at=time.monotonic())
        response = self._await_response(worker, step.txn)
        if response is None:
            dispatch.status = STATUS_BLOCKED
            blocked = self._emit(OutputRecord(0, submit_seq, step.txn, op_text, STATUS_BLOCKED))
            pend.blocked_seq = blocked.seq
            self.pending[step.txn] = pend
            return
        self._complete(pend, response)

    def _await_response(self, worker: Worker, txn: int) -> Optional[str]:
        """Wait for a response until timeout; None means declared BLOCKED."""
        deadline = time.monotonic() + self.config.timeout
        while True:
            try:
                return worker.responses.get(timeout=0.002)
            except queue.Empty:
                pass
            if (
                self.config.fast_block_detect
                and self.config.mode is Mode.SYNC
                and self.engine.request_state(txn) == "WAITING"
            ):
                return None
            if time.monotonic() >= deadline:
                return None

    def _drain_completions(self, work: list) -> None:
        """Collect completions of pending ops whose lock request was granted
        (or aborted); prepend their transactions' deferred steps.

        A granted multi-lock operation (set update, incremental scan) can
        block again on a different holder before responding; such operations
        simply stay pending rather than stalling the monitor.
        """
        progressed = True
        while progressed:
            progressed = False
            for txn in sorted(self.pending):
                if self.engine.request_state(txn) == "WAITING":
                    continue
                response = self._receive_unless_reblocked(txn)
                if response is None:
                    continue
                pend = self.pending.pop(txn)
                self._complete(pend, response, resumed=True)
                queued = self.deferred.pop(txn, [])
                work[:0] = queued
                progressed = True
                break

    def _receive_unless_reblocked(self, txn: int) -> Optional[str]:
        worker = self.workers[txn]
        while True:
            try:
                return worker.responses.get(timeout=0.002)
            except queue.Empty:
                if self.engine.request_state(txn) == "WAITING":
                    return None

    def _await_any_completion(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            for txn in sorted(self.pending):
                if self.engine.request_state(txn) != "WAITING":
                    return True
            time.sleep(0.002)
        return False

    def _complete(self, pend: _Pending, response: str, resumed: bool = False) -> None:
        ok, code, values, images, extras = self._parse_response(response)
        step = pend.step
        pend.dispatch.completion_event = self._tick()
        for img in images:
            img.op_seq = pend.submit_seq
        if ok:
            status = STATUS_RESUMED if resumed and pend.blocked_seq is not None else STATUS_OK
            self._apply_result_bindings(step, values or [], extras)
            op_text = render_step(step, self.env.row_vars, compact=True)
            rec = OutputRecord(
                0, pend.submit_seq, step.txn, op_text, status,
                resumed_of=pend.blocked_seq if status == STATUS_RESUMED else None,
                values=self._record_values(step, values),
                images=images,
            )
            pend.dispatch.status = status
            self._emit(rec)
            return
        status, error_code = self._status_for_failure(code)
        pend.dispatch.status = status
        self._emit(
            OutputRecord(
                0, pend.submit_seq, step.txn, pend.op_text, status, error_code=error_code,
            )
        )

    @staticmethod
    def _record_values(step: Step, values) -> Optional[list]:
        if step.kind in (OpKind.C, OpKind.A):
            return None
        if step.kind is OpKind.I:
            return None
        return values

    def _execute_declarative(self, index: int, step: Step) -> None:
        self._submit_seq += 1
        dispatch = DispatchRecord(index, 0, self._tick())
        self.dispatch.append(dispatch)
        status = STATUS_OK
        code = None
        if step.kind is OpKind.PRED:
            self.env.pred_vars[step.pred_var] = step.predicate
        else:  # MAP
            bound = self.env.row_vars.get(step.row_var)
            if bound is not None and bound != step.literal:
                status, code = STATUS_ERROR, "RowVarRebound"
            else:
                self.env.row_vars[step.row_var] = step.literal
        dispatch.completion_event = self._tick()
        dispatch.status = status
        self._emit(
            OutputRecord(
                0, self._submit_seq, 0,
                render_step(step, None, compact=True), status, error_code=code,
            )
        )

    def _execute_il(self, index: int, step: Step) -> None:
        self._submit_seq += 1
        dispatch = DispatchRecord(index, step.txn, self._tick())
        self.dispatch.append(dispatch)
        response = self._begin(step.txn, step.level)
        dispatch.completion_event = self._tick()
        op_text = render_step(step, None, compact=True)
        if response.startswith("SUCCESS"):
            dispatch.status = STATUS_OK
            self._emit(OutputRecord(0, self._submit_seq, step.txn, op_text, STATUS_OK))
        else:
            code = response.split(" ")[1] if " " in response else "Unknown"
            dispatch.status = STATUS_ERROR
            self._emit(
                OutputRecord(0, self._submit_seq, step.txn, op_text, STATUS_ERROR, error_code=code)
            )

    # - async -

    def _run_async(self, steps) -> None:
        i = 0
        stall_started: Optional[float] = None
        while True:
            submitted = False
            while i < len(steps):
                index, step = steps[i]
                if step.kind in (OpKind.PRED, OpKind.MAP):
                    self._execute_declarative(index, step)
                    i += 1
                    submitted = True
                    continue
                if step.kind is OpKind.IL:
                    if step.txn in self.pending:
                        break
                    self._execute_il(index, step)
                    i += 1
                    submitted = True
                    continue
                if step.txn in self.pending:
                    break  # one outstanding operation per transaction
                self._ensure_begun(step.txn)
                frame, error = self.resolve_step(step)
                self._submit_seq += 1
                dispatch = DispatchRecord(index, step.txn, self._tick())
                self.dispatch.append(dispatch)
                op_text = render_step(step, self.env.row_vars, compact=True)
                if error is not None:
                    code, message = error
                    dispatch.completion_event = self._tick()
                    dispatch.status = STATUS_ERROR
                    self._emit(
                        OutputRecord(0, self._submit_seq, step.txn, op_text, STATUS_ERROR, error_code=code)
                    )
                else:
                    self._worker(step.txn).send(frame)
                    self.pending[step.txn] = _Pending(
                        index, step, op_text, self._submit_seq, dispatch,
                        submitted_at=time.monotonic(),
                    )
                i += 1
                submitted = True
            if i >= len(steps) and not self.pending:
                return
            got = self._async_wait_any()
            if got:
                stall_started = None
                continue
            if submitted:
                stall_started = None
                continue
            if stall_started is None:
                stall_started = time.monotonic()
            elif time.monotonic() - stall_started >= self.config.stuck_timeout():
                self.stuck = i < len(steps)
                return

    def _async_wait_any(self) -> bool:
        """Wait briefly for any pending worker to respond; emit BLOCKED
        records for operations that exceeded the per-operation timeout."""
        end = time.monotonic() + 0.05
        while time.monotonic() < end:
            for txn in sorted(self.pending):
                pend = self.pending[txn]
                try:
                    response = self.workers[txn].responses.get_nowait()
                except queue.Empty:
                    if (
                        pend.blocked_seq is None
                        and time.monotonic() - pend.submitted_at >= self.config.timeout
                    ):
                        pend.dispatch.status = STATUS_BLOCKED
                        blocked = self._emit(
                            OutputRecord(0, pend.submit_seq, txn, pend.op_text, STATUS_BLOCKED)
                        )
                        pend.blocked_seq = blocked.seq
                    continue
                del self.pending[txn]
                self._complete(pend, response, resumed=pend.blocked_seq is not None)
                return True
            time.sleep(0.001)
        return False

    # - teardown -

    def _finish(self) -> OutputHistory:
        finals: Dict[int, str] = {}
        for txn in sorted(self.levels):
            state = self.engine.txns.get(txn)
            if txn in self.pending:
                finals[txn] = TxnStatus.BLOCKED.value
            elif state is not None:
                finals[txn] = state.status.value
        self.engine.shutdown()
        for worker in self.workers.values():
            worker.send(build_frame("FINALIZE"))
        header = RunHeader(
            name=self.prog.source_name,
            mode=self.config.mode.value,
            lock_scope=self.config.engine.lock_scope.value,
            strictness=self.config.engine.strictness.value,
            default_level=self._default_level().name,
            rows=self.config.rows,
            timeout=self.config.timeout,
            ru_writes_allowed=self.config.engine.ru_writes_allowed,
            stuck=self.stuck,
            levels={t: lvl.name for t, lvl in self.levels.items()},
            meta={k: v.replace(" ", "_") for k, v in self.prog.metadata.items()},
        )
        return OutputHistory(header=header, records=self.records, finals=finals)


def run_history(prog: HistoryProgram, config: Optional[ExecutorConfig] = None) -> OutputHistory:
    """Execute a parsed history and return its output history.

    A stuck run (every remaining step belongs to a blocked transaction and
    nothing completes within the global timeout) is reported through the
    header's ``stuck`` flag, not an exception.
    """
    return Monitor(prog, config).run()
