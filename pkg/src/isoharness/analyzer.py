"""Analysis of output histories for isolation violations and over-blocking.

Conflict classes: w_w, w_r, r_w (item/item), w_pr and pr_w (item write vs
predicate read).  A "write" is any of W, RW, I, D, or a set-update row; a
predicate read is PR or a set select.  A predicate pairs with a write when
the write's before- or after-image satisfies it.

A concurrent pair is one whose second operation completed before the first
operation's transaction terminated (completion order of the records).  With
both levels at RC or above, the only concurrent pairs permitted are r_w with
the reader at RC, and pr_w with the predicate reader at RC or RR; everything
else is a violation when it executes concurrently.  A blocked second
operation in a permitted pair that never got through before the first
transaction terminated is the over-restrictive case.  RU transactions are
read only: their reads pair with nothing, and any successful RU write is
itself a finding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .notation import (
    HistoryProgram,
    IsolationLevel,
    OpKind,
    PredicateExpr,
    Step,
    WRITE_KINDS,
    parse_record_op,
)
from .outhist import (
    OutputHistory,
    OutputRecord,
    STATUS_BLOCKED,
    STATUS_DEADLOCK,
)


HISTORY_CLASSES = ("w_w", "w_r", "r_w", "w_pr", "pr_w")


class AnalyzerError(Exception):
    pass


class UnknownLevel(AnalyzerError):
    """A transaction in a pair has no isolation level in the header."""


class UnclassifiableHistory(AnalyzerError):
    """History carries no intended-class metadata."""


class MissingImages(AnalyzerError):
    """Predicate membership undecidable: the write never produced images."""


class Verdict(Enum):
    CONFORMS = "CONFORMS"
    VIOLATION = "VIOLATION"
    OVER_RESTRICTIVE = "OVER_RESTRICTIVE"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class OpView:
    """One executed operation, reassembled from its record group."""

    submit_seq: int
    txn: int
    step: Step
    reckey: Optional[int]  # resolved item key, if any
    blocked: Optional[OutputRecord]
    completion: Optional[OutputRecord]

    @property
    def succeeded(self) -> bool:
        return self.completion is not None and self.completion.succeeded()

    @property
    def completion_seq(self) -> Optional[int]:
        return self.completion.seq if self.completion else None

    def write_keys(self) -> List[int]:
        if self.step.kind not in WRITE_KINDS:
            return []
        if self.step.kind is OpKind.SU:
            if self.completion is None:
                return []
            return [img.reckey for img in self.completion.images]
        if self.completion is not None and self.completion.images:
            return [img.reckey for img in self.completion.images]
        return [self.reckey] if self.reckey is not None else []

    def write_value_dicts(self) -> List[dict]:
        if self.completion is None:
            raise MissingImages(f"op {self.submit_seq} has no completion images")
        out = []
        for img in self.completion.images:
            out.extend(img.value_dicts())
        if not out:
            raise MissingImages(f"op {self.submit_seq} carries no images")
        return out


@dataclass
class ConflictPair:
    cls: str
    first: OpView
    second: OpView
    resource: str
    concurrent: bool
    second_blocked: bool
    first_end_seq: Optional[int]
    membership_known: bool = True

    def describe(self) -> str:
        state = "executed" if self.concurrent else ("blocked" if self.second_blocked else "after-commit")
        return (
            f"{self.cls} T{self.first.txn}:{self.first.completion.op_text if self.first.completion else '?'}"
            f" / T{self.second.txn}:"
            f"{(self.second.completion or self.second.blocked).op_text}"
            f" on {self.resource} [{state}]"
        )


@dataclass
class Judgment:
    violations: List[ConflictPair] = field(default_factory=list)
    over_restrictive: List[ConflictPair] = field(default_factory=list)
    ru_writes: List[OutputRecord] = field(default_factory=list)
    inconclusive: List[str] = field(default_factory=list)

    @property
    def verdict(self) -> Verdict:
        if self.violations or self.ru_writes:
            return Verdict.VIOLATION
        if self.over_restrictive:
            return Verdict.OVER_RESTRICTIVE
        if self.inconclusive:
            return Verdict.INCONCLUSIVE
        return Verdict.CONFORMS


def _collect_ops(oh: OutputHistory) -> Tuple[List[OpView], Dict[str, PredicateExpr], Dict[int, int]]:
    """Op views, predicate declarations, and per-txn termination seqs."""
    predicates: Dict[str, PredicateExpr] = {}
    ops: List[OpView] = []
    terminations: Dict[int, int] = {}
    for submit_seq, group in sorted(oh.by_submit().items()):
        blocked = next((r for r in group if r.status == STATUS_BLOCKED), None)
        completion = next((r for r in group if r.completes()), None)
        source = completion or blocked
        if source is None:
            continue
        step, bindings = parse_record_op(source.op_text)
        if step.kind is OpKind.PRED:
            predicates[step.pred_var] = step.predicate
            continue
        if step.kind in (OpKind.MAP, OpKind.IL):
            continue
        if step.kind in (OpKind.C, OpKind.A):
            if completion is not None and completion.succeeded():
                terminations.setdefault(step.txn, completion.seq)
            continue
        if completion is not None and completion.status == STATUS_DEADLOCK:
            terminations.setdefault(step.txn, completion.seq)
        reckey = bindings.get(step.row_var) if step.row_var else None
        ops.append(OpView(submit_seq, step.txn, step, reckey, blocked, completion))
    return ops, predicates, terminations


def _is_item_read(op: OpView) -> bool:
    return op.step.kind is OpKind.R


def _is_write(op: OpView) -> bool:
    return op.step.kind in WRITE_KINDS


def _is_pred_read(op: OpView) -> bool:
    return op.step.kind in (OpKind.PR, OpKind.SS)


def _order_key(op: OpView) -> int:
    """Position of an op for pair ordering: completion, or the block point."""
    if op.completion is not None:
        return op.completion.seq
    return op.blocked.seq


def detect_pairs(oh: OutputHistory) -> List[ConflictPair]:
    """Every ordered cross-transaction pair on a common resource with at
    least one write.  The first op must have executed; the second op either
    executed later or blocked.  Predicate membership that cannot be decided
    (a blocked write with no images) yields a pair with
    ``membership_known=False`` for the judge to report as inconclusive.
    """
    ops, predicates, terminations = _collect_ops(oh)
    pairs: List[ConflictPair] = []
    for first in ops:
        if not first.succeeded:
            continue
        first_end = terminations.get(first.txn)
        for second in ops:
            if second.txn == first.txn:
                continue
            if second.succeeded:
                if second.completion.seq <= first.completion.seq:
                    continue
            elif second.blocked is not None:
                if second.blocked.seq <= first.completion.seq:
                    continue
            else:
                continue
            pair = _classify_pair(first, second, predicates, first_end)
            if pair is not None:
                pairs.append(pair)
    return pairs


def _classify_pair(first: OpView, second: OpView, predicates: Dict[str, PredicateExpr],
                   first_end: Optional[int]) -> Optional[ConflictPair]:
    cls = None
    resource = None
    membership_known = True

    def predicate_of(op: OpView) -> Optional[PredicateExpr]:
        return predicates.get(op.step.pred_var)

    if _is_write(first) and _is_write(second):
        shared = set(first.write_keys()) & set(second.write_keys())
        if shared:
            cls, resource = "w_w", f"reckey={min(shared)}"
    elif _is_write(first) and _is_item_read(second):
        if second.reckey is not None and second.reckey in first.write_keys():
            cls, resource = "w_r", f"reckey={second.reckey}"
    elif _is_item_read(first) and _is_write(second):
        if first.reckey is not None and first.reckey in second.write_keys():
            cls, resource = "r_w", f"reckey={first.reckey}"
    elif _is_write(first) and _is_pred_read(second):
        pred = predicate_of(second)
        if pred is not None:
            try:
                if any(pred.holds(v) for v in first.write_value_dicts()):
                    cls, resource = "w_pr", f"pred {second.step.pred_var}"
            except MissingImages:
                cls, resource = "w_pr", f"pred {second.step.pred_var}"
                membership_known = False
    elif _is_pred_read(first) and _is_write(second):
        pred = predicate_of(first)
        if pred is not None:
            try:
                if any(pred.holds(v) for v in second.write_value_dicts()):
                    cls, resource = "pr_w", f"pred {first.step.pred_var}"
            except MissingImages:
                cls, resource = "pr_w", f"pred {first.step.pred_var}"
                membership_known = False
    if cls is None:
        return None
    concurrent = bool(
        second.succeeded
        and (first_end is None or second.completion.seq < first_end)
    )
    return ConflictPair(
        cls=cls,
        first=first,
        second=second,
        resource=resource,
        concurrent=concurrent,
        second_blocked=second.blocked is not None,
        first_end_seq=first_end,
        membership_known=membership_known,
    )


def _permitted(cls: str, l1: IsolationLevel) -> bool:
    if cls == "r_w":
        return l1 == IsolationLevel.RC
    if cls == "pr_w":
        return l1 in (IsolationLevel.RC, IsolationLevel.RR)
    return False


def judge(pairs: List[ConflictPair], levels: Dict[int, IsolationLevel],
          ru_writes: Optional[List[OutputRecord]] = None) -> Judgment:
    """Apply the permitted-combination rules to detected pairs.

    ``levels`` maps every involved transaction to its isolation level;
    ``ru_writes`` carries successful write records of RU transactions (a
    finding on their own, since RU transactions must be read only).
    """
    out = Judgment(ru_writes=list(ru_writes or []))
    for pair in pairs:
        l1 = levels.get(pair.first.txn)
        l2 = levels.get(pair.second.txn)
        if l1 is None or l2 is None:
            raise UnknownLevel(
                f"no isolation level for transaction {pair.first.txn if l1 is None else pair.second.txn}"
            )
        if l1 == IsolationLevel.RU and l2 == IsolationLevel.RU:
            out.inconclusive.append(f"both transactions at RU: {pair.describe()}")
            continue
        if IsolationLevel.RU in (l1, l2):
            continue  # judged only through the RU write rule
        if not pair.membership_known:
            out.inconclusive.append(f"predicate membership unknown: {pair.describe()}")
            continue
        permitted = _permitted(pair.cls, l1)
        if pair.concurrent and not permitted:
            out.violations.append(pair)
        elif pair.second_blocked and permitted and not pair.concurrent:
            out.over_restrictive.append(pair)
    return out


def ru_write_records(oh: OutputHistory, levels: Dict[int, IsolationLevel]) -> List[OutputRecord]:
    out = []
    for submit_seq, group in sorted(oh.by_submit().items()):
        completion = next((r for r in group if r.completes()), None)
        if completion is None or not completion.succeeded():
            continue
        if levels.get(completion.txn) != IsolationLevel.RU:
            continue
        step, _ = parse_record_op(completion.op_text)
        if step.kind in WRITE_KINDS:
            out.append(completion)
    return out


def header_levels(oh: OutputHistory) -> Dict[int, IsolationLevel]:
    return {txn: IsolationLevel[name] for txn, name in oh.header.levels.items()}


def analyze_history(oh: OutputHistory) -> Judgment:
    """Full pipeline for one output history: pairs, RU writes, judgment."""
    levels = header_levels(oh)
    pairs = detect_pairs(oh)
    return judge(pairs, levels, ru_write_records(oh, levels))


def classify_history(prog: HistoryProgram) -> str:
    """Intended conflict class from the generator's metadata header."""
    cls = prog.metadata.get("class")
    if cls not in HISTORY_CLASSES:
        raise UnclassifiableHistory(
            f"{prog.source_name}: no intended-class metadata; per-pair analysis still applies"
        )
    return cls
