"""Template-based history generation.

Each template instantiates to a history with exactly one intended
conflicting pair plus setup and commits, tagged with metadata naming its
class, level pair, and variant.  Predicate-changing writes use inserts or
deletes by default (clean membership change over the k-column predicates);
the set-update variant moves rows across a recval boundary instead, since a
plain W only touches recval and cannot change a k-column predicate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from .notation import HistoryProgram, IsolationLevel, parse_history


MATRIX_LEVELS = (IsolationLevel.RC, IsolationLevel.RR, IsolationLevel.SR)

ITEM_CLASSES = ("w_w", "w_r", "r_w")
PREDICATE_CLASSES = ("w_pr", "pr_w")
ALL_CLASSES = ITEM_CLASSES + PREDICATE_CLASSES

DEFAULT_VARIANT = "insert"
PREDICATE_VARIANTS = ("insert", "delete", "set_update", "partial")


@dataclass(frozen=True)
class Template:
    cls: str
    variant: str
    body: str  # skeleton with {l1}/{l2} placeholders

    def instantiate(self, l1: IsolationLevel, l2: IsolationLevel) -> HistoryProgram:
        name = f"{self.cls}_{l1.name}_{l2.name}_{self.variant}"
        text = "\n".join(
            [
                f"#: name={name}",
                f"#: class={self.cls}",
                f"#: l1={l1.name}",
                f"#: l2={l2.name}",
                f"#: variant={self.variant}",
                self.body.format(l1=l1.name, l2=l2.name),
            ]
        )
        return parse_history(text, source_name=name)


_ITEM_BODIES = {
    "w_w": "IL1({l1}) IL2({l2}) W1(A, 1001) W2(A, 2002) C1 C2",
    "w_r": "IL1({l1}) IL2({l2}) W1(A, 1001) R2(A, X) C1 C2",
    "r_w": "IL1({l1}) IL2({l2}) R1(A, X) W2(A, 2002) C1 C2",
}

# k2=0 and k3=0 matches rows 1, 7, 13, ... (reckey 100, 700, 1300, ...);
# freshly inserted rows default their k columns to 0, so they join the set.
_KPRED = "PRED(P, k2=0 and k3=0)"
# recval<15000 matches only row 1; a big set-update delta pushes it out.
_VPRED = "PRED(P, recval<15000)"

_PRED_BODIES = {
    ("w_pr", "insert"): f"{_KPRED} IL1({{l1}}) IL2({{l2}}) I1(B;k2;k3, 0;0) PR2(P;reckey;all) C1 C2",
    ("w_pr", "delete"): f"{_KPRED} MAP(A, 100) IL1({{l1}}) IL2({{l2}}) D1(A) PR2(P;reckey;all) C1 C2",
    ("w_pr", "set_update"): f"{_VPRED} IL1({{l1}}) IL2({{l2}}) SU1(P, 100000) PR2(P;reckey;all) C1 C2",
    ("w_pr", "partial"): f"{_KPRED} IL1({{l1}}) IL2({{l2}}) I1(B;k2;k3, 0;0) PR2(P;reckey;1) C1 C2",
    ("pr_w", "insert"): f"{_KPRED} IL1({{l1}}) IL2({{l2}}) PR1(P;reckey;all) I2(B;k2;k3, 0;0) C1 C2",
    ("pr_w", "delete"): f"{_KPRED} MAP(A, 100) IL1({{l1}}) IL2({{l2}}) PR1(P;reckey;all) D2(A) C1 C2",
    ("pr_w", "set_update"): f"{_VPRED} IL1({{l1}}) IL2({{l2}}) PR1(P;reckey;all) SU2(P, 100000) C1 C2",
    ("pr_w", "partial"): f"{_KPRED} IL1({{l1}}) IL2({{l2}}) PR1(P;reckey;1) I2(B;k2;k3, 0;0) C1 C2",
}


def templates_for(cls: str, variants: Sequence[str]) -> List[Template]:
    if cls in ITEM_CLASSES:
        return [Template(cls, "default", _ITEM_BODIES[cls])]
    out = []
    for variant in variants:
        body = _PRED_BODIES.get((cls, variant))
        if body is None:
            raise ValueError(f"no {variant!r} variant for class {cls!r}")
        out.append(Template(cls, variant, body))
    return out


def generate_matrix(levels: Optional[Iterable[IsolationLevel]] = None,
                    classes: Optional[Sequence[str]] = None,
                    variants: Sequence[str] = (DEFAULT_VARIANT,)) -> List[HistoryProgram]:
    """One history per (class, L1, L2, variant); the default full run is
    5 classes x 9 level pairs x the insert variant = 45 histories."""
    levels = tuple(levels) if levels is not None else MATRIX_LEVELS
    for lvl in levels:
        if lvl not in MATRIX_LEVELS:
            raise ValueError(f"matrix levels must be RC/RR/SR, got {lvl.name}")
    classes = tuple(classes) if classes is not None else ALL_CLASSES
    for cls in classes:
        if cls not in ALL_CLASSES:
            raise ValueError(f"unknown history class {cls!r}")
    out: List[HistoryProgram] = []
    for cls in classes:
        for template in templates_for(cls, variants):
            for l1 in levels:
                for l2 in levels:
                    out.append(template.instantiate(l1, l2))
    return out


def ru_scenario() -> HistoryProgram:
    """The read-uncommitted probe: does a chain through a concurrent reader
    persist a value written by a transaction that later aborts?

    All transactions run at RU (via default-level metadata, so the operation
    sequence itself stays untouched).  With RU writes enforced read-only, W2
    fails; with permissive RU writes, R4(B) observes the aborted value.
    """
    text = "\n".join(
        [
            "#: name=ru_scenario",
            "#: scenario=ru",
            "#: default_level=RU",
            "R1(A) R1(B) C1 W2(A) R3(A, A0) W3(B, A0) C3 A2 R4(A) R4(B) C4",
        ]
    )
    return parse_history(text, source_name="ru_scenario")
