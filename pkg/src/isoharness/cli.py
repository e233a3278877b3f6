"""Command line entry point: dataset, gen, run, analyze, campaign.

``campaign`` is the one-shot reproduction of the full conflict matrix:
generate one history per (class, level pair), run each on a fresh engine,
analyze each output, and report a class-by-level-pair grid.  On the
reference configuration (per-level strictness) any VIOLATION or
OVER_RESTRICTIVE cell fails the command.

The HISTEX_TIMEOUT environment variable overrides the default per-operation
timeout (seconds).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .analyzer import (
    Judgment,
    Verdict,
    detect_pairs,
    header_levels,
    judge,
    ru_write_records,
)
from .dataset import build_canonical_table, dump_tsv
from .engine import EngineConfig, LockScope, Strictness
from .executor import ExecutorConfig, Mode, run_history
from .generator import (
    ALL_CLASSES,
    DEFAULT_VARIANT,
    MATRIX_LEVELS,
    generate_matrix,
    ru_scenario,
)
from .notation import HistoryProgram, IsolationLevel, NotationError, parse_history
from .outhist import FormatError, OutputHistory, parse_output, serialize


def _default_timeout() -> float:
    return float(os.environ.get("HISTEX_TIMEOUT", "2"))


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=("sync", "async"), default="sync")
    parser.add_argument(
        "-c", dest="mode", action="store_const", const="async",
        help="shorthand for --mode async",
    )
    parser.add_argument("--timeout", type=float, default=None,
                        help="per-operation timeout in seconds (default 2 or HISTEX_TIMEOUT)")
    parser.add_argument("--global-timeout", type=float, default=None,
                        help="stuck-history timeout (default 4x timeout)")
    parser.add_argument("--default-level", choices=("RU", "RC", "RR", "SR"), default=None)
    parser.add_argument("--rows", type=int, default=200, help="table size, multiple of 100")
    parser.add_argument("--lock-scope", choices=("predicate", "incremental"), default="predicate")
    parser.add_argument("--strictness", choices=("per-level", "strict"), default="per-level")
    parser.add_argument("--ru-writes-allowed", action="store_true",
                        help="let RU transactions write (reproduces permissive systems)")
    parser.add_argument("--no-indexes", action="store_true",
                        help="drop index flags (full-range locking in incremental mode)")
    parser.add_argument("--verbose", action="store_true")


def _exec_config(args) -> ExecutorConfig:
    engine = EngineConfig(
        lock_scope=LockScope.PREDICATE if args.lock_scope == "predicate" else LockScope.INCREMENTAL_RANGE,
        strictness=Strictness.PER_LEVEL if args.strictness == "per-level" else Strictness.STRICT_ALL_LONG,
        ru_writes_allowed=args.ru_writes_allowed,
    )
    timeout = args.timeout if args.timeout is not None else _default_timeout()
    level = IsolationLevel[args.default_level] if args.default_level else None
    return ExecutorConfig(
        mode=Mode.SYNC if args.mode == "sync" else Mode.ASYNC,
        timeout=timeout,
        global_timeout=args.global_timeout,
        default_level=level,
        rows=args.rows,
        engine=engine,
        indexes=not args.no_indexes,
        verbose=args.verbose,
    )


# ----------------------------------------------------------------- campaign


@dataclass
class CellResult:
    cls: str
    variant: str
    l1: str
    l2: str
    name: str
    outcome: str  # EXECUTED | BLOCKED | VIOLATION | OVER_RESTRICTIVE | INCONCLUSIVE
    verdict: Verdict
    output: OutputHistory


@dataclass
class CampaignReport:
    cells: Dict[Tuple[str, str, str, str], CellResult] = field(default_factory=dict)
    totals: Counter = field(default_factory=Counter)
    config: Dict[str, str] = field(default_factory=dict)

    def machine_lines(self) -> List[str]:
        lines = [
            "config " + " ".join(f"{k}={v}" for k, v in sorted(self.config.items())),
        ]
        for key in sorted(self.cells):
            cell = self.cells[key]
            lines.append(
                f"cell {cell.cls} {cell.variant} {cell.l1} {cell.l2}"
                f" {cell.outcome} {cell.verdict.value}"
            )
        lines.append("totals " + " ".join(f"{k}={v}" for k, v in sorted(self.totals.items())))
        return lines

    def human_table(self) -> str:
        marks = {
            "EXECUTED": "EXEC",
            "BLOCKED": "blocked",
            "VIOLATION": "VIOL!",
            "OVER_RESTRICTIVE": "OVER!",
            "INCONCLUSIVE": "????",
        }
        pairs = sorted({(c.l1, c.l2) for c in self.cells.values()})
        rows = sorted({(c.cls, c.variant) for c in self.cells.values()})
        header = ["class/variant".ljust(18)] + [f"{a}_{b}".ljust(8) for a, b in pairs]
        lines = ["".join(header)]
        for cls, variant in rows:
            cells = [f"{cls}/{variant}".ljust(18)]
            for l1, l2 in pairs:
                cell = self.cells.get((cls, variant, l1, l2))
                cells.append((marks[cell.outcome] if cell else "-").ljust(8))
            lines.append("".join(cells))
        return "\n".join(lines)

    def findings(self) -> List[CellResult]:
        return [
            c for c in self.cells.values()
            if c.outcome in ("VIOLATION", "OVER_RESTRICTIVE", "INCONCLUSIVE")
        ]


def _judge_run(output: OutputHistory) -> Tuple[list, Judgment]:
    levels = header_levels(output)
    pairs = detect_pairs(output)
    judgment = judge(pairs, levels, ru_write_records(output, levels))
    return pairs, judgment


def _cell_outcome(pairs, judgment: Judgment, intended_cls: str) -> str:
    if judgment.verdict is Verdict.VIOLATION:
        return "VIOLATION"
    if judgment.verdict is Verdict.OVER_RESTRICTIVE:
        return "OVER_RESTRICTIVE"
    intended = [p for p in pairs if p.cls == intended_cls]
    if any(p.concurrent for p in intended):
        return "EXECUTED"
    if any(p.second_blocked for p in intended):
        return "BLOCKED"
    return "INCONCLUSIVE"


def run_campaign(base_config: ExecutorConfig,
                 levels: Optional[Sequence[IsolationLevel]] = None,
                 classes: Optional[Sequence[str]] = None,
                 variants: Sequence[str] = (DEFAULT_VARIANT,),
                 parallel: int = 1,
                 out_dir: Optional[Path] = None) -> CampaignReport:
    programs = generate_matrix(levels, classes, variants)
    report = CampaignReport(
        config={
            "mode": base_config.mode.value,
            "lock_scope": base_config.engine.lock_scope.value,
            "strictness": base_config.engine.strictness.value,
            "rows": str(base_config.rows),
            "timeout": str(base_config.timeout),
        }
    )

    def run_one(prog: HistoryProgram) -> CellResult:
        config = replace(base_config, engine=replace(base_config.engine), verbose=False)
        output = run_history(prog, config)
        pairs, judgment = _judge_run(output)
        meta = prog.metadata
        cls = meta.get("class", "?")
        return CellResult(
            cls=cls,
            variant=meta.get("variant", "?"),
            l1=meta.get("l1", "?"),
            l2=meta.get("l2", "?"),
            name=prog.source_name,
            outcome=_cell_outcome(pairs, judgment, cls),
            verdict=judgment.verdict,
            output=output,
        )

    if parallel > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_one, programs))
    else:
        results = [run_one(p) for p in programs]
    for cell in results:
        report.cells[(cell.cls, cell.variant, cell.l1, cell.l2)] = cell
        report.totals[cell.outcome] += 1
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"{cell.name}.outhist").write_text(serialize(cell.output))
    return report


# ------------------------------------------------------------- subcommands


def cmd_dataset(args) -> int:
    if args.action != "dump":
        print(f"unknown dataset action {args.action!r}", file=sys.stderr)
        return 1
    sys.stdout.write(dump_tsv(build_canonical_table(args.rows)))
    return 0


def cmd_gen(args) -> int:
    levels = [IsolationLevel[l] for l in args.levels.split(",")] if args.levels else None
    classes = args.classes.split(",") if args.classes else None
    variants = tuple(args.variants.split(",")) if args.variants else (DEFAULT_VARIANT,)
    programs = generate_matrix(levels, classes, variants)
    if args.ru:
        programs.append(ru_scenario())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .notation import render_history

    for i, prog in enumerate(programs, start=1):
        path = out / f"{i:03d}_{prog.source_name}.hist"
        path.write_text(render_history(prog) + "\n")
    print(f"wrote {len(programs)} histories to {out}")
    return 0


def cmd_run(args) -> int:
    path = Path(args.history)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return 1
    try:
        prog = parse_history(text, source_name=path.stem)
    except NotationError as exc:
        print(f"parse error in {path}: {exc}", file=sys.stderr)
        return 1
    output = run_history(prog, _exec_config(args))
    out_path = Path(args.out) if args.out else path.with_suffix(".outhist")
    out_path.write_text(serialize(output))
    if output.header.stuck:
        print(f"history stuck; partial output written to {out_path}", file=sys.stderr)
        return 2
    if not args.verbose:
        print(f"output written to {out_path}")
    return 0


def cmd_analyze(args) -> int:
    counts: Counter = Counter()
    grid: Dict[Tuple[str, str, str], str] = {}
    status = 0
    for name in args.outhists:
        path = Path(name)
        try:
            output = parse_output(path.read_text())
        except (OSError, FormatError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            status = 1
            continue
        pairs, judgment = _judge_run(output)
        verdict = judgment.verdict
        counts[verdict.value] += 1
        details = []
        for pair in judgment.violations:
            details.append(f"violation: {pair.describe()}")
        for pair in judgment.over_restrictive:
            details.append(f"over-restrictive: {pair.describe()}")
        for rec in judgment.ru_writes:
            details.append(f"ru-write: {rec.op_text}")
        details.extend(judgment.inconclusive)
        suffix = ("  " + "; ".join(details)) if details else ""
        print(f"{output.header.name}: {verdict.value}{suffix}")
        meta = output.header.meta
        if "class" in meta:
            grid[(meta["class"], meta.get("l1", "?"), meta.get("l2", "?"))] = verdict.value
    if grid:
        print("\nsummary (class, L1, L2 -> verdict):")
        for key in sorted(grid):
            print(f"  {key[0]:6s} {key[1]}_{key[2]}: {grid[key]}")
    print("\ntotals: " + " ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return status


def cmd_campaign(args) -> int:
    levels = [IsolationLevel[l] for l in args.levels.split(",")] if args.levels else None
    classes = args.classes.split(",") if args.classes else None
    variants = tuple(args.variants.split(",")) if args.variants else (DEFAULT_VARIANT,)
    report = run_campaign(
        _exec_config(args),
        levels=levels,
        classes=classes,
        variants=variants,
        parallel=args.parallel,
        out_dir=Path(args.out) if args.out else None,
    )
    print(report.human_table())
    print()
    for line in report.machine_lines():
        print(line)
    findings = report.findings()
    if findings and args.strictness == "per-level":
        print(f"\n{len(findings)} problem cell(s) found", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isoharness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="canonical table utilities")
    p_dataset.add_argument("action", choices=("dump",))
    p_dataset.add_argument("--rows", type=int, default=200)
    p_dataset.set_defaults(func=cmd_dataset)

    p_gen = sub.add_parser("gen", help="generate conflict histories")
    p_gen.add_argument("--classes", default=None, help="comma-separated subset of " + ",".join(ALL_CLASSES))
    p_gen.add_argument("--levels", default=None, help="comma-separated subset of RC,RR,SR")
    p_gen.add_argument("--variants", default=None, help="predicate-change variants (insert,delete,set_update,partial)")
    p_gen.add_argument("--ru", action="store_true", help="also write the RU scenario history")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="execute one history file")
    p_run.add_argument("history")
    p_run.add_argument("-o", "--out", default=None)
    _add_run_options(p_run)
    p_run.set_defaults(func=cmd_run)

    p_analyze = sub.add_parser("analyze", help="judge output histories")
    p_analyze.add_argument("outhists", nargs="+")
    p_analyze.set_defaults(func=cmd_analyze)

    p_campaign = sub.add_parser("campaign", help="generate, run, and analyze the full matrix")
    p_campaign.add_argument("--classes", default=None)
    p_campaign.add_argument("--levels", default=None)
    p_campaign.add_argument("--variants", default=None)
    p_campaign.add_argument("--parallel", type=int, default=1)
    p_campaign.add_argument("--out", default=None, help="directory for .outhist files")
    _add_run_options(p_campaign)
    p_campaign.set_defaults(func=cmd_campaign)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())
