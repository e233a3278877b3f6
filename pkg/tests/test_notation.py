import pytest
from hypothesis import given, strategies as st

from isoharness.notation import (
    And,
    Comparison,
    HistorySyntaxError,
    IsolationLevel,
    OpKind,
    Or,
    SemanticError,
    UnknownColumn,
    parse_history,
    parse_predicate,
    parse_record_op,
    render_history,
    render_predicate,
    render_step,
)


def test_map_step():
    prog = parse_history("MAP(A, 100)")
    assert len(prog.steps) == 1
    step = prog.steps[0]
    assert step.kind is OpKind.MAP
    assert step.row_var == "A"
    assert step.literal == 100
    assert step.txn == 0


def test_empty_input():
    prog = parse_history("")
    assert prog.steps == []
    assert prog.unterminated == ()


def test_predicate_read_history():
    prog = parse_history("PRED(P, k2=1 and k3<2) IL1(SR) PR1(P;recval;1;A,X) C1")
    assert len(prog.steps) == 4
    pr = prog.steps[2]
    assert pr.kind is OpKind.PR
    assert pr.pred_var == "P"
    assert pr.column_spec == ("recval",)
    assert pr.row_limit == 1
    assert pr.row_var == "A"
    assert pr.value_var == "X"
    assert prog.steps[1].level is IsolationLevel.SR


def test_insert_with_columns():
    prog = parse_history("I2(B;recval;k2;k3, 3000;0;2)")
    step = prog.steps[0]
    assert step.kind is OpKind.I
    assert step.txn == 2
    assert step.column_spec == ("recval", "k2", "k3")
    assert step.value_spec == (3000, 0, 2)


def test_insert_length_mismatch():
    with pytest.raises(SemanticError):
        parse_history("I2(B;recval;k2, 3000)")


def test_pr_aggregate_and_reckey_forms():
    prog = parse_history("PR1(P;count(*);1) PR1(P;reckey;all)")
    agg, economical = prog.steps
    assert agg.aggregate == "count"
    assert agg.row_limit == 1
    assert economical.column_spec == ("reckey",)
    assert economical.row_limit == "all"


def test_write_value_variable_form():
    prog = parse_history("W3(B, A0)")
    step = prog.steps[0]
    assert step.value_var == "A0"
    assert step.literal is None


def test_commit_abort_bare():
    prog = parse_history("C1 A2")
    assert [s.kind for s in prog.steps] == [OpKind.C, OpKind.A]
    assert [s.txn for s in prog.steps] == [1, 2]


def test_il_must_be_first():
    with pytest.raises(SemanticError):
        parse_history("W1(A, 1) IL1(SR) C1")


def test_unknown_operation_position():
    with pytest.raises(HistorySyntaxError) as info:
        parse_history("MAP(A, 100)\nFOO1(A)")
    assert info.value.line == 2
    assert info.value.column == 1
    assert "FOO" in info.value.token


def test_every_bad_token_rejected_not_skipped():
    # a malformed token between two valid ones must fail, not silently drop
    with pytest.raises(HistorySyntaxError):
        parse_history("C1 123garbage C2")


def test_unterminated_flagging():
    prog = parse_history("IL1(RC) W1(A, 1) W2(B, 2) C2")
    assert prog.unterminated == (1,)


def test_comments_and_metadata():
    text = "# free comment\n#: class=w_w\n#: l1=RC\nC1 # trailing\n"
    prog = parse_history(text)
    assert prog.metadata == {"class": "w_w", "l1": "RC"}
    assert len(prog.steps) == 1


def test_case_insensitive_ops_case_sensitive_vars():
    prog = parse_history("map(a, 100) w1(a, 5) c1")
    assert prog.steps[0].row_var == "a"
    assert prog.steps[1].kind is OpKind.W
    with pytest.raises(HistorySyntaxError):
        parse_history("W1(A,)")


def test_spacing_tolerated_like_printed_examples():
    prog = parse_history('PRED (P, "k2=1 and k3<2")')
    assert prog.steps[0].predicate == And((Comparison("k2", "=", 1), Comparison("k3", "<", 2)))


# --- predicates ---


def test_parse_predicate_and():
    assert parse_predicate("k2=1 and k3<2") == And(
        (Comparison("k2", "=", 1), Comparison("k3", "<", 2))
    )


def test_parse_predicate_single():
    assert parse_predicate("k2=0") == Comparison("k2", "=", 0)


def test_parse_predicate_precedence():
    expr = parse_predicate("k2=0 or (k3=1 and k5<4)")
    assert expr == Or(
        (Comparison("k2", "=", 0), And((Comparison("k3", "=", 1), Comparison("k5", "<", 4))))
    )
    # and binds tighter without parentheses too
    assert parse_predicate("k2=0 or k3=1 and k5<4") == expr


def test_unknown_column_rejected():
    with pytest.raises(UnknownColumn):
        parse_predicate("k2=0 and k1=1")  # k1 does not exist in the schema


def test_predicate_render_roundtrip():
    for text in ("k2=1 and k3<2", "k2=0", "k2=0 or (k3=1 and k5<4)", "(k2=0 or k3=1) and k5<4"):
        expr = parse_predicate(text)
        assert parse_predicate(render_predicate(expr)) == expr
        assert parse_predicate(render_predicate(expr, compact=True)) == expr
        assert " " not in render_predicate(expr, compact=True)


# --- rendering ---


def test_render_single_map():
    prog = parse_history("MAP(A, 100)")
    assert render_history(prog) == "MAP(A, 100)"


def test_render_empty():
    prog = parse_history("")
    assert render_history(prog) == ""


_SAMPLES = [
    "MAP(A, 100)",
    "PRED(P, k2=1 and k3<2) IL1(SR) PR1(P;recval;1;A, X) C1",
    "IL1(RC) IL2(RC) W1(A, 1001) W2(A, 2002) C1 C2",
    "I1(A) I2(B;recval;k2;k3, 3000;0;2) D1(A) C1 C2",
    "RW1(A, X) RW1(A) SU1(P) SU1(P, 5) SS1(P, sum(recval)) SS2(P, count(*)) A1 C2",
    "PR1(P;reckey;all) PR2(P;count(*);1) C1 C2",
]


@pytest.mark.parametrize("text", _SAMPLES)
def test_parse_render_roundtrip(text):
    prog = parse_history(text)
    assert parse_history(render_history(prog)) == prog


def test_position_preservation():
    text = "MAP(A, 100) IL1(RC) R1(A, X) W1(A, 5) C1"
    prog = parse_history(text)
    kinds = [s.kind for s in prog.steps]
    assert kinds == [OpKind.MAP, OpKind.IL, OpKind.R, OpKind.W, OpKind.C]


# --- resolved record op text ---


def test_record_op_roundtrip_with_bindings():
    prog = parse_history("W2(A, 2002)")
    text = render_step(prog.steps[0], {"A": 100}, compact=True)
    assert text == "W2(A=100,2002)"
    step, bindings = parse_record_op(text)
    assert step.kind is OpKind.W
    assert bindings == {"A": 100}


def test_record_op_pred_not_mistaken_for_binding():
    step, bindings = parse_record_op("PRED(P,(k2=1)and(k3<2))")
    assert step.kind is OpKind.PRED
    assert bindings == {}
    assert step.predicate == And((Comparison("k2", "=", 1), Comparison("k3", "<", 2)))


# --- property: parse(render(p)) == p over random programs ---


_row_vars = st.sampled_from(["A", "B", "E", "F"])
_pred_vars = st.sampled_from(["P", "Q"])
_txns = st.integers(min_value=1, max_value=3)
_columns = st.sampled_from(["k2", "k3", "k5", "recval", "c4"])
_relops = st.sampled_from(["=", "<", ">", "<=", ">=", "<>"])


@st.composite
def _predicate_text(draw):
    n = draw(st.integers(min_value=1, max_value=3))
    comps = [
        f"{draw(_columns)}{draw(_relops)}{draw(st.integers(min_value=-5, max_value=20))}"
        for _ in range(n)
    ]
    joiner = draw(st.sampled_from([" and ", " or "]))
    return joiner.join(comps)


@st.composite
def _step_text(draw):
    kind = draw(st.sampled_from(["MAP", "PRED", "IL", "R", "W", "RW", "I", "D", "PR", "SU", "SS", "C", "A"]))
    t = draw(_txns)
    if kind == "MAP":
        return f"MAP({draw(_row_vars)}, {draw(st.integers(min_value=1, max_value=10000))})"
    if kind == "PRED":
        return f"PRED({draw(_pred_vars)}, {draw(_predicate_text())})"
    if kind == "IL":
        return f"IL{t}({draw(st.sampled_from(['RU', 'RC', 'RR', 'SR']))})"
    if kind == "R":
        return f"R{t}({draw(_row_vars)}, X{t})"
    if kind == "W":
        return f"W{t}({draw(_row_vars)}, {draw(st.integers(min_value=0, max_value=99999))})"
    if kind == "RW":
        return f"RW{t}({draw(_row_vars)})"
    if kind == "I":
        return f"I{t}({draw(_row_vars)};k2;k3, 0;1)"
    if kind == "D":
        return f"D{t}({draw(_row_vars)})"
    if kind == "PR":
        limit = draw(st.sampled_from(["1", "3", "all"]))
        return f"PR{t}({draw(_pred_vars)};recval;{limit};{draw(_row_vars)}, X{t})"
    if kind == "SU":
        return f"SU{t}({draw(_pred_vars)}, {draw(st.integers(min_value=-5, max_value=5))})"
    if kind == "SS":
        return f"SS{t}({draw(_pred_vars)}, {draw(st.sampled_from(['sum(recval)', 'count(*)']))})"
    return f"{kind}{t}"


@given(st.lists(_step_text(), max_size=12))
def test_random_program_roundtrip(step_texts):
    # IL steps must come first for their transaction; filter invalid drafts
    text = " ".join(step_texts)
    try:
        prog = parse_history(text)
    except SemanticError:
        return
    assert parse_history(render_history(prog)) == prog
