#  Copyright (c) 2024 ltc-stability developers

from io import StringIO

import pytest
from colorama import Fore, Style

from ltc_stability.styles import VERDICT_COLORS, available_table_styles, maybe_convert_to_colorama, parse_table_style
from ltc_stability.table import IterationTable


def cell(value, width=10):
    return " " + str(value).center(width) + " "


def table_lines(stream):
    return stream.getvalue().replace("\r", "").splitlines()


def test_rows_are_printed_when_finished():
    out = StringIO()
    table = IterationTable(["iter", "objective"], table_style="ascii", file=out)
    table["iter"] = 1
    table["objective"] = 0.25
    assert out.getvalue() == ""
    table.next_row()
    table.close()

    bar = "+" + "-" * 12 + "+" + "-" * 12 + "+"
    assert table_lines(out) == [
        bar,
        "|" + cell("iter") + "|" + cell("objective") + "|",
        bar,
        "|" + cell(1) + "|" + cell(0.25) + "|",
        bar,
    ]


def test_significant_digits():
    out = StringIO()
    table = IterationTable(["x"], significant_digits=3, table_style="ascii", file=out)
    table.add_row(1 / 3)
    table.add_row(2.5e-9)
    lines = table_lines(out)
    assert "0.333" in lines[3]
    assert "2.5e-09" in lines[4]


def test_aggregates_and_to_list():
    table = IterationTable(file=StringIO())
    table.add_column("residual", aggregate="max")
    table.add_column("cost", aggregate="mean")
    table.update("residual", 0.1)
    table.update("residual", 0.3)
    table.update("cost", 1.0, weight=1)
    table.update("cost", 4.0, weight=2)
    assert table["cost"] == pytest.approx(3.0)
    table.next_row()
    table.add_row(0.2, 5.0)
    assert table.num_rows() == 2
    assert table.to_list() == [[0.3, pytest.approx(3.0)], [0.2, 5.0]]


def test_header_is_repeated():
    out = StringIO()
    table = IterationTable(["k"], print_header_every_n_rows=2, table_style="ascii", file=out)
    for k in range(5):
        table.add_row(k)
    table.close()
    assert sum(line == "|" + cell("k") + "|" for line in table_lines(out)) == 3


def test_new_column_reprints_header():
    out = StringIO()
    table = IterationTable(["a"], table_style="ascii", file=out)
    table.add_row(1)
    table.update_from_dict({"a": 2, "b": 3})
    table.next_row()
    lines = table_lines(out)
    assert "|" + cell("a") + "|" + cell("b") + "|" in lines


def test_row_colors():
    out = StringIO()
    table = IterationTable(["verdict"], file=out)
    table.add_row("Converged", color=VERDICT_COLORS["Converged"])
    assert Fore.GREEN in out.getvalue()


def test_interactive_redraws_current_row():
    out = StringIO()
    table = IterationTable(["a"], interactive=1, table_style="ascii", file=out)
    table["a"] = 1
    table["a"] = 2
    assert out.getvalue().count("\r") == 2
    table.close()


def test_multiple_outputs():
    first, second = StringIO(), StringIO()
    table = IterationTable(["a"], file=[first, second])
    table.add_row(1)
    table.close()
    assert first.getvalue() == second.getvalue() != ""


def test_closed_table_rejects_updates():
    table = IterationTable(["a"], file=StringIO())
    table.close()
    with pytest.raises(RuntimeError):
        table["a"] = 1


def test_bad_settings():
    with pytest.raises(ValueError):
        IterationTable(table_style="wavy")
    with pytest.raises(ValueError):
        IterationTable(default_column_aggregate="median").add_column("a")
    with pytest.raises(AssertionError):
        IterationTable(interactive=2)
    with pytest.raises(AssertionError):
        maybe_convert_to_colorama("not-a-color")


def test_styles():
    names = {style.name for style in available_table_styles()}
    assert {"modern", "round", "double", "bold", "ascii", "hidden"} <= names
    assert parse_table_style("round").down_right == "╭"
    assert maybe_convert_to_colorama("bold red") == Style.BRIGHT + Fore.RED
