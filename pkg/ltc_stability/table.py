#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import inspect
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Callable

from colorama import Style

from ltc_stability import styles
from ltc_stability.styles import ColorFormat, ColorFormatTuple, maybe_convert_to_colorama


def aggregate_dont(value, old_value, weight, old_weight):
    return value


# Combine a new cell value with the value already in the row: (value, old_value, weight, old_weight) -> value
AGGREGATES: dict[str, Callable] = {
    "mean": lambda value, old, w, old_w: (old * old_w + value * w) / (old_w + w),
    "sum": lambda value, old, w, old_w: old + value,
    "max": lambda value, old, w, old_w: max(old, value),
    "min": lambda value, old, w, old_w: min(old, value),
}


def get_aggregate_fn(aggregate: None | str | Callable):
    if aggregate is None:
        return aggregate_dont
    if callable(aggregate):
        num_parameters = len(inspect.signature(aggregate).parameters)
        assert num_parameters == 4, f"Aggregate function has to take 4 arguments, not {num_parameters}!"
        return aggregate
    if isinstance(aggregate, str):
        if aggregate not in AGGREGATES:
            raise ValueError(f"Unknown aggregate type string: {aggregate}")
        return AGGREGATES[aggregate]
    raise ValueError(f"Unknown aggregate type: {type(aggregate)}")


def get_default_format_func(significant_digits: int):
    """Integers as they are, floats with `significant_digits` in fixed or scientific notation."""

    def fmt(x) -> str:
        if isinstance(x, (bool, int)):
            return str(x)
        try:
            return format(x, f".{significant_digits}g")
        except Exception:
            return str(x)

    return fmt


@dataclass
class DataRow:
    values: dict[str, Any] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    colors: dict[str, str] = field(default_factory=dict)


class IterationTable:
    DEFAULT_COLUMN_WIDTH = 10
    DEFAULT_COLUMN_ALIGNMENT = "center"

    def __init__(
        self,
        columns: tuple | list = (),
        interactive: int = int(os.environ.get("LTC_INTERACTIVE", 0)),
        significant_digits: int = 6,
        default_column_width: int | None = None,
        default_column_alignment: str | None = None,
        default_column_aggregate: str | None = None,
        default_row_color: ColorFormat = None,
        print_header_every_n_rows: int = 30,
        custom_cell_format: Callable[[Any], str] | None = None,
        table_style: str | styles.TableStyle = "round",
        file=None,
    ):
        """Terminal table for iterative solvers, one row per iteration or per scenario.

        Example:
            >>> table = IterationTable(["iter", "objective"], interactive=0)
            >>> table["iter"] = 1
            >>> table["objective"] = 0.25
            >>> table.next_row(color="green")
            >>> table.close()

        Args:
            columns: Columns shown in the header. More columns can be added with `add_column` or on the fly by `update`.
            interactive: With 1 the current row is redrawn in place after every update.
                         With 0 a row is printed only once `next_row` finishes it.
            significant_digits: Significant digits of floats in the default cell format.
            default_column_width: Width of a column excluding the cell padding.
            default_column_alignment: `left`, `right` or `center`.
            default_column_aggregate: `mean`, `sum`, `min` or `max` combine repeated updates of a cell within one row.
            default_row_color: Color of finished rows, overridden by the `color` argument of `next_row`.
            print_header_every_n_rows: Repeat the header after this many rows; 0 disables the repetition.
            custom_cell_format: Function turning any cell value into its displayed string.
            table_style: Border style name or a `TableStyle`.
            file: Output stream or a list of streams. Defaults to stdout.
        """
        assert interactive in (1, 0), "Interactivity has to be 0 or 1!"
        assert print_header_every_n_rows >= 0, "Reprint header every n rows can not be negative!"
        assert isinstance(default_row_color, ColorFormatTuple), "Row color has to be a color format!"  # type: ignore

        self.table_style = styles.parse_table_style(table_style)
        self.interactive = interactive
        self.column_width = default_column_width
        self.column_alignment = default_column_alignment
        self.column_aggregate = default_column_aggregate
        self.row_color = default_row_color
        self.custom_cell_format = custom_cell_format or get_default_format_func(significant_digits)
        self.files = (file,) if not isinstance(file, (list, tuple)) else file

        self.column_names: list[str] = []
        self.column_widths: dict[str, int] = {}
        self.column_colors: dict[str, str] = {}
        self.column_alignments: dict[str, str] = {}
        self.column_aggregates: dict[str, Callable] = {}

        self._print_header_every_n_rows = print_header_every_n_rows
        self._rows_since_header = 0
        self._header_printed = False
        self._header_outdated = False
        self._row_open = False
        self._closed = False
        self._data_rows: list[DataRow] = [DataRow()]
        self.add_columns(*columns)

    def add_column(self, name: str, *, width=None, color=None, alignment=None, aggregate=None):
        """Add a column or change the settings of an existing one; the width never drops below the name length."""
        assert isinstance(name, str), f"Column name has to be a string, not {type(name)}!"
        if name in self.column_names:
            logging.info(f"Column '{name}' already exists!")
        else:
            self.column_names.append(name)
            if self._header_printed:
                self._header_outdated = True

        resolved_width = width or self.column_width or self.DEFAULT_COLUMN_WIDTH
        self.column_widths[name] = max(resolved_width, len(name))
        self.column_colors[name] = maybe_convert_to_colorama(color)
        self.column_alignments[name] = alignment or self.column_alignment or self.DEFAULT_COLUMN_ALIGNMENT
        self.column_aggregates[name] = get_aggregate_fn(aggregate or self.column_aggregate)

    def add_columns(self, *columns, **kwds):
        for column in columns:
            self.add_column(column, **kwds)

    def update(self, name: str, value, *, weight: float = 1, cell_color: ColorFormat = None, **column_kwds):
        """Set or aggregate a cell of the current row, creating the column when needed."""
        if self._closed:
            raise RuntimeError("Table was closed! Updating closed tables is not supported.")
        if name not in self.column_names:
            self.add_column(name, **column_kwds)

        row = self._data_rows[-1]
        fn = self.column_aggregates[name]
        if name in row.values:
            row.values[name] = fn(value, row.values[name], weight, row.weights[name])
            row.weights[name] += weight
        else:
            row.values[name] = value
            row.weights[name] = weight
        if cell_color is not None:
            row.colors[name] = maybe_convert_to_colorama(cell_color)

        if self.interactive == 1:
            self._ensure_header()
            self._write("\r" + self._get_row_str(row))
            self._row_open = True

    def __setitem__(self, key: str, value):
        self.update(key, value)

    def __getitem__(self, key: str):
        assert key in self.column_names, f"Column {key} not in {self.column_names}"
        return self._data_rows[-1].values.get(key, None)

    def update_from_dict(self, dictionary: dict):
        for key, value in dictionary.items():
            self.update(key, value)

    def next_row(self, color: ColorFormat | dict[str, ColorFormat] = None):
        """Finish the current row, coloring the cells that have no color of their own."""
        row = self._data_rows[-1]
        row.colors = {**self._resolve_row_color_dict(color), **row.colors}

        self._ensure_header()
        self._write("\r" + self._get_row_str(row) + "\n")
        self._row_open = False
        self._rows_since_header += 1
        self._data_rows.append(DataRow())

    def add_row(self, *values, **kwds):
        for key, value in zip(self.column_names, values):
            self.update(key, value)
        self.next_row(**kwds)

    def num_rows(self) -> int:
        return len(self._data_rows) - 1

    def to_list(self) -> list[list]:
        """Finished rows as nested lists in column order."""
        return [[row.values.get(col, None) for col in self.column_names] for row in self._data_rows[:-1]]

    def close(self):
        """Draw the bottom border. A closed table can not be updated."""
        if self._closed:
            return
        if self._data_rows[-1].values:
            self.next_row()
        if self._header_printed:
            self._write(self._get_bar(self.table_style.up_right, self.table_style.no_down, self.table_style.up_left) + "\n")
        self._closed = True

    def _ensure_header(self):
        every = self._print_header_every_n_rows
        if not self._header_printed:
            self._write(self._get_bar(self.table_style.down_right, self.table_style.no_up, self.table_style.down_left) + "\n")
        elif self._header_outdated or (every and self._rows_since_header >= every):
            if self._row_open:
                self._write("\n")
            self._write(self._get_bar_mid() + "\n")
        else:
            return
        self._write(self._get_header() + "\n" + self._get_bar_mid() + "\n")
        self._header_printed = True
        self._header_outdated = False
        self._rows_since_header = 0

    def _resolve_row_color_dict(self, color: ColorFormat | dict[str, ColorFormat] = None) -> dict[str, str]:
        color = color or self.row_color or {}
        if isinstance(color, ColorFormatTuple):
            color = {column: color for column in self.column_names}
        return {column: self.column_colors[column] + maybe_convert_to_colorama(color.get(column)) for column in self.column_names}

    def _apply_cell_formatting(self, value: Any, column_name: str, color: str) -> str:
        str_value = self.custom_cell_format(value)
        width = self.column_widths[column_name]
        alignment = self.column_alignments[column_name]

        if alignment == "center":
            str_value = str_value.center(width)
        elif alignment == "left":
            str_value = str_value.ljust(width)
        elif alignment == "right":
            str_value = str_value.rjust(width)
        else:
            raise KeyError(f"Alignment '{alignment}' not in ['center', 'left', 'right']!")

        clipped = len(str_value) > width
        str_value = " " + str_value[:width] + (self.table_style.cell_overflow if clipped else " ")
        reset = Style.RESET_ALL if color else ""
        return f"{color}{str_value}{reset}"

    def _write(self, msg: str):
        for file in self.files:
            stream = file or sys.stdout
            print(msg, file=stream, end="")
            stream.flush()

    def _get_row_str(self, row: DataRow) -> str:
        content = [self._apply_cell_formatting(row.values.get(c, ""), c, row.colors.get(c, "")) for c in self.column_names]
        return self.table_style.vertical + self.table_style.vertical.join(content) + self.table_style.vertical

    def _get_header(self) -> str:
        content = [self._apply_cell_formatting(c, c, self.column_colors[c]) for c in self.column_names]
        return self.table_style.vertical + self.table_style.vertical.join(content) + self.table_style.vertical

    def _get_bar(self, left: str, center: str, right: str) -> str:
        content = center.join(self.table_style.horizontal * (self.column_widths[c] + 2) for c in self.column_names)
        return left + content + right

    def _get_bar_mid(self) -> str:
        return self._get_bar(self.table_style.no_left, self.table_style.all, self.table_style.no_right)
