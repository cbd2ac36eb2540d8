#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from colorama import Back, Fore, Style

ALL_COLOR_NAME = [x for x in dir(Fore) if not x.startswith("__")]
ALL_STYLE_NAME = [x for x in dir(Style) if not x.startswith("__")]
ALL_COLOR_STYLE = [getattr(Fore, x) for x in ALL_COLOR_NAME] + [getattr(Back, x) for x in ALL_COLOR_NAME]
ALL_COLOR_STYLE += [getattr(Style, x) for x in ALL_STYLE_NAME]

COLORAMA_TRANSLATE = {
    "bold": "bright",
}

# Row colors of the verdicts printed by the command line
VERDICT_COLORS = {
    "Converged": "green",
    "Stable": "green",
    "Collapsed": "red",
    "NeedsSupport": "yellow",
    "Undecided": "yellow",
    "MaxIter": "red",
}

NoneType = type(None)
ColorFormat = Union[str, tuple, list, NoneType]
ColorFormatTuple = (str, tuple, list, NoneType)


def _colorama_code(name: str) -> str:
    key = COLORAMA_TRANSLATE.get(name.lower(), name.lower()).upper()
    for source in (Fore, Style):
        if hasattr(source, key):
            return getattr(source, key)

    assert name in ALL_COLOR_STYLE, f"Color {name!r} incorrect! Available: {' '.join(ALL_COLOR_NAME + ALL_STYLE_NAME)}"
    return name


def maybe_convert_to_colorama(color: ColorFormat) -> str:
    """Turn names like "red" or "bold green" (or lists of names) into colorama escape codes."""
    if not color:
        return ""
    if isinstance(color, str):
        color = color.split(" ")
    return "".join(_colorama_code(x) for x in color)


@dataclass(frozen=True)
class TableStyle:
    """Border glyphs of a table.

    Corner names tell which directions the line continues in, e.g. `down_right` is the top left corner and
    `no_up` is a junction of the top border.
    """

    name: str
    cell_overflow: str
    horizontal: str
    vertical: str
    all: str
    up_left: str
    up_right: str
    down_left: str
    down_right: str
    no_left: str
    no_right: str
    no_up: str
    no_down: str

    @classmethod
    def from_glyphs(cls, name: str, glyphs: str, cell_overflow: str = "…") -> TableStyle:
        """Build from 11 glyphs: horizontal, vertical, cross, the four corners, the four junctions."""
        assert len(glyphs) == 11, f"Style '{name}' needs 11 glyphs, got {len(glyphs)}!"
        return cls(name, cell_overflow, *glyphs)


TABLE_STYLES = {
    style.name: style
    for style in (
        TableStyle.from_glyphs("modern", "─│┼┘└┐┌├┤┬┴"),
        TableStyle.from_glyphs("round", "─│┼╯╰╮╭├┤┬┴"),
        TableStyle.from_glyphs("double", "═║╬╝╚╗╔╠╣╦╩"),
        TableStyle.from_glyphs("bold", "━┃╋┛┗┓┏┣┫┳┻"),
        TableStyle.from_glyphs("ascii", "-|+++++++++", cell_overflow="_"),
        TableStyle.from_glyphs("hidden", " " * 11, cell_overflow=" "),
    )
}


def available_table_styles() -> list[TableStyle]:
    return list(TABLE_STYLES.values())


def parse_table_style(description: str | TableStyle) -> TableStyle:
    if isinstance(description, TableStyle):
        return description
    name = description.strip(" ")
    if name not in TABLE_STYLES:
        raise ValueError(f"Table style '{description}' not found. Available: {', '.join(TABLE_STYLES)}")
    return TABLE_STYLES[name]
