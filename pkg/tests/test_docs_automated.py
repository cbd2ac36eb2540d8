#  Copyright (c) 2024 ltc-stability developers

import pathlib
import re

import pytest

ROOT = pathlib.Path(__file__).parent.parent
DOCUMENTATION = [ROOT / "README.md", *sorted((ROOT / "docs").glob("*.md"))]


def get_header(msg):
    msg_len = len(msg)
    header = [
        "#" * (msg_len + 6),
        "## " + msg + " ##",
        "#" * (msg_len + 6),
    ]
    return "\n".join(header) + "\n"


def scan_for_code_blobs(text, source):
    # Capture code blocks starting with py or python
    blobs = re.findall(r"```(py|python)\n([\s\S]+?)\n```", text)

    new_blobs = []
    for mode, blob in blobs:
        if "..." in blob:
            # ignore blobs that are not complete
            continue
        blob = get_header(f"{source} ({mode})") + blob

        # `py` blocks continue the previous block, `python` blocks start a new scope
        if mode == "py" and new_blobs:
            new_blobs[-1] = new_blobs[-1] + "\n" + blob
        else:
            new_blobs.append(blob)
    return new_blobs


CODE_BLOBS = [
    pytest.param(blob, id=f"{path.stem}-{idx}")
    for path in DOCUMENTATION
    for idx, blob in enumerate(scan_for_code_blobs(path.read_text(), path.name))
]


def test_documentation_has_examples():
    assert len(CODE_BLOBS) >= 5


@pytest.mark.parametrize("blob", CODE_BLOBS)
def test_code_blob_runs(blob, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    exec(compile(blob, "<documentation>", "exec"), {})
