"""Access to the editable data tables shipped in ``expbase/data``."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any


@lru_cache(maxsize=None)
def load_table(name: str) -> Any:
    """Load a bundled JSON table by file name (e.g. ``"gazetteer.json"``)."""
    return json.loads(resources.files("expbase.data").joinpath(name).read_text(encoding="utf-8"))


def load_json_path(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
