"""
Lightweight persistence layer for run records and experiment outputs.

This module provides an in-memory key/value store for run records
submitted over HTTP, with optional JSON file persistence. It uses a
re-entrant lock so concurrent FastAPI workers can mutate it safely.

`write_text_atomic` is the single way output files are written: a
temporary file is written first, then moved into place, so an
interrupted write never leaves a truncated file behind.
"""

import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, List, Optional, Union

from regionmap.config import get_settings

logger = logging.getLogger(__name__)

# Primary in-memory backing store and synchronization primitive
_STORE: Dict[str, Dict] = {}
_STORE_LOCK = threading.RLock()


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp_path, path)
    return path


def _store_path() -> Path:
    return Path(get_settings().STORE_PATH)


def _persist_to_disk() -> None:
    """Atomic write of the entire store to JSON on disk."""
    write_text_atomic(_store_path(), json.dumps(_STORE, indent=2, sort_keys=True))


def load_from_disk() -> int:
    """
    Initialize in-memory state from the persisted JSON file.

    Missing or unreadable files leave the store empty; returns the
    number of loaded records.
    """
    path = _store_path()
    if not path.exists():
        return 0
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        logger.warning("run store at %s is unreadable, starting empty: %s", path, exc)
        return 0
    with _STORE_LOCK:
        _STORE.clear()
        _STORE.update(data)
        return len(_STORE)


def save_run(run_id: str, record: Dict, persist: bool = False) -> None:
    """
    Insert or update a run record.

    If persist=True, changes are synchronized to disk within the lock.
    Persistence failures are logged and do not fail the request.
    """
    with _STORE_LOCK:
        _STORE[run_id] = record
        if persist:
            try:
                _persist_to_disk()
            except OSError as exc:
                logger.warning("could not persist run store: %s", exc)


def get_run(run_id: str) -> Optional[Dict]:
    with _STORE_LOCK:
        return _STORE.get(run_id)


def delete_run(run_id: str, persist: bool = False) -> bool:
    """Remove a run record; True if it existed."""
    with _STORE_LOCK:
        if run_id not in _STORE:
            return False
        del _STORE[run_id]
        if persist:
            try:
                _persist_to_disk()
            except OSError as exc:
                logger.warning("could not persist run store: %s", exc)
        return True


def list_runs() -> List[str]:
    with _STORE_LOCK:
        return sorted(_STORE.keys())


def clear() -> None:
    with _STORE_LOCK:
        _STORE.clear()
