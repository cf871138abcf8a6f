import json

from regionmap.services import storage_service
from regionmap.services.storage_service import (
    clear,
    delete_run,
    get_run,
    list_runs,
    load_from_disk,
    save_run,
    write_text_atomic,
)


def test_write_text_atomic_leaves_no_temporary_file(tmp_path):
    """The target holds the full text and the temporary file is gone."""
    target = tmp_path / "nested" / "out.dat"
    write_text_atomic(target, "1.0 2.0\n")

    assert target.read_text() == "1.0 2.0\n"
    assert list(target.parent.iterdir()) == [target]


def test_store_save_get_delete():
    """Records can be stored, listed, read and removed."""
    clear()
    save_run("b", {"seed": 2})
    save_run("a", {"seed": 1})

    assert list_runs() == ["a", "b"]
    assert get_run("a") == {"seed": 1}
    assert delete_run("a")
    assert not delete_run("a")
    assert get_run("a") is None


def test_store_persists_and_reloads(tmp_path, monkeypatch):
    """With persistence on, the store survives a reload from disk."""
    path = tmp_path / "store.json"
    monkeypatch.setattr(storage_service, "_store_path", lambda: path)
    clear()
    save_run("r1", {"seed": 7}, persist=True)
    assert json.loads(path.read_text()) == {"r1": {"seed": 7}}

    clear()
    assert load_from_disk() == 1
    assert get_run("r1") == {"seed": 7}


def test_load_from_disk_tolerates_a_corrupt_file(tmp_path, monkeypatch):
    """An unreadable store file leaves the store empty instead of failing."""
    path = tmp_path / "store.json"
    path.write_text("{broken")
    monkeypatch.setattr(storage_service, "_store_path", lambda: path)
    clear()

    assert load_from_disk() == 0
    assert list_runs() == []
