import os
from pathlib import Path

import pytest

from utils.initializer import get_env, get_int_env, init


def test_get_env(monkeypatch):
    monkeypatch.setenv("ATOMICS_TEST_VALUE", "abc")
    assert get_env("ATOMICS_TEST_VALUE") == "abc"
    monkeypatch.delenv("ATOMICS_TEST_VALUE")
    assert get_env("ATOMICS_TEST_VALUE", "fallback") == "fallback"
    assert get_env("ATOMICS_TEST_VALUE", throw=False) is None
    with pytest.raises(RuntimeError):
        get_env("ATOMICS_TEST_VALUE")


def test_get_int_env(monkeypatch):
    monkeypatch.delenv("ATOMICS_TEST_INT", raising=False)
    assert get_int_env("ATOMICS_TEST_INT", 4) == 4
    monkeypatch.setenv("ATOMICS_TEST_INT", "12")
    assert get_int_env("ATOMICS_TEST_INT", 4) == 12
    monkeypatch.setenv("ATOMICS_TEST_INT", "twelve")
    with pytest.raises(RuntimeError):
        get_int_env("ATOMICS_TEST_INT", 4)


def test_init_reads_dotenv(tmp_path):
    (tmp_path / ".env").write_text("ATOMICS_DOTENV_CHECK=7\n")
    try:
        root = init("atomics")
        assert Path(root).resolve() == tmp_path.resolve()
        assert get_int_env("ATOMICS_DOTENV_CHECK", 0) == 7
    finally:
        os.environ.pop("ATOMICS_DOTENV_CHECK", None)
    assert (tmp_path / "logs" / "atomics.log").exists()
