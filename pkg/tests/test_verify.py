import pytest

from fade.faults import ENV_VAR
from fade.verify import CHECKS, run_all


@pytest.mark.parametrize("seed", [42, 7, 9])
def test_all_invariants_pass(seed):
    results = run_all(seed)
    assert len(results) >= 25
    failed = [(name, detail) for name, ok, detail in results if not ok]
    assert not failed


def test_softmax_fault_is_caught(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "softmax")
    failed = [name for name, ok, _ in run_all(42) if not ok]
    assert any("softmax" in name for name in failed)


def test_vjp_fault_is_caught(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "vjp")
    failed = [name for name, ok, _ in run_all(42) if not ok]
    assert any("gradient" in name for name in failed)


def test_subset_selection():
    name = next(iter(CHECKS))
    assert [r[0] for r in run_all(1, names=[name])] == [name]
