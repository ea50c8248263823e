"""The built-in invariant battery must pass and stay deterministic."""

from semlink.checks import ALL_CHECKS, CheckFailure, run_all


def test_battery_all_pass():
    outcomes = run_all(0)
    assert len(outcomes) == len(ALL_CHECKS)
    failed = [(n, d) for n, ok, d in outcomes if not ok]
    assert not failed, failed


def test_battery_names_unique_and_stable():
    names = [n for n, _, _ in run_all(0)]
    assert len(set(names)) == len(names)
    assert names == [n for n, _, _ in run_all(0)]


def test_failures_are_reported_not_raised(monkeypatch):
    import semlink.checks as M

    def broken(seed):
        raise CheckFailure("synthetic breakage")

    monkeypatch.setattr(M, "ALL_CHECKS", (("synthetic", broken),))
    (name, ok, detail), = M.run_all(0)
    assert name == "synthetic" and not ok
    assert "synthetic breakage" in detail
