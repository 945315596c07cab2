import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Desk-scale fixture run twice through the CLI, plus the in-memory report.

    Returns a dict with the config path, both output directories and the
    ScenarioReport of the first run (reloaded from its cache).
    """
    from tariffgrid.cli import main
    from tariffgrid.scenario import run_scenario, validate_config
    from tariffgrid.synth import write_fixture

    root = tmp_path_factory.mktemp("desk")
    cfg_path = write_fixture(str(root / "data"), seed=7)
    out_a, out_b = str(root / "run_a"), str(root / "run_b")
    codes = [main(["run", "--config", cfg_path, "--out", out]) for out in (out_a, out_b)]
    cfg, errors = validate_config(cfg_path)
    assert not errors, errors
    report = run_scenario(cfg, out_a)
    return {"config": cfg_path, "cfg": cfg, "out_a": out_a, "out_b": out_b, "codes": codes, "report": report}
