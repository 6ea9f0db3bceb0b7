import pytest

from minemfg import (
    ActionGrid,
    Game,
    ModelParams,
    TimeGrid,
    UtilitySpec,
    WealthGrid,
    project_truncated_normal,
)

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def small_game(n=0, T=20, m=96, na=24, c=0.02, r=2.0, M=5.0, L=2.0, eps=0.0, sd=1.5,
               utility=UtilitySpec(), lo=-8.0, hi=60.0):
    params = ModelParams(c=c, r=r, M=M, eps=eps, L=L)
    grid = WealthGrid.linspace(lo, hi, m)
    mu0 = project_truncated_normal(grid.points, 5.0, sd)
    return Game(params, TimeGrid(n, T), grid, ActionGrid.linspace(L, na), utility, mu0)


@pytest.fixture
def game():
    return small_game()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
