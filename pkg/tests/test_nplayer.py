import numpy as np
import pytest

from minemfg import HashRateFlow, PolicyTable, SolverConfig, solve
from minemfg.nplayer import (
    PopulationTrajectory,
    empirical_exploitability,
    gini,
    simulate_population,
    wealth_histogram,
    wealth_statistics,
    write_trajectory_csv,
)

from conftest import small_game


@pytest.fixture(scope="module")
def eq():
    game = small_game(T=15, c=0.05)
    return game, solve(game, SolverConfig())


def test_single_idle_agent_keeps_wealth():
    game = small_game(T=10)
    K, m = game.time.K, len(game.grid)
    tr = simulate_population(1, PolicyTable.zeros(K, m), HashRateFlow.constant(1.0, K), game, seed=3)
    assert np.all(tr.wealth == tr.wealth[0])


def test_increments_two_point(eq):
    game, res = eq
    tr = simulate_population(300, res.policy, res.eta, game, seed=1, lattice=False)
    dx = np.diff(tr.wealth, axis=0)
    drift = -game.params.c * tr.actions * game.time.dt
    assert np.all(np.isclose(dx, drift, atol=1e-12) | np.isclose(dx, drift + game.params.r, atol=1e-12))
    # reward count times r equals the jump part of all increments
    np.testing.assert_allclose((dx - drift).sum(), tr.wins.sum() * game.params.r, atol=1e-8)


def test_lattice_agents_track_the_forward_equation(eq):
    from minemfg import kolmogorov_forward

    game, res = eq
    N = 4000
    tr = simulate_population(N, res.policy, res.eta, game, seed=11)
    xs = game.grid.points
    assert np.all(np.isin(tr.wealth, xs))
    flow = kolmogorov_forward(res.policy, res.eta, game.mu0, game.grid, game.params, game.time)
    for k in (1, tr.K // 2, tr.K):
        m = flow.mu[k] @ xs
        sd = np.sqrt(flow.mu[k] @ (xs - m) ** 2)
        assert abs(tr.wealth[k].mean() - m) <= 4 * sd / np.sqrt(N)


def test_reproducible_and_batch_independent(eq):
    game, res = eq
    a = simulate_population(50, res.policy, res.eta, game, seed=9)
    b = simulate_population(50, res.policy, res.eta, game, seed=9)
    np.testing.assert_array_equal(a.wealth, b.wealth)
    c = simulate_population(80, res.policy, res.eta, game, seed=9)
    # agent i's stream does not depend on how many agents run with it
    np.testing.assert_array_equal(a.wealth, c.wealth[:, :50])


def test_true_mode_leave_one_out_runs(eq):
    game, res = eq
    tr = simulate_population(200, res.policy, res.eta, game, seed=2, mode="true")
    assert tr.mode == "true"
    assert np.all((tr.control_mean >= 0) & (tr.control_mean <= game.params.L))
    with pytest.raises(ValueError):
        simulate_population(5, res.policy, res.eta, game, seed=2, mode="other")
    with pytest.raises(ValueError):
        simulate_population(0, res.policy, res.eta, game, seed=2)


def test_histogram_sums_to_one(eq):
    game, res = eq
    tr = simulate_population(100, res.policy, res.eta, game, seed=4)
    for k in (0, tr.K // 2, tr.K):
        h = tr.histogram(k)
        assert abs(h.sum() - 1) <= 1e-12 and np.all(h >= 0)
    st = tr.state(0)
    assert st.seed == 4 and 0 <= st.control_mean <= game.params.L


def test_gini_examples():
    assert gini(np.full(5, 3.0)) == 0.0
    assert gini([0.0, 7.0]) == pytest.approx(0.5)
    assert gini([0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        gini([-1.0, 1.0])


def test_statistics_identical_agents(eq):
    game, res = eq
    K, m = game.time.K, len(game.grid)
    tr = simulate_population(20, PolicyTable.zeros(K, m), res.eta, game, seed=0, x0=game.grid.points[20])
    st = wealth_statistics(tr)
    assert np.all(st.gini == 0) and np.all(st.variance == 0) and np.all(st.skewness == 0)
    assert np.all(st.dropout == 1.0)


def test_exploitability_examples(eq, tmp_path):
    game, res = eq
    tr = simulate_population(400, res.policy, res.eta, game, seed=5)
    gap = empirical_exploitability(tr, game)
    assert gap >= -1e-12
    # relabelling agents leaves the aggregate, hence the gap, unchanged
    perm = np.random.default_rng(0).permutation(tr.N)
    shuffled = PopulationTrajectory(tr.wealth[:, perm], tr.actions[:, perm], tr.wins[:, perm], tr.eta_bar,
                                    tr.policy, tr.grid, tr.dt, tr.mode, tr.seed)
    assert empirical_exploitability(shuffled, game) == pytest.approx(gap, abs=1e-14)
    K, m = game.time.K, len(game.grid)
    idle = simulate_population(400, PolicyTable.zeros(K, m), res.eta, game, seed=5)
    assert empirical_exploitability(idle, game) > 1e-6
    write_trajectory_csv(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,mean_wealth,gini,dropout_fraction,empirical_control_mean,eta_bar"
    assert len(lines) == K + 2


def test_wealth_histogram_mean_preserving():
    game = small_game(T=2)
    x = np.array([1.234, 7.7, 20.01])
    h = wealth_histogram(x, game.grid)
    assert abs(h @ game.grid.points - x.mean()) <= 1e-12


def test_weighted_gini_matches_sample_gini():
    from minemfg.nplayer import gini_weighted

    rng = np.random.default_rng(1)
    x = rng.uniform(0, 10, 40)
    assert gini_weighted(x, np.ones(40)) == pytest.approx(gini(x), abs=1e-12)
    assert gini_weighted([0.0, 4.0], [0.5, 0.5]) == pytest.approx(0.5)
    # integer weights behave like repeated samples
    assert gini_weighted([1.0, 3.0], [2, 1]) == pytest.approx(gini([1.0, 1.0, 3.0]), abs=1e-12)
