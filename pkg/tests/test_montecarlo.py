"""Tests for the counter-based noise generator and the Euler cost machinery."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtri

from tilqr import (
    ConfigError,
    GainLabel,
    GainSchedule,
    LqrParams,
    NumericError,
    SimConfig,
    TimeGrid,
    TrajectoryBatch,
    compare_strategies,
    equilibrium_gain,
    estimate_cost,
    estimate_cost_streaming,
    exact_cost,
    naive_gain,
    normal_stream,
    raw_blocks,
    simulate_paths,
    solve_equilibrium_riccati,
    solve_naive,
)
from tilqr.montecarlo import _CHUNK, _gain_on_sim_grid


def constant_gain(k: float, c: float, n_steps: int, horizon: float = 1.0) -> GainSchedule:
    ones = np.ones(n_steps + 1)
    return GainSchedule(grid=TimeGrid(n_steps, horizon), k_state=k * ones,
                        c_offset=c * ones, label=GainLabel.CUSTOM)


def numpy_block_words(seed: int, stream: int, block: int, n_words: int = 4) -> np.ndarray:
    """Philox 4x64 output words from numpy for one (stream, block) counter.

    numpy's ``Philox`` bit generator increments its 256-bit counter before
    producing each block, so the counter is backed up by one (mod 2^256)
    relative to the counter our generator hashes directly.
    """
    c = ((block | (stream << 64)) - 1) & ((1 << 256) - 1)
    counter = np.array([(c >> (64 * i)) & 0xFFFFFFFFFFFFFFFF for i in range(4)],
                       dtype=np.uint64)
    key = np.array([seed, 0], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter).random_raw(n_words)


class TestRawBlocks:
    def test_matches_numpy_philox_word_for_word(self):
        cases = [
            (42, 7, 3),
            (42, 7, 0),        # counter borrow into the stream word
            (42, 0, 0),        # full 256-bit wraparound
            (0, 0, 0),
            (123456789, 2 ** 40, 5),
            (2 ** 63, 1, 2 ** 20),
        ]
        for seed, stream, block in cases:
            words = np.stack(raw_blocks(seed, np.array([stream], dtype=np.uint64),
                                        np.array([block], dtype=np.uint64)), axis=-1)
            expected = numpy_block_words(seed, stream, block)
            assert np.array_equal(words.ravel(), expected), (seed, stream, block)

    def test_vector_call_matches_elementwise_calls(self):
        streams = np.array([0, 3, 3, 17], dtype=np.uint64)
        blocks = np.array([5, 0, 2, 9], dtype=np.uint64)
        batch = np.stack(raw_blocks(99, streams, blocks), axis=-1)
        for i in range(streams.size):
            one = np.stack(raw_blocks(99, streams[i:i + 1], blocks[i:i + 1]), axis=-1)
            assert np.array_equal(batch[i], one[0])


class TestNormalStream:
    def test_matches_inverse_cdf_of_numpy_words(self):
        seed, first_stream, n_streams, n_draws = 42, 5, 3, 7
        got = normal_stream(seed, first_stream, n_streams, n_draws)
        assert got.shape == (n_streams, n_draws)
        for row, stream in enumerate(range(first_stream, first_stream + n_streams)):
            words = numpy_block_words(seed, stream, 0, n_words=8)[:n_draws]
            u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
            assert np.array_equal(got[row], ndtri(u))

    def test_rows_depend_only_on_absolute_stream_index(self):
        wide = normal_stream(7, 0, 8, 20)
        assert np.array_equal(wide[5], normal_stream(7, 5, 1, 20)[0])
        assert np.array_equal(wide[2:6], normal_stream(7, 2, 4, 20))

    def test_draws_are_finite_with_plausible_moments(self):
        z = normal_stream(1, 0, 200, 500)
        assert np.isfinite(z).all()
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02


class TestSimConfig:
    @pytest.mark.parametrize("kwargs, match", [
        (dict(n_paths=0), "n_paths"),
        (dict(n_steps=0), "n_steps"),
        (dict(seed=-1), "seed"),
        (dict(seed=2 ** 64), "seed"),
        (dict(n_paths=7, antithetic=True), "even"),
    ])
    def test_rejects_bad_settings(self, kwargs, match):
        with pytest.raises(ConfigError, match=match):
            SimConfig(**kwargs)


class TestGainResampling:
    def test_downsamples_to_nearest_node(self):
        gain = constant_gain(0.0, 0.0, 10)
        gain = GainSchedule(grid=gain.grid, k_state=np.arange(11.0),
                            c_offset=np.arange(11.0), label=GainLabel.CUSTOM)
        k, c = _gain_on_sim_grid(gain, 5)
        assert np.array_equal(k, [0.0, 2.0, 4.0, 6.0, 8.0])
        assert np.array_equal(c, k)

    def test_upsampling_ties_round_toward_the_later_node(self):
        gain = GainSchedule(grid=TimeGrid(2, 1.0), k_state=np.arange(3.0),
                            c_offset=np.zeros(3), label=GainLabel.CUSTOM)
        # sim times 0, 1/4, 1/2, 3/4; 1/4 is equidistant between nodes 0 and 1
        k, _ = _gain_on_sim_grid(gain, 4)
        assert np.array_equal(k, [0.0, 1.0, 1.0, 2.0])

    def test_identical_grids_pass_through(self):
        gain = GainSchedule(grid=TimeGrid(6, 1.0), k_state=np.arange(7.0),
                            c_offset=np.arange(7.0) ** 2, label=GainLabel.CUSTOM)
        k, c = _gain_on_sim_grid(gain, 6)
        assert np.array_equal(k, gain.k_state[:6])
        assert np.array_equal(c, gain.c_offset[:6])

    @given(st.integers(1, 12), st.integers(1, 6), st.booleans())
    def test_chosen_node_is_nearest_in_time(self, base, factor, refine_sim):
        n_ode, n_sim = (base, base * factor) if refine_sim else (base * factor, base)
        gain = GainSchedule(grid=TimeGrid(n_ode, 1.0),
                            k_state=np.arange(n_ode + 1.0),
                            c_offset=np.zeros(n_ode + 1), label=GainLabel.CUSTOM)
        k, _ = _gain_on_sim_grid(gain, n_sim)
        t_sim = np.arange(n_sim) / n_sim
        t_node = k / n_ode  # k_state stores the node index, so this is the node time
        gap = np.abs(t_node - t_sim)
        assert np.all(gap <= 0.5 / n_ode + 1e-15)
        ties = np.abs(gap - 0.5 / n_ode) < 1e-15
        assert np.all(t_node[ties] > t_sim[ties])

    def test_incommensurate_grids_rejected(self):
        gain = constant_gain(0.1, 0.0, 10)
        with pytest.raises(ConfigError, match="refinement-compatible"):
            _gain_on_sim_grid(gain, 4)


class TestSimulatePaths:
    def test_noise_free_paths_follow_the_euler_recursion(self):
        # sigma is positive but far below one ulp of the state, so adding the
        # noise term cannot change any bit of the update
        params = LqrParams(sigma=1e-300)
        gain = constant_gain(0.3, 0.1, 8)
        batch = simulate_paths(gain, params, SimConfig(n_paths=3, n_steps=8, seed=0))
        dt = params.horizon / 8
        x = params.x0
        expected = [x]
        for _ in range(8):
            a = -0.3 * x - 0.1
            x = x + (params.a_bar * x + params.b_bar * a) * dt
            expected.append(x)
        assert np.array_equal(batch.states, np.tile(expected, (3, 1)))
        assert batch.valid_mask.all()

    def test_bit_identical_across_runs_and_worker_counts(self):
        params = LqrParams()
        grid = TimeGrid(25, params.horizon)
        gain = equilibrium_gain(solve_equilibrium_riccati(params, grid), params)
        config = SimConfig(n_paths=2 * _CHUNK + 100, n_steps=25, seed=11)
        first = simulate_paths(gain, params, config)
        again = simulate_paths(gain, params, config)
        threaded = simulate_paths(gain, params, config, workers=4)
        assert np.array_equal(first.states, again.states)
        assert np.array_equal(first.controls, again.controls)
        assert np.array_equal(first.states, threaded.states)
        assert np.array_equal(first.controls, threaded.controls)

    def test_each_path_is_a_pure_function_of_its_stream_index(self):
        params = LqrParams()
        gain = constant_gain(0.5, 0.0, 16)
        small = simulate_paths(gain, params, SimConfig(n_paths=3, n_steps=16, seed=5))
        large = simulate_paths(gain, params, SimConfig(n_paths=5, n_steps=16, seed=5))
        assert np.array_equal(small.states, large.states[:3])

    def test_different_seeds_give_different_noise(self):
        params = LqrParams()
        gain = constant_gain(0.5, 0.0, 16)
        a = simulate_paths(gain, params, SimConfig(n_paths=4, n_steps=16, seed=1))
        b = simulate_paths(gain, params, SimConfig(n_paths=4, n_steps=16, seed=2))
        assert not np.array_equal(a.states, b.states)

    def test_antithetic_pairs_mirror_exactly(self):
        # with x0 = 0 and zero gain every partial sum negates bit for bit
        params = LqrParams(a_bar=0.0, x0=0.0)
        gain = constant_gain(0.0, 0.0, 32)
        batch = simulate_paths(gain, params,
                               SimConfig(n_paths=8, n_steps=32, seed=3, antithetic=True))
        assert np.array_equal(batch.states[1::2], -batch.states[0::2])
        assert not np.array_equal(batch.states[0], batch.states[2])

    def test_horizon_mismatch_rejected(self):
        gain = constant_gain(0.1, 0.0, 8, horizon=2.0)
        with pytest.raises(ConfigError, match="horizon"):
            simulate_paths(gain, LqrParams(), SimConfig(n_paths=2, n_steps=8, seed=0))

    def test_explosive_gain_is_flagged(self):
        gain = constant_gain(-1e154, 0.0, 4)
        with pytest.raises(NumericError, match="non-finite"):
            simulate_paths(gain, LqrParams(), SimConfig(n_paths=8, n_steps=4, seed=0))

    def test_batch_arrays_are_readonly(self):
        gain = constant_gain(0.1, 0.0, 4)
        batch = simulate_paths(gain, LqrParams(), SimConfig(n_paths=2, n_steps=4, seed=0))
        with pytest.raises(ValueError):
            batch.states[0, 0] = 5.0
        with pytest.raises(ValueError):
            batch.controls[0, 0] = 5.0

    def test_times_span_the_horizon(self):
        gain = constant_gain(0.1, 0.0, 4, horizon=2.5)
        batch = simulate_paths(gain, LqrParams(horizon=2.5),
                               SimConfig(n_paths=2, n_steps=4, seed=0))
        assert batch.times[0] == 0.0
        assert batch.times[-1] == 2.5


def hand_built_batch(states, controls, antithetic=False):
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    config = SimConfig(n_paths=states.shape[0], n_steps=controls.shape[1],
                       seed=0, antithetic=antithetic)
    return TrajectoryBatch(params=LqrParams(), config=config, states=states,
                           controls=controls, strategy_label=GainLabel.CUSTOM)


class TestEstimateCost:
    def test_left_endpoint_rule_and_sample_statistics(self):
        params = LqrParams()  # horizon 1, gamma 5, x0 = 1
        batch = hand_built_batch(
            states=[[1.0, 2.0, 3.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]],
            controls=[[0.5, -1.0], [2.0, 0.0], [0.0, 0.0]])
        dt = 0.5
        per_path = np.array([
            0.5 * dt * (0.25 + 1.0) + 2.5 * 4.0,
            0.5 * dt * 4.0,
            0.0,
        ])
        est = estimate_cost(batch, params)
        assert est.mean == pytest.approx(per_path.mean(), abs=1e-15)
        assert est.stderr == pytest.approx(per_path.std(ddof=1) / np.sqrt(3), abs=1e-15)
        assert est.n_paths == 3

    def test_single_path_has_zero_stderr(self):
        batch = hand_built_batch([[1.0, 1.0]], [[0.3]])
        est = estimate_cost(batch, LqrParams())
        assert est.stderr == 0.0
        assert est.n_paths == 1

    def test_non_finite_paths_are_excluded(self):
        states = np.array([[1.0, 1.0, 1.0], [1.0, np.nan, 1.0], [1.0, 2.0, 1.0]])
        controls = np.array([[0.1, 0.1], [0.1, 0.1], [0.2, 0.2]])
        est = estimate_cost(hand_built_batch(states, controls), LqrParams())
        good = hand_built_batch(states[[0, 2]], controls[[0, 2]])
        assert est.mean == estimate_cost(good, LqrParams()).mean
        assert est.n_paths == 2

    def test_antithetic_mode_drops_pairs_whole(self):
        states = np.array([[1.0, 1.0], [1.0, np.nan], [1.0, 2.0], [1.0, 0.0]])
        controls = np.array([[0.1], [0.1], [0.4], [-0.4]])
        est = estimate_cost(hand_built_batch(states, controls, antithetic=True),
                            LqrParams())
        # pair (0, 1) has a bad member, so only the (2, 3) pair survives;
        # both its members cost 0.5*dt*0.16 + 2.5*1 with dt = 1
        pair_mean = 0.5 * 0.16 + 2.5
        assert est.n_paths == 1
        assert est.mean == pytest.approx(pair_mean, abs=1e-15)
        assert est.stderr == 0.0

    def test_no_finite_paths_is_an_error(self):
        batch = hand_built_batch([[1.0, np.nan]], [[0.1]])
        with pytest.raises(ConfigError, match="no finite paths"):
            estimate_cost(batch, LqrParams())

    def test_agrees_with_the_quadrature_reference(self):
        params = LqrParams()
        grid = TimeGrid(200, params.horizon)
        gain = equilibrium_gain(solve_equilibrium_riccati(params, grid), params)
        batch = simulate_paths(gain, params, SimConfig(n_paths=20_000, n_steps=200, seed=42))
        est = estimate_cost(batch, params)
        reference = exact_cost(gain, params).total
        assert est.stderr > 0.0
        assert abs(est.mean - reference) <= 3.0 * est.stderr


class TestStreamingEstimate:
    def test_matches_the_batch_route(self):
        # summation order differs (running accumulation vs one big reduction),
        # so the contract is agreement to rounding, not bit equality
        params = LqrParams()
        grid = TimeGrid(100, params.horizon)
        gain = naive_gain(solve_naive(params, grid), params)
        config = SimConfig(n_paths=10_000, n_steps=100, seed=9)
        batch_est = estimate_cost(simulate_paths(gain, params, config), params)
        stream_est = estimate_cost_streaming(gain, params, config)
        assert stream_est.n_paths == batch_est.n_paths
        assert stream_est.mean == pytest.approx(batch_est.mean, rel=1e-12)
        assert stream_est.stderr == pytest.approx(batch_est.stderr, rel=1e-12)

    def test_worker_count_does_not_change_the_estimate(self):
        params = LqrParams()
        grid = TimeGrid(20, params.horizon)
        gain = equilibrium_gain(solve_equilibrium_riccati(params, grid), params)
        config = SimConfig(n_paths=2 * _CHUNK + 4, n_steps=20, seed=13)
        serial = estimate_cost_streaming(gain, params, config)
        threaded = estimate_cost_streaming(gain, params, config, workers=4)
        assert serial.mean == threaded.mean
        assert serial.stderr == threaded.stderr

    def test_explosive_gain_is_flagged(self):
        gain = constant_gain(-1e154, 0.0, 4)
        with pytest.raises(NumericError, match="non-finite"):
            estimate_cost_streaming(gain, LqrParams(), SimConfig(n_paths=8, n_steps=4, seed=0))

    def test_antithetic_counts_pairs_once(self):
        params = LqrParams()
        gain = constant_gain(0.0, 0.0, 50)
        config = SimConfig(n_paths=2_000, n_steps=50, seed=21, antithetic=True)
        est = estimate_cost_streaming(gain, params, config)
        assert est.n_paths == 1_000

    def test_antithetic_reduces_variance_for_a_drifting_law(self):
        # zero control leaves the drift unopposed, so the terminal miss has a
        # large odd component and mirroring must help
        params = LqrParams()
        gain = constant_gain(0.0, 0.0, 100)
        plain = estimate_cost_streaming(
            gain, params, SimConfig(n_paths=10_000, n_steps=100, seed=7))
        paired = estimate_cost_streaming(
            gain, params, SimConfig(n_paths=10_000, n_steps=100, seed=7, antithetic=True))
        assert paired.stderr < plain.stderr
        reference = exact_cost(gain, params).total
        assert abs(paired.mean - reference) <= 3.0 * paired.stderr


class TestCompareStrategies:
    def test_equal_gains_under_common_noise_are_identical(self):
        params = LqrParams()
        gain = constant_gain(0.4, 0.1, 30)
        result = compare_strategies(params, SimConfig(n_paths=64, n_steps=30, seed=2),
                                    [gain, gain])
        assert result.labels == ("custom_0", "custom_1")
        assert np.array_equal(result.batches[0].states, result.batches[1].states)
        assert np.array_equal(result.mean_state[0], result.mean_state[1])

    def test_distinct_labels_pass_through_unchanged(self):
        params = LqrParams()
        grid = TimeGrid(30, params.horizon)
        eq = equilibrium_gain(solve_equilibrium_riccati(params, grid), params)
        nv = naive_gain(solve_naive(params, grid), params)
        result = compare_strategies(params, SimConfig(n_paths=64, n_steps=30, seed=2),
                                    [eq, nv])
        assert result.labels == ("equilibrium", "naive")
        assert result.mean_state.shape == (2, 31)
        assert result.mean_abs_control.shape == (2, 30)
        assert np.array_equal(result.times, np.linspace(0.0, 1.0, 31))

    def test_needs_at_least_two_strategies(self):
        gain = constant_gain(0.1, 0.0, 8)
        with pytest.raises(ConfigError, match="two strategies"):
            compare_strategies(LqrParams(), SimConfig(n_paths=4, n_steps=8, seed=0), [gain])


class TestEulerConvergence:
    def test_first_order_in_the_step_size(self):
        # constant gain turns the drift into x' = lam*x + d with a known flow;
        # vanishing sigma makes the scheme deterministic
        params = LqrParams(sigma=1e-300)
        lam = params.a_bar - params.b_bar * 0.3
        d = -params.b_bar * 0.1
        exact_terminal = (params.x0 + d / lam) * np.exp(lam * params.horizon) - d / lam
        errors = []
        for n in (50, 100, 200):
            gain = constant_gain(0.3, 0.1, n)
            batch = simulate_paths(gain, params, SimConfig(n_paths=1, n_steps=n, seed=0))
            errors.append(abs(batch.states[0, -1] - exact_terminal))
        orders = np.log2(np.array(errors[:-1]) / errors[1:])
        assert np.all(orders > 0.9)
        assert np.all(orders < 1.1)
