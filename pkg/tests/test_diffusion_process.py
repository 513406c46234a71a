import io

import numpy as np
import pandas as pd
import pytest

from gdt_libs.conditioning import ReferenceSpec
from gdt_libs.diffusion_process import (
    DDPM,
    FLOW,
    build_schedule,
    ddpm_ancestral_step,
    dump_schedule,
    flow_euler_step,
    model_time,
    q_sample,
    respace,
    sampling_positions,
    sdedit_replace,
    training_target,
)
from gdt_libs.errors import ContractError, DimensionError


def psnr(a, b, peak=2.0):
    err = np.mean((a - b) ** 2)
    return np.inf if err == 0 else 10 * np.log10(peak ** 2 / err)


def test_linear_betas():
    sched = build_schedule(DDPM, 1000)
    assert sched.betas[0] == pytest.approx(1e-4)
    assert sched.betas[-1] == pytest.approx(0.02)
    np.testing.assert_allclose(sched.alpha_bars, np.cumprod(1 - sched.betas))
    assert sched.alpha_bar(0) == 1.0
    assert np.all(np.diff(sched.alpha_bars) < 0)


def test_respace_keeps_alpha_bar_at_retained_steps():
    sched = build_schedule(DDPM, 1000)
    short = respace(sched, 50)
    assert short.T == 50
    assert short.alpha_bars[0] == sched.alpha_bars[0]
    assert short.alpha_bars[-1] == sched.alpha_bars[-1]
    np.testing.assert_allclose(np.cumprod(1 - short.betas), short.alpha_bars)
    assert model_time(1, short) == 1.0 and model_time(50, short) == 1000.0
    with pytest.raises(ContractError):
        respace(sched, 1001)
    with pytest.raises(ContractError):
        respace(sched, 0)


def test_flow_schedule_and_time_scale():
    sched = build_schedule(FLOW, 10)
    np.testing.assert_allclose(sched.times, np.linspace(0, 1, 11))
    assert model_time(0.25, sched) == 250.0
    assert sampling_positions(respace(sched, 4)) == [1.0, 0.75, 0.5, 0.25]


def test_sampling_positions_ddpm():
    assert sampling_positions(respace(build_schedule(DDPM, 100), 5)) == [5, 4, 3, 2, 1]


def test_q_sample_endpoints(rng):
    x0, eps = rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 4, 4))
    flow = build_schedule(FLOW, 10)
    np.testing.assert_array_equal(q_sample(x0, 0.0, eps, flow), x0)
    np.testing.assert_array_equal(q_sample(x0, 1.0, eps, flow), eps)
    ddpm = build_schedule(DDPM, 10)
    ab = ddpm.alpha_bar(3)
    np.testing.assert_allclose(q_sample(x0, 3, eps, ddpm), np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps)


def test_q_sample_errors(rng):
    ddpm = build_schedule(DDPM, 10)
    with pytest.raises(DimensionError):
        q_sample(np.zeros(3), 1, np.zeros(4), ddpm)
    with pytest.raises(ContractError):
        q_sample(np.zeros(3), 0, np.zeros(3), ddpm)
    with pytest.raises(ContractError):
        q_sample(np.zeros(3), 1.5, np.zeros(3), build_schedule(FLOW, 10))


def test_training_targets(rng):
    x0, eps = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_array_equal(training_target(x0, eps, 3, "epsilon-prediction"), eps)
    np.testing.assert_array_equal(training_target(x0, eps, 0.5, "velocity-flow"), eps - x0)
    with pytest.raises(ContractError):
        training_target(x0, eps, 1, "score")


@pytest.mark.parametrize("steps", [1000, 50])
def test_ddpm_chain_with_exact_noise_oracle_recovers_data(rng, steps):
    x0 = np.clip(rng.standard_normal((3, 8, 8)) * 0.5, -1, 1)
    sched = respace(build_schedule(DDPM, 1000), steps)
    x = rng.standard_normal(x0.shape)
    for t in sampling_positions(sched):
        ab = sched.alpha_bar(t)
        eps_hat = (x - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
        x = ddpm_ancestral_step(x, eps_hat, t, sched, rng)
    assert psnr(x, x0) > 40


def test_flow_chain_with_exact_velocity_oracle_recovers_data(rng):
    x0 = rng.uniform(-1, 1, (3, 8, 8))
    sched = respace(build_schedule(FLOW, 1000), 20)
    positions = sampling_positions(sched)
    x = rng.standard_normal(x0.shape)
    for k, t in enumerate(positions):
        eps_hat = (x - (1 - t) * x0) / t
        nxt = positions[k + 1] if k + 1 < len(positions) else 0.0
        x = flow_euler_step(x, eps_hat - x0, t, t - nxt)
    assert np.abs(x - x0).max() < 1e-5


def test_last_ancestral_step_adds_no_noise(rng):
    sched = build_schedule(DDPM, 10)
    x, eps = rng.standard_normal(4), rng.standard_normal(4)
    a = ddpm_ancestral_step(x, eps, 1, sched, np.random.default_rng(0))
    b = ddpm_ancestral_step(x, eps, 1, sched, np.random.default_rng(99))
    np.testing.assert_array_equal(a, b)


def test_euler_step_bounds():
    with pytest.raises(ContractError):
        flow_euler_step(np.zeros(2), np.zeros(2), 0.5, 0.6)
    with pytest.raises(ContractError):
        flow_euler_step(np.zeros(2), np.zeros(2), 0.5, 0.0)


def test_sdedit_without_references_draws_nothing(rng):
    sched = build_schedule(DDPM, 10)
    latents = [rng.standard_normal((3, 4, 4)) for _ in range(3)]
    draw = np.random.default_rng(5)
    out = sdedit_replace(latents, ReferenceSpec.none(3), 4, sched, draw)
    assert all(a is b for a, b in zip(out, latents))
    assert draw.random() == np.random.default_rng(5).random()


def test_sdedit_replaces_reference_members(rng):
    sched = build_schedule(FLOW, 10)
    ref = rng.uniform(-1, 1, (3, 4, 4))
    latents = [rng.standard_normal((3, 4, 4)) for _ in range(2)]
    refs = ReferenceSpec([True, False], {0: ref})
    out = sdedit_replace(latents, refs, 0.0, sched, rng)
    np.testing.assert_array_equal(out[0], ref)
    assert out[1] is latents[1]
    with pytest.raises(ContractError):
        sdedit_replace(latents, ReferenceSpec([True, False]), 0.5, sched, rng)


def test_dump_schedule_is_monotone():
    table = pd.read_csv(io.StringIO(dump_schedule(build_schedule(DDPM, 100))), sep="\t")
    assert list(table.columns) == ["t", "beta", "alpha_bar"]
    assert len(table) == 100
    assert table["alpha_bar"].is_monotonic_decreasing
    assert table["beta"].is_monotonic_increasing


def test_single_step_and_empty_schedules():
    sched = build_schedule(DDPM, 1)
    assert sched.alpha_bar(1) == pytest.approx(1 - 1e-4)
    with pytest.raises(ContractError):
        build_schedule(DDPM, 0)


def test_alpha_bar_matches_direct_product():
    sched = build_schedule(DDPM, 1000)
    product = 1.0
    for k in range(1000):
        product *= 1.0 - (1e-4 + k * (0.02 - 1e-4) / 999)
    assert sched.alpha_bar(1000) == pytest.approx(product, rel=1e-10)
    assert 0.0 < sched.alpha_bar(1000) < 1.0


def test_last_ancestral_step_inverts_exactly(rng):
    sched = build_schedule(DDPM, 10)
    x0, eps = rng.standard_normal(6), rng.standard_normal(6)
    x1 = q_sample(x0, 1, eps, sched)
    np.testing.assert_allclose(ddpm_ancestral_step(x1, eps, 1, sched, rng), x0, atol=1e-4)
    alpha1 = 1.0 - sched.beta(1)
    np.testing.assert_allclose(ddpm_ancestral_step(x1, np.zeros(6), 1, sched, rng), x1 / np.sqrt(alpha1))


def test_fully_noised_statistics(rng):
    sched = build_schedule(DDPM, 1000)
    x0 = rng.uniform(-1, 1, 10000)
    xt = q_sample(x0, 1000, rng.standard_normal(x0.shape), sched)
    ab = sched.alpha_bar(1000)
    want_mean, want_var = np.sqrt(ab) * x0.mean(), 1 - ab + ab * x0.var()
    assert abs(xt.mean() - want_mean) < 3 * np.sqrt(want_var / x0.size)
    assert abs(xt.var() - want_var) < 3 * want_var * np.sqrt(2 / x0.size)


def test_one_euler_step_over_the_whole_path(rng):
    x0, eps = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_allclose(flow_euler_step(eps, eps - x0, 1.0, 1.0), x0)


def test_single_sampling_step_starts_from_pure_noise(rng):
    sched = build_schedule(DDPM, 1000)
    one = respace(sched, 1)
    assert sampling_positions(one) == [1]
    assert one.alpha_bar(1) == sched.alpha_bar(1000)
    assert model_time(1, one) == 1000.0
    x0, eps = rng.standard_normal(5), rng.standard_normal(5)
    x_t = q_sample(x0, 1, eps, one)
    np.testing.assert_allclose(ddpm_ancestral_step(x_t, eps, 1, one, rng), x0, atol=1e-6)
    assert respace(sched, 2).model_times.tolist() == [1.0, 1000.0]
