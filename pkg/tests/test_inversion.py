import numpy as np
import pytest

from conftest import uniform_image
from flipconcept.errors import DimensionError, FormatError
from flipconcept.field import Rng
from flipconcept.inversion import (
    ddim_invert,
    ddim_sample,
    extract_noise_maps,
    forward_sample,
    invert,
    load_track,
    noise_map_stats,
    noising_path,
    replay,
    save_track,
)
from flipconcept.schedule import linear_schedule


def test_noiseless_limit():
    # alpha_bar = 1 at index 0: the forward formula returns x0 untouched
    s = linear_schedule()
    x0 = uniform_image(0, (4, 4, 1))
    out = forward_sample(x0, Rng(1).randn(x0.shape), 0, s)
    np.testing.assert_array_equal(out, x0)


def test_path_uses_fresh_draws_in_ascending_order(sched):
    x0 = uniform_image(0, (4, 4, 1))
    path = noising_path(x0, sched, Rng(3))
    rng = Rng(3)
    for t in range(1, sched.T + 1):
        eps = rng.randn(x0.shape)
        assert path[t - 1].tobytes() == forward_sample(x0, eps, t, sched).tobytes()


@pytest.mark.slow
def test_path_moments_monte_carlo(sched):
    x0 = uniform_image(1, (4, 4, 1))
    n = 2000
    t_mid = sched.T // 2
    xT = np.empty((n, 16))
    resid_mid = np.empty((n, 16))
    for seed in range(n):
        path = noising_path(x0, sched, Rng(seed))
        xT[seed] = path[-1].ravel()
        resid_mid[seed] = (path[t_mid - 1] - np.sqrt(sched.alpha_bar[t_mid]) * x0).ravel()

    expected = np.sqrt(sched.alpha_bar[sched.T]) * x0.ravel()
    se = np.sqrt(1 - sched.alpha_bar[sched.T]) / np.sqrt(n)
    # pooled mean within 3 standard errors; per-element within a Bonferroni-style 4.5
    assert abs((xT - expected).mean()) < 3 * se / np.sqrt(16)
    assert np.all(np.abs(xT.mean(axis=0) - expected) < 4.5 * se)

    var = resid_mid.var()
    assert abs(var / (1 - sched.alpha_bar[t_mid]) - 1) < 0.05


@pytest.mark.parametrize("seed", range(3))
def test_round_trip(den, cond, sched, seed):
    x0 = uniform_image(seed)
    track = invert(x0, den, cond, sched, Rng(seed))
    assert np.abs(replay(track, den, cond, sched) - x0).max() < 1e-4
    assert not track.z[1].any()
    assert all(track.z[t].shape == x0.shape for t in range(1, sched.T + 1))


def test_round_trip_multichannel(den3, cond, sched):
    x0 = uniform_image(5, (16, 16, 3))
    track = invert(x0, den3, cond, sched, Rng(5))
    assert np.abs(replay(track, den3, cond, sched) - x0).max() < 1e-4


def test_replay_deterministic(den, cond, sched):
    track = invert(uniform_image(0), den, cond, sched, Rng(0))
    assert replay(track, den, cond, sched).tobytes() == replay(track, den, cond, sched).tobytes()


def test_zeroed_noise_maps_lose_information(den, cond, sched):
    x0 = uniform_image(0)
    track = invert(x0, den, cond, sched, Rng(0))
    track.z[:] = 0
    assert np.abs(replay(track, den, cond, sched) - x0).max() > 1e-3


def test_noise_map_perturbation_response(den, cond, sched):
    x0 = uniform_image(1)
    track = invert(x0, den, cond, sched, Rng(1))
    base_x1 = replay(track, den, cond, sched, until=1)
    base = replay(track, den, cond, sched)

    track.z[1] += 1.0
    assert replay(track, den, cond, sched).tobytes() == base.tobytes()
    track.z[1] -= 1.0

    delta = 1.0
    track.z[2] += delta
    shift_x1 = replay(track, den, cond, sched, until=1) - base_x1
    sigma2 = sched.sigma[2]
    np.testing.assert_allclose(shift_x1, sigma2 * delta, rtol=1e-3)
    # last step is deterministic: the output moves by ~ shift / sqrt(alpha_1)
    shift_out = replay(track, den, cond, sched) - base
    assert np.abs(shift_out - sigma2 * delta / np.sqrt(sched.alpha[1])).max() < 1e-3


def test_noise_map_statistics_small_sample(den, cond, sched):
    var, corr = [], []
    for seed in range(5):
        st = noise_map_stats(invert(uniform_image(seed), den, cond, sched, Rng(seed)))
        var.append(np.mean(list(st["var"].values())))
        corr.append(np.mean(list(st["corr"].values())))
    assert np.mean(var) > 1.0
    assert np.mean(corr) < 0


def test_ddim_baseline(den, cond, sched):
    ef_err, dd_err, ef_var, dd_var = [], [], [], []
    for seed in range(10):
        x0 = uniform_image(seed)
        ef = invert(x0, den, cond, sched, Rng(seed))
        dd = ddim_invert(x0, den, cond, sched)
        ef_err.append(np.abs(replay(ef, den, cond, sched) - x0).max())
        dd_err.append(np.abs(ddim_sample(dd.x_T, den, cond, sched) - x0).max())
        ef_var.append(np.mean(list(noise_map_stats(ef)["var"].values())))
        dd_var.append(np.mean(list(noise_map_stats(dd)["var"].values())))
        assert dd_err[-1] >= ef_err[-1]
    assert np.mean(dd_var) < np.mean(ef_var)


def test_ddim_deterministic(den, cond, sched):
    x0 = uniform_image(0)
    a, b = ddim_invert(x0, den, cond, sched), ddim_invert(x0, den, cond, sched)
    assert a.x_T.tobytes() == b.x_T.tobytes()
    assert a.z.tobytes() == b.z.tobytes()


def test_extract_rejects_bad_path(den, cond, sched):
    x0 = uniform_image(0)
    path = noising_path(x0, sched, Rng(0))
    with pytest.raises(DimensionError):
        extract_noise_maps(x0, path[:-1], den, cond, sched)


def test_replay_schedule_mismatch(den, cond, sched):
    track = invert(uniform_image(0, (8, 8, 1)), den, cond, sched, Rng(0))
    with pytest.raises(DimensionError):
        replay(track, den, cond, linear_schedule(10))


def test_track_directory_round_trip(tmp_path, den, cond, sched):
    x0 = uniform_image(0, (8, 8, 1))
    track = invert(x0, den, cond, sched, Rng(0))
    save_track(track, tmp_path / "trk")
    assert (tmp_path / "trk" / "x_T.ltf").exists()
    assert (tmp_path / "trk" / "z_0002.ltf").exists()
    assert not (tmp_path / "trk" / "z_0001.ltf").exists()
    loaded = load_track(tmp_path / "trk")
    assert loaded.z.tobytes() == track.z.tobytes()
    assert loaded.cond.tokens == cond.tokens
    assert np.abs(replay(loaded, den, loaded.cond, sched) - x0).max() < 1e-4


def test_load_track_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_track(tmp_path)
