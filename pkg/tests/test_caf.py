import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ogradar.caf import (CafConfig, DelayDopplerMap, Detection, caf_direct, caf_power, cfar_alpha,
                         compute_caf, detect, doppler_to_range_rate, estimate_snr, noise_floor,
                         processing_gain, range_rate_to_doppler, read_detections, read_map,
                         write_detections, write_map)
from ogradar.constants import SPEED_OF_LIGHT

FS = 1e4


def noise(n, rng):
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def echo(ref, delay, doppler, fs=FS):
    t = np.arange(ref.size)
    out = np.zeros_like(ref)
    out[delay:] = ref[:ref.size - delay]
    return out * np.exp(2j * np.pi * doppler * t / fs)


def exp_map(shape, rng, zero=None):
    return DelayDopplerMap.from_linear(rng.exponential(size=shape), 1 / FS, 1.0,
                                       shape[1] // 2 if zero is None else zero)


def test_config_invariants():
    cfg = CafConfig(cpi=0.25, max_delay=0.005, doppler_span=400, bandwidth=50e3)
    assert cfg.doppler_res * cfg.cpi == 1.0
    assert cfg.delay_res * cfg.bandwidth == 1.0
    assert (cfg.n_samples, cfg.n_delay, cfg.n_doppler, cfg.zero_doppler_bin) == (12500, 250, 100, 50)
    with pytest.raises(ValueError):
        CafConfig(cpi=0.0, max_delay=0.01, doppler_span=10, bandwidth=FS)


def test_cpi_longer_than_data_rejected():
    rng = np.random.default_rng(0)
    x = noise(100, rng)
    with pytest.raises(ValueError):
        caf_power(x, x, CafConfig(cpi=1.0, max_delay=0.001, doppler_span=10, bandwidth=FS))


def test_autocorrelation_peak():
    rng = np.random.default_rng(1)
    ref = noise(4000, rng)
    cfg = CafConfig(cpi=0.4, max_delay=0.005, doppler_span=50, bandwidth=FS)
    p = caf_power(ref, ref, cfg)
    assert np.unravel_index(np.argmax(p), p.shape) == (0, cfg.zero_doppler_bin)
    assert p[0, cfg.zero_doppler_bin] == pytest.approx(np.sum(np.abs(ref) ** 2) ** 2, rel=1e-12)


def test_fig3_calibration_case():
    rng = np.random.default_rng(2)
    ref = noise(10_000, rng)
    cfg = CafConfig(cpi=1.0, max_delay=256 / FS, doppler_span=64, bandwidth=FS)
    m = compute_caf(ref, echo(ref, 37, 7.0), cfg)
    i, j = np.unravel_index(np.argmax(m.power), m.shape)
    assert (i, j - m.zero_doppler_bin) == (37, 7)


def test_fast_matches_direct_sum():
    rng = np.random.default_rng(3)
    ref = noise(10_000, rng)
    surv = echo(ref, 100, -12.0) + noise(10_000, rng)
    cfg = CafConfig(cpi=1.0, max_delay=256 / FS, doppler_span=64, bandwidth=FS)
    fast, direct = caf_power(ref, surv, cfg), caf_direct(ref, surv, cfg)
    assert fast.shape == (256, 64)
    assert np.max(np.abs(fast - direct)) / np.max(direct) < 1e-6


def test_chunking_does_not_change_result():
    rng = np.random.default_rng(4)
    ref, surv = noise(2000, rng), noise(2000, rng)
    cfg = CafConfig(cpi=0.2, max_delay=0.01, doppler_span=40, bandwidth=FS)
    np.testing.assert_array_equal(caf_power(ref, surv, cfg), caf_power(ref, surv, cfg, chunk_elems=2000 * 7))


@settings(max_examples=25)
@given(st.integers(0, 99), st.integers(-19, 19), st.integers(0, 10_000))
def test_bin_calibration(d, k, seed):
    rng = np.random.default_rng(seed)
    ref = noise(2000, rng)
    cfg = CafConfig(cpi=0.2, max_delay=100 / FS, doppler_span=200, bandwidth=FS)
    p = caf_power(ref, echo(ref, d, k / cfg.cpi), cfg)
    assert np.unravel_index(np.argmax(p), p.shape) == (d, cfg.zero_doppler_bin + k)


def test_noise_pair_false_peak_probability():
    rng = np.random.default_rng(5)
    exceed = 0
    for _ in range(100):
        m = exp_map((5000, 200), rng)
        exceed += (m.power.max() - m.noise_floor) >= 13.0
    assert exceed <= 1


def test_noise_caf_cells_are_exponential():
    rng = np.random.default_rng(6)
    cfg = CafConfig(cpi=0.5, max_delay=0.02, doppler_span=100, bandwidth=FS)
    p = caf_power(noise(5000, rng), noise(5000, rng), cfg).ravel()
    p /= p.mean()
    assert np.mean(p > 3.0) == pytest.approx(np.exp(-3.0), rel=0.15)


def test_all_equal_map_is_zero_db():
    m = DelayDopplerMap.from_linear(np.full((50, 40), 3.7), 1 / FS, 1.0, 20)
    for cell in [(0, 0), (25, 20), (49, 39)]:
        assert estimate_snr(m, cell) == pytest.approx(0.0, abs=1e-9)


def test_calibrated_injection():
    rng = np.random.default_rng(7)
    p = rng.exponential(size=(2000, 100))
    p[700, 70] = 100.0
    m = DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 50)
    assert estimate_snr(m, (700, 70)) == pytest.approx(20.0, abs=1.0)


def test_ridge_excluded_from_floor():
    rng = np.random.default_rng(8)
    p = rng.exponential(size=(2000, 100))
    base = noise_floor(DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 50))
    p[:, 48:53] *= 100.0
    raised = noise_floor(DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 50))
    assert abs(raised - base) <= 0.2


def test_estimate_snr_out_of_bounds():
    m = DelayDopplerMap.from_linear(np.ones((4, 4)), 1.0, 1.0, 2)
    with pytest.raises(IndexError):
        estimate_snr(m, (4, 0))


def test_cfar_alpha_limit():
    # large training windows approach the known-noise threshold -ln(pfa)
    assert cfar_alpha(10**7, 1e-6) == pytest.approx(-np.log(1e-6), rel=1e-5)


def test_cfar_false_alarm_rate():
    rng = np.random.default_rng(9)
    counts = [len(detect(exp_map((5000, 200), rng), 1e-6)) for _ in range(100)]
    expected = 5000 * (200 - 5) * 1e-6
    assert expected / 3 <= np.mean(counts) <= 3 * expected


def test_single_echo_single_detection():
    rng = np.random.default_rng(10)
    p = rng.exponential(size=(500, 100))
    p[123, 81] = 100.0
    m = DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 50, epoch=12.5)
    d = detect(m, 1e-6)
    assert [(x.delay_bin, x.doppler_bin) for x in d] == [(123, 81)]
    assert d[0].doppler == 31.0 and d[0].epoch == 12.5
    assert d[0].bistatic_range == pytest.approx(123 * SPEED_OF_LIGHT / FS)
    assert d[0].snr >= 10 * np.log10(cfar_alpha(32, 1e-6))


def test_ridge_and_short_delays_masked():
    p = np.ones((200, 40))
    p[100, 20] = 1e4  # on the ridge
    p[1, 30] = 1e4
    m = DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 20)
    assert [(x.delay_bin, x.doppler_bin) for x in detect(m, 1e-6)] == [(1, 30)]
    assert detect(m, 1e-6, min_delay_bins=3) == []


def test_zero_map_no_detections():
    assert detect(DelayDopplerMap.from_linear(np.zeros((100, 20)), 1.0, 1.0, 10), 1e-6) == []


@pytest.mark.parametrize("pfa", [0.0, 1.0])
def test_pfa_validated(pfa):
    with pytest.raises(ValueError):
        detect(DelayDopplerMap.from_linear(np.ones((10, 10)), 1.0, 1.0, 5), pfa)


def test_parabolic_offset_recovers_fractional_peak():
    p = np.ones((100, 20))
    # samples of a parabola peaking 0.3 bins past delay 40
    for di in (-1, 0, 1):
        p[40 + di, 12] = 1e4 * (1 - 0.05 * (di - 0.3) ** 2)
    d = detect(DelayDopplerMap.from_linear(p, 1 / FS, 1.0, 5), 1e-6)
    assert len(d) == 1 and d[0].delay_offset == pytest.approx(0.3)


def test_doppler_conversion():
    assert doppler_to_range_rate(0.0, 98e6) == 0.0
    assert doppler_to_range_rate(2861.0, 99.7e6) == pytest.approx(-8602.8, abs=0.5)
    f = np.array([1.0, 250.0, 3000.0])
    np.testing.assert_array_equal(doppler_to_range_rate(-f, 98e6), -doppler_to_range_rate(f, 98e6))
    assert range_rate_to_doppler(doppler_to_range_rate(123.0, 98e6), 98e6) == pytest.approx(123.0)
    with pytest.raises(ValueError):
        doppler_to_range_rate(1.0, 0.0)


def test_processing_gain():
    assert processing_gain(50e3, 1.0) == pytest.approx(46.99, abs=0.01)
    assert processing_gain(50e3, 0.25) == pytest.approx(40.97, abs=0.01)
    assert processing_gain(1e3, 1e-3) == 0.0


def test_map_container_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    m = exp_map((30, 16), rng)
    m.epoch = 4.25
    write_map(tmp_path / "m.ogdd", m)
    assert (tmp_path / "m.ogdd").read_bytes()[:4] == b"OGDD"
    r = read_map(tmp_path / "m.ogdd")
    np.testing.assert_allclose(r.power, m.power.astype(np.float32))
    assert (r.delay_res, r.doppler_res, r.zero_doppler_bin, r.epoch) == (m.delay_res, 1.0, 8, 4.25)


def test_detection_csv_round_trip(tmp_path):
    ds = [Detection(3, 9, 1234.5, -17.0, 14.2, 0.5, 0.1, -0.2), Detection(4, 1, 9.0, 2.0, 20.0, 1.5)]
    write_detections(tmp_path / "d.csv", ds)
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header.startswith("epoch,delay_bin,doppler_bin,bistatic_range_m,doppler_hz,snr_db")
    assert read_detections(tmp_path / "d.csv") == ds
