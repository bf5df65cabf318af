import numpy as np
import pytest
from hypothesis import given, strategies as st

from ogradar.waveform import (COARSE_WIDTH, FINE_WIDTH, ChannelizerError, FmSource, IqSeries,
                              Polarization, channelize, pfb_analyze, pfb_synthesize,
                              prototype_filter, read_iq, recombine, resample_band, synthesize_fm,
                              write_iq)

FS = 1.28e6
CARRIER = 98.9e6
FRAME = 128  # fine channels per coarse channel at 1.28 MHz


def fm(bandwidth=100e3, duration=0.1, seed=1, fs=FS):
    n = int(duration * fs) // FRAME * FRAME
    return synthesize_fm(FmSource("test", CARRIER, bandwidth), n / fs, seed, sample_rate=fs)


def snr_db(ref, est):
    return 10 * np.log10(np.mean(np.abs(ref) ** 2) / np.mean(np.abs(ref - est) ** 2))


def test_iq_series_validation():
    with pytest.raises(ValueError):
        IqSeries(np.array([]), 1.0, 0.0)
    with pytest.raises(ValueError):
        IqSeries(np.ones(4), 0.0, 0.0)
    with pytest.raises(ValueError):
        IqSeries(np.array([1, np.nan]), 1.0, 0.0)


@pytest.mark.parametrize("bw,eirp", [(0.0, 1.0), (250e3, 1.0), (100e3, 0.0)])
def test_fm_source_validation(bw, eirp):
    with pytest.raises(ValueError):
        FmSource("x", 98e6, bw, eirp)


def test_iq_container_round_trip(tmp_path):
    x = IqSeries(np.arange(10) * (1 - 2j) / 7, 1.28e6, 98e6, polarization=Polarization.NS)
    write_iq(tmp_path / "a.iq", x)
    raw = (tmp_path / "a.iq").read_bytes()
    assert raw[:4] == b"OGIQ" and len(raw) == 36 + 8 * len(x)
    y = read_iq(tmp_path / "a.iq", polarization=Polarization.NS)
    np.testing.assert_allclose(y.samples, x.samples.astype(np.complex64), rtol=1e-7)
    assert (y.sample_rate, y.carrier_freq, y.polarization) == (1.28e6, 98e6, Polarization.NS)


def test_iq_container_rejects_bad_magic(tmp_path):
    (tmp_path / "b.iq").write_bytes(b"XXXX" + bytes(32))
    with pytest.raises(ValueError):
        read_iq(tmp_path / "b.iq")


def test_silence_is_a_carrier_tone():
    s = synthesize_fm(FmSource("q", CARRIER, 100e3), 0.01, 0, audio=np.zeros(1))
    np.testing.assert_allclose(s.samples, 1.0, atol=1e-12)


@pytest.mark.parametrize("bw", [50e3, 100e3])
def test_unit_power_and_occupancy(bw):
    s = fm(bw, 1.0, seed=3)
    assert s.power == pytest.approx(1.0, rel=1e-12)
    spec = np.abs(np.fft.fft(s.samples)) ** 2
    f = np.fft.fftfreq(len(s), 1 / s.sample_rate)
    assert spec[np.abs(f) <= bw / 2].sum() / spec.sum() >= 0.99


@pytest.mark.parametrize("bw", [50e3, 100e3])
def test_autocorrelation_first_null(bw):
    s = fm(bw, 0.5, seed=3)  # oversampled, for lag resolution
    ac = np.abs(np.fft.ifft(np.abs(np.fft.fft(s.samples)) ** 2))
    ac /= ac[0]
    first_min = int(np.argmax(np.diff(ac[:200]) > 0))
    lag = first_min / s.sample_rate
    assert 0.8 / bw <= lag <= 1.5 / bw
    assert ac[first_min] < 0.2


def test_synthesis_deterministic():
    a, b, c = fm(seed=5), fm(seed=5), fm(seed=6)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_prototype_half_power_at_channel_edge():
    M, P = 16, 8
    w = prototype_filter(M, P)
    assert w.size == M * P
    h = np.fft.fft(w, 1 << 16)
    f = np.fft.fftfreq(h.size)
    edge = np.argmin(np.abs(f - 0.5 / M))
    assert 20 * np.log10(np.abs(h[edge]) / np.abs(h[0])) == pytest.approx(-3.01, abs=0.05)


@given(st.integers(2, 32), st.integers(2, 12), st.integers(0, 1000))
def test_pfb_exact_inverse(M, P, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=M * (P + 3)) + 1j * rng.normal(size=M * (P + 3))
    w = prototype_filter(M, P)
    y = pfb_analyze(x, M, w)
    assert y.shape == (M, P + 3)
    np.testing.assert_allclose(pfb_synthesize(y, w), x, atol=1e-9)


def test_channel_layout_and_metadata():
    b = channelize(fm(duration=0.05, fs=2.56e6))
    assert b.n_coarse == 2 and b.n_fine == 128
    assert b.channels.shape[0] == 256
    assert b.channels.shape[0] * FINE_WIDTH <= b.sample_rate
    np.testing.assert_allclose(np.sort(b.channel_center_freqs - CARRIER),
                               np.arange(-128, 128) * FINE_WIDTH)
    assert b.metadata["coarse_taps_per_branch"] == 8 and b.metadata["fine_taps_per_branch"] == 12
    assert b.coarse_width == COARSE_WIDTH


def test_zero_in_zero_out():
    b = channelize(IqSeries(np.zeros(FRAME * 100, complex), FS, CARRIER))
    assert not np.any(b.channels)


@pytest.mark.parametrize("offset", [30e3, -200e3, 410e3])
def test_tone_lands_in_its_fine_channel(offset):
    n = FRAME * 400
    tone = IqSeries(np.exp(2j * np.pi * offset * np.arange(n) / FS), FS, CARRIER)
    b = channelize(tone)
    p = np.sum(np.abs(b.channels) ** 2, axis=1)
    k = b.channel_index(CARRIER + offset)
    assert p[k] / p.sum() >= 0.99


def test_white_noise_flat_across_channels():
    rng = np.random.default_rng(2)
    n = int(10 * FS)
    x = IqSeries((rng.standard_normal(n) + 1j * rng.standard_normal(n)).astype(np.complex64), FS, CARRIER)
    b = channelize(x)
    p = 10 * np.log10(np.mean(np.abs(b.channels) ** 2, axis=1))
    offsets = np.abs(b.channel_center_freqs - CARRIER)
    inner = offsets < FS / 2 - 2 * FINE_WIDTH
    assert np.ptp(p[inner] - np.median(p[inner])) < 2.0
    assert np.max(np.abs(p[inner] - np.median(p[inner]))) < 1.0


def test_linearity():
    a, y = fm(seed=1, duration=0.02), fm(seed=2, duration=0.02)
    c = 0.3 - 1.2j
    lhs = channelize(IqSeries(c * a.samples + y.samples, FS, CARRIER)).channels
    rhs = c * channelize(a).channels + channelize(y).channels
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_parseval():
    x = fm(duration=0.2)
    b = channelize(x)
    ratio = np.sum(np.abs(b.channels) ** 2) / np.sum(np.abs(x.samples) ** 2)
    assert abs(10 * np.log10(ratio)) < 0.1


@pytest.mark.parametrize("width", [50e3, 100e3])
def test_round_trip_reconstruction(width):
    x = fm(bandwidth=width, duration=0.2)
    r = recombine(channelize(x), CARRIER, width)
    assert r.sample_rate == width
    assert snr_db(resample_band(x, CARRIER, width).samples, r.samples) >= 40


def test_round_trip_off_centre_two_coarse_channels():
    n = int(0.1 * 2.56e6) // 256 * 256
    s = synthesize_fm(FmSource("x", 98.3e6, 100e3), n / 2.56e6, 4, sample_rate=2.56e6)
    x = IqSeries(s.samples * np.exp(2j * np.pi * 300e3 * np.arange(n) / 2.56e6), 2.56e6, 98.0e6)
    r = recombine(channelize(x), 98.3e6, 100e3)
    assert snr_db(resample_band(x, 98.3e6, 100e3).samples, r.samples) >= 40


def test_single_fine_channel_identity():
    b = channelize(fm(duration=0.05))
    k = b.channel_index(CARRIER + 30e3)
    one = recombine(b, b.channel_center_freqs[k], FINE_WIDTH)
    assert one.sample_rate == FINE_WIDTH
    np.testing.assert_array_equal(one.samples, b.channels[k])


def test_uncovered_span_rejected():
    b = channelize(fm(duration=0.05))
    with pytest.raises(ChannelizerError):
        recombine(b, CARRIER + 620e3, 100e3)


def test_short_input_rejected():
    with pytest.raises(ChannelizerError):
        channelize(IqSeries(np.ones(FRAME * 5, complex), FS, CARRIER))
    with pytest.raises(ChannelizerError):
        channelize(IqSeries(np.ones(FRAME * 50, complex), 1.0e6, CARRIER))
