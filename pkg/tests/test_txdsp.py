import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import discrete_gaussian_variance
from cvqkdsim.core import RngStream
from cvqkdsim.rxdsp import power_spectrum
from cvqkdsim.txdsp import (CAZAC_LEN, FRAME_SAMPLES, HEADER_BITS, ID_BITS, ID_REPEATS,
                            QUANTUM_PER_FRAME, TxSignalPlan, TxStream, Waveform, assemble_frame,
                            frame_id_bits, gaussian_alphabet, generate_cazac, qpsk_demap, qpsk_map,
                            quantize_gaussian, sample_gaussian_symbols, set_modulation_power,
                            synthesize_waveform)

PLAN = TxSignalPlan()


def _frames(ids, seed=0, plan=PLAN):
    rng = RngStream(seed)
    return [assemble_frame(i, sample_gaussian_symbols(rng, QUANTUM_PER_FRAME, math.sqrt(plan.v_mod)),
                           plan) for i in ids]


@pytest.fixture(scope="module")
def one_frame_wf():
    return synthesize_waveform(_frames([0]), PLAN)


def test_alphabet_has_64_symmetric_levels():
    a = gaussian_alphabet()
    assert a.size == 64 and np.unique(a).size == 64
    assert np.allclose(a, -a[::-1])
    assert np.all(np.abs(a) <= 3.5)


def test_quantizer_median_maps_to_level_nearest_zero():
    step = 7.0 / 64
    assert abs(quantize_gaussian(0.5)) == pytest.approx(step / 2)


def test_quantizer_extremes_clamp():
    a = gaussian_alphabet()
    assert quantize_gaussian(0.0) == a[0]
    assert quantize_gaussian(1 - 1e-17) == a[-1]
    assert np.all(np.abs(quantize_gaussian(np.linspace(0, 0.999999, 1001))) <= 3.5)


def test_quantizer_variance_matches_oracle():
    x = quantize_gaussian(RngStream(1).random(1_000_000))
    var = x.var()
    assert 0.98 <= var <= 1.00
    assert var == pytest.approx(discrete_gaussian_variance(), abs=5 * math.sqrt(2 / 1e6))


@given(st.floats(0.0, 0.9999999), st.floats(0.1, 10.0))
def test_quantizer_scales_with_sigma(u, sigma):
    assert quantize_gaussian(u, sigma) == pytest.approx(sigma * quantize_gaussian(u))


def test_quantizer_rejects_bad_sigma():
    with pytest.raises(ValueError):
        quantize_gaussian(0.3, 0.0)


def test_cazac_length4_closed_form():
    k = np.arange(4)
    assert np.allclose(generate_cazac(4, 1), np.exp(-1j * np.pi * k * k / 4), atol=1e-15)


@pytest.mark.parametrize("length, root", [(200, 1), (200, 3), (63, 5), (17, 2)])
def test_cazac_constant_amplitude_zero_autocorrelation(length, root):
    c = generate_cazac(length, root)
    assert np.allclose(np.abs(c), 1.0, atol=1e-14)
    acf = np.fft.ifft(np.abs(np.fft.fft(c)) ** 2)
    assert np.max(np.abs(acf[1:])) < 1e-10 * length
    assert acf[0].real == pytest.approx(length)


@pytest.mark.parametrize("length, root", [(200, 2), (200, 0), (9, 3), (1, 1)])
def test_cazac_rejects_bad_root(length, root):
    with pytest.raises(ValueError):
        generate_cazac(length, root)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=64).filter(lambda b: len(b) % 2 == 0))
def test_qpsk_round_trip(bits):
    s = qpsk_map(bits)
    assert np.allclose(np.abs(s), 1.0)
    assert np.array_equal(qpsk_demap(s), np.array(bits, dtype=np.uint8))


def test_frame_id_bits():
    assert not frame_id_bits(0).any()
    five = frame_id_bits(5)
    assert five.size == ID_BITS * ID_REPEATS
    assert list(five[:ID_BITS]) == [0] * 13 + [1, 0, 1]
    with pytest.raises(ValueError):
        frame_id_bits(1 << ID_BITS)


def test_frame_layout():
    fr = _frames([5])[0]
    bits = qpsk_demap(fr.qpsk)
    assert np.array_equal(bits[:HEADER_BITS.size], HEADER_BITS)
    assert np.array_equal(bits[HEADER_BITS.size:HEADER_BITS.size + 48], frame_id_bits(5))
    slots = fr.quantum_slots
    assert np.array_equal(slots[CAZAC_LEN:CAZAC_LEN + QUANTUM_PER_FRAME], fr.quantum)
    assert not slots[CAZAC_LEN + QUANTUM_PER_FRAME:].any()


def test_frame_rejects_wrong_symbol_count():
    with pytest.raises(ValueError):
        assemble_frame(0, np.zeros(QUANTUM_PER_FRAME - 1, complex), PLAN)


def test_cazac_to_quantum_power_ratio():
    fr = _frames([0])[0]
    ratio = np.mean(np.abs(fr.cazac) ** 2) / np.mean(np.abs(fr.quantum) ** 2)
    assert ratio == pytest.approx(PLAN.cazac_ratio, rel=0.05)


def test_pilot_spectrum_is_two_clean_lines():
    stream = TxStream([], PLAN)
    x = stream.render(0, 400_000)
    # 250 kHz bins put both pilots exactly on a bin centre
    f, p = power_spectrum(x, nfft=4000)
    peak = p.max()
    for tone in (PLAN.pilot1_hz, PLAN.pilot2_hz):
        i = np.argmin(np.abs(f - tone))
        assert p[i] == pytest.approx(peak, rel=1e-6)
    near = np.zeros(f.size, bool)
    for tone in (PLAN.pilot1_hz, PLAN.pilot2_hz):
        near |= np.abs(f - tone) < 375e3  # Hann main lobe
    assert np.all(10 * np.log10(p[~near] / peak + 1e-300) <= -60)


def test_parseval_sum_of_components(one_frame_wf):
    total = np.mean(np.abs(one_frame_wf.samples) ** 2)
    parts = sum(np.mean(np.abs(c) ** 2) for c in one_frame_wf.components.values())
    assert total == pytest.approx(parts, rel=1e-3)
    f, p = power_spectrum(one_frame_wf, nfft=4000)
    assert np.sum(p) * (f[1] - f[0]) == pytest.approx(total, rel=1e-3)


def test_quantum_band_occupancy(one_frame_wf):
    f, p = power_spectrum(one_frame_wf.components["quantum"], nfft=4000)
    half = 0.5 * PLAN.band_width_hz * (1 + PLAN.rrc_rolloff)
    inside = np.abs(f - PLAN.quantum_band_center_hz) <= half
    assert p[inside].sum() / p.sum() >= 0.99


def test_set_modulation_power(one_frame_wf):
    assert set_modulation_power(one_frame_wf, PLAN.v_mod) is one_frame_wf
    doubled = set_modulation_power(one_frame_wf, 2 * PLAN.v_mod)
    q0 = np.mean(np.abs(one_frame_wf.components["quantum"]) ** 2)
    q1 = np.mean(np.abs(doubled.components["quantum"]) ** 2)
    assert q1 / q0 == pytest.approx(2.0, rel=1e-3)
    assert np.array_equal(doubled.components["pilots"], one_frame_wf.components["pilots"])
    assert doubled.meta["v_mod"] == 2 * PLAN.v_mod
    with pytest.raises(ValueError):
        set_modulation_power(one_frame_wf, 0.0)


def test_waveform_length_and_lead_in():
    wf = synthesize_waveform(_frames([0, 1]), PLAN, lead_in=150)
    assert wf.meta["lead_in"] == 200
    assert len(wf) == 200 + 2 * FRAME_SAMPLES
    assert wf.meta["frame_ids"] == [0, 1]


def test_waveform_save_load(tmp_path, one_frame_wf):
    path = tmp_path / "tx.iq"
    one_frame_wf.save(path)
    back = Waveform.load(path)
    assert back.sample_rate_hz == one_frame_wf.sample_rate_hz
    assert back.meta["v_mod"] == PLAN.v_mod
    assert np.allclose(back.samples, one_frame_wf.samples, rtol=1e-6, atol=1e-4)


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform(np.array([1.0, np.nan]))


@pytest.mark.parametrize("changes", [
    {"qpsk_band_center_hz": 95e6},
    {"pilot1_hz": 80e6},
    {"rrc_rolloff": 0.0},
    {"v_mod": -1.0},
])
def test_plan_validation(changes):
    with pytest.raises(ValueError):
        TxSignalPlan(**changes)


def test_skewed_render_matches_nominal_at_zero_offset():
    stream = TxStream(_frames([0]), PLAN)
    a = stream.render(10_000, 12_000)
    b = stream.render(10_000, 12_000, skew=1e-12)
    assert np.max(np.abs(a - b)) < 1e-3 * np.max(np.abs(a))
