from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundsel.ingest import (
    ParseError,
    StrongMotionRecord,
    integrate_accel_to_vel,
    lowpass,
    parse_scale_factor,
    parse_strong_motion_ascii,
    process_records,
    records_to_waveform,
    resample,
    serialize_strong_motion_ascii,
)
from groundsel.waveform import Waveform

FIXTURE = """\
Origin Time       2011/03/11 14:46:00
Station Code      IBRH19
Station Lat.      36.7180
Station Long.     140.5533
Sampling Freq(Hz) 100Hz
Duration Time(s)  0.08
Dir.              N-S
Scale Factor      2940(gal)/6182761
Max. Acc. (gal)   2940.000
Memo.
 6182761       0     -12   -6182761
       3       5      -7       0

"""


def record(direction, counts, rate=100.0, scale=Fraction(1, 1000)):
    return StrongMotionRecord("ST", "t0", rate, scale, "gal", direction, np.array(counts))


def sine(f, dt=0.01, n=4000, amp=1.0, phase=0.0):
    t = dt * np.arange(n)
    s = np.zeros((n, 3))
    s[:, 0] = amp * np.sin(2 * np.pi * f * t + phase)
    return Waveform(dt, s)


def test_fixture_exact_scale():
    rec = parse_strong_motion_ascii(FIXTURE)
    assert rec.station == "IBRH19" and rec.sampling_rate == 100.0 and rec.direction == "N-S"
    assert rec.scale == Fraction(2940, 6182761) and rec.unit == "gal"
    assert rec.counts.tolist() == [6182761, 0, -12, -6182761, 3, 5, -7, 0]
    gal = rec.values(si=False)
    assert gal[0] == 2940.0 and gal[3] == -2940.0
    assert gal[2] == float(Fraction(-12 * 2940, 6182761))
    si = rec.values()
    assert si[0] == 29.4
    assert si[4] == float(Fraction(3 * 2940, 6182761 * 100))


def test_scale_factor_forms():
    assert parse_scale_factor("7845(gal)/8223790") == (Fraction(7845, 8223790), "gal")
    assert parse_scale_factor(" 1.5(m/s/s) / 3 ") == (Fraction(1, 2), "m/s/s")
    for bad in ("2940/6182761", "2940(gal)/0", "abc(gal)/3", "2940(gal)"):
        with pytest.raises(ParseError):
            parse_scale_factor(bad)


def test_zero_counts_give_zero_values():
    rec = parse_strong_motion_ascii(FIXTURE.split("Memo.")[0] + "Memo.\n 0 0 0\n0\n")
    assert np.all(rec.values() == 0) and rec.values().size == 4


def test_parse_errors_carry_context():
    head = FIXTURE.split("Memo.")[0] + "Memo.\n"
    with pytest.raises(ParseError, match="no samples"):
        parse_strong_motion_ascii(head)
    with pytest.raises(ParseError, match="line 12: non-integer"):
        parse_strong_motion_ascii(head + "1 2 3\n4 5.5\n")
    with pytest.raises(ParseError, match="Station Code"):
        parse_strong_motion_ascii(FIXTURE.replace("Station Code      IBRH19\n", ""))
    with pytest.raises(ParseError, match="line 8"):
        parse_strong_motion_ascii(FIXTURE.replace("2940(gal)/6182761", "2940 gal"))
    with pytest.raises(ParseError, match="unit"):
        parse_strong_motion_ascii(FIXTURE.replace("(gal)", "(furlong)"))


def test_serialize_round_trip_fixture():
    rec = parse_strong_motion_ascii(FIXTURE)
    again = parse_strong_motion_ascii(serialize_strong_motion_ascii(rec))
    assert again.header == rec.header
    assert again.counts.tolist() == rec.counts.tolist()
    assert again.scale == rec.scale


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-(2**31), 2**31 - 1), min_size=1, max_size=60),
       st.integers(1, 10**7), st.integers(1, 10**7))
def test_serialize_round_trip_property(counts, a, b):
    text = FIXTURE.split("Memo.")[0].replace("2940(gal)/6182761", f"{a}(gal)/{b}") + "Memo.\n"
    rec = parse_strong_motion_ascii(text + " ".join(map(str, counts)) + "\n")
    again = parse_strong_motion_ascii(serialize_strong_motion_ascii(rec))
    assert again.counts.tolist() == counts
    assert again.header == rec.header and again.scale == Fraction(a, b)


def test_direction_mapping_and_combination():
    w = records_to_waveform([record("U-D", [1000, 2000]), record("N-S", [3000]), record("E-W", [0, 5000, 1])])
    assert w.n == 3 and w.dt == 0.01
    np.testing.assert_allclose(w.samples[:, 0], [0.03, 0.0, 0.0])
    np.testing.assert_allclose(w.samples[:, 1], [0.0, 0.05, 0.00001])
    np.testing.assert_allclose(w.samples[:, 2], [-0.01, -0.02, 0.0])
    with pytest.raises(ValueError):
        records_to_waveform([record("N-S", [1]), record("1", [1])])
    with pytest.raises(ValueError):
        records_to_waveform([record("N-S", [1]), record("E-W", [1], rate=200.0)])
    with pytest.raises(ValueError):
        records_to_waveform([record("X", [1])])


def amplitude(w, skip=500):
    return np.abs(w.samples[skip:-skip, 0]).max()


def test_lowpass_constant_and_bands():
    const = Waveform(0.01, np.full((1000, 3), 3.25))
    np.testing.assert_allclose(lowpass(const, 2.5).samples, 3.25, rtol=1e-12)
    fc = 2.5
    stop = amplitude(lowpass(sine(4 * fc), fc))
    assert 20 * np.log10(stop) <= -40.0
    passed = amplitude(lowpass(sine(fc / 4), fc))
    assert abs(passed - 1.0) <= 0.01
    with pytest.raises(ValueError):
        lowpass(const, 50.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3.0, 3.0), st.integers(1, 50))
def test_lowpass_linear_and_shift_invariant(seed, alpha, shift):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((600, 3))
    y = rng.standard_normal((600, 3))
    fx = lowpass(Waveform(0.01, x), 2.5).samples
    fy = lowpass(Waveform(0.01, y), 2.5).samples
    fxy = lowpass(Waveform(0.01, x + alpha * y), 2.5).samples
    np.testing.assert_allclose(fxy, fx + alpha * fy, atol=1e-10)
    # compactly supported input padded with zeros, away from the ends
    z = np.zeros((1200, 3))
    z[300:500] = x[:200]
    zs = np.roll(z, shift, axis=0)
    np.testing.assert_allclose(np.roll(lowpass(Waveform(0.01, z), 2.5).samples, shift, axis=0)[400:1000],
                               lowpass(Waveform(0.01, zs), 2.5).samples[400:1000], atol=1e-8)


def test_resample_examples():
    ramp = Waveform(0.01, np.outer(np.arange(11) * 0.01, [1.0, 2.0, -1.0]))
    assert resample(ramp, 0.01).samples.tobytes() == ramp.samples.tobytes()
    down = resample(ramp, 0.02)
    assert down.n == 6
    np.testing.assert_allclose(down.samples, np.outer(np.arange(6) * 0.02, [1.0, 2.0, -1.0]), atol=1e-15)
    f = 2.5 / 10
    up = resample(sine(f, dt=0.1, n=400), 0.05)
    t = 0.05 * np.arange(up.n)
    rms = np.sqrt(np.mean((up.samples[:, 0] - np.sin(2 * np.pi * f * t)) ** 2))
    assert rms < 0.005
    with pytest.raises(ValueError):
        resample(ramp, 0.0)


def test_integration_examples():
    assert np.all(integrate_accel_to_vel(Waveform.zeros(0.01, 50)).samples == 0)
    a = Waveform(0.01, np.full((101, 3), 2.0))
    v = integrate_accel_to_vel(a, detrend=False)
    np.testing.assert_allclose(v.samples[:, 0], 2.0 * 0.01 * np.arange(101), atol=1e-12)
    drift = Waveform(0.01, np.outer(0.3 + 0.7 * np.arange(200) * 0.01, [1.0, 1.0, 1.0]))
    assert np.abs(integrate_accel_to_vel(drift).samples).max() < 1e-12


def test_pipeline_deterministic():
    rng = np.random.default_rng(0)
    recs = [record(d, rng.integers(-5000, 5000, 3000)) for d in ("N-S", "E-W", "U-D")]
    v1 = process_records(recs, 2.5, 0.02)
    v2 = process_records(list(reversed(recs)), 2.5, 0.02)
    assert v1.dt == 0.02 and v1.n == 1500
    assert v1.samples.tobytes() == v2.samples.tobytes()
    assert v1.meta["unit"] == "m/s"
