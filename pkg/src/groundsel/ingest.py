"""Strong-motion ASCII records (KiK-net/K-NET layout) to velocity waveforms.

A record is a block of ``Key  value`` header lines, the key occupying the
first 18 columns, followed by whitespace-separated integer counts::

    Origin Time       2011/03/11 14:46:00
    Station Code      IBRH19
    Sampling Freq(Hz) 100Hz
    Dir.              N-S
    Scale Factor      2940(gal)/6182761
    Memo.
       -12     -8      3 ...

Physical value = count * A / B for a ``A(unit)/B`` scale factor.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal
from scipy.integrate import cumulative_trapezoid

from .waveform import Waveform

KEY_WIDTH = 18
REQUIRED = ("Origin Time", "Station Code", "Sampling Freq(Hz)", "Dir.", "Scale Factor")
# unit -> SI factor (m/s^2)
UNITS = {"gal": Fraction(1, 100), "cm/s/s": Fraction(1, 100), "cm/s2": Fraction(1, 100),
         "m/s/s": Fraction(1), "m/s2": Fraction(1)}
# direction label -> (component index, sign); x3 points down
DIRECTIONS = {
    "N-S": (0, 1), "E-W": (1, 1), "U-D": (2, -1),
    "1": (0, 1), "2": (1, 1), "3": (2, -1),
    "4": (0, 1), "5": (1, 1), "6": (2, -1),
}

_SCALE = re.compile(r"^\s*([0-9]+(?:\.[0-9]*)?)\s*\(([^)]+)\)\s*/\s*([0-9]+(?:\.[0-9]*)?)\s*$")
_FREQ = re.compile(r"^\s*([0-9]+(?:\.[0-9]*)?)\s*(?:Hz)?\s*$", re.IGNORECASE)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class StrongMotionRecord:
    station: str
    origin_time: str
    sampling_rate: float
    scale: Fraction  # physical units per count
    unit: str
    direction: str
    counts: np.ndarray
    header: tuple = ()  # (key, raw value) pairs in file order

    def __post_init__(self):
        if not self.sampling_rate > 0:
            raise ValueError("sampling rate must be positive")
        c = np.asarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def dt(self) -> float:
        return 1.0 / self.sampling_rate

    def values(self, si: bool = True) -> np.ndarray:
        """Counts times the scale factor, rounded once per sample.

        With ``si`` the unit conversion is folded into the same rational
        factor, so there is still a single rounding.
        """
        f = self.scale * (UNITS[self.unit.lower()] if si else 1)
        if not self.counts.size:
            return np.zeros(0)
        big = int(np.abs(self.counts).max()) * f.numerator
        if big < 2**53 and f.denominator < 2**53:
            return self.counts.astype(float) * f.numerator / f.denominator
        return np.array([float(int(c) * f) for c in self.counts])


def parse_scale_factor(text: str) -> tuple[Fraction, str]:
    m = _SCALE.match(text)
    if not m:
        raise ParseError(f"malformed scale factor {text!r}")
    num, unit, den = Fraction(m.group(1)), m.group(2).strip(), Fraction(m.group(3))
    if den == 0:
        raise ParseError("scale factor denominator is zero")
    return num / den, unit


def parse_strong_motion_ascii(text: str) -> StrongMotionRecord:
    lines = text.splitlines()
    header = []
    k = 0
    while k < len(lines):
        line = lines[k]
        if not line.strip():
            k += 1
            continue
        if _is_sample_line(line):
            break
        key, value = line[:KEY_WIDTH].strip(), line[KEY_WIDTH:].strip()
        if not key:
            raise ParseError(f"line {k + 1}: header line without a key")
        header.append((key, value))
        k += 1
        if key.startswith("Memo"):
            break
    fields = dict(header)
    for key in REQUIRED:
        if key not in fields:
            raise ParseError(f"missing header key {key!r}")
    fm = _FREQ.match(fields["Sampling Freq(Hz)"])
    if not fm:
        raise ParseError(f"malformed sampling frequency {fields['Sampling Freq(Hz)']!r}")
    try:
        scale, unit = parse_scale_factor(fields["Scale Factor"])
    except ParseError as exc:
        line_no = 1 + next(i for i, (kk, _) in enumerate(header) if kk == "Scale Factor")
        raise ParseError(f"line {line_no}: {exc}") from None
    if unit.lower() not in UNITS:
        raise ParseError(f"unsupported unit {unit!r}")
    counts = []
    for j in range(k, len(lines)):
        for tok in lines[j].split():
            try:
                counts.append(int(tok))
            except ValueError:
                raise ParseError(f"line {j + 1}: non-integer sample {tok!r}") from None
    if not counts:
        raise ParseError("no samples")
    return StrongMotionRecord(
        station=fields["Station Code"],
        origin_time=fields["Origin Time"],
        sampling_rate=float(fm.group(1)),
        scale=scale,
        unit=unit,
        direction=fields["Dir."],
        counts=np.array(counts, dtype=np.int64),
        header=tuple(header),
    )


def _is_sample_line(line: str) -> bool:
    toks = line.split()
    return bool(toks) and all(re.fullmatch(r"[+-]?\d+", t) for t in toks) and not line[:1].isalpha()


def serialize_strong_motion_ascii(rec: StrongMotionRecord, per_line: int = 8) -> str:
    out = []
    for key, value in rec.header:
        out.append(f"{key:<{KEY_WIDTH}}{value}".rstrip())
    c = rec.counts
    for i in range(0, c.size, per_line):
        # a leading space keeps wide counts apart
        out.append("".join(f" {int(v):7d}" for v in c[i : i + per_line]))
    return "\n".join(out) + "\n"


def records_to_waveform(records) -> Waveform:
    """Combine up to three single-direction records into x1/x2/x3 accelerations (m/s^2)."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    rate = records[0].sampling_rate
    n = max(r.counts.size for r in records)
    s = np.zeros((n, 3))
    seen = set()
    for r in records:
        if r.sampling_rate != rate:
            raise ValueError("records differ in sampling rate")
        if r.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction label {r.direction!r}")
        comp, sign = DIRECTIONS[r.direction]
        if comp in seen:
            raise ValueError(f"two records for component {comp + 1}")
        seen.add(comp)
        v = r.values()
        s[: v.size, comp] = sign * v
    meta = {"station": records[0].station, "origin_time": records[0].origin_time, "unit": "m/s^2"}
    return Waveform(1.0 / rate, s, 0.0, meta)


def lowpass(w: Waveform, fc: float, order: int = 4) -> Waveform:
    """Zero-phase Butterworth low-pass (forward-backward)."""
    nyq = 0.5 / w.dt
    if not 0 < fc < nyq:
        raise ValueError(f"cutoff {fc} Hz must lie in (0, {nyq}) Hz")
    sos = signal.butter(order, fc, btype="low", fs=1.0 / w.dt, output="sos")
    # pin the DC gain to one; the designed coefficients are off by rounding
    _, h0 = signal.sosfreqz(sos, worN=[0.0])
    sos[0, :3] /= abs(h0[0])
    y = signal.sosfiltfilt(sos, w.samples, axis=0)
    return Waveform(w.dt, y, w.start, dict(w.meta))


def resample(w: Waveform, new_dt: float) -> Waveform:
    """Linear interpolation onto a grid of spacing ``new_dt`` over the same span."""
    if not new_dt > 0:
        raise ValueError("new dt must be positive")
    if new_dt == w.dt:
        return Waveform(w.dt, w.samples.copy(), w.start, dict(w.meta))
    span = (w.n - 1) * w.dt
    n = int(np.floor(span / new_dt + 1e-9)) + 1
    t_old = w.dt * np.arange(w.n)
    t_new = new_dt * np.arange(n)
    s = np.column_stack([np.interp(t_new, t_old, w.samples[:, i]) for i in range(3)])
    return Waveform(new_dt, s, w.start, dict(w.meta))


def integrate_accel_to_vel(w: Waveform, detrend: bool = True) -> Waveform:
    """Trapezoidal integration from rest, after removing a linear trend."""
    a = signal.detrend(w.samples, axis=0, type="linear") if detrend else w.samples
    v = cumulative_trapezoid(a, dx=w.dt, axis=0, initial=0.0)
    meta = dict(w.meta)
    if meta.get("unit") == "m/s^2":
        meta["unit"] = "m/s"
    return Waveform(w.dt, v, w.start, meta)


def process_records(records, fc: float, dt: float) -> Waveform:
    """Records -> SI acceleration -> low-pass -> resample -> velocity."""
    acc = records_to_waveform(records)
    return integrate_accel_to_vel(resample(lowpass(acc, fc), dt))
