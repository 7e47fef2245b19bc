"""Impulse-basis input estimation from surface records and the ERR misfit.

The incident wave along direction ``j`` is ``f_j(t) = sum_l c[j, l] p(t - l Δt)``
with ``p`` the bank's Hann pulse, so the surface response is a lagged sum of
bank records. Coefficients minimise the energy-normalised squared misfit

    J(c) = sum_{k,i} w_ki * int (U_ki - obs_ki)^2 dt,   w_ki = 1 / int obs_ki^2 dt

whose stationary point solves ``A c = b``. ERR is reported in square-root form.
Integrals use the rectangle rule at the simulation step.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elastodynamics.greenbank import GreenBank, impulse_p
from .waveform import Waveform

ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class BasisConfig:
    dt: float = 0.1  # lag spacing Δt
    pulse_width: float = 0.4
    input_duration: float = 8.0
    n_lags: int | None = None

    def __post_init__(self):
        if not (self.dt > 0 and self.pulse_width > 0 and self.input_duration > 0):
            raise ValueError("basis dt, pulse width and input duration must be positive")
        # tolerate float noise such as 8.0 / 0.1 = 80.00000000000001
        want = max(1, math.ceil(self.input_duration / self.dt - 1e-9))
        if self.n_lags is None:
            object.__setattr__(self, "n_lags", want)
        elif self.n_lags != want:
            raise ValueError(f"n_lags={self.n_lags} but input duration needs {want}")

    def stride(self, sim_dt: float) -> int:
        """Lag spacing in simulation steps."""
        s = self.dt / sim_dt
        if abs(s - round(s)) > 1e-6 * s or round(s) < 1:
            raise ValueError(f"basis dt {self.dt} is not a multiple of simulation dt {sim_dt}")
        return int(round(s))


@dataclass(frozen=True)
class Coefficients:
    c: np.ndarray  # (3, n_lags)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != 3 or c.shape[1] < 1:
            raise ValueError(f"coefficients must be (3, n_lags), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "c", c)

    @property
    def n_lags(self) -> int:
        return self.c.shape[1]

    @classmethod
    def zeros(cls, n_lags: int) -> "Coefficients":
        return cls(np.zeros((3, n_lags)))


@dataclass(frozen=True)
class NormalSystem:
    A: np.ndarray
    b: np.ndarray
    energy: np.ndarray  # (n_station, 3) int obs^2 dt
    weights: np.ndarray  # (n_station, 3), zero for excluded components
    n_lags: int

    def objective(self, c) -> float:
        """``J(c)``; the constant term counts the included components."""
        x = np.asarray(c.c if isinstance(c, Coefficients) else c, dtype=float).ravel()
        return float(x @ self.A @ x - 2.0 * self.b @ x + np.count_nonzero(self.weights))


@dataclass(frozen=True)
class Estimate:
    coefficients: Coefficients
    err: float
    objective: float
    rank: int
    model_id: str = ""
    event_id: str = ""
    extra: dict = field(default_factory=dict, compare=False)


def _component_weights(energy: np.ndarray) -> np.ndarray:
    emax = float(energy.max()) if energy.size else 0.0
    if not emax > 0:
        raise ValueError("observations have zero energy in every component")
    keep = energy >= ENERGY_FLOOR * emax
    w = np.zeros_like(energy)
    w[keep] = 1.0 / energy[keep]
    return w


def _obs_array(obs, dt: float) -> np.ndarray:
    """Stack station waveforms to ``(n_station, 3, n)``."""
    obs = list(obs)
    if not obs:
        raise ValueError("no observations")
    n = obs[0].n
    for w in obs:
        if w.n != n:
            raise ValueError("observation records differ in length")
        if not np.isclose(w.dt, dt, rtol=1e-6, atol=0.0):
            raise ValueError(f"observation dt {w.dt} differs from bank dt {dt}")
    return np.stack([w.samples.T for w in obs])


def _fit_length(g: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad the last axis to ``n`` samples."""
    if g.shape[-1] >= n:
        return g[..., :n]
    out = np.zeros(g.shape[:-1] + (n,))
    out[..., : g.shape[-1]] = g
    return out


class LaggedDesign:
    """Lagged bank records for one model, reusable across events.

    Per-(station, component) Gram blocks are formed once so each additional
    event only costs a weighted sum.
    """

    def __init__(self, bank: GreenBank, basis: BasisConfig, n_samples: int | None = None):
        self.bank = bank
        self.basis = basis
        self.stride = basis.stride(bank.dt)
        self.n = bank.n_step if n_samples is None else int(n_samples)
        self.G = _fit_length(bank.samples, self.n)  # (ns, j, i, n)
        self._gram = None

    def columns(self) -> np.ndarray:
        """Design tensor ``(ns, i, n, 3 * n_lags)``; column ``j * n_lags + l``."""
        ns, n, L, s = self.bank.n_station, self.n, self.basis.n_lags, self.stride
        Phi = np.zeros((ns, 3, n, 3, L))
        for l in range(L):
            lag = l * s
            if lag >= n:
                break
            # G[k, j, i, m] -> Phi[k, i, m + lag, j, l]
            Phi[:, :, lag:, :, l] = np.transpose(self.G[:, :, :, : n - lag], (0, 2, 3, 1))
        return Phi.reshape(ns, 3, n, 3 * L)

    def gram(self) -> np.ndarray:
        if self._gram is None:
            Phi = self.columns()
            P = Phi.reshape(-1, self.n, Phi.shape[-1])
            gram = np.matmul(P.transpose(0, 2, 1), P) * self.bank.dt
            self._gram = gram.reshape(Phi.shape[:2] + gram.shape[1:])
            self._cols = Phi
        return self._gram

    def subset(self, indices) -> "LaggedDesign":
        """Design restricted to some stations, sharing already-formed blocks."""
        idx = list(indices)
        out = LaggedDesign.__new__(LaggedDesign)
        out.bank = self.bank.subset(idx)
        out.basis, out.stride, out.n = self.basis, self.stride, self.n
        out.G = self.G[idx]
        out._gram = None
        if self._gram is not None:
            out._gram = self._gram[idx]
            out._cols = self._cols[idx]
        return out

    def normal_system(self, obs) -> NormalSystem:
        o = _fit_length(_obs_array(obs, self.bank.dt), self.n)
        if o.shape[0] != self.bank.n_station:
            raise ValueError(f"{o.shape[0]} observation stations but bank has {self.bank.n_station}")
        if o.shape[2] != self.n:
            raise ValueError("observation length does not match design length")
        dt = self.bank.dt
        energy = np.sum(o * o, axis=2) * dt
        w = _component_weights(energy)
        gram = self.gram()
        A = np.tensordot(w, gram, axes=([0, 1], [0, 1]))
        A = 0.5 * (A + A.T)
        b = (o * w[:, :, None]).reshape(-1) @ self._cols.reshape(-1, self._cols.shape[-1]) * dt
        return NormalSystem(A, b, energy, w, self.basis.n_lags)

    def synthesize(self, c: Coefficients) -> np.ndarray:
        """Responses ``(ns, 3, n)`` by shift-and-add over lags."""
        if c.n_lags != self.basis.n_lags:
            raise ValueError(f"coefficients have {c.n_lags} lags, basis has {self.basis.n_lags}")
        return _shift_add(self.G, c.c, self.stride, self.n)


def _shift_add(G: np.ndarray, c: np.ndarray, stride: int, n: int) -> np.ndarray:
    ns = G.shape[0]
    U = np.zeros((ns, 3, n))
    for l in range(c.shape[1]):
        lag = l * stride
        if lag >= n:
            break
        cl = c[:, l]
        if not np.any(cl):
            continue
        # sum_j G[k, j, i, m] * c[j, l]
        U[:, :, lag:] += np.einsum("kjim,j->kim", G[:, :, :, : n - lag], cl)
    return U


def synthesize_response(bank: GreenBank, c: Coefficients, basis: BasisConfig,
                        n_samples: int | None = None) -> list[Waveform]:
    """``U_ki(t) = sum_j sum_l G_kij(t - l Δt) c[j, l]`` for every station."""
    n = bank.n_step if n_samples is None else int(n_samples)
    if c.n_lags != basis.n_lags:
        raise ValueError(f"coefficients have {c.n_lags} lags, basis has {basis.n_lags}")
    U = _shift_add(_fit_length(bank.samples, n), c.c, basis.stride(bank.dt), n)
    return [Waveform(bank.dt, U[k].T) for k in range(U.shape[0])]


def build_normal_system(bank: GreenBank, obs, basis: BasisConfig) -> NormalSystem:
    return LaggedDesign(bank, basis, n_samples=obs[0].n if obs else None).normal_system(obs)


def truncated_svd_solve(system: NormalSystem, rel_cutoff: float = 1e-8):
    """Minimum-norm solution of ``A c = b`` through a truncated pseudoinverse.

    Returns ``(Coefficients, rank)``.
    """
    if not 0.0 <= rel_cutoff < 1.0:
        raise ValueError("rel_cutoff must lie in [0, 1)")
    A = np.asarray(system.A, dtype=float)
    if not np.any(A):
        raise ValueError("normal matrix is all zero")
    U, s, Vt = np.linalg.svd(A)
    keep = s >= rel_cutoff * s[0]
    keep &= s > 0
    rank = int(np.count_nonzero(keep))
    x = Vt[keep].T @ ((U[:, keep].T @ system.b) / s[keep])
    return Coefficients(x.reshape(3, system.n_lags)), rank


def _misfit_terms(U: np.ndarray, o: np.ndarray, dt: float):
    """Per-(station, component) ``int (U-obs)^2`` and weights."""
    if U.shape != o.shape:
        raise ValueError(f"response shape {U.shape} does not match observation shape {o.shape}")
    energy = np.sum(o * o, axis=-1) * dt
    w = _component_weights(energy)
    num = np.sum((U - o) ** 2, axis=-1) * dt
    return num, energy, w


def compute_err(U, obs) -> float:
    """Mean over counted components of ``||U - obs|| / ||obs||``."""
    dt = obs[0].dt
    o = _obs_array(obs, dt)
    Ua = _obs_array(U, dt)
    num, energy, w = _misfit_terms(Ua, o, dt)
    keep = w > 0
    return float(np.sum(np.sqrt(num[keep] / energy[keep])) / np.count_nonzero(keep))


def compute_objective(U, obs) -> float:
    """Quadratic misfit ``J`` (sum of energy-normalised squared errors)."""
    dt = obs[0].dt
    num, energy, w = _misfit_terms(_obs_array(U, dt), _obs_array(obs, dt), dt)
    return float(np.sum(w * num))


def reconstruct_input(c: Coefficients, basis: BasisConfig, dt: float, n_samples: int | None = None) -> Waveform:
    """``f_j(t) = sum_l c[j, l] p(t - l Δt)`` sampled at ``dt`` over the input duration."""
    if c.n_lags != basis.n_lags:
        raise ValueError(f"coefficients have {c.n_lags} lags, basis has {basis.n_lags}")
    n = int(round(basis.input_duration / dt)) if n_samples is None else int(n_samples)
    t = dt * np.arange(n)
    P = impulse_p(t[None, :] - basis.dt * np.arange(c.n_lags)[:, None], basis.pulse_width)
    return Waveform(dt, (c.c @ P).T)


def estimate_for_model(bank: GreenBank, obs, basis: BasisConfig, rel_cutoff: float = 1e-8,
                       design: LaggedDesign | None = None) -> Estimate:
    """Normal equations, truncated SVD, synthesis and ERR for one model and event."""
    obs = list(obs)
    if design is None:
        design = LaggedDesign(bank, basis, n_samples=obs[0].n)
    system = design.normal_system(obs)
    c, rank = truncated_svd_solve(system, rel_cutoff)
    U = design.synthesize(c)
    syn = [Waveform(bank.dt, U[k].T) for k in range(U.shape[0])]
    return Estimate(c, compute_err(syn, obs), compute_objective(syn, obs), rank, bank.model_id)


def input_error(estimated: Waveform, true: Waveform) -> float:
    """Relative L2 error of an estimated incident wave over the common length."""
    n = min(estimated.n, true.n)
    ref = np.linalg.norm(true.samples[:n])
    if not ref > 0:
        raise ValueError("reference input is identically zero")
    return float(np.linalg.norm(estimated.samples[:n] - true.samples[:n]) / ref)


def write_estimate(path, est: Estimate, basis: BasisConfig) -> None:
    doc = {
        "model_id": est.model_id,
        "event_id": est.event_id,
        "err": est.err,
        "objective": est.objective,
        "rank": est.rank,
        "basis": {"dt": basis.dt, "pulse_width": basis.pulse_width,
                  "input_duration": basis.input_duration, "n_lags": basis.n_lags},
        "c": est.coefficients.c.tolist(),
    }
    doc.update(est.extra)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    os.replace(tmp, path)


def read_estimate(path) -> tuple[Estimate, BasisConfig]:
    doc = json.loads(Path(path).read_text())
    bd = doc["basis"]
    basis = BasisConfig(bd["dt"], bd["pulse_width"], bd["input_duration"], bd["n_lags"])
    est = Estimate(Coefficients(np.array(doc["c"])), doc["err"], doc["objective"], doc["rank"],
                   doc["model_id"], doc["event_id"])
    return est, basis
