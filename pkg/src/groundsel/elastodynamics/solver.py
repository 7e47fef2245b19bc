"""Preconditioned conjugate gradients and Newmark-beta time stepping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..waveform import Waveform
from .mesh import ElementOperator, FastDiagonalPreconditioner, HexMesh, dashpot_coefficients

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None, step=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.step = step


def _dots(a, b):
    n = a.shape[0]
    return np.einsum("ij,ij->i", a.reshape(n, -1), b.reshape(n, -1))


def _bcast(s, like):
    return s.reshape((-1,) + (1,) * (like.ndim - 1))


def cg_solve(operator, rhs, tol=1e-6, max_iter=1000, precond=None, x0=None, *,
             batched=False, check_residual=True, return_info=False):
    """Solve ``operator(x) = rhs`` for a symmetric positive-definite operator.

    ``operator`` is any callable acting on arrays shaped like ``rhs``;
    ``precond`` is such a callable or an array multiplied elementwise
    (inverse diagonal for Jacobi). Each system stops once its relative
    residual ``|rhs - A x| / |rhs|`` is at most ``tol``; with
    ``check_residual`` the recursively updated residual is confirmed against
    a freshly computed one before returning.

    With ``batched=True`` the leading axis indexes independent systems that
    share the operator; each keeps its own step lengths and stops on its own.
    """
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs must be finite")
    if batched:
        A = operator
        b_ = b
        x0_ = x0
    else:
        A = lambda v: operator(v[0])[None]  # noqa: E731
        b_ = b[None]
        x0_ = None if x0 is None else np.asarray(x0, dtype=float)[None]
    if precond is None:
        apply_m = lambda r: r.copy()  # noqa: E731
    elif callable(precond):
        apply_m = precond if batched else (lambda r: precond(r[0])[None])
    else:
        pinv = np.asarray(precond)
        apply_m = lambda r: pinv * r  # noqa: E731

    bnorm = np.sqrt(_dots(b_, b_))
    target = tol * bnorm
    if x0_ is None:
        x = np.zeros_like(b_)
        r = b_.copy()
    else:
        x = np.array(x0_, dtype=float)
        x[bnorm == 0] = 0.0
        r = b_ - A(x)
    iters = np.zeros(len(b_), dtype=int)
    total = 0
    rnorm = np.sqrt(_dots(r, r))
    while True:
        active = (rnorm > target) & (bnorm > 0)
        if not active.any():
            if not check_residual or total == 0 and x0_ is None:
                break
            true_r = b_ - A(x)
            rnorm = np.sqrt(_dots(true_r, true_r))
            active = (rnorm > target) & (bnorm > 0)
            if not active.any():
                break
            r = true_r
        if total >= max_iter:
            worst = float(np.max(rnorm[active] / bnorm[active]))
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations (relative residual {worst:.3e})",
                iterations=total, residual=worst,
            )
        z = apply_m(r)
        rz = _dots(r, z)
        p = z
        while total < max_iter:
            Ap = A(p)
            pAp = _dots(p, Ap)
            alpha = np.divide(rz, pAp, out=np.zeros_like(rz), where=active & (pAp != 0))
            x += _bcast(alpha, x) * p
            r -= _bcast(alpha, r) * Ap
            total += 1
            iters += active
            rnorm = np.sqrt(_dots(r, r))
            active &= rnorm > target
            if not active.any():
                break
            z = apply_m(r)
            rz_new = _dots(r, z)
            beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=active)
            p = z + _bcast(beta, p) * p
            rz = rz_new
    out = x if batched else x[0]
    if return_info:
        res = np.divide(rnorm, bnorm, out=np.zeros_like(rnorm), where=bnorm > 0)
        return (out, iters, res) if batched else (out, int(iters[0]), float(res[0]))
    return out


@dataclass(frozen=True)
class TimeIntegratorConfig:
    dt: float = 0.02
    steps: int = 450
    beta: float = 0.25
    gamma: float = 0.5
    cg_tol: float = 1e-6
    cg_max_iter: int = 500
    preconditioner: str = "fd"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.cg_tol < 1.0:
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")
        if self.preconditioner not in ("jacobi", "fd"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


class NewmarkIntegrator:
    """Implicit Newmark stepping of ``M a + C v + K u = F`` in acceleration form.

    ``M`` is the consistent mass, ``C`` the boundary dashpots (bottom and
    sides), and the bottom dashpots also drive the model through
    ``F = 2 * C_bottom * v_incident``. State arrays may carry a leading batch
    axis of independent simulations on the same mesh.
    """

    def __init__(self, mesh: HexMesh, config: TimeIntegratorConfig, absorbing: bool = True):
        self.mesh = mesh
        self.config = config
        cfg = config
        if absorbing:
            self.c_all, self.c_bottom = dashpot_coefficients(mesh)
        else:
            self.c_all = np.zeros(mesh.vector_shape)
            self.c_bottom = self.c_all
        self.K = ElementOperator(mesh, stiff=1.0)
        self.M = ElementOperator(mesh, mass=1.0)
        self.A = ElementOperator(
            mesh, mass=1.0, stiff=cfg.beta * cfg.dt**2, diag=cfg.gamma * cfg.dt * self.c_all
        )
        if cfg.preconditioner == "fd":
            self.precond = FastDiagonalPreconditioner(
                self.A, 1.0, cfg.beta * cfg.dt**2, cfg.gamma * cfg.dt if absorbing else 0.0
            )
        else:
            self.precond = 1.0 / self.A.diagonal()
        self.cg_iterations = 0
        self.cg_solves = 0
        self.max_residual = 0.0

    def force(self, v_inc) -> np.ndarray:
        """Bottom injection force for incident velocities ``(B, 3)``."""
        v_inc = np.asarray(v_inc, dtype=float)
        return 2.0 * self.c_bottom[None] * v_inc[:, :, None, None, None]

    def energy(self, u, v) -> float:
        return 0.5 * float(np.vdot(v, self.M(v)) + np.vdot(u, self.K(u)))

    def run(self, steps, incident=None, u0=None, v0=None, observe=None):
        """Advance a batch of ``B`` simulations by ``steps - 1`` steps.

        ``incident`` is ``(B, n, 3)`` bottom incident velocity per step (zero
        beyond its end); ``u0``/``v0`` are ``(B, 3, NZ, NY, NX)``. One of them
        fixes ``B``. ``observe(n, u, v)`` sees every state including the
        initial one.
        """
        cfg = self.config
        dt, beta, gamma = cfg.dt, cfg.beta, cfg.gamma
        if incident is not None:
            inc = np.asarray(incident, dtype=float)
            nb = inc.shape[0]
        else:
            nb = (u0 if u0 is not None else v0).shape[0]
            inc = np.zeros((nb, 0, 3))
        shape = (nb,) + self.mesh.vector_shape
        u = np.zeros(shape) if u0 is None else np.array(u0, dtype=float)
        v = np.zeros(shape) if v0 is None else np.array(v0, dtype=float)

        def f_at(n):
            if n < inc.shape[1] and np.any(inc[:, n]):
                return self.force(inc[:, n])
            return None

        rhs0 = -self.c_all * v - self.K(u)
        f0 = f_at(0)
        if f0 is not None:
            rhs0 += f0
        a = cg_solve(self.M, rhs0, cfg.cg_tol, cfg.cg_max_iter,
                     precond=1.0 / self.M.diagonal(), batched=True)
        if observe is not None:
            observe(0, u, v)
        for n in range(1, steps):
            u_p = u + dt * v + (0.5 - beta) * dt * dt * a
            v_p = v + (1.0 - gamma) * dt * a
            rhs = -self.K(u_p) - self.c_all * v_p
            f = f_at(n)
            if f is not None:
                rhs += f
            try:
                a, it, res = cg_solve(self.A, rhs, cfg.cg_tol, cfg.cg_max_iter, precond=self.precond,
                                      batched=True, check_residual=False, return_info=True)
            except ConvergenceError as exc:
                raise ConvergenceError(f"step {n}: {exc}", iterations=exc.iterations,
                                       residual=exc.residual, step=n) from None
            self.cg_iterations += int(it.max())
            self.cg_solves += 1
            self.max_residual = max(self.max_residual, float(res.max()))
            u = u_p + beta * dt * dt * a
            v = v_p + gamma * dt * a
            if observe is not None:
                observe(n, u, v)
        return u, v


def station_indices(mesh: HexMesh, stations):
    nodes = [mesh.surface_node(float(x1), float(x2)) for x1, x2 in stations]
    return np.array([n[0] for n in nodes], dtype=np.intp), np.array([n[1] for n in nodes], dtype=np.intp)


def run_forward_batch(mesh: HexMesh, config: TimeIntegratorConfig, inputs, stations):
    """Simulate several incident waves on one mesh in lockstep.

    Returns an array ``(B, n_station, steps, 3)`` of surface velocities.
    """
    ii, jj = station_indices(mesh, stations)
    inc = np.zeros((len(inputs), config.steps, 3))
    for b, w in enumerate(inputs):
        if not np.isclose(w.dt, config.dt, rtol=1e-9, atol=0.0):
            raise ValueError(f"input dt {w.dt} differs from simulation dt {config.dt}")
        n = min(w.n, config.steps)
        inc[b, :n] = w.samples[:n]
    out = np.zeros((len(inputs), len(ii), config.steps, 3))
    live = np.flatnonzero(np.any(inc, axis=(1, 2)))
    if live.size == 0:
        return out

    def observe(n, u, v):
        out[live, :, n, :] = np.swapaxes(v[:, :, 0, jj, ii], 1, 2)

    integ = NewmarkIntegrator(mesh, config)
    integ.run(config.steps, incident=inc[live], observe=observe)
    log.debug("forward run %s x%d: %d CG iterations over %d solves",
              mesh.model_id, live.size, integ.cg_iterations, integ.cg_solves)
    return out


def run_forward(mesh: HexMesh, config: TimeIntegratorConfig, input: Waveform, stations) -> list[Waveform]:
    """Surface velocity histories at ``stations`` for a bottom incident wave.

    Returns one ``Waveform`` of ``config.steps`` samples per station, read at
    the nearest surface node.
    """
    out = run_forward_batch(mesh, config, [input], stations)[0]
    return [Waveform(config.dt, out[k]) for k in range(out.shape[0])]
