"""Structured trilinear hexahedral discretisation of a layered ground model.

Nodal vectors are stored component-major as ``(3, NZ, NY, NX)`` arrays with
``NX = ex + 1`` etc.; depth index 0 is the free surface and x3 grows
downward. Element-local corner ``c`` sits at offset
``(c & 1, (c >> 1) & 1, (c >> 2) & 1)`` along (x1, x2, x3).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh

from ..ground_model import GroundModel, MaterialLayer

CORNERS = [(c & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8)]


@lru_cache(maxsize=None)
def reference_matrices() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-cube 24x24 mass, lambda- and mu-stiffness matrices.

    For a cube of side ``h`` the element mass is ``rho * h**3 * Mref`` and the
    stiffness is ``h * (lam * Klam + mu * Kmu)``. Two-point Gauss is exact here.
    """
    g = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
    Mref = np.zeros((24, 24))
    Klam = np.zeros((24, 24))
    Kmu = np.zeros((24, 24))
    Dlam = np.zeros((6, 6))
    Dlam[:3, :3] = 1.0
    Dmu = np.diag([2.0, 2.0, 2.0, 1.0, 1.0, 1.0])
    for x in g:
        for y in g:
            for z in g:
                N = np.empty(8)
                dN = np.empty((8, 3))
                for c, (a, b, d) in enumerate(CORNERS):
                    fx = x if a else 1 - x
                    fy = y if b else 1 - y
                    fz = z if d else 1 - z
                    sx = 1.0 if a else -1.0
                    sy = 1.0 if b else -1.0
                    sz = 1.0 if d else -1.0
                    N[c] = fx * fy * fz
                    dN[c] = (sx * fy * fz, fx * sy * fz, fx * fy * sz)
                B = np.zeros((6, 24))
                for c in range(8):
                    gx, gy, gz = dN[c]
                    B[0, 3 * c] = gx
                    B[1, 3 * c + 1] = gy
                    B[2, 3 * c + 2] = gz
                    B[3, 3 * c + 1], B[3, 3 * c + 2] = gz, gy
                    B[4, 3 * c], B[4, 3 * c + 2] = gz, gx
                    B[5, 3 * c], B[5, 3 * c + 1] = gy, gx
                w = 0.125
                Mref += w * np.kron(np.outer(N, N), np.eye(3))
                Klam += w * B.T @ Dlam @ B
                Kmu += w * B.T @ Dmu @ B
    for m in (Mref, Klam, Kmu):
        m.setflags(write=False)
    return Mref, Klam, Kmu


@dataclass(frozen=True)
class HexMesh:
    shape: tuple[int, int, int]  # element counts (ex, ey, ez)
    h: float
    layer_of: np.ndarray  # (ex, ey, ez) int8, 0 = layer1, 1 = layer2
    layers: tuple[MaterialLayer, MaterialLayer]
    model_id: str = ""

    @property
    def node_shape(self) -> tuple[int, int, int]:
        ex, ey, ez = self.shape
        return ex + 1, ey + 1, ez + 1

    @property
    def vector_shape(self) -> tuple[int, int, int, int]:
        ex, ey, ez = self.shape
        return 3, ez + 1, ey + 1, ex + 1

    @property
    def n_dof(self) -> int:
        return 3 * int(np.prod(self.node_shape))

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * self.h for n in self.shape)

    def surface_node(self, x1: float, x2: float) -> tuple[int, int]:
        Lx, Ly, _ = self.extent
        if not (0.0 <= x1 <= Lx and 0.0 <= x2 <= Ly):
            raise ValueError(f"station ({x1}, {x2}) lies outside the {Lx} x {Ly} m surface")
        return int(round(x1 / self.h)), int(round(x2 / self.h))


def build_mesh(model: GroundModel, h: float) -> HexMesh:
    """Uniform hexahedral grid; an element is layer 1 when its centroid depth
    is shallower than the sediment thickness at its centroid."""
    if not h > 0:
        raise ValueError("element size must be positive")
    counts = []
    for L in model.domain:
        n = L / h
        if n < 0.5 or abs(n - round(n)) > 1e-6 * n:
            raise ValueError(f"element size {h} does not divide extent {L}")
        counts.append(int(round(n)))
    ex, ey, ez = counts
    xc = (np.arange(ex) + 0.5) * h
    yc = (np.arange(ey) + 0.5) * h
    zc = (np.arange(ez) + 0.5) * h
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    thick = model.field.at(X, Y)
    layer_of = np.where(zc[None, None, :] < thick[:, :, None], 0, 1).astype(np.int8)
    layer_of.setflags(write=False)
    return HexMesh((ex, ey, ez), float(h), layer_of, (model.layer1, model.layer2), model.id)


class ElementOperator:
    """Matrix-free ``y = sum_e P_e^T E_e P_e x`` for piecewise-constant ``E_e``.

    ``E_e`` is ``mass * rho * h^3 * Mref + stiff * h * (lam * Klam + mu * Kmu)``
    evaluated with the element's material, so a layered mesh needs only one
    dense 24x24 block per material. An optional nodal diagonal (boundary
    dashpots) is added on top.
    """

    def __init__(self, mesh: HexMesh, mass: float = 0.0, stiff: float = 0.0, diag=None):
        Mref, Klam, Kmu = reference_matrices()
        h = mesh.h
        self.mesh = mesh
        ex, ey, ez = mesh.shape
        self.shape = (ez, ey, ex)
        blocks = []
        for lay in mesh.layers:
            blocks.append(mass * lay.rho * h**3 * Mref + stiff * h * (lay.lam * Klam + lay.mu * Kmu))
        gid = mesh.layer_of.transpose(2, 1, 0).ravel().astype(np.intp)
        used = np.unique(gid)
        self._single = len(used) == 1
        if self._single:
            self._E = blocks[int(used[0])]
        else:
            self._E = np.vstack(blocks)  # 48 x 24
            self._mask = gid == 1
        self._blocks = blocks
        self._masks = {}
        self._gid = gid
        self.diag_extra = None if diag is None else np.asarray(diag, dtype=float)

    def _gather(self, u):
        # u: (B, 3, NZ, NY, NX) -> (24, B * n_elem), row = 3 * corner + component
        ez, ey, ex = self.shape
        U = np.empty((8, 3, u.shape[0], ez, ey, ex))
        for c, (a, b, d) in enumerate(CORNERS):
            U[c] = np.swapaxes(u[:, :, d : d + ez, b : b + ey, a : a + ex], 0, 1)
        return U.reshape(24, -1)

    def _scatter(self, Y, out):
        ez, ey, ex = self.shape
        Y = Y.reshape(8, 3, out.shape[0], ez, ey, ex)
        for c, (a, b, d) in enumerate(CORNERS):
            out[:, :, d : d + ez, b : b + ey, a : a + ex] += np.swapaxes(Y[c], 0, 1)
        return out

    def _batch_mask(self, nb):
        if nb not in self._masks:
            self._masks[nb] = np.tile(self._mask, nb)
        return self._masks[nb]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Apply to one vector ``(3, NZ, NY, NX)`` or a batch ``(B, 3, NZ, NY, NX)``."""
        single = u.ndim == 4
        ub = u[None] if single else u
        Y = self._E @ self._gather(ub)
        if not self._single:
            Y = np.where(self._batch_mask(ub.shape[0]), Y[24:], Y[:24])
        out = np.zeros_like(ub) if self.diag_extra is None else self.diag_extra * ub
        self._scatter(Y, out)
        return out[0] if single else out

    def diagonal(self) -> np.ndarray:
        ne = self._gid.size
        D = np.empty((24, ne))
        for g, blk in enumerate(self._blocks):
            D[:, self._gid == g] = np.diag(blk)[:, None]
        out = np.zeros((1,) + self.mesh.vector_shape)
        self._scatter(D, out)
        out = out[0]
        if self.diag_extra is not None:
            out += self.diag_extra
        return out


def dashpot_coefficients(mesh: HexMesh, sides: bool = True, bottom: bool = True):
    """Lumped Lysmer-Kuhlemeyer dashpots as nodal diagonals.

    Returns ``(c_all, c_bottom)`` in solver layout: the full boundary diagonal
    and the part from the bottom face alone (used for incident-wave
    injection). Each element face spreads ``rho * c * h^2`` equally over its 4
    nodes; the normal component uses vp, tangential ones vs.
    """
    a = mesh.h**2 / 4.0
    rho = np.array([l.rho for l in mesh.layers])
    speeds = np.array([[l.vp, l.vs] for l in mesh.layers])
    lay = mesh.layer_of.transpose(2, 1, 0)  # (ez, ey, ex)
    c_all = np.zeros(mesh.vector_shape)
    c_bot = np.zeros(mesh.vector_shape)

    def face(c_out, lay2d, normal, index):
        # lay2d: materials of the face's elements; index builds the node slice
        for comp in range(3):
            z = a * rho[lay2d] * speeds[lay2d, 0 if comp == normal else 1]
            for da in (0, 1):
                for db in (0, 1):
                    c_out[(comp,) + index(da, db, lay2d.shape)] += z

    if bottom:
        face(c_bot, lay[-1], 2, lambda da, db, s: (-1, slice(da, da + s[0]), slice(db, db + s[1])))
        c_all += c_bot
    if sides:
        for end in (0, -1):
            face(c_all, lay[:, :, end], 0, lambda da, db, s: (slice(da, da + s[0]), slice(db, db + s[1]), end))
            face(c_all, lay[:, end, :], 1, lambda da, db, s: (slice(da, da + s[0]), end, slice(db, db + s[1])))
    return c_all, c_bot


def _mass_1d(n_el: int) -> np.ndarray:
    M = np.zeros((n_el + 1, n_el + 1))
    for e in range(n_el):
        M[e : e + 2, e : e + 2] += np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    return M


def _stiff_1d(n_el: int) -> np.ndarray:
    K = np.zeros((n_el + 1, n_el + 1))
    for e in range(n_el):
        K[e : e + 2, e : e + 2] += np.array([[1.0, -1.0], [-1.0, 1.0]])
    return K


class FastDiagonalPreconditioner:
    """Approximate inverse of the Newmark operator by fast diagonalisation.

    The model operator ``F`` treats each displacement component as decoupled,
    uses volume-averaged material and a consistent (rather than lumped) face
    dashpot, so that per component it is a Kronecker sum
    ``a M(x)M(x)M + T_x(x)M(x)M + M(x)T_y(x)M + M(x)M(x)T_z`` of unit-spacing
    1D matrices, inverted exactly in the joint eigenbasis of the 1D pencils
    ``(T_axis, M)``. The applied preconditioner is ``S F^-1 S`` with
    ``S = sqrt(diag(F) / diag(A))``, so its inverse matches the diagonal of
    the true operator.
    """

    def __init__(self, op: ElementOperator, mass: float, stiff: float, damp: float = 0.0,
                 sides: bool = True, bottom: bool = True):
        mesh = op.mesh
        ex, ey, ez = mesh.shape
        h = mesh.h
        frac = np.bincount(mesh.layer_of.ravel(), minlength=2)[:2] / mesh.layer_of.size
        avg = lambda f: sum(w * f(l) for w, l in zip(frac, mesh.layers))  # noqa: E731
        rho, lam, mu = avg(lambda l: l.rho), avg(lambda l: l.lam), avg(lambda l: l.mu)
        zp, zs = avg(lambda l: l.rho * l.vp), avg(lambda l: l.rho * l.vs)

        n_el = (ex, ey, ez)
        ends = []
        for ax, n in enumerate(n_el):
            e = np.zeros(n + 1)
            if ax < 2 and sides:
                e[[0, -1]] = 1.0
            if ax == 2 and bottom:
                e[-1] = 1.0  # bottom face only; the surface is traction-free
            ends.append(np.diag(e))
        Ms = [_mass_1d(n) for n in n_el]
        Ks = [_stiff_1d(n) for n in n_el]
        shapes = [(1, 1, -1), (1, -1, 1), (-1, 1, 1)]  # x1, x2, x3 in (z, y, x) order

        self.V = [np.empty((3, n + 1, n + 1)) for n in n_el]
        denom = np.full(mesh.vector_shape, mass * rho * h**3)
        fdiag = np.empty(mesh.vector_shape)
        mdiag = [np.diag(M).reshape(sh) for M, sh in zip(Ms, shapes)]
        for comp in range(3):
            fdiag[comp] = mass * rho * h**3 * mdiag[0] * mdiag[1] * mdiag[2]
            for ax in range(3):
                kappa = (lam + 2 * mu) if ax == comp else mu
                imped = zp if ax == comp else zs
                T = stiff * h * kappa * Ks[ax] + damp * imped * h**2 * ends[ax]
                w, V = eigh(T, Ms[ax])
                self.V[ax][comp] = V
                denom[comp] += w.reshape(shapes[ax])
                others = [mdiag[o] for o in range(3) if o != ax]
                fdiag[comp] += np.diag(T).reshape(shapes[ax]) * others[0] * others[1]
        self.inv_denom = 1.0 / denom
        self.scale = np.sqrt(fdiag / op.diagonal())
        Vx, Vy, Vz = self.V
        self._Vx, self._VxT = Vx[:, None], np.swapaxes(Vx, 1, 2)[:, None]
        self._Vy, self._VyT = Vy[:, None], np.swapaxes(Vy, 1, 2)[:, None]
        self._Vz, self._VzT = Vz, np.swapaxes(Vz, 1, 2)

    def _solve_model(self, r):
        # r: (B, 3, NZ, NY, NX)
        nb, _, nz, ny, nx = r.shape
        t = self._VyT @ (r @ self._Vx)
        t = (self._VzT @ t.reshape(nb, 3, nz, ny * nx)).reshape(r.shape)
        t *= self.inv_denom
        t = (self._Vz @ t.reshape(nb, 3, nz, ny * nx)).reshape(r.shape)
        return (self._Vy @ t) @ self._VxT

    def __call__(self, r):
        single = r.ndim == 4
        rb = r[None] if single else r
        out = self.scale * self._solve_model(self.scale * rb)
        return out[0] if single else out
