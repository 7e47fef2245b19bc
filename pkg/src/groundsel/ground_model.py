"""Candidate two-layer ground models built from sparse thickness surveys.

Thickness fields are cell-centred: value ``(i, j)`` of a field with spacing
``(dx, dy)`` lives at ``((i + 0.5) * dx, (j + 0.5) * dy)``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

COINCIDENT_TOL = 1e-9  # metres


@dataclass(frozen=True)
class SurveyPoint:
    x1: float
    x2: float
    thickness: float

    def __post_init__(self):
        if self.thickness < 0:
            raise ValueError(f"negative thickness at ({self.x1}, {self.x2})")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"invalid grid {self}")

    @property
    def extent(self) -> tuple[float, float]:
        return self.nx * self.dx, self.ny * self.dy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(nx, ny)`` arrays."""
        x1 = (np.arange(self.nx) + 0.5) * self.dx
        x2 = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x1, x2, indexing="ij")


@dataclass(frozen=True)
class ThicknessField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("thickness values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def at(self, x1, x2):
        """Value of the cell containing each point (clamped to the grid)."""
        i = np.clip(np.floor(np.asarray(x1) / self.grid.dx).astype(int), 0, self.grid.nx - 1)
        j = np.clip(np.floor(np.asarray(x2) / self.grid.dy).astype(int), 0, self.grid.ny - 1)
        return self.values[i, j]


@dataclass(frozen=True)
class MaterialLayer:
    vp: float
    vs: float
    rho: float

    def __post_init__(self):
        if not (self.vs > 0 and self.rho > 0):
            raise ValueError("vs and rho must be positive")
        if not self.vp > self.vs * math.sqrt(2.0):
            raise ValueError("vp must exceed sqrt(2)*vs (positive Lame lambda)")

    @property
    def mu(self) -> float:
        return self.rho * self.vs**2

    @property
    def lam(self) -> float:
        return self.rho * (self.vp**2 - 2.0 * self.vs**2)


# Stand-ins for soft sediment over engineering bedrock.
DEFAULT_LAYER1 = MaterialLayer(vp=1500.0, vs=200.0, rho=1800.0)
DEFAULT_LAYER2 = MaterialLayer(vp=2000.0, vs=600.0, rho=2100.0)


@dataclass(frozen=True)
class GroundModel:
    id: str
    field: ThicknessField
    layer1: MaterialLayer = DEFAULT_LAYER1
    layer2: MaterialLayer = DEFAULT_LAYER2
    domain: tuple[float, float, float] = (600.0, 600.0, 100.0)
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if float(np.max(self.field.values)) >= self.domain[2]:
            raise ValueError(f"{self.id}: sediment thickness reaches the model bottom")


@dataclass(frozen=True)
class CandidateSet:
    models: tuple[GroundModel, ...]

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, i):
        return self.models[i]

    @property
    def provenance(self) -> list[dict]:
        return [m.provenance for m in self.models]

    def index_of(self, M: int, q: float) -> int:
        for i, m in enumerate(self.models):
            if m.provenance.get("M") == M and math.isclose(m.provenance.get("q", math.nan), q, abs_tol=1e-12):
                return i
        raise KeyError(f"no candidate with M={M}, q={q}")


def model_id(index: int) -> str:
    return f"model{index:06d}"


def idw_thickness(survey, M: int, q: float, grid: GridSpec) -> ThicknessField:
    """Inverse-distance-weighted thickness from the ``M`` nearest survey points."""
    survey = list(survey)
    if not survey:
        raise ValueError("empty survey")
    if M < 1 or M > len(survey):
        raise ValueError(f"M={M} must be in [1, {len(survey)}]")
    if not q > 0:
        raise ValueError("q must be positive")
    pts = np.array([[p.x1, p.x2] for p in survey])
    zbar = np.array([p.thickness for p in survey])
    g1, g2 = grid.centers()
    nodes = np.column_stack([g1.ravel(), g2.ravel()])

    # dense distances with a stable sort: equidistant points go by survey order
    dist = np.hypot(nodes[:, 0, None] - pts[:, 0], nodes[:, 1, None] - pts[:, 1])
    idx = np.argsort(dist, axis=1, kind="stable")[:, :M]
    d = np.take_along_axis(dist, idx, axis=1)

    close = d < COINCIDENT_TOL
    hit = close.any(axis=1)
    dd = np.where(close, 1.0, d)  # placeholder; rows with hits are overwritten below
    w = dd ** (-q)
    z = (w * zbar[idx]).sum(axis=1) / w.sum(axis=1)
    if hit.any():
        first = np.argmax(close[hit], axis=1)
        z[hit] = zbar[idx[hit, first]]
    # rounding can push a convex combination a few ulps outside its hull
    z = np.clip(z, zbar[idx].min(axis=1), zbar[idx].max(axis=1))
    return ThicknessField(grid, z.reshape(grid.nx, grid.ny))


def laplace_smooth(f: ThicknessField, iters: int) -> ThicknessField:
    """Repeated 5-point averaging with mirrored ghost nodes at the edges."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if iters == 0:
        return f
    v = np.array(f.values)
    for _ in range(iters):
        p = np.pad(v, 1, mode="reflect") if min(v.shape) > 1 else np.pad(v, 1, mode="edge")
        v = (p[1:-1, 1:-1] + p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 5.0
    return ThicknessField(f.grid, v)


def generate_candidate_set(
    survey,
    M_list,
    q_list,
    smooth_iters: int = 5,
    grid: GridSpec | None = None,
    layer1: MaterialLayer = DEFAULT_LAYER1,
    layer2: MaterialLayer = DEFAULT_LAYER2,
    domain=(600.0, 600.0, 100.0),
) -> CandidateSet:
    """One smoothed IDW model per (M, q) pair, ordered M-major then q."""
    M_list, q_list = list(M_list), list(q_list)
    if not M_list or not q_list:
        raise ValueError("M_list and q_list must be non-empty")
    if grid is None:
        grid = GridSpec(120, 120, domain[0] / 120, domain[1] / 120)
    models = []
    for M in M_list:
        for q in q_list:
            fld = laplace_smooth(idw_thickness(survey, M, q, grid), smooth_iters)
            prov = {"M": int(M), "q": float(q), "smooth_iters": int(smooth_iters)}
            models.append(
                GroundModel(model_id(len(models)), fld, layer1, layer2, tuple(domain), prov)
            )
    return CandidateSet(tuple(models))


def model_distance(a: GroundModel, b: GroundModel) -> float:
    """RMS node-wise thickness difference (metres)."""
    if a.field.grid != b.field.grid:
        raise ValueError("models are on different grids")
    diff = a.field.values - b.field.values
    return float(np.sqrt(np.mean(diff * diff)))


def select_diverse_subset(cands: CandidateSet, baseline, count: int) -> CandidateSet:
    """Greedy farthest-point subset seeded with the baseline (M, q) model.

    Each pick maximises its minimum RMS distance to everything already picked;
    ties go to the lower pool index. Returned models are renumbered in pick
    order and remember their pool id as ``provenance["source_id"]``.
    """
    n = len(cands)
    if count < 1 or count > n:
        raise ValueError(f"count={count} must be in [1, {n}]")
    seed = cands.index_of(*baseline)
    flat = np.stack([m.field.values.ravel() for m in cands])
    grids = {m.field.grid for m in cands}
    if len(grids) != 1:
        raise ValueError("candidates are on different grids")

    def dist_to(i):
        diff = flat - flat[i]
        return np.sqrt(np.mean(diff * diff, axis=1))

    picked = [seed]
    mind = dist_to(seed)
    mind[seed] = -1.0
    while len(picked) < count:
        nxt = int(np.argmax(mind))
        picked.append(nxt)
        mind = np.minimum(mind, dist_to(nxt))
        mind[picked] = -1.0
    out = []
    for k, i in enumerate(picked):
        m = cands[i]
        prov = dict(m.provenance, source_id=m.id)
        out.append(replace(m, id=model_id(k), provenance=prov))
    return CandidateSet(tuple(out))


def synth_reference_field(
    grid: GridSpec,
    depth: float = 50.0,
    width: float = 60.0,
    period: float = 400.0,
    base: float = 20.0,
    meander: float = 100.0,
    center: float | None = None,
) -> ThicknessField:
    """Base thickness plus a Gaussian channel along a sinusoidal centreline.

    The centreline is ``x2 = center + meander * sin(2 pi x1 / period)`` and the
    channel cross-section is ``depth * exp(-0.5 * (offset / width)**2)`` where
    ``offset`` is measured along x2.
    """
    if min(width, period, base) <= 0 or depth < 0 or meander < 0:
        raise ValueError("channel parameters must be positive")
    if center is None:
        center = grid.extent[1] / 2.0
    g1, g2 = grid.centers()
    offset = g2 - (center + meander * np.sin(2.0 * np.pi * g1 / period))
    return ThicknessField(grid, base + depth * np.exp(-0.5 * (offset / width) ** 2))


def sample_survey(f: ThicknessField, count: int, seed: int) -> list[SurveyPoint]:
    """Random distinct grid nodes of ``f`` used as borehole locations."""
    rng = np.random.default_rng(seed)
    n = f.grid.nx * f.grid.ny
    if count > n:
        raise ValueError("more survey points than grid nodes")
    flat = rng.choice(n, size=count, replace=False)
    g1, g2 = f.grid.centers()
    return [
        SurveyPoint(float(g1.flat[k]), float(g2.flat[k]), float(f.values.flat[k])) for k in flat
    ]


# ---------------------------------------------------------------- file formats


def write_survey_csv(path, survey) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "thickness"])
        for p in survey:
            w.writerow([repr(p.x1), repr(p.x2), repr(p.thickness)])


def read_survey_csv(path) -> list[SurveyPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["x1", "x2", "thickness"]:
            raise ValueError(f"{path}: expected header x1,x2,thickness")
        return [SurveyPoint(float(r["x1"]), float(r["x2"]), float(r["thickness"])) for r in reader]


def _layer_dict(m: MaterialLayer) -> dict:
    return {"vp": m.vp, "vs": m.vs, "rho": m.rho}


def model_to_dict(m: GroundModel) -> dict:
    g = m.field.grid
    return {
        "id": m.id,
        "provenance": m.provenance,
        "grid": {"nx": g.nx, "ny": g.ny, "dx": g.dx, "dy": g.dy},
        "domain": list(m.domain),
        "layer1": _layer_dict(m.layer1),
        "layer2": _layer_dict(m.layer2),
        "thickness": [float(v) for v in m.field.values.ravel()],
    }


def model_from_dict(d: dict) -> GroundModel:
    g = GridSpec(**d["grid"])
    values = np.array(d["thickness"], dtype=float).reshape(g.nx, g.ny)
    return GroundModel(
        id=d["id"],
        field=ThicknessField(g, values),
        layer1=MaterialLayer(**d["layer1"]),
        layer2=MaterialLayer(**d["layer2"]),
        domain=tuple(d["domain"]),
        provenance=d.get("provenance", {}),
    )


def write_model(path, m: GroundModel) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model_to_dict(m), indent=1))
    os.replace(tmp, path)


def read_model(path) -> GroundModel:
    return model_from_dict(json.loads(Path(path).read_text()))
