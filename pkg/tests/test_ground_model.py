import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundsel.ground_model import (
    CandidateSet,
    GridSpec,
    GroundModel,
    MaterialLayer,
    SurveyPoint,
    ThicknessField,
    generate_candidate_set,
    idw_thickness,
    laplace_smooth,
    model_distance,
    model_id,
    read_model,
    read_survey_csv,
    sample_survey,
    select_diverse_subset,
    synth_reference_field,
    write_model,
    write_survey_csv,
)

GRID = GridSpec(12, 10, 5.0, 6.0)


def random_survey(rng, n, grid=GRID):
    Lx, Ly = grid.extent
    return [SurveyPoint(float(x), float(y), float(z))
            for x, y, z in zip(rng.uniform(0, Lx, n), rng.uniform(0, Ly, n), rng.uniform(5, 60, n))]


def brute_idw(survey, M, q, x, y):
    d = np.array([math.hypot(p.x1 - x, p.x2 - y) for p in survey])
    order = np.argsort(d, kind="stable")[:M]
    z = np.array([survey[k].thickness for k in order])
    w = d[order] ** (-q)
    return float((w * z).sum() / w.sum())


def test_idw_matches_naive_loop():
    rng = np.random.default_rng(3)
    survey = random_survey(rng, 15)
    f = idw_thickness(survey, 4, 1.7, GRID)
    g1, g2 = GRID.centers()
    for i in range(GRID.nx):
        for j in range(GRID.ny):
            assert f.values[i, j] == pytest.approx(brute_idw(survey, 4, 1.7, g1[i, j], g2[i, j]), rel=1e-12)


def test_idw_exact_at_survey_nodes():
    g1, g2 = GRID.centers()
    rng = np.random.default_rng(0)
    cells = rng.choice(GRID.nx * GRID.ny, size=9, replace=False)
    survey = [SurveyPoint(float(g1.flat[c]), float(g2.flat[c]), float(rng.uniform(1, 50))) for c in cells]
    for M in (1, 3, 9):
        f = idw_thickness(survey, M, 2.0, GRID)
        for c, p in zip(cells, survey):
            assert f.values.flat[c] == p.thickness


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0.1, 5.0), st.integers(0, 2**31 - 1))
def test_idw_within_local_hull(M, q, seed):
    rng = np.random.default_rng(seed)
    survey = random_survey(rng, 10)
    f = idw_thickness(survey, M, q, GRID)
    z = np.array([p.thickness for p in survey])
    pts = np.array([[p.x1, p.x2] for p in survey])
    g1, g2 = GRID.centers()
    for x, y, v in zip(g1.ravel(), g2.ravel(), f.values.ravel()):
        near = np.argsort(np.hypot(pts[:, 0] - x, pts[:, 1] - y), kind="stable")[:M]
        assert z[near].min() <= v <= z[near].max()


def test_idw_m1_is_nearest_neighbour():
    rng = np.random.default_rng(11)
    survey = random_survey(rng, 20)
    f = idw_thickness(survey, 1, 3.0, GRID)
    pts = np.array([[p.x1, p.x2] for p in survey])
    g1, g2 = GRID.centers()
    for x, y, v in zip(g1.ravel(), g2.ravel(), f.values.ravel()):
        k = int(np.argmin(np.hypot(pts[:, 0] - x, pts[:, 1] - y)))
        assert v == survey[k].thickness


def test_idw_constant_survey_gives_constant_field():
    rng = np.random.default_rng(1)
    survey = [SurveyPoint(p.x1, p.x2, 17.25) for p in random_survey(rng, 12)]
    f = idw_thickness(survey, 5, 2.0, GRID)
    assert np.all(f.values == 17.25)


def test_idw_rejects_bad_arguments():
    survey = random_survey(np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        idw_thickness(survey, 4, 2.0, GRID)
    with pytest.raises(ValueError):
        idw_thickness(survey, 1, 0.0, GRID)
    with pytest.raises(ValueError):
        idw_thickness([], 1, 1.0, GRID)


def test_smooth_constant_fixed_point_and_identity():
    f = ThicknessField(GRID, np.full((GRID.nx, GRID.ny), 3.5))
    assert np.all(laplace_smooth(f, 5).values == 3.5)
    rng = np.random.default_rng(2)
    g = ThicknessField(GRID, rng.uniform(0, 9, (GRID.nx, GRID.ny)))
    assert laplace_smooth(g, 0).values.tobytes() == g.values.tobytes()


def test_smooth_single_spike():
    v = np.zeros((5, 5))
    v[2, 2] = 10.0
    out = laplace_smooth(ThicknessField(GridSpec(5, 5, 1.0, 1.0), v), 1).values
    want = np.zeros((5, 5))
    want[2, 2] = 2.0
    for i, j in ((1, 2), (3, 2), (2, 1), (2, 3)):
        want[i, j] = 2.0
    np.testing.assert_array_equal(out, want)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_smooth_stays_in_range(seed, iters):
    v = np.random.default_rng(seed).uniform(0, 40, (GRID.nx, GRID.ny))
    out = laplace_smooth(ThicknessField(GRID, v), iters).values
    assert out.min() >= v.min() and out.max() <= v.max()


def test_candidate_set_order_and_count():
    survey = random_survey(np.random.default_rng(4), 30)
    cs = generate_candidate_set(survey, [1, 3, 5], [0.5, 2.0], grid=GRID)
    assert len(cs) == 6
    assert [(m.provenance["M"], m.provenance["q"]) for m in cs] == [
        (1, 0.5), (1, 2.0), (3, 0.5), (3, 2.0), (5, 0.5), (5, 2.0)]
    assert [m.id for m in cs] == [model_id(k) for k in range(6)]
    assert cs.index_of(3, 2.0) == 3
    assert all(m.provenance["smooth_iters"] == 5 for m in cs)


def test_candidate_m1_is_smoothed_nearest_neighbour():
    survey = random_survey(np.random.default_rng(5), 8)
    (m,) = generate_candidate_set(survey, [1], [1.0], grid=GRID)
    want = laplace_smooth(idw_thickness(survey, 1, 7.0, GRID), 5)
    np.testing.assert_array_equal(m.field.values, want.values)


def _model(values, mid="m"):
    g = GridSpec(values.shape[0], values.shape[1], 1.0, 1.0)
    return GroundModel(mid, ThicknessField(g, values), domain=(g.extent[0], g.extent[1], 100.0))


def test_model_distance_examples():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 30, (7, 5))
    assert model_distance(_model(a), _model(a)) == 0.0
    assert model_distance(_model(a), _model(a + 2.0)) == pytest.approx(2.0, rel=1e-14)
    b = rng.uniform(0, 30, (7, 5))
    s = 0.0
    for i in range(7):
        for j in range(5):
            s += (a[i, j] - b[i, j]) ** 2
    assert model_distance(_model(a), _model(b)) == pytest.approx(math.sqrt(s / 35), rel=1e-13)
    assert model_distance(_model(a), _model(b)) == model_distance(_model(b), _model(a))
    with pytest.raises(ValueError):
        model_distance(_model(a), _model(np.zeros((5, 7))))


def _collinear_set(offsets):
    base = np.full((4, 4), 10.0)
    models = []
    for k, off in enumerate(offsets):
        m = _model(base + off, model_id(k))
        models.append(GroundModel(m.id, m.field, domain=m.domain, provenance={"M": k + 1, "q": 1.0}))
    return CandidateSet(tuple(models))


def test_diverse_subset_collinear_example():
    cs = _collinear_set([0.0, 1.0, 2.0, 3.0, 4.0])
    sub = select_diverse_subset(cs, (1, 1.0), 3)
    picked = [m.provenance["source_id"] for m in sub]
    assert picked == [model_id(0), model_id(4), model_id(2)]
    assert [m.id for m in sub] == [model_id(0), model_id(1), model_id(2)]


def test_diverse_subset_whole_set_and_errors():
    cs = _collinear_set([0.0, 2.0, 5.0])
    assert len(select_diverse_subset(cs, (2, 1.0), 3)) == 3
    assert select_diverse_subset(cs, (2, 1.0), 3)[0].provenance["source_id"] == model_id(1)
    with pytest.raises(ValueError):
        select_diverse_subset(cs, (1, 1.0), 4)
    with pytest.raises(KeyError):
        select_diverse_subset(cs, (9, 1.0), 2)


def test_diverse_subset_greedy_replay():
    survey = random_survey(np.random.default_rng(8), 25)
    cs = generate_candidate_set(survey, [1, 2, 4, 8], [0.5, 1.0, 2.0, 4.0], grid=GRID)
    sub = select_diverse_subset(cs, (4, 2.0), 7)
    by_id = {m.id: m for m in cs}
    chosen = [by_id[m.provenance["source_id"]] for m in sub]
    assert chosen[0].provenance == {"M": 4, "q": 2.0, "smooth_iters": 5}
    for step in range(1, len(chosen)):
        earlier = chosen[:step]
        gap = min(model_distance(chosen[step], e) for e in earlier)
        for t in cs:
            if t.id in {c.id for c in chosen[:step + 1]}:
                continue
            assert gap >= min(model_distance(t, e) for e in earlier)


def test_reference_field_examples():
    g = GridSpec(60, 60, 10.0, 10.0)
    flat = synth_reference_field(g, depth=0.0, base=12.0)
    assert np.all(flat.values == 12.0)
    f = synth_reference_field(g, depth=40.0, width=50.0, period=300.0, base=10.0, meander=80.0)
    g1, g2 = g.centers()
    x, y = g1[17, 33], g2[17, 33]
    offset = y - (300.0 + 80.0 * math.sin(2 * math.pi * x / 300.0))
    assert f.values[17, 33] == pytest.approx(10.0 + 40.0 * math.exp(-0.5 * (offset / 50.0) ** 2), rel=1e-13)
    # a node whose centre lies on the centreline
    g0 = GridSpec(1, 1, 10.0, 10.0)
    on = synth_reference_field(g0, depth=30.0, base=5.0, meander=0.0, center=5.0)
    assert on.values[0, 0] == 35.0


def test_sample_survey_reads_field_values():
    f = synth_reference_field(GridSpec(20, 20, 5.0, 5.0))
    pts = sample_survey(f, 15, seed=4)
    assert len({(p.x1, p.x2) for p in pts}) == 15
    for p in pts:
        assert f.at(p.x1, p.x2) == p.thickness
    assert pts == sample_survey(f, 15, seed=4)


def test_material_layer_checks():
    m = MaterialLayer(1500.0, 200.0, 1800.0)
    assert m.mu == 1800.0 * 200.0**2
    assert m.lam == 1800.0 * (1500.0**2 - 2 * 200.0**2)
    with pytest.raises(ValueError):
        MaterialLayer(200.0, 200.0, 1800.0)


def test_model_too_deep_rejected():
    with pytest.raises(ValueError):
        _model(np.full((3, 3), 100.0))


def test_file_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    survey = random_survey(rng, 6)
    write_survey_csv(tmp_path / "s.csv", survey)
    assert read_survey_csv(tmp_path / "s.csv") == survey
    (m,) = generate_candidate_set(survey, [3], [1.3], grid=GRID)
    write_model(tmp_path / "m.json", m)
    back = read_model(tmp_path / "m.json")
    assert back.field.values.tobytes() == m.field.values.tobytes()
    assert (back.id, back.layer1, back.layer2, back.domain, back.field.grid) == (m.id, m.layer1, m.layer2, m.domain, m.field.grid)
    assert back.provenance == m.provenance
