import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from isdpd.errors import DegeneratePdf, ValidationError
from isdpd.sampler import (
    MarginalCdf,
    SearchBox,
    build_pdf_grid,
    build_pdf_grids,
    conditional_y,
    draw_realizations,
    marginal_x,
    pdf_grid_from_log,
    sample_inverse,
)

BOX = SearchBox(0.0, 10.0, -5.0, 5.0, 11, 21)


def smooth_grid(box=BOX, seed=0):
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(box.x_nodes, box.y_nodes, indexing="ij")
    field = 1.5 * np.sin(gx / 2.0 + rng.random()) + 0.8 * np.cos(gy / 1.5 + rng.random()) + 0.3 * gx * gy / 50
    return pdf_grid_from_log(box, field)


def piecewise_cdf(nodes, cdf):
    return lambda x: np.interp(x, nodes, cdf)


def test_search_box():
    b = SearchBox.from_step(0, 10e3, -9e3, 9e3, 1e3)
    assert (b.nx, b.ny) == (11, 19) and b.step_x == 1e3 and b.d_y == 18e3
    pts = b.points()
    assert pts.shape == (209, 2)
    np.testing.assert_array_equal(pts[1], [0.0, -8e3])  # x-major
    with pytest.raises(ValidationError):
        SearchBox.from_step(0, 10e3, 0, 10e3, 3e3)
    with pytest.raises(ValidationError):
        SearchBox(1, 0, 0, 1, 3, 3)
    with pytest.raises(ValidationError):
        SearchBox(0, 1, 0, 1, 1, 3)
    np.testing.assert_array_equal(b.cell_index([[5.4e3, 2.6e3]]), [[5, 12]])


def test_pdf_grid_normalization_and_flat():
    g = pdf_grid_from_log(BOX, np.zeros((11, 21)))
    np.testing.assert_allclose(g.values, 1.0 / (11 * BOX.step_x * 21 * BOX.step_y))
    r = smooth_grid()
    assert r.values.sum() * BOX.step_x * BOX.step_y == pytest.approx(1.0, abs=1e-9)
    assert np.all(r.values >= 0)
    huge = pdf_grid_from_log(BOX, 1e6 + np.arange(231.0).reshape(11, 21))
    assert np.isfinite(huge.values).all()
    with pytest.raises(DegeneratePdf):
        pdf_grid_from_log(BOX, np.full((11, 21), -np.inf))


def test_build_pdf_grid_rho1_zero_and_argmax(base_geometry, base_radio):
    from isdpd.synth import AttenuationSet, Scene, generate_waveforms, synthesize

    truth = np.array([[6e3, 3e3]])
    box = SearchBox.from_step(0, 10e3, -9e3, 9e3, 1e3)
    w = generate_waveforms(0, 1, 10, 128)
    obs = synthesize(Scene(base_geometry, base_radio, truth), w, AttenuationSet(np.ones((1, 10, 2))), 0, 0.0)
    flat = build_pdf_grid(0, obs, box, 0.0)
    np.testing.assert_allclose(flat.values, 1.0 / (11 * 1e3 * 19 * 1e3))
    g = build_pdf_grid(0, obs, box, 0.035)
    np.testing.assert_array_equal(box.points()[np.argmax(g.values)], truth[0])
    np.testing.assert_allclose(build_pdf_grids(obs, box, 0.035)[0].values, g.values)
    with pytest.raises(ValueError):
        build_pdf_grid(0, obs, box, -1.0)


def test_marginal_x_examples():
    flat = marginal_x(pdf_grid_from_log(BOX, np.zeros((11, 21))))
    np.testing.assert_allclose(flat.cdf, np.linspace(0, 1, 11), atol=1e-12)
    single = np.full((11, 21), -np.inf)
    single[4] = 0.0
    m = marginal_x(pdf_grid_from_log(BOX, single))
    # all mass within the two cells adjacent to column 4, centred on it
    assert np.all(m.cdf[:4] == 0) and np.all(m.cdf[5:] == 1.0) and m.cdf[4] == pytest.approx(0.5)
    r = marginal_x(smooth_grid(seed=3))
    assert r.pdf.sum() * BOX.step_x == pytest.approx(1.0, abs=1e-9)
    assert r.cdf[-1] == 1.0 and np.all(np.diff(r.cdf) >= 0)
    with pytest.raises(ValidationError):
        MarginalCdf(np.arange(3.0), np.array([0.0, 0.6, 0.5]))


def test_sample_inverse_examples():
    lin = MarginalCdf(np.linspace(0, 1, 5), np.linspace(0, 1, 5))
    assert sample_inverse(lin, 0.25) == pytest.approx(0.25)
    assert sample_inverse(lin, 0.0) == 0.0 and sample_inverse(lin, 1.0) == 1.0
    c = MarginalCdf(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.2, 0.2, 0.7, 1.0]))
    for j, u in enumerate(c.cdf):
        if j != 2:
            assert sample_inverse(c, u) == pytest.approx(c.nodes[j])
    # flat run [1, 2] resolves to its left endpoint
    assert sample_inverse(c, 0.2) == 1.0
    np.testing.assert_allclose(sample_inverse(c, np.array([0.1, 0.45])), [0.5, 2.5])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=2, max_size=12), st.floats(0, 1))
def test_sample_inverse_is_inverse(incs, u):
    cdf = np.concatenate([[0.0], np.cumsum(incs)])
    if cdf[-1] <= 0:
        return
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    nodes = np.arange(len(cdf)) * 2.0
    x = sample_inverse(MarginalCdf(nodes, cdf), u)
    assert nodes[0] <= x <= nodes[-1]
    assert np.interp(x, nodes, cdf) == pytest.approx(u, abs=1e-9)


def test_sample_inverse_ks():
    rng = np.random.default_rng(42)
    nodes = np.sort(rng.uniform(0, 100, 15))
    cdf = np.concatenate([[0.0], np.cumsum(rng.random(14))])
    cdf /= cdf[-1]
    m = MarginalCdf(nodes, cdf)
    draws = sample_inverse(m, rng.random(100_000))
    res = stats.kstest(draws, piecewise_cdf(nodes, cdf))
    assert res.statistic < 0.01


def test_conditional_y_examples():
    g = smooth_grid(seed=1)
    on = conditional_y(g, BOX.x_nodes[3])
    np.testing.assert_allclose(on.pdf, g.values[3] / (g.values[3].sum() * BOX.step_y), rtol=1e-12)
    mid = conditional_y(g, 0.5 * (BOX.x_nodes[3] + BOX.x_nodes[4]))
    avg = 0.5 * (g.values[3] + g.values[4])
    np.testing.assert_allclose(mid.pdf, avg / (avg.sum() * BOX.step_y), rtol=1e-12)
    fx = np.exp(np.sin(BOX.x_nodes))[:, None]
    gy = np.exp(np.cos(BOX.y_nodes))[None, :]
    sep = pdf_grid_from_log(BOX, np.log(fx * gy))
    a, b = conditional_y(sep, 1.3).cdf, conditional_y(sep, 7.9).cdf
    np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        conditional_y(g, 11.0)


def test_conditional_degenerate_fallback():
    field = np.full((11, 21), -np.inf)
    field[0] = 0.0
    g = pdf_grid_from_log(BOX, field)
    c = conditional_y(g, 5.0)
    np.testing.assert_allclose(c.cdf, np.linspace(0, 1, 21), atol=1e-12)
    with pytest.raises(DegeneratePdf):
        conditional_y(g, 5.0, strict=True)
    real = draw_realizations([g], 50, 0)
    assert not real.degenerate.any()  # x draws stay where there is mass


def test_point_mass_and_determinism():
    field = np.full((11, 21), -np.inf)
    field[6, 13] = 0.0
    g = pdf_grid_from_log(BOX, field)
    node = np.array([BOX.x_nodes[6], BOX.y_nodes[13]])
    one = draw_realizations([g], 1, 3)
    assert one.count == 1
    assert np.all(np.abs(one.positions[0, 0] - node) <= [BOX.step_x, BOX.step_y])
    many = draw_realizations([g], 20000, 3)
    np.testing.assert_allclose(many.positions[:, 0].mean(axis=0), node, atol=0.02)
    a = draw_realizations([g, smooth_grid()], 100, np.random.SeedSequence(9))
    seq = np.random.SeedSequence(9)
    b = draw_realizations([g, smooth_grid()], 100, seq)
    c = draw_realizations([g, smooth_grid()], 100, seq)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(b.positions, c.positions)
    with pytest.raises(ValueError):
        draw_realizations([g], 0, 1)


def cell_masses(grid):
    """Target mass of each rectangle between four nodes: the mean of its corners."""
    v = grid.values
    m = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
    return m / m.sum()


def tv_distance(grid, positions):
    h = np.histogram2d(positions[:, 0], positions[:, 1], bins=[grid.box.x_nodes, grid.box.y_nodes])[0]
    return 0.5 * np.abs(h / len(positions) - cell_masses(grid)).sum()


def test_two_dimensional_tv():
    box = SearchBox(0.0, 10.0, -5.0, 5.0, 11, 11)
    g = smooth_grid(box, seed=5)
    real = draw_realizations([g], 10_000, 11)
    assert tv_distance(g, real.positions[:, 0]) < 0.05
    assert np.all(box.contains(real.positions[:, 0]))


def test_axis_order_exchangeable():
    g = smooth_grid(seed=6)
    xy = draw_realizations([g], 10_000, 1, order="xy").positions[:, 0]
    yx = draw_realizations([g], 10_000, 2, order="yx").positions[:, 0]
    for ax in range(2):
        assert stats.ks_2samp(xy[:, ax], yx[:, ax]).pvalue > 0.01


def test_flat_density_is_uniform():
    g = pdf_grid_from_log(BOX, np.zeros((11, 21)))
    p = draw_realizations([g], 20_000, 4).positions[:, 0]
    counts = np.histogram2d(p[:, 0], p[:, 1], bins=[5, 5], range=[[0, 10], [-5, 5]])[0].ravel()
    assert stats.chisquare(counts).pvalue > 0.01


def test_draws_are_off_grid():
    g = smooth_grid(seed=7)
    p = draw_realizations([g], 10_000, 5).positions[:, 0]
    on_x = np.isin(p[:, 0], BOX.x_nodes)
    on_y = np.isin(p[:, 1], BOX.y_nodes)
    assert (on_x | on_y).mean() < 0.01


def test_emitters_independent_streams():
    g = smooth_grid(seed=8)
    r = draw_realizations([g, g], 5000, 6)
    assert not np.array_equal(r.positions[:, 0], r.positions[:, 1])
    assert abs(np.corrcoef(r.positions[:, 0, 0], r.positions[:, 1, 0])[0, 1]) < 0.05


def test_pdf_csv(tmp_path):
    g = smooth_grid()
    path = tmp_path / "pdf.csv"
    g.to_csv(path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().splitlines()[0] == "x,y,density"
    np.testing.assert_allclose(rows[:, :2], BOX.points(), atol=1e-6)
    np.testing.assert_allclose(rows[:, 2], g.values.ravel(), rtol=1e-9)
