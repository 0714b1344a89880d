import numpy as np
import pytest
from hypothesis import given, strategies as st

from hmmdisp.diagnostics import mass_ledger, uniform_error
from hmmdisp.discrete import DiscreteField, FluxField, TimeGrid
from hmmdisp.errors import CoefficientError, CompatibilityError, HMMError
from hmmdisp.mesh import generate_perturbed_mesh, generate_rect_mesh
from hmmdisp.scenarios import five_spot, preset, pure_diffusion_mms, still
from hmmdisp.transport import run_simulation, upwind_form, upwind_matrix, upwind_split


def random_conservative_flux(mesh, rng):
    vals = np.zeros(mesh.n_incidences)
    for e in mesh.interior_edges:
        i, j = np.flatnonzero(mesh.inc_edge == e)
        vals[i] = rng.standard_normal()
        vals[j] = -vals[i]
    return FluxField(mesh, vals)


def random_field(mesh, rng):
    return DiscreteField(mesh, rng.standard_normal(mesh.n_cells), rng.standard_normal(mesh.n_edges))


@given(seed=st.integers(0, 10 ** 6))
def test_upwind_split_identities(seed):
    rng = np.random.default_rng(seed)
    m = generate_perturbed_mesh(4, 4, seed=seed)
    F = random_conservative_flux(m, rng)
    s = upwind_split(F)
    inner = m.inc_neighbour >= 0
    g = -F.values
    assert (s.pos >= 0).all() and (s.neg >= 0).all()
    assert np.array_equal((s.pos - s.neg)[inner], g[inner])
    assert np.array_equal((s.pos + s.neg)[inner], np.abs(g[inner]))
    assert not s.pos[~inner].any() and not s.neg[~inner].any()
    # the partner incidence sees the parts swapped
    for e in m.interior_edges[:5]:
        i, j = np.flatnonzero(m.inc_edge == e)
        assert s.pos[i] == s.neg[j] and s.neg[i] == s.pos[j]


@given(seed=st.integers(0, 10 ** 6))
def test_upwind_constant_test_function_vanishes(seed):
    rng = np.random.default_rng(seed)
    m = generate_perturbed_mesh(5, 5, seed=seed)
    F = random_conservative_flux(m, rng)
    c = random_field(m, rng)
    one = DiscreteField.constant(m, 1.0)
    scale = np.abs(F.values).sum() * np.abs(c.cell).max()
    assert abs(upwind_form(F, c, one)) < 1e-12 * scale


@given(seed=st.integers(0, 10 ** 6))
def test_upwind_matrix_matches_form_and_energy_split(seed):
    rng = np.random.default_rng(seed)
    m = generate_perturbed_mesh(4, 4, seed=seed)
    F = random_conservative_flux(m, rng)
    c, w = random_field(m, rng), random_field(m, rng)
    U = upwind_matrix(F)
    assert w.cell @ (U @ c.cell) == pytest.approx(upwind_form(F, c, w), rel=1e-12, abs=1e-12)
    # upwind(c, c) = 1/2 sum_edges |g| (c_K - c_L)^2 + 1/2 sum_K c_K^2 sum_s g_{K,s}
    inner = m.inc_neighbour >= 0
    g = -F.values
    jump = 0.25 * np.sum(np.abs(g[inner]) * (c.cell[m.inc_cell[inner]]
                                             - c.cell[m.inc_neighbour[inner]]) ** 2)
    div = 0.5 * np.sum(c.cell[m.inc_cell] ** 2 * g)
    assert upwind_form(F, c, c) == pytest.approx(jump + div, rel=1e-10)


def test_still_scenario_stays_put():
    st_ = run_simulation(generate_perturbed_mesh(6, 6, seed=1), still(T=1.0, N=5))
    for lv in st_.c.levels:
        np.testing.assert_allclose(lv.cell, 0.5, atol=1e-13)
        np.testing.assert_allclose(lv.edge, 0.5, atol=1e-12)
    assert not any(p.F.values.any() for p in st_.pressure[1:])


def test_five_spot_conserves_mass_and_stays_bounded():
    st_ = run_simulation(generate_rect_mesh(12, 12), five_spot(T=0.1, N=20))
    led = mass_ledger(st_).check()
    assert abs(led.global_residual) < 1e-10
    c = st_.c.levels[-1].cell
    assert c.min() > -1e-6 and c.max() < 1 + 1e-6
    ki, kp = st_.mesh.locate(np.array([[0.1, 0.1], [0.9, 0.9]]))
    assert c[ki] > 0.9 and c[kp] < 0.1
    assert [r["level"] for r in st_.log] == list(range(1, 21))


def test_pure_diffusion_mms_converges():
    errs = []
    for n in (8, 16, 32):
        sc = pure_diffusion_mms(N=n)
        s = run_simulation(generate_rect_mesh(n, n), sc)
        errs.append(uniform_error(s, sc.exact.c))
    assert errs[2] < errs[1] < errs[0]
    assert errs[0] / errs[2] > 6


def test_run_is_deterministic():
    a = run_simulation(generate_rect_mesh(8, 8), five_spot(T=0.05, N=5))
    b = run_simulation(generate_rect_mesh(8, 8), five_spot(T=0.05, N=5))
    for x, y in zip(a.c.levels, b.c.levels):
        assert np.array_equal(x.to_vector(), y.to_vector())
    assert a.log == b.log


def test_invalid_scenarios_rejected():
    m = generate_rect_mesh(4, 4)
    bad = five_spot(N=2)
    bad.porosity = lambda x: np.full(len(x), 0.01)
    with pytest.raises(CoefficientError):
        run_simulation(m, bad)
    bad = still(N=2)
    bad.initial = lambda x: np.full(len(x), 1.5)
    with pytest.raises(ValueError):
        run_simulation(m, bad)


def test_incompatible_wells_name_the_level():
    sc = still(N=3)
    sc.q_inj = lambda x, t: np.where(t > 0.5, 1.0, 0.0) + 0 * x[:, 0]
    with pytest.raises(CompatibilityError) as info:
        run_simulation(generate_rect_mesh(4, 4), sc)
    assert info.value.level == 2
    assert "level 2" in str(info.value)
    assert isinstance(info.value, HMMError)


def test_scenario_grid_replacement():
    sc = preset("coupled_mms")
    g = TimeGrid.uniform(0.25, 3)
    sc2 = sc.with_grid(g)
    assert sc2.grid is g and sc.grid is not g and sc2.exact is sc.exact
    with pytest.raises(KeyError):
        preset("nope")
