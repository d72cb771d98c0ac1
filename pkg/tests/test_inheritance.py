import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crnosc.inheritance import (NoNewSpecies, NotReversible, RankDeficient, SlowManifoldError, build_extension,
                                extended_network, f_bar, f_star, g_star, reduced_jacobian_limit,
                                slow_manifold_point, synthesize_rates, to_zy_coordinates, verify_inheritance)
from crnosc.kinetics import monomials, rate_vector
from crnosc.model import parse_network
from crnosc.orbit import STABLE, spectra_match
from crnosc.stoich import rank_and_image

BETA_R2 = np.array([[1, -1], [1, 2], [0, 1]])


def test_r2_matrices(r2_extension):
    ext = r2_extension
    assert ext.new_species == ("U", "V", "W") and ext.permutation == (0, 1, 2)
    np.testing.assert_array_equal(ext.beta, BETA_R2)
    assert ext.rank_beta == 2 and ext.m == 2 and ext.k == 1
    assert np.linalg.det(ext.beta_hat) == pytest.approx(3.0)
    np.testing.assert_array_equal(ext.alpha, [[0, -1], [-1, 0], [0, 0]])
    # hand linear algebra: beta_hat^-1 = [[2, 1], [-1, 1]] / 3
    np.testing.assert_allclose(ext.gamma, np.array([[-1, 2, 0], [1, 1, 0]]) / 3, atol=1e-15)
    np.testing.assert_allclose(ext.delta, [[1 / 3], [-1 / 3]], atol=1e-15)


def test_rank_deficient_addition(r1):
    with pytest.raises(RankDeficient) as info:
        build_extension(r1, "X + N <-> N")
    assert "rank" in str(info.value) and "number of columns" in str(info.value)
    np.testing.assert_array_equal(info.value.beta, [[0]])


def test_autocatalytic_addition_accepted(r1):
    ext = build_extension(r1, "X + N <-> 2 N")
    np.testing.assert_array_equal(ext.beta, [[1]])
    assert ext.rank_beta == 1


def test_more_reactions_than_new_species(r1):
    with pytest.raises(RankDeficient):
        build_extension(r1, "X <-> N\nY <-> N")


def test_dependent_columns(r1):
    with pytest.raises(RankDeficient):
        build_extension(r1, "X <-> P + Q\nY <-> 2 P + 2 Q")


def test_other_refusals(r1):
    with pytest.raises(NotReversible):
        build_extension(r1, "Y -> U ; k = 1")
    with pytest.raises(NoNewSpecies):
        build_extension(r1, "X <-> Y")


def test_permutation_skips_dependent_rows(r1):
    # first new species has a zero row, so the pivot rows are the second and third
    ext = build_extension(r1, "X + P <-> X + P + Q\nY <-> R")
    assert ext.new_species[:2] == ("Q", "R") and ext.new_species[2] == "P"
    assert ext.permutation == (1, 2, 0)
    assert abs(np.linalg.det(ext.beta_hat)) == pytest.approx(1.0)


def test_rates_symbolic_and_numeric(r2_extension):
    sched = synthesize_rates(r2_extension, 0.2, 0.2)
    assert sched.sigma_forward == (0, 1) and sched.sigma_backward == (2, 2)
    assert sched.symbolic() == [("eps^-1", "eps^-1 * eta^-2"), ("eps^-1 * eta^-1", "eps^-1 * eta^-2")]
    k9, k11 = sched.k_forward
    k10, k12 = sched.k_backward
    np.testing.assert_allclose([k9, k10, k11, k12], [5, 125, 25, 125], rtol=4 * np.finfo(float).eps)


def test_eta_one_collapses_rates(r2_extension):
    sched = synthesize_rates(r2_extension, 0.25, 1.0)
    np.testing.assert_array_equal(np.concatenate([sched.k_forward, sched.k_backward]), 4.0)


def test_rates_require_positive_parameters(r2_extension):
    for eps, eta in ((0, 0.2), (0.2, -1), (float("inf"), 0.2)):
        with pytest.raises(ValueError):
            synthesize_rates(r2_extension, eps, eta)


def test_block_structure(r1, r2_extension):
    net = extended_network(r2_extension, synthesize_rates(r2_extension))
    assert net.species == ("X", "Y", "Z", "U", "V", "W")
    gamma = net.stoichiometric_matrix()
    expected = np.block([[r1.stoichiometric_matrix(), r2_extension.alpha],
                         [np.zeros((3, 5), dtype=int), r2_extension.beta]])
    np.testing.assert_array_equal(gamma, expected)
    assert rank_and_image(gamma).rank == rank_and_image(r1.stoichiometric_matrix()).rank + 2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 4.0), min_size=6, max_size=6), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_net_rate_identity(r2_extension, state, eps, eta):
    net = extended_network(r2_extension, synthesize_rates(r2_extension, eps, eta))
    x, y = np.array(state[:3]), np.array(state[3:])
    added = rate_vector(net, np.array(state))[5:]
    expected = f_bar(r2_extension, x, y, eta) / eps
    # compare forward and backward parts separately to avoid cancellation
    fwd = eta ** -np.array([0.0, 1.0]) * monomials(x, r2_extension.a.T) * monomials(y, r2_extension.b.T) / eps
    np.testing.assert_allclose(added, expected, rtol=1e-12, atol=1e-12 * fwd.max())


# ---------------------------------------------------------------------------
# slow manifold

def test_theta_first_order(r2_extension, r1_orbit):
    ext = r2_extension
    for z in r1_orbit.samples[::32]:
        C = []
        for eta in (1e-2, 1e-3, 1e-4):
            th = slow_manifold_point(ext, z, eta)
            assert np.all(th > 0)
            assert np.abs(g_star(ext, z, th, eta)).max() <= 1e-8
            assert np.abs(f_star(ext, z, th, eta)).max() <= 1e-8
            C.append(np.linalg.norm(th - eta * monomials(z, ext.gamma)) / eta ** 2)
        assert max(C) / min(C) < 3
        ratio = [np.linalg.norm(slow_manifold_point(ext, z, e) - e * monomials(z, ext.gamma)) / e
                 for e in (1e-3, 1e-4)]
        assert 5 < ratio[0] / ratio[1] < 20  # first-order law: error/eta shrinks about 10x


def test_theta_at_eta_005(r2_extension, r1_orbit):
    z = r1_orbit.anchor
    th = slow_manifold_point(r2_extension, z, 0.05)
    assert np.abs(f_star(r2_extension, z, th, 0.05)).max() < 1e-8


def test_theta_errors(r2_extension):
    with pytest.raises(ValueError):
        slow_manifold_point(r2_extension, [1.0, -1.0, 1.0], 0.1)
    with pytest.raises(ValueError):
        slow_manifold_point(r2_extension, [1.0, 1.0, 1.0], 0.0)
    with pytest.raises(SlowManifoldError):
        slow_manifold_point(r2_extension, [1.0, 1.0, 1.0], 50.0)


def test_single_new_species_without_delta(r1):
    ext = build_extension(r1, "X + N <-> 2 N")
    assert ext.k == 0 and ext.delta.shape == (1, 0)
    z = np.array([0.5, 1.0, 2.0])
    th = slow_manifold_point(ext, z, 1e-3)
    assert th[0] > 0
    W, ev = reduced_jacobian_limit(ext, z)
    assert W.shape == (1, 1) and ev[0].real < 0


def test_wbar_at_ones(r2_extension):
    W, ev = reduced_jacobian_limit(r2_extension, np.ones(3))
    bh = r2_extension.beta_hat
    np.testing.assert_array_equal(W, -(bh @ bh.T))
    np.testing.assert_array_equal(W, [[-2, 1], [1, -5]])
    np.testing.assert_allclose(np.sort(ev.real), [-(7 + np.sqrt(13)) / 2, -(7 - np.sqrt(13)) / 2], rtol=1e-14)


def test_wbar_hurwitz_random(r2_extension):
    rng = np.random.default_rng(5)
    for z in np.exp(rng.uniform(np.log(0.05), np.log(5.0), size=(50, 3))):
        _, ev = reduced_jacobian_limit(r2_extension, z)
        rho = np.abs(ev).max()
        assert np.all(np.abs(ev.imag) < 1e-9 * rho)
        assert np.all(ev.real < 0)


def test_wbar_matches_jacobian_limit(r2_extension):
    # W(z, 0) is the eta -> 0 limit of D_yhat f_*(z, theta, eta) scaled by the slow-manifold size
    ext = r2_extension
    z = np.array([0.7, 1.4, 2.2])
    eta = 1e-6
    th = slow_manifold_point(ext, z, eta)
    h = 1e-6 * th
    cols = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h[i]
        cols.append((f_star(ext, z, th + e, eta) - f_star(ext, z, th - e, eta)) / (2 * h[i]))
    D = ext.beta_hat @ np.column_stack(cols) * eta
    W, _ = reduced_jacobian_limit(ext, z)
    np.testing.assert_allclose(D, W, rtol=1e-3, atol=1e-3 * np.abs(W).max())


def test_zy_coordinates(r2_extension):
    x = np.array([0.3, 0.5, 2.0])
    z, yh, c = to_zy_coordinates(r2_extension, x, np.array([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(z, x)
    np.testing.assert_array_equal(c, [1.0])
    z, yh, c = to_zy_coordinates(r2_extension, x, np.array([0.3, 0.6, 0.2]))
    np.testing.assert_allclose(z, x - r2_extension.alpha @ np.linalg.solve(r2_extension.beta_hat, [0.3, 0.6]))
    np.testing.assert_allclose(c, [(0.3 - 0.6) / 3 + 0.2])
    with pytest.raises(ValueError):
        to_zy_coordinates(r2_extension, x, np.ones(2))


# ---------------------------------------------------------------------------
# end-to-end

def test_verify_r2(r2_report):
    rep = r2_report
    assert rep.failure is None and rep.stable
    o = rep.orbit
    assert o.multipliers_relative.size == 5
    assert o.multipliers.size == 6
    assert np.all(o.anchor > 0)
    assert rep.hausdorff_old_species < 0.5
    assert rep.new_species_ranges["U"]["peak_to_peak"] < 0.5
    assert rep.new_species_ranges["V"]["peak_to_peak"] < 0.5
    assert rep.conservation_drift < 1e-5
    assert rep.conserved_combination["initial"] == [1.0]
    u, v, w = o.samples[:, 3], o.samples[:, 4], o.samples[:, 5]
    np.testing.assert_allclose(3 * w + u - v, 3.0, atol=1e-9)


def test_full_spectrum_adds_unit_multiplier(r2_report):
    o = r2_report.orbit
    assert spectra_match(o.multipliers, np.concatenate([o.multipliers_relative, [1.0]]), 1e-4)


def test_report_json(r2_report):
    data = json.loads(json.dumps(r2_report.to_json()))
    assert data["schema"] == 1
    assert data["permutation"] == ["U", "V", "W"]
    assert data["rank_check"]["passed"] and data["rank_check"]["rank"] == 2
    assert data["orbit"]["classification"] == STABLE
    assert [r["kf"] for r in data["rates"]] == pytest.approx([5, 25])
    assert [r["kr_symbolic"] for r in data["rates"]] == ["eps^-1 * eta^-2"] * 2


def test_verify_rejects_unstable_base(r1_orbit, r2_extension):
    import dataclasses
    bad = dataclasses.replace(r1_orbit, classification="undetermined")
    with pytest.raises(ValueError):
        verify_inheritance(bad, r2_extension)
    with pytest.raises(ValueError):
        verify_inheritance(r1_orbit, r2_extension, y0=[1.0, 1.0])


def test_out_of_regime_is_reported_not_raised(r1_orbit, r2_extension):
    from crnosc.orbit import OrbitSearchConfig
    rep = verify_inheritance(r1_orbit, r2_extension, 10.0, 10.0, [0.0, 0.0, 1.0], OrbitSearchConfig(burn_in=20))
    assert rep.orbit is not None or rep.failure["status"] == "failed"
