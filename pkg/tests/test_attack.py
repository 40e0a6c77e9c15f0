from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import refine_pair, sweep_pair
from phasorguard.attack import (
    AttackSpec, AttackVector, _solve_two, apply_attack, attack_delta, colinearity_coefficients,
    evaluate_attack, offsets_to_u, synthesize_multi, synthesize_pair, synthesize_single,
)
from phasorguard.estimation import compute_Cbox, compute_wls_verification
from phasorguard.exceptions import ConfigurationError, GeometricInfeasibilityError, InfeasibleAttackError
from phasorguard.vulnerability import attack_indicator, err

from conftest import consistent_frame

BLOCK = (21, 22, 23, 24)


def _noisy(grid, seed):
    rng = np.random.default_rng(seed)
    _, z = consistent_frame(grid, rng)
    k = grid.n_phasors
    z[:k] *= (1 + 1e-3 * rng.standard_normal(k)) * np.exp(1e-3j * rng.standard_normal(k))
    return z


def test_spec_validation_and_round_trip():
    spec = AttackSpec((6, 15), (20e-6, -5e-6), 60.0)
    d = spec.to_dict()
    assert d == {"sites": [6, 15], "offsets_us": pytest.approx([20.0, -5.0]), "frequency_hz": 60.0}
    back = AttackSpec.from_dict(d)
    assert back.target_sites == spec.target_sites
    np.testing.assert_allclose(back.offsets_d, spec.offsets_d, rtol=1e-12)
    for bad in [((6,), ()), ((), ()), ((6,), (float("nan"),))]:
        with pytest.raises(ConfigurationError):
            AttackSpec(*bad)
    with pytest.raises(ConfigurationError):
        AttackSpec((6,), (1e-6,), 0.0)
    with pytest.raises(ConfigurationError):
        AttackSpec.from_dict({"sites": [1]})


def test_offsets_to_u():
    u = offsets_to_u(AttackSpec((1,), (20e-6,)))
    assert u.angles[0] == pytest.approx(2 * np.pi * 50 * 20e-6)
    with pytest.raises(ConfigurationError):
        AttackVector(np.array([1.1]))


def test_apply_attack_rotates_target_rows_only(grid39):
    z = _noisy(grid39, 0)
    phi = attack_indicator(grid39, (19, 4))
    u = AttackVector.from_angles([0.3, -0.2])
    za = apply_attack(z, phi, u)
    rows19 = grid39.site_indices(19)
    np.testing.assert_allclose(za[rows19], z[rows19] * np.exp(0.3j))
    assert za[0] == pytest.approx(z[0] * np.exp(-0.2j))
    other = np.setdiff1d(np.arange(grid39.m), rows19 + [0])
    np.testing.assert_array_equal(za[other], z[other])
    np.testing.assert_allclose(za - z, attack_delta(z, [rows19, [0]], u.u))


def test_pair_synthesis_matches_sweep_oracle(grid39, F39):
    _, z = consistent_frame(grid39, np.random.default_rng(10))
    S1, S2 = grid39.site_indices(22), grid39.site_indices(23)
    v, a1, a2 = sweep_pair(F39, z, S1, S2, n=1000)
    best, a1, a2 = refine_pair(F39, z, S1, S2, a1, a2)
    assert best <= 1e-10
    u = synthesize_pair(F39, z, S1, S2)
    np.testing.assert_allclose(u.angles, [a1, a2], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), pair=st.sampled_from([(21, 22), (21, 24), (22, 23), (23, 24), (22, 24)]),
       hint=st.floats(-3, 3))
def test_pair_synthesis_is_undetectable(grid39, F39, seed, pair, hint):
    z = _noisy(grid39, seed)
    sets = [grid39.site_indices(s) for s in pair]
    u = synthesize_pair(F39, z, *sets, alpha2_hint=hint)
    assert np.allclose(np.abs(u.u), 1.0, atol=1e-12)
    assert np.max(np.abs(u.u - 1)) > 1e-6
    dz = attack_delta(z, sets, u.u)
    assert np.linalg.norm(F39 @ dz) <= 1e-10 * np.linalg.norm(z)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), free=st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2))
def test_quadruple_synthesis_is_undetectable(grid39, F39, seed, free):
    z = _noisy(grid39, seed)
    sets = [grid39.site_indices(s) for s in BLOCK]
    try:
        u = synthesize_multi(F39, z, sets, free)
    except GeometricInfeasibilityError:
        # Large free rotations can leave the first two sites without a solution.
        c = colinearity_coefficients(F39, z, sets)
        k = np.sum((np.exp(1j * np.asarray(free)) - 1) * c[2:])
        d = abs(1 - k + c[1])
        assert d > 1 + abs(c[1]) - 1e-9 or d < abs(1 - abs(c[1])) + 1e-9
        return
    dz = attack_delta(z, sets, u.u)
    assert np.linalg.norm(F39 @ dz) <= 1e-10 * np.linalg.norm(z)
    np.testing.assert_allclose(u.angles[2:], free, atol=1e-12)


def test_colinearity_coefficients_rank_one(grid39, F39):
    z = _noisy(grid39, 3)
    sets = [grid39.site_indices(s) for s in BLOCK]
    c = colinearity_coefficients(F39, z, sets)
    assert c[0] == 1
    imgs = [F39[:, S] @ z[S] for S in sets]
    for ci, a in zip(c, imgs):
        assert np.linalg.norm(a - ci * imgs[0]) <= 1e-9 * np.linalg.norm(a)


def test_non_vulnerable_targets_raise(grid39, F39):
    z = _noisy(grid39, 4)
    with pytest.raises(InfeasibleAttackError):
        synthesize_pair(F39, z, grid39.site_indices(6), grid39.site_indices(15))
    with pytest.raises(InfeasibleAttackError):
        synthesize_single(F39, z, grid39.site_indices(19), 0.1)
    with pytest.raises(ConfigurationError):
        synthesize_multi(F39, z, [grid39.site_indices(s) for s in BLOCK], [0.1])


def test_solve_two_geometry():
    # generic case: both constraints hold and the root is not trivial
    for c2, k in [(0.3 + 0.4j, 0.0), (2.0 - 1j, 0.0), (0.5, 0.2 - 0.1j)]:
        u1, u2 = _solve_two(c2, k, 0.5)
        assert abs(abs(u1) - 1) < 1e-12 and abs(abs(u2) - 1) < 1e-12
        assert abs((u1 - 1) + (u2 - 1) * c2 + k) < 1e-12
        assert abs(u1 - 1) + abs(u2 - 1) > 1e-6
    # tangency with k = 0 leaves only the trivial root
    with pytest.raises(GeometricInfeasibilityError):
        _solve_two(1.0, 0.0, 0.0)
    # disjoint circles
    with pytest.raises(GeometricInfeasibilityError):
        _solve_two(0.1, 10.0, 0.0)
    # concentric circles of different radii
    with pytest.raises(GeometricInfeasibilityError):
        _solve_two(0.5, 1.5, 0.0)


def test_solve_two_coincident_circles_follow_hint():
    u1, u2 = _solve_two(-1.0, 0.0, 0.7)
    assert np.angle(u2) == pytest.approx(0.7)
    assert abs((u1 - 1) - (u2 - 1)) < 1e-12


def test_evaluate_attack_undetectable_vs_naive(grid39, topo39, F39):
    z = _noisy(grid39, 5)
    V = compute_wls_verification(topo39, compute_Cbox(z, grid39))
    sets = [grid39.site_indices(22), grid39.site_indices(23)]
    u = synthesize_pair(F39, z, *sets, alpha2_hint=0.1)
    phi = attack_indicator(grid39, (22, 23))
    out = evaluate_attack(topo39, V, z, u, phi, F=F39)
    assert out.residual_change_norm <= 1e-9 * np.linalg.norm(z)
    assert out.flagged_before == out.flagged_after
    assert out.lnr_after == pytest.approx(out.lnr_before, abs=1e-6)
    assert out.state_shift > 1e-3
    assert out.detection_delta_norm <= 1e-10 * np.linalg.norm(z)
    assert len(out.to_dict()["angle_deltas_rad"]) == 39
    naive = evaluate_attack(topo39, V, z, AttackVector.from_angles([0.05]), attack_indicator(grid39, (6,)), F=F39)
    assert naive.residual_change_norm > 1e3 * out.residual_change_norm
    assert naive.flagged_after


def test_synthesized_pair_is_colinear_under_r(grid39, topo39, F39):
    z = _noisy(grid39, 6)
    R = compute_wls_verification(topo39, compute_Cbox(z, grid39)).R
    sets = [grid39.site_indices(22), grid39.site_indices(23)]
    imgs = np.column_stack([R[:, S] @ z[S] for S in sets])
    assert err(imgs) >= 1 - 1e-8
