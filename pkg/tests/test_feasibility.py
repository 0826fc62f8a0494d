import itertools

import numpy as np
import pytest

import stlbayes as sb
from stlbayes.chance import AffineInputConstraint
from stlbayes.feasibility import FEASIBLE, INFEASIBLE_LABEL, UNKNOWN


def random_constraint(gen, max_m=3, max_t=4):
    m = int(gen.integers(1, max_m + 1))
    t = int(gen.integers(0, max_t + 1))
    f = gen.normal(size=m * t)
    b = float(gen.normal() * 2)
    lo = -gen.uniform(0.1, 2.0, size=m)
    hi = gen.uniform(0.1, 2.0, size=m)
    return (AffineInputConstraint(f=f, b=b, time=t, m=m),
            sb.InputBox(lo, hi))


class TestWorstCaseMargin:
    def test_constant_constraint(self):
        c = AffineInputConstraint(f=np.zeros(0), b=0.7, time=0, m=1)
        assert sb.worst_case_margin(c, sb.InputBox([-1], [1])) == 0.7

    def test_symmetric_box(self):
        c = AffineInputConstraint(f=[1.0, -2.0], b=0.0, time=2, m=1)
        assert sb.worst_case_margin(c, sb.InputBox([-1], [1])) == pytest.approx(-3.0)

    def test_corner_enumeration_oracle(self):
        gen = np.random.default_rng(1)
        for _ in range(200):
            c, box = random_constraint(gen, max_m=2, max_t=3)
            k = c.f.size
            if k == 0:
                continue
            lo, hi = box.stacked(c.time)
            best = min(c.b + float(c.f @ np.array(corner))
                       for corner in itertools.product(
                           *[(lo[i], hi[i]) for i in range(k)]))
            assert sb.worst_case_margin(c, box) == pytest.approx(best)


class TestFarkas:
    def test_oracle_equivalence(self):
        gen = np.random.default_rng(2)
        for _ in range(400):
            c, box = random_constraint(gen)
            margin = sb.worst_case_margin(c, box)
            ok, cert = sb.farkas_feasible(c, box)
            if margin > 1e-9:
                assert ok
            elif margin < -1e-9:
                assert not ok

    def test_certificate_structure(self):
        gen = np.random.default_rng(3)
        found = 0
        while found < 50:
            c, box = random_constraint(gen)
            if c.time == 0:
                continue
            ok, cert = sb.farkas_feasible(c, box)
            if not ok:
                continue
            found += 1
            P = cert.P
            assert np.all(P >= -1e-12)
            k = c.f.size
            lo, hi = box.stacked(c.time)
            d = np.empty(2 * k)
            d[0::2] = hi
            d[1::2] = -lo
            # D^T P = -f and d.P <= b.
            dtp = P[0::2] - P[1::2]
            assert dtp == pytest.approx(-c.f, abs=1e-8)
            assert float(d @ P) <= c.b + 1e-8

    def test_constant_boundaries(self):
        box = sb.InputBox([-1], [1])
        bad = AffineInputConstraint(f=np.zeros(0), b=-1.0, time=0, m=1)
        good = AffineInputConstraint(f=np.zeros(0), b=0.0, time=0, m=1)
        assert sb.farkas_feasible(bad, box)[0] is False
        assert sb.farkas_feasible(good, box)[0] is True


class TestSatisfactionFn:
    def test_dominating_noise_kills_feasibility(self, case_model, case_formula):
        loud = case_model.with_overrides(Sigma_w=50.0 * np.eye(2))
        spec = sb.VerificationSpec(loud, case_formula, 0.01)
        gen = np.random.default_rng(4)
        thetas = gen.uniform(-3, 3, size=(50, 2))
        thetas = thetas[np.linalg.norm(thetas, axis=1) > 0.5]
        assert not spec.satisfaction_batch(thetas).any()

    def test_matches_per_leaf_affine_route(self, safety_spec):
        # The vectorized margins agree exactly with the per-leaf reduction
        # checked by the closed-form box oracle.
        gen = np.random.default_rng(5)
        box = safety_spec.input_box
        for theta in gen.uniform(-2, 2, size=(25, 2)):
            margins = safety_spec.leaf_margins(theta)
            ref = np.array([sb.worst_case_margin(c, box)
                            for c in safety_spec.affine_constraints(theta)])
            assert margins == pytest.approx(ref, abs=1e-10)
            expected = int(np.all(ref >= -1e-9))
            assert sb.satisfaction_fn(theta, safety_spec) == expected

    def test_farkas_agrees_on_spec_leaves(self, safety_spec):
        gen = np.random.default_rng(6)
        box = safety_spec.input_box
        for theta in gen.uniform(-1.5, 1.5, size=(10, 2)):
            for c in safety_spec.affine_constraints(theta):
                margin = sb.worst_case_margin(c, box)
                if abs(margin) > 1e-9:
                    assert sb.farkas_feasible(c, box)[0] == (margin >= 0)

    def test_benchmark_until_window_is_vacuous(self, case_spec):
        # Regression anchor: the bundled until-window property decomposes
        # into first-hit events whose per-leaf requirements force a band and
        # its complement to be simultaneously likely, so no parameter can
        # satisfy every leaf (README, conservativeness note).  This holds
        # independently of delta and the noise level.
        xs = np.linspace(-3.5, 3.5, 101)
        grid = np.array(np.meshgrid(xs, xs)).reshape(2, -1).T
        assert not case_spec.satisfaction_batch(grid).any()
        leaves = case_spec.decomposition.all_leaves()
        band = next(l.threshold for l in leaves
                    if l.label == "mu3" and l.time == 2)
        ray = next(1 - l.threshold for l in leaves
                   if l.label == "!mu3" and l.time == 2)
        assert band + ray > 1.0  # contradictory probability requirements

    def test_monotone_in_delta(self, safety_model, safety_formula):
        weak = sb.VerificationSpec(safety_model, safety_formula, 0.2)
        strict = sb.VerificationSpec(safety_model, safety_formula, 0.02)
        gen = np.random.default_rng(7)
        thetas = gen.uniform(-2, 2, size=(400, 2))
        s_strict = strict.satisfaction_batch(thetas)
        s_weak = weak.satisfaction_batch(thetas)
        assert np.all(s_weak >= s_strict)
        assert s_weak.sum() > s_strict.sum()  # strictly more permissive here


class TestRestrictRegion:
    def test_shrinks_and_contains_feasible_set(self, safety_spec, safety_region):
        restricted = sb.restrict_region(safety_spec, safety_region, grid=33)
        assert not restricted.empty
        assert np.all(restricted.lower >= safety_region.lower - 1e-12)
        assert np.all(restricted.upper <= safety_region.upper + 1e-12)
        assert restricted.volume < safety_region.volume
        # Every satisfying grid point lies inside the restriction.
        xs = np.linspace(-2, 2, 81)
        grid = np.array(np.meshgrid(xs, xs)).reshape(2, -1).T
        sat = safety_spec.satisfaction_batch(grid).astype(bool)
        inside = np.all((grid[sat] >= restricted.lower - 1e-9)
                        & (grid[sat] <= restricted.upper + 1e-9), axis=1)
        assert inside.all()

    def test_idempotent_within_tolerance(self, safety_spec, safety_region):
        once = sb.restrict_region(safety_spec, safety_region, grid=33)
        twice = sb.restrict_region(safety_spec, once, grid=33)
        span = safety_region.upper - safety_region.lower
        assert np.all(np.abs(once.lower - twice.lower) <= 0.1 * span)
        assert np.all(np.abs(once.upper - twice.upper) <= 0.1 * span)

    def test_empty_flag(self, case_spec):
        region = sb.Region([-3.5, -3.5], [3.5, 3.5])
        restricted = sb.restrict_region(case_spec, region, grid=21)
        assert restricted.empty
        assert np.array_equal(restricted.lower, region.lower)


class TestPwaPartition:
    def test_grid_count(self):
        region = sb.Region([-3.5, -3.5], [3.5, 3.5])
        assert len(sb.pwa_partition(region, 5)) == 25

    def test_single_cell(self):
        region = sb.Region([0, 0], [1, 2])
        (cell,) = sb.pwa_partition(region, 1)
        assert np.array_equal(cell.lower, region.lower)
        assert np.array_equal(cell.upper, region.upper)

    def test_exact_cover(self):
        region = sb.Region([-1, 0], [2, 1])
        cells = sb.pwa_partition(region, 4)
        assert sum(c.volume for c in cells) == pytest.approx(region.volume)
        # Shared faces: each interior edge coordinate appears in two cells.
        uppers = sorted({c.upper[0] for c in cells})
        lowers = sorted({c.lower[0] for c in cells})
        assert uppers[:-1] == lowers[1:]


class TestPwaLinearize:
    def test_zero_width_cell(self, safety_model):
        cell = sb.ThetaCell([0.4, 0.6], [0.4, 0.6])
        gaff, eps = sb.pwa_linearize(safety_model, cell, 0.01, 3)
        assert eps == 0.0
        assert gaff([0.4, 0.6]) == pytest.approx(
            sb.gamma([0.4, 0.6], 0.01, safety_model, 3))

    def test_containment(self, safety_model):
        gen = np.random.default_rng(8)
        for _ in range(20):
            center = gen.uniform(-1.5, 1.5, size=2)
            width = gen.uniform(0.05, 0.6)
            cell = sb.ThetaCell(center - width / 2, center + width / 2)
            gaff, eps = sb.pwa_linearize(safety_model, cell, 0.05, 3)
            for theta in gen.uniform(cell.lower, cell.upper, size=(50, 2)):
                val = sb.gamma(theta, 0.05, safety_model, 3)
                assert gaff(theta) - eps - 1e-12 <= val <= gaff(theta) + eps + 1e-12

    def test_halving_shrinks_remainder(self, safety_model):
        cell = sb.ThetaCell([0.5, 0.5], [1.0, 1.0])
        _, eps1 = sb.pwa_linearize(safety_model, cell, 0.01, 3)
        half = sb.ThetaCell([0.625, 0.625], [0.875, 0.875])
        _, eps2 = sb.pwa_linearize(safety_model, half, 0.01, 3)
        assert eps1 / eps2 >= 3.9

    def test_cone_cell_falls_back_to_interval(self, safety_model):
        cell = sb.ThetaCell([-0.2, -0.2], [0.2, 0.2])
        gaff, eps = sb.pwa_linearize(safety_model, cell, 0.01, 3)
        assert eps > 0.0
        gen = np.random.default_rng(9)
        for theta in gen.uniform(cell.lower, cell.upper, size=(200, 2)):
            val = sb.gamma(theta, 0.01, safety_model, 3)
            assert gaff(theta) - eps - 1e-12 <= val <= gaff(theta) + eps + 1e-12


class TestPwaClassify:
    def test_feasible_cells_are_sound(self, safety_spec, safety_region):
        cells = sb.classify_cells(sb.pwa_partition(safety_region, 16),
                                  safety_spec)
        labels = {c.label for c in cells}
        assert labels == {FEASIBLE, INFEASIBLE_LABEL, UNKNOWN}
        gen = np.random.default_rng(10)
        for cell in cells:
            if cell.label == FEASIBLE:
                pts = gen.uniform(cell.lower, cell.upper, size=(300, 2))
                assert safety_spec.satisfaction_batch(pts).all()

    def test_infeasible_cells_are_sound(self, safety_spec, safety_region):
        gen = np.random.default_rng(11)
        cells = sb.classify_cells(sb.pwa_partition(safety_region, 16),
                                  safety_spec)
        for cell in cells:
            if cell.label == INFEASIBLE_LABEL:
                pts = gen.uniform(cell.lower, cell.upper, size=(100, 2))
                assert not safety_spec.satisfaction_batch(pts).any()

    def test_exterior_point_cell_not_feasible(self, case_spec):
        # A small cell around a parameter outside the feasible set must not
        # be certified feasible.
        cell = sb.ThetaCell([1.9, -1.1], [2.1, -0.9])
        label = sb.pwa_classify(cell, case_spec)
        assert label in (INFEASIBLE_LABEL, UNKNOWN)

    def test_interior_point_cell_feasible(self, safety_spec):
        cell = sb.ThetaCell([0.25, 0.25], [0.35, 0.35])
        assert sb.pwa_classify(cell, safety_spec) == FEASIBLE

    def test_refinement_trend(self, safety_spec, safety_region):
        prev_feasible, prev_unknown = -1.0, float("inf")
        for per_axis in (5, 10, 20):
            cells = sb.classify_cells(sb.pwa_partition(safety_region, per_axis),
                                      safety_spec)
            feas = sum(c.volume for c in cells if c.label == FEASIBLE)
            unk = sum(c.volume for c in cells if c.label == UNKNOWN)
            assert feas >= prev_feasible - 1e-9
            assert unk <= prev_unknown + 1e-9
            prev_feasible, prev_unknown = feas, unk
