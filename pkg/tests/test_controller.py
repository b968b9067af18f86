import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrfusion.controller import (
    ControllerConfig,
    ControllerInput,
    baseline_sweep,
    exploration_utility,
    refinement_utility,
    saturation_probability,
    select_exposure,
)
from hdrfusion.radiometry import ExposureProgram, ResponseCurve


@pytest.fixture
def program():
    return ExposureProgram(times=(0.001, 0.01, 0.1), curve=ResponseCurve.linear())


def make_view(program, bounds, weights, radiance=None, vignetting=None):
    """Assemble a ControllerInput from flat per-pixel lists (1 x n image)."""
    n = len(weights)
    bounds = np.asarray(bounds, dtype=np.float64).reshape(1, n, 3, 2)
    weight = np.asarray(weights, dtype=np.float64).reshape(1, n)
    if radiance is None:
        radiance = np.zeros((1, n, 3))
    else:
        radiance = np.asarray(radiance, dtype=np.float64).reshape(1, n, 3)
    if vignetting is None:
        vignetting = np.ones((1, n, 3))
    else:
        vignetting = np.asarray(vignetting, dtype=np.float64).reshape(1, n, 3)
    return ControllerInput(
        radiance=radiance,
        weight=weight,
        bounds=bounds,
        vignetting=vignetting,
        program=program,
    )


class TestSaturationProbability:
    def test_half_overlap_in_log_space(self):
        assert saturation_probability((0.01, 1.0), (0.1, 1.0)) == pytest.approx(0.5)

    def test_containment(self):
        assert saturation_probability((0.2, 0.3), (0.1, 1.0)) == 1.0

    def test_disjoint(self):
        assert saturation_probability((0.01, 0.02), (0.1, 1.0)) == 0.0

    def test_degenerate_point(self):
        assert saturation_probability((0.5, 0.5), (0.1, 1.0)) == 1.0
        assert saturation_probability((0.05, 0.05), (0.1, 1.0)) == 0.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            saturation_probability((0.0, 1.0), (0.1, 1.0))
        with pytest.raises(ValueError):
            saturation_probability((0.1, 1.0), (-0.1, 1.0))

    @given(
        lo=st.floats(min_value=1e-3, max_value=1e3),
        width=st.floats(min_value=1.01, max_value=1e3),
        wlo=st.floats(min_value=1e-4, max_value=1e4),
        wwidth=st.floats(min_value=1.0, max_value=1e3),
    )
    @settings(deadline=None, max_examples=300)
    def test_in_unit_interval_and_monotone(self, lo, width, wlo, wwidth):
        bounds = (lo, lo * width)
        window = (wlo, wlo * wwidth)
        p = saturation_probability(bounds, window)
        assert 0.0 <= p <= 1.0
        # enlarging the window never decreases the probability
        bigger = (wlo / 2, wlo * wwidth * 2)
        assert saturation_probability(bounds, bigger) >= p - 1e-12


class TestExplorationUtility:
    def test_sum_of_certain_pixels(self, program):
        # two incomplete pixels whose bounds sit inside every channel window
        t = 0.01
        lo, hi = program.exposure_min / t, program.exposure_max / t
        bounds = [np.tile([lo * 2, hi / 2], (3, 1))] * 2
        view_bounds = np.asarray(bounds)
        u = exploration_utility(t, view_bounds, np.ones((2, 3)), program)
        assert u == 2.0

    def test_empty_set(self, program):
        u = exploration_utility(0.01, np.zeros((0, 3, 2)), np.zeros((0, 3)), program)
        assert u == 0.0

    def test_product_rule(self, program):
        t = 0.01
        lo, hi = program.exposure_min / t, program.exposure_max / t
        log_mid = math.sqrt(lo * hi)
        # channel windows cover half (log) of the first two channel bounds
        bounds = np.empty((1, 3, 2))
        bounds[0, 0] = (lo, hi * (hi / lo))  # overlap fraction 1/2
        bounds[0, 1] = (lo, hi * (hi / lo))
        bounds[0, 2] = (lo, hi)  # fully inside: probability 1
        u = exploration_utility(t, bounds, np.ones((1, 3)), program)
        assert u == pytest.approx(0.25)

    def test_vignetting_shifts_window(self, program):
        t = 0.01
        v = 0.5
        lo, hi = program.exposure_min / (t * v), program.exposure_max / (t * v)
        bounds = np.tile([lo * 1.5, hi / 1.5], (1, 3, 1)).reshape(1, 3, 2)
        u = exploration_utility(t, bounds, np.full((1, 3), v), program)
        assert u == 1.0

    def test_membership_checked(self, program):
        with pytest.raises(ValueError):
            exploration_utility(0.005, np.zeros((0, 3, 2)), np.zeros((0, 3)), program)


class TestRefinementUtility:
    def test_single_pixel(self, program):
        t = 0.1
        mid = (program.exposure_min + program.exposure_max) / 2 / t
        u = refinement_utility(
            t, np.full((1, 3), mid), np.array([2.0]), np.ones((1, 3)), program
        )
        assert u == pytest.approx(t / 2.0)

    def test_two_pixels(self, program):
        t = 0.1
        mid = (program.exposure_min + program.exposure_max) / 2 / t
        u = refinement_utility(
            t,
            np.full((2, 3), mid),
            np.array([1.0, 2.0]),
            np.ones((2, 3)),
            program,
        )
        assert u == pytest.approx(t / 1.0 + t / 2.0)

    def test_out_of_window_contributes_nothing(self, program):
        t = 0.1
        out = 2 * program.exposure_max / t
        u = refinement_utility(
            t, np.full((1, 3), out), np.array([1.0]), np.ones((1, 3)), program
        )
        assert u == 0.0

    def test_any_channel_out_excludes_pixel(self, program):
        t = 0.1
        mid = (program.exposure_min + program.exposure_max) / 2 / t
        radiance = np.full((1, 3), mid)
        radiance[0, 2] = 2 * program.exposure_max / t
        u = refinement_utility(t, radiance, np.array([1.0]), np.ones((1, 3)), program)
        assert u == 0.0


class TestSelectExposure:
    def test_full_range_bounds_tie_break_to_largest(self):
        # Power-of-two times make the constant log width bit-exact, so the
        # per-time utilities tie exactly and the break goes to the largest.
        program = ExposureProgram(times=(0.125, 0.25, 0.5, 1.0))
        bounds = [np.tile([program.radiance_min, program.radiance_max], (3, 1))] * 4
        view = make_view(program, bounds, [0.0, 0.0, 0.0, 0.0])
        t, trace = select_exposure(view)
        assert t == program.t_max
        totals = [r.total for r in trace]
        assert totals == [totals[0]] * len(totals)
        assert sum(r.chosen for r in trace) == 1

    def test_tie_break_smallest_option(self, program):
        bounds = [np.tile([program.radiance_min, program.radiance_max], (3, 1))] * 2
        view = make_view(program, bounds, [0.0, 0.0])
        t, _ = select_exposure(view, ControllerConfig(tie_break="smallest"))
        assert t == program.t_min

    def test_refinement_only_picks_covering_time(self, program):
        # single complete pixel observable only at the largest time
        t_max = program.t_max
        radiance = np.full((1, 3), program.exposure_min * 1.5 / t_max)
        view = make_view(
            program,
            [np.tile([program.radiance_min, program.radiance_max], (3, 1))],
            [4.0],
            radiance=radiance,
        )
        t, trace = select_exposure(view, ControllerConfig(beta=0.0))
        assert t == t_max
        # brute-force re-evaluation over the program agrees
        best = max(
            program.times,
            key=lambda tt: refinement_utility(
                tt, radiance, np.array([4.0]), np.ones((1, 3)), program
            ),
        )
        assert t == best

    def test_beta_scaling_invariance_when_no_refinement(self, program):
        rng = np.random.default_rng(0)
        bounds = []
        lo, hi = program.radiance_min, program.radiance_max
        for _ in range(5):
            a = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(3, 2)))
            a.sort(axis=1)
            bounds.append(a)
        view = make_view(program, bounds, [0.0] * 5)
        t1, _ = select_exposure(view, ControllerConfig(beta=1.0))
        for k in (0.5, 2.0, 64.0, 1024.0):
            tk, _ = select_exposure(view, ControllerConfig(beta=k))
            assert tk == t1

    def test_deterministic(self, program):
        rng = np.random.default_rng(1)
        bounds = []
        lo, hi = program.radiance_min, program.radiance_max
        for _ in range(6):
            a = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(3, 2)))
            a.sort(axis=1)
            bounds.append(a)
        weights = [0.0, 0.0, 0.0, 1.0, 2.0, 0.5]
        radiance = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(6, 3)))
        view = make_view(program, bounds, weights, radiance=radiance)
        picks = {select_exposure(view)[0] for _ in range(5)}
        assert len(picks) == 1

    def test_additivity_over_partition_exact_dyadic(self):
        # dyadic times and weights make every term exact, so the utility
        # splits across any partition without rounding
        program = ExposureProgram(times=(0.125, 0.25, 0.5))
        t = 0.25
        lo, hi = program.exposure_min / t, program.exposure_max / t
        inside = np.tile([lo * 2, hi / 2], (3, 1))
        bounds = np.asarray([inside] * 8)
        vig = np.ones((8, 3))
        whole = exploration_utility(t, bounds, vig, program)
        left = exploration_utility(t, bounds[:4], vig[:4], program)
        right = exploration_utility(t, bounds[4:], vig[4:], program)
        assert whole == left + right == 8.0
        mid = (program.exposure_min + program.exposure_max) / 2 / t
        radiance = np.full((8, 3), mid)
        weights = np.array([1.0, 2.0, 4.0, 8.0, 1.0, 0.5, 0.25, 2.0])
        ur = refinement_utility(t, radiance, weights, vig, program)
        ur_l = refinement_utility(t, radiance[:4], weights[:4], vig[:4], program)
        ur_r = refinement_utility(t, radiance[4:], weights[4:], vig[4:], program)
        assert ur == ur_l + ur_r

    def test_additivity_over_partition_random(self, program):
        rng = np.random.default_rng(2)
        lo, hi = program.radiance_min, program.radiance_max
        bounds = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(10, 3, 2)))
        bounds.sort(axis=2)
        vig = rng.uniform(0.5, 1.0, size=(10, 3))
        for t in program.times:
            whole = exploration_utility(t, bounds, vig, program)
            parts = exploration_utility(
                t, bounds[:3], vig[:3], program
            ) + exploration_utility(t, bounds[3:], vig[3:], program)
            assert whole == pytest.approx(parts, rel=1e-12)
            assert np.isfinite(whole) and whole >= 0


# ---------------------------------------------------------------------------
# Independent exhaustive oracle
# ---------------------------------------------------------------------------


def oracle_probability(lo, hi, wlo, whi):
    if lo == hi:
        return 1.0 if wlo <= lo <= whi else 0.0
    ilo, ihi = max(lo, wlo), min(hi, whi)
    if ihi <= ilo:
        return 0.0
    return math.log(ihi / ilo) / math.log(hi / lo)


def oracle_select(view, beta):
    """Plain-Python re-evaluation of the utility maximization."""
    program = view.program
    h, w = view.weight.shape
    best_t, best_u = None, None
    for t in program.times:
        terms = []
        for y in range(h):
            for x in range(w):
                if view.weight[y, x] == 0.0:
                    p = 1.0
                    for c in range(3):
                        tv = t * view.vignetting[y, x, c]
                        p *= oracle_probability(
                            view.bounds[y, x, c, 0],
                            view.bounds[y, x, c, 1],
                            program.exposure_min / tv,
                            program.exposure_max / tv,
                        )
                    terms.append(beta * p)
                else:
                    ok = True
                    for c in range(3):
                        e = view.radiance[y, x, c] * view.vignetting[y, x, c]
                        lo, hi = program.exposure_min / t, program.exposure_max / t
                        if not (lo <= e <= hi):
                            ok = False
                            break
                    if ok:
                        terms.append(t / view.weight[y, x])
        total = math.fsum(terms)
        if best_u is None or total >= best_u:
            best_t, best_u = t, total
    return best_t


def random_view(rng, max_size=8, max_times=8):
    count = int(rng.integers(1, max_times + 1))
    t_min = float(rng.uniform(1e-3, 1e-2))
    t_max = t_min * float(rng.uniform(2.0, 500.0))
    program = ExposureProgram.geometric(t_min, t_max, count)
    h = int(rng.integers(1, max_size + 1))
    w = int(rng.integers(1, max_size + 1))
    lo, hi = program.radiance_min, program.radiance_max
    bounds = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(h, w, 3, 2)))
    bounds.sort(axis=3)
    complete = rng.random((h, w)) < 0.5
    weight = np.where(complete, rng.uniform(0.01, 5.0, size=(h, w)), 0.0)
    radiance = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(h, w, 3)))
    vignetting = rng.uniform(0.4, 1.0, size=(h, w, 3))
    vignetting[0, 0, :] = 1.0
    return ControllerInput(
        radiance=radiance,
        weight=weight,
        bounds=bounds,
        vignetting=vignetting,
        program=program,
    )


class TestBruteForceAgreement:
    def test_random_maps_match_oracle(self):
        rng = np.random.default_rng(123)
        for trial in range(30):
            view = random_view(rng)
            beta = float(rng.choice([0.0, 0.5, 1.0, 10.0]))
            got, _ = select_exposure(view, ControllerConfig(beta=beta))
            want = oracle_select(view, beta)
            assert got == want, f"trial {trial}: {got} != {want}"


class TestSweeps:
    def test_multiplicative_up_wraps(self):
        program = ExposureProgram(times=(1.0, 2.0, 4.0, 8.0))
        sweep = baseline_sweep("multiplicative-up", program, 2.0)
        seq = [sweep.select(None)[0] for _ in range(6)]
        assert seq == [1.0, 2.0, 4.0, 8.0, 1.0, 2.0]

    def test_additive_up_wraps(self):
        program = ExposureProgram(times=(1.0, 3.0, 5.0))
        sweep = baseline_sweep("additive-up", program, 2.0)
        seq = [sweep.select(None)[0] for _ in range(5)]
        assert seq == [1.0, 3.0, 5.0, 1.0, 3.0]

    def test_additive_down_mirrors_up(self):
        program = ExposureProgram(times=(1.0, 3.0, 5.0))
        down = baseline_sweep("additive-down", program, 2.0)
        seq = [down.select(None)[0] for _ in range(5)]
        assert seq == [5.0, 3.0, 1.0, 5.0, 3.0]

    def test_multiplicative_down(self):
        program = ExposureProgram(times=(1.0, 2.0, 4.0, 8.0))
        down = baseline_sweep("multiplicative-down", program, 2.0)
        seq = [down.select(None)[0] for _ in range(5)]
        assert seq == [8.0, 4.0, 2.0, 1.0, 8.0]

    def test_snaps_to_nearest_member(self):
        program = ExposureProgram(times=(1.0, 2.0, 4.0, 8.0))
        sweep = baseline_sweep("additive-up", program, 2.5)
        seq = [sweep.select(None)[0] for _ in range(4)]
        # raw cursor 1, 3.5, 6, 8.5(wrap->1)
        assert seq == [1.0, 4.0, 8.0, 1.0]

    def test_reset_restarts(self):
        program = ExposureProgram(times=(1.0, 2.0, 4.0))
        sweep = baseline_sweep("multiplicative-up", program, 2.0)
        sweep.select(None)
        sweep.select(None)
        sweep.reset()
        assert sweep.select(None)[0] == 1.0

    def test_parameter_validation(self):
        program = ExposureProgram(times=(1.0, 2.0))
        with pytest.raises(ValueError):
            baseline_sweep("multiplicative-up", program, 1.0)
        with pytest.raises(ValueError):
            baseline_sweep("additive-up", program, 0.0)
        with pytest.raises(ValueError):
            baseline_sweep("sideways", program, 2.0)
