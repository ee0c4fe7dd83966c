import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nucprep.analysis import (ExtrapolationError, OverlapDataset, ParetoPoint, ReportRow, extrapolate_overlap,
                              fit_asymptote, pareto_csv, pareto_front, report_csv, wootters_bound)


def synthetic_dataset(alpha=-1.0, beta=-0.15, small=(8, 16, 32, 64), large=(128, 256, 512, 1024)):
    recs, true = [], {}
    for cs in small:
        c = 1 - math.exp(alpha + beta * math.log(cs) ** 2)
        true[cs] = c
        a, b = math.log(1 - c) - 0.5, -0.08
        for cl in large:
            recs.append((cs, cl, c + math.exp(a + b * math.log(cl) ** 2)))
    return OverlapDataset(recs), true


def test_bound_matches_angle_form():
    for ab, bc in [(0.837, 0.960), (1.0, 0.3), (0.9, 0.9), (0.5, 0.5)]:
        expected = max(0.0, math.cos(math.acos(ab) + math.acos(bc)))
        assert wootters_bound(ab, bc) == pytest.approx(expected, abs=1e-14)
    assert wootters_bound(2 ** -0.5, 2 ** -0.5) == pytest.approx(0.0, abs=1e-15)
    assert wootters_bound(0.1, 0.2) == 0.0


@pytest.mark.parametrize("args", [(-0.1, 0.5), (0.5, 1.1), (float("nan"), 0.5)])
def test_bound_rejects_bad_input(args):
    with pytest.raises(ValueError):
        wootters_bound(*args)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), dim=st.integers(2, 16))
def test_bound_holds_for_random_states(seed, dim):
    rng = np.random.default_rng(seed)
    a, b, c = (v / np.linalg.norm(v) for v in (rng.normal(size=dim) + 1j * rng.normal(size=dim)
                                                for _ in range(3)))
    ab, bc, ac = abs(np.vdot(a, b)), abs(np.vdot(b, c)), abs(np.vdot(a, c))
    assert wootters_bound(min(ab, 1.0), min(bc, 1.0)) <= ac + 1e-12


def test_fit_asymptote_recovers_model():
    large = np.array([128, 256, 512, 1024.0])
    c, a, b = 0.8, math.log(0.2) - 0.5, -0.08
    f = c + np.exp(a + b * np.log(large) ** 2)
    cf, af, bf, rms = fit_asymptote(large, f)
    assert abs(cf - c) < 1e-8
    assert abs(bf - b) < 1e-6
    assert rms < 1e-8


def test_fit_asymptote_constant_series():
    assert fit_asymptote([2, 3, 4], [0.9, 0.9, 0.9])[0] == 0.9


def test_fit_needs_three_points():
    with pytest.raises(ExtrapolationError):
        fit_asymptote([2, 3], [0.5, 0.6])


def test_extrapolation_recovers_synthetic():
    data, true = synthetic_dataset()
    est, diag = extrapolate_overlap(data, list(true), [128, 256, 512, 1024], 256)
    assert max(abs(diag.asymptotes[c] - true[c]) for c in true) < 1e-8
    assert est == pytest.approx(1 - math.exp(-1.0 - 0.15 * math.log(256) ** 2), abs=1e-8)
    assert diag.stage2_coeffs[1] == pytest.approx(-0.15, abs=1e-6)


def test_extrapolation_all_exact():
    small, large = [2, 3, 4], [5, 6, 7]
    data = OverlapDataset([(cs, cl, 1.0) for cs in small for cl in large])
    assert extrapolate_overlap(data, small, large, 10)[0] == 1.0


def test_extrapolation_input_checks():
    data, true = synthetic_dataset()
    with pytest.raises(ExtrapolationError):
        extrapolate_overlap(data, [8, 16], [128, 256, 512], 100)
    with pytest.raises(ExtrapolationError):
        extrapolate_overlap(data, [8, 16, 32], [128, 256], 100)


def test_extrapolation_warns_on_nonmonotone():
    data, _ = synthetic_dataset(small=(8, 16, 32))
    data.add(8, 2048, 0.999)
    _, diag = extrapolate_overlap(data, [8, 16, 32], [128, 256, 512, 1024, 2048], 64)
    assert any("monotone" in w for w in diag.warnings)


def test_dataset_validation():
    with pytest.raises(ValueError):
        OverlapDataset([(4, 4, 0.5)])
    with pytest.raises(ValueError):
        OverlapDataset([(2, 4, 1.5)])
    d = OverlapDataset.from_states({2: 0, 3: 1, 5: 2}, lambda a, b: 0.5)
    assert sorted(d.records) == [(2, 3, 0.25), (2, 5, 0.25), (3, 5, 0.25)]


def test_pareto_front():
    pts = [ParetoPoint(100, 0.5, "a"), ParetoPoint(200, 0.3, "b"), ParetoPoint(300, 0.4, "c"),
           ParetoPoint(100, 0.6, "d"), ParetoPoint(200, 0.3, "e"), ParetoPoint(400, 0.1, "f")]
    assert [p.circuit_id for p in pareto_front(pts)] == ["a", "b", "e", "f"]
    assert pareto_front([]) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.floats(0, 1)), min_size=1, max_size=30))
def test_pareto_front_is_nondominated(raw):
    pts = [ParetoPoint(t, f, str(i)) for i, (t, f) in enumerate(raw)]
    front = pareto_front(pts)
    assert front
    for p in front:
        assert not any((q.t_count <= p.t_count and q.infidelity < p.infidelity)
                       or (q.t_count < p.t_count and q.infidelity <= p.infidelity) for q in pts)
    for q in pts:
        if q not in front:
            assert any(p.t_count <= q.t_count and p.infidelity <= q.infidelity for p in front)


def test_pareto_point_validation():
    with pytest.raises(ValueError):
        ParetoPoint(1, 1.5, "x")


def test_csv_output():
    row = ReportRow("L1_e1.00_hybrid", 1, 0.1, "hybrid", 9, 12, 0.99, 0.98)
    text = report_csv([row])
    assert text.splitlines()[0] == ("circuit_id,layers,eps,strategy,rz_total,t_count,"
                                    "overlap_to_target,bound_to_exact")
    assert text.splitlines()[1] == "L1_e1.00_hybrid,1,0.1,hybrid,9,12,0.99,0.98"
    assert row.infidelity() == pytest.approx(1 - 0.98 ** 2)
    p = pareto_csv([row.pareto_point()]).splitlines()
    assert p[0] == "circuit_id,layers,eps,strategy,t_count,infidelity"
    assert p[1].startswith("L1_e1.00_hybrid,1,0.1,hybrid,12,")
