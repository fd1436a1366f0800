import csv
import io

import numpy as np
import pytest

from qmri.bloch import PulseSequence
from qmri.errors import ShapeMismatchError
from qmri.maps import ParameterMap
from qmri.metrics import (banded_matrix, chebyshev_trial, error_rate, is_strictly_decreasing, iterate_ratios,
                          nonconvexity_certificate, trace_slope, write_comparison_csv, write_series_csv)
from qmri.phantom import brain_phantom
from qmri.solver import SolveReport


def scaled(x, c):
    return ParameterMap(x.t1 * c, x.t2 * c, x.rho * c, x.omega)


def fake_report(steps, norms=None):
    steps = np.asarray(steps, dtype=float)
    rep = SolveReport(channel_names=("T1", "T2", "rho"))
    rep.steps = steps.tolist()
    rep.lambdas = [0.0] * len(steps)
    if norms is not None:
        rep.norms = np.asarray(norms, dtype=float).tolist()
    return rep


class TestErrorRate:
    def test_identity(self):
        x = brain_phantom(32)
        rep = error_rate(x, x)
        assert all(v == 0 for v in rep.errors.values())
        assert all(not p.any() for p in rep.pointwise.values())

    def test_uniform_scaling(self):
        x = brain_phantom(32)
        rep = error_rate(scaled(x, 1.1), x)
        for c in ("T1", "T2", "rho"):
            assert rep.errors[c] == pytest.approx(0.1, abs=1e-14)

    def test_only_effective_domain_counts(self):
        x = brain_phantom(32)
        y = x.copy()
        y.t1[~x.omega] = 1e6
        assert error_rate(y, x).errors["T1"] == 0

    def test_pointwise_maps(self):
        x = brain_phantom(32)
        rep = error_rate(scaled(x, 1.5), x)
        assert np.allclose(rep.pointwise["T2"], 0.5 * x.t2)

    def test_zero_reference_flagged(self):
        omega = np.ones((4, 4), bool)
        x = ParameterMap(np.full((4, 4), 900.0), np.full((4, 4), 90.0), np.zeros((4, 4)), omega)
        rep = error_rate(x, x)
        assert rep.undefined == ("rho",) and np.isnan(rep.errors["rho"]) and rep.errors["T1"] == 0

    def test_complex_channels(self):
        x = brain_phantom(32, complex_offset=20.0)
        rep = error_rate(scaled(x, 0.8), x)
        for c in ("rho", "rho_re", "rho_im"):
            assert rep.errors[c] == pytest.approx(0.2, abs=1e-14)

    def test_grid_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            error_rate(brain_phantom(16), brain_phantom(32))

    def test_wall_time_carried(self):
        x = brain_phantom(16)
        assert error_rate(x, x, 1.25).wall_time == 1.25


class TestIterateRatios:
    def test_geometric_steps(self):
        r = 0.3
        steps = [[r**n, 2 * r**n, 5 * r**n] for n in range(8)]
        out = iterate_ratios(fake_report(steps), rtol=0)
        for c in ("T1", "T2", "rho"):
            assert len(out[c]) == 7 and np.allclose(out[c], r, rtol=1e-12)

    def test_one_step_convergence(self):
        out = iterate_ratios(fake_report([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]))
        assert all(v.size == 0 for v in out.values())

    def test_truncated_at_zero_step(self):
        out = iterate_ratios(fake_report([[4.0] * 3, [2.0] * 3, [1.0] * 3, [0.0] * 3, [0.5] * 3]), rtol=0)
        assert np.allclose(out["T1"], [0.5, 0.5])

    def test_truncated_at_round_off(self):
        steps = [[1.0] * 3, [1e-3] * 3, [1e-7] * 3, [1e-14] * 3, [3e-14] * 3]
        norms = [[100.0] * 3] * 6
        out = iterate_ratios(fake_report(steps, norms), rtol=1e-12)
        assert np.allclose(out["T1"], [1e-3, 1e-4])

    def test_decreasing_helper(self):
        assert is_strictly_decreasing([0.5, 0.2, 0.01])
        assert not is_strictly_decreasing([0.5, 0.6, 0.01])
        assert is_strictly_decreasing([0.9, 0.95, 0.5, 0.1], last=3)
        assert not is_strictly_decreasing([0.5])


class TestChebyshev:
    def test_singular_values_in_band(self, rng):
        A = banded_matrix(8, 4, (0.5, 2.0), rng)
        sv = np.linalg.svd(A, compute_uv=False)
        assert np.all(sv >= np.sqrt(0.5) - 1e-12) and np.all(sv <= np.sqrt(2.0) + 1e-12)

    @pytest.mark.parametrize("band", [(0.0, 1.0), (2.0, 1.0)])
    def test_degenerate_band_rejected(self, rng, band):
        with pytest.raises(ValueError):
            banded_matrix(8, 4, band, rng)

    def test_noiseless(self):
        rows = chebyshev_trial(L_values=(4,), sigma=0.0, trials=100)
        assert all(r.empirical == 0 for r in rows)

    def test_trace_halves_when_data_doubles(self):
        rows = chebyshev_trial(L_values=(8, 16, 32, 64), trials=10)
        traces = [t for _, t in sorted({(r.L, r.trace) for r in rows})]
        for a, b in zip(traces, traces[1:]):
            assert 1.0 < a / b < 4.0

    def test_bound_holds(self):
        rows = chebyshev_trial(trials=4000, epsilon=(0.1, 0.3, 0.6, 1.2), seed=3)
        assert all(r.empirical <= r.bound for r in rows)

    def test_seeded(self):
        a = chebyshev_trial(L_values=(4,), trials=500, seed=1)
        b = chebyshev_trial(L_values=(4,), trials=500, seed=1)
        assert a == b

    def test_slope_of_exact_power_law(self):
        class Row:
            def __init__(self, L):
                self.L, self.trace = L, 3.0 / L
        assert trace_slope([Row(L) for L in (2, 4, 8)]) == pytest.approx(-1.0, abs=1e-12)


class TestNonconvexity:
    seq = PulseSequence.constant(10, np.deg2rad(40.0), 40.0)

    def test_identical_endpoints(self):
        cert = nonconvexity_certificate((800, 80), (800, 80), self.seq, grid=(120, 120))
        assert cert.margin < 1e-8
        assert np.allclose(cert.best_theta, (800, 80), rtol=1e-4)

    def test_swap_invariant(self):
        a = nonconvexity_certificate((800, 80), (3000, 300), self.seq, grid=(120, 120))
        b = nonconvexity_certificate((3000, 300), (800, 80), self.seq, grid=(120, 120))
        assert a.margin == b.margin and np.array_equal(a.midpoint, b.midpoint)

    def test_margin_grows_with_separation(self):
        margins = [nonconvexity_certificate((800, 80), tb, self.seq, grid=(150, 150)).margin
                   for tb in ((1200, 120), (2000, 200), (3000, 300))]
        assert margins[0] < margins[1] < margins[2]

    def test_refinement_never_worse_than_grid(self):
        c = nonconvexity_certificate((700, 60), (2500, 250), self.seq, grid=(80, 80))
        assert c.margin <= c.grid_margin and len(c.refined_from) == 12
        assert c.grid_ratio[0] > 1

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            nonconvexity_certificate((800, 80), (900, 90), PulseSequence.constant(1, 0.5, 10.0))


class TestCsv:
    def test_comparison_rows_in_order(self, tmp_path):
        x = brain_phantom(16)
        rows = [("Initial", error_rate(scaled(x, 1.2), x, 1.0)), ("BLIP", error_rate(scaled(x, 1.1), x, 2.0)),
                ("L-M", error_rate(x, x, 3.0)), ("Proposed", error_rate(x, x))]
        write_comparison_csv(tmp_path / "t.csv", rows)
        table = list(csv.reader(open(tmp_path / "t.csv")))
        assert table[0] == ["method", "time_s", "ER_T1", "ER_T2", "ER_rho"]
        assert [r[0] for r in table[1:]] == ["Initial", "BLIP", "L-M", "Proposed"]
        assert float(table[2][2]) == pytest.approx(0.1) and table[4][1] == ""
        buf = io.StringIO()
        write_comparison_csv(buf, rows[:1])
        assert buf.getvalue().splitlines()[1].startswith("Initial,1.0,")

    def test_series(self, tmp_path):
        write_series_csv(tmp_path / "s.csv", {"T1": [0.5, 0.25], "T2": [0.1]})
        table = list(csv.reader(open(tmp_path / "s.csv")))
        assert table == [["iteration", "T1", "T2"], ["1", "0.5", "0.1"], ["2", "0.25", ""]]
