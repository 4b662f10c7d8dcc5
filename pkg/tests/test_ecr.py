import itertools

import numpy as np
import pytest

from qbnet.ecr import (ECRReport, PerformanceCurve, build_ecr_report, compute_ecr,
                       equivalent_size, fit_monotone_curve, isotonic_decreasing, layer_size_of,
                       resolve_param_model, write_ecr_report_csv, write_error_curves_tsv)
from qbnet.nn import fcdnn_param_formula
from qbnet.sweep import RunRecord


def make_record(size_label, bits, method, seed, err, family="fcdnn"):
    return RunRecord(f"{abs(hash((size_label, bits, method, seed))):016x}"[:16], family,
                     size_label, 1000, bits, method, seed, err, err, 1.0)


class TestIsotonic:
    def test_already_monotone_unchanged(self):
        vals = [0.5, 0.4, 0.4, 0.1]
        assert list(isotonic_decreasing(vals)) == vals

    def test_hand_pav_example(self):
        fitted = isotonic_decreasing([0.40, 0.42, 0.33])
        assert fitted == pytest.approx([0.41, 0.41, 0.33])

    def test_minimizes_squared_error_vs_brute_force(self):
        rng = np.random.default_rng(0)
        grid = np.linspace(0.0, 1.0, 21)
        for _ in range(20):
            y = rng.random(4)
            fitted = isotonic_decreasing(y)
            best = min(
                (sum((a - b) ** 2 for a, b in zip(y, cand))
                 for cand in itertools.product(grid, repeat=4)
                 if all(cand[i] >= cand[i + 1] for i in range(3))))
            got = sum((a - b) ** 2 for a, b in zip(y, fitted))
            # the continuous optimum can only beat the 0.05-grid optimum
            assert got <= best + 1e-12


class TestFitMonotoneCurve:
    def test_seed_averaging_and_pav(self):
        records = [make_record("128", "2", "retrain", s, e)
                   for s, e in ((1, 0.39), (2, 0.41))]
        records += [make_record("256", "2", "retrain", 1, 0.42)]
        records += [make_record("512", "2", "retrain", 1, 0.33)]
        curve = fit_monotone_curve(records)
        assert list(curve.sizes) == [128.0, 256.0, 512.0]
        assert curve.errors == pytest.approx([0.41, 0.41, 0.33])

    def test_knot_query_exact(self):
        curve = PerformanceCurve("2", [128, 512], [0.4, 0.2])
        assert curve.error_at(128) == 0.4
        assert curve.error_at(512) == 0.2

    def test_needs_two_sizes(self):
        with pytest.raises(ValueError):
            fit_monotone_curve([make_record("128", "2", "retrain", 1, 0.3)])

    def test_rejects_mixed_bits(self):
        with pytest.raises(ValueError):
            fit_monotone_curve([make_record("128", "2", "retrain", 1, 0.3),
                                make_record("256", "3", "retrain", 1, 0.2)])

    def test_cnn_size_is_last_map_count(self):
        rec = make_record("32-32-64", "2", "retrain", 1, 0.3, family="cnn")
        assert layer_size_of(rec) == 64.0


class TestEquivalentSize:
    def test_hand_interpolation(self):
        curve = PerformanceCurve("3", [256, 512], [0.35, 0.33])
        n1, extrapolated = equivalent_size(curve, 0.34)
        assert not extrapolated
        assert np.log2(n1) == pytest.approx(8.5)
        assert n1 == pytest.approx(362.038, abs=0.01)

    def test_knot_error_returns_knot_size(self):
        curve = PerformanceCurve("3", [256, 512, 1024], [0.35, 0.33, 0.20])
        assert equivalent_size(curve, 0.33) == (512.0, False)

    def test_below_curve_clamps_to_max_size(self):
        curve = PerformanceCurve("3", [256, 512], [0.35, 0.33])
        assert equivalent_size(curve, 0.01) == (512.0, True)

    def test_above_curve_clamps_to_min_size(self):
        curve = PerformanceCurve("3", [256, 512], [0.35, 0.33])
        assert equivalent_size(curve, 0.99) == (256.0, True)

    def test_monotone_in_target(self):
        curve = PerformanceCurve("3", [64, 128, 256, 512], [0.5, 0.42, 0.35, 0.33])
        targets = np.linspace(0.335, 0.49, 20)
        sizes = [equivalent_size(curve, t)[0] for t in targets]
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    def test_scale_covariance(self):
        curve = PerformanceCurve("3", [64, 128, 256], [0.5, 0.4, 0.3])
        scaled = PerformanceCurve("3", [192, 384, 768], [0.5, 0.4, 0.3])
        for t in (0.45, 0.37, 0.31):
            a, _ = equivalent_size(curve, t)
            b, _ = equivalent_size(scaled, t)
            assert b == pytest.approx(3.0 * a, rel=1e-12)


class TestComputeEcr:
    def test_identity_at_32_bits(self):
        assert compute_ecr(256, 32, 256) == pytest.approx(1.0, abs=1e-12)

    def test_paper_example_same_size(self):
        # 3-bit net matching the float reference at the same size: 32/3 compression
        assert compute_ecr(256, 3, 256, "square_approx") == pytest.approx(32.0 / 3.0, abs=1e-9)

    def test_paper_example_doubled_size(self):
        # equivalent size 512 drops the compression to 8/3 (the paper's "about 2.5")
        assert compute_ecr(256, 3, 512, "square_approx") == pytest.approx(8.0 / 3.0, abs=1e-9)

    def test_exact_model_uses_closed_form(self):
        got = compute_ecr(256, 4, 362.04, "exact", "fcdnn")
        want = 32 * fcdnn_param_formula(256) / (4 * fcdnn_param_formula(362.04))
        assert got == pytest.approx(want, rel=1e-12)

    def test_positivity(self):
        for n, n1 in ((2, 100.0), (8, 2000.0)):
            assert compute_ecr(256, n, n1) > 0

    def test_rejects_bad_model(self):
        with pytest.raises(ValueError):
            resolve_param_model("cubic", "fcdnn")


def analytic_records(bits_list, sizes, a=0.02, b=20.0):
    """error(N, n) = a + b / (N * (1 - 2^-n)); float32 treated as n=32."""
    records = []
    for bits in bits_list:
        n_eff = 32 if bits == "float32" else int(bits)
        method = "float" if bits == "float32" else "retrain"
        for size in sizes:
            err = a + b / (size * (1.0 - 2.0 ** -n_eff))
            records.append(make_record(f"{size:.6f}".rstrip("0").rstrip("."), bits, method,
                                       1, err))
    return records


class TestBuildEcrReport:
    def test_identical_curves_give_bit_ratio(self):
        sizes = [64, 128, 256, 512]
        errs = [0.5, 0.4, 0.3, 0.2]
        records = [make_record(str(s), "float32", "float", 1, e) for s, e in zip(sizes, errs)]
        records += [make_record(str(s), "4", "retrain", 1, e) for s, e in zip(sizes, errs)]
        reports = build_ecr_report(records, [64, 128, 256, 512], "square_approx")
        for rep in reports:
            entry = rep.entries[0]
            assert entry.bits == 4
            assert entry.equivalent_size == pytest.approx(rep.reference_size, rel=1e-9)
            assert entry.ecr == pytest.approx(8.0, rel=1e-9)

    def test_analytic_fixture_matches_closed_form_within_1pct(self):
        # eighth-octave grid keeps the log-linear interpolation error well under 1%
        sizes = [2 ** (5 + i / 8) for i in range(41)]  # 32 .. 1024
        records = analytic_records(["float32", "2", "3", "4"], sizes)
        refs = [64, 128, 256, 512]
        reports = build_ecr_report(records, refs, "square_approx")
        for rep in reports:
            for entry in rep.entries:
                n1_closed = rep.reference_size * (1 - 2.0 ** -32) / (1 - 2.0 ** -entry.bits)
                ecr_closed = (32 * rep.reference_size ** 2) / (entry.bits * n1_closed ** 2)
                assert not entry.extrapolated
                assert entry.ecr == pytest.approx(ecr_closed, rel=0.01)

    def test_missing_float_curve_rejected(self):
        records = [make_record("128", "2", "retrain", 1, 0.4),
                   make_record("256", "2", "retrain", 1, 0.3)]
        with pytest.raises(ValueError):
            build_ecr_report(records, [128])

    def test_extrapolation_flagged(self):
        records = [make_record(str(s), "float32", "float", 1, e)
                   for s, e in ((64, 0.30), (128, 0.20))]
        records += [make_record(str(s), "2", "retrain", 1, e)
                    for s, e in ((64, 0.60), (128, 0.50))]
        reports = build_ecr_report(records, [128], "square_approx")
        entry = reports[0].entries[0]
        assert entry.extrapolated
        assert entry.equivalent_size == 128.0  # clamped to the largest observed size


class TestReportFiles:
    def test_report_csv_layout(self, tmp_path):
        reports = [ECRReport(256.0, 0.3287, [], "square_approx")]
        from qbnet.ecr import EcrEntry
        reports[0].entries.append(EcrEntry(3, 256.0, 32 / 3, False))
        path = tmp_path / "ecr.csv"
        write_ecr_report_csv(reports, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "reference_size,reference_error,bits,equivalent_size,ecr,extrapolated"
        assert lines[1].startswith("256,0.3287,3,256,")

    def test_error_curves_tsv(self, tmp_path):
        records = [make_record("128", "2", "retrain", s, e) for s, e in ((1, 0.4), (2, 0.5))]
        records += [make_record("256", "2", "retrain", 1, 0.3)]
        path = tmp_path / "curves.tsv"
        write_error_curves_tsv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "family\tsize\tbits\tmethod\terror"
        assert "128\t2\tretrain\t0.45" in lines[1]
