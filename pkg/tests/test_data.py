import math
import struct

import numpy as np
import pytest

from brl import (
    DataFormatError,
    chernoff_interval,
    load_cache,
    load_csv,
    sample_student_mixture,
    save_cache,
    scale_unit_box,
    subsample_to_prevalence,
    true_eta,
)
from brl.data import StudentMixtureParams, apply_unit_box
from conftest import make_dataset


class TestStudentMixtureParams:
    def test_defaults(self):
        params = StudentMixtureParams.default(0.03)
        assert params.p == 0.03 and params.dim == 2
        np.testing.assert_array_equal(params.mu_neg, [0.0, 0.0])
        np.testing.assert_array_equal(params.mu_pos, [1.0, 1.0])
        np.testing.assert_array_equal(params.sigma_neg, np.eye(2))
        np.testing.assert_array_equal(params.sigma_pos, 3.0 * np.eye(2))
        assert (params.nu_neg, params.nu_pos) == (2.5, 1.1)

    def test_rejects_non_spd_scale(self):
        with pytest.raises(ValueError):
            StudentMixtureParams(
                p=0.1,
                mu_neg=np.zeros(2),
                mu_pos=np.ones(2),
                sigma_neg=np.array([[1.0, 2.0], [2.0, 1.0]]),  # indefinite
                sigma_pos=np.eye(2),
                nu_neg=2.5,
                nu_pos=1.1,
            )

    def test_rejects_bad_p(self):
        with pytest.raises(ValueError):
            StudentMixtureParams.default(0.0)


class TestSampleStudentMixture:
    def test_seed_determinism_bitwise(self):
        params = StudentMixtureParams.default(0.2)
        a = sample_student_mixture(params, 500, 42)
        b = sample_student_mixture(params, 500, 42)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        c = sample_student_mixture(params, 500, 43)
        assert a.features.tobytes() != c.features.tobytes()

    def test_positive_fraction_within_chernoff_interval(self):
        n, p = 1_000_000, 0.01
        ds = sample_student_mixture(StudentMixtureParams.default(p), n, 7)
        count = ds.class_counts()[0]
        lo, hi = chernoff_interval(n * p, 1e-3)
        assert lo <= count <= hi

    def test_gaussian_limit_of_class_means(self):
        # nu so large the t is indistinguishable from a Gaussian; the
        # sample mean then concentrates at mu at the 1/sqrt(n) scale
        params = StudentMixtureParams(
            p=0.5,
            mu_neg=np.array([0.0, 0.0]),
            mu_pos=np.array([1.0, 1.0]),
            sigma_neg=np.eye(2),
            sigma_pos=np.eye(2),
            nu_neg=1e6,
            nu_pos=1e6,
        )
        ds = sample_student_mixture(params, 40_000, 3)
        pos = ds.features[ds.positive_mask]
        neg = ds.features[~ds.positive_mask]
        for block, mu in ((pos, 1.0), (neg, 0.0)):
            se = 1.0 / math.sqrt(len(block))
            assert np.all(np.abs(block.mean(axis=0) - mu) < 4 * se)

    def test_heavy_tail_produces_outliers(self):
        params = StudentMixtureParams.default(0.5)
        small = sample_student_mixture(params, 1000, 11)
        large = sample_student_mixture(params, 100_000, 11)
        max_small = np.linalg.norm(small.features, axis=1).max()
        max_large = np.linalg.norm(large.features, axis=1).max()
        # nu = 1.1 tails: the sample maximum keeps growing on a log scale
        assert max_large > 10 * max_small
        assert max_large > 1e3

    def test_labels_are_plus_minus_one(self):
        ds = sample_student_mixture(StudentMixtureParams.default(0.3), 200, 0)
        assert set(np.unique(ds.labels)) <= {-1, 1}

    def test_chunked_generation_is_continuous(self):
        # crossing the chunk boundary neither repeats nor drops draws
        params = StudentMixtureParams.default(0.4)
        n = 65_536 + 100
        ds = sample_student_mixture(params, n, 5)
        assert ds.n == n
        boundary = ds.features[65_530:65_542]
        assert len(np.unique(boundary, axis=0)) == len(boundary)


class TestLogDensityAndEta:
    def test_density_integrates_to_one_on_grid(self):
        params = StudentMixtureParams.default(0.5)
        step = 0.05
        axis = np.arange(-40.0, 40.0, step) + step / 2.0
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        mass = np.exp(params.log_density(-1, pts)).sum() * step * step
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_density_peaks_at_location(self):
        params = StudentMixtureParams.default(0.5)
        rng = np.random.default_rng(0)
        pts = np.vstack([params.mu_pos, rng.normal(size=(500, 2)) * 5])
        dens = params.log_density(1, pts)
        assert np.argmax(dens) == 0

    def test_gaussian_limit_pointwise(self):
        mu = np.array([0.3, -0.7])
        sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
        params = StudentMixtureParams(
            p=0.5, mu_neg=mu, mu_pos=np.ones(2),
            sigma_neg=sigma, sigma_pos=np.eye(2),
            nu_neg=1e8, nu_pos=2.0,
        )
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(10, 2)) * 2
        diff = pts - mu
        inv = np.linalg.inv(sigma)
        maha = np.einsum("ni,ij,nj->n", diff, inv, diff)
        gauss = -0.5 * maha - math.log(2 * math.pi) - 0.5 * math.log(
            np.linalg.det(sigma)
        )
        np.testing.assert_allclose(params.log_density(-1, pts), gauss, atol=1e-3)

    def test_eta_constant_for_identical_classes(self):
        for p in (0.5, 0.02, 0.9):
            params = StudentMixtureParams(
                p=p, mu_neg=np.zeros(2), mu_pos=np.zeros(2),
                sigma_neg=np.eye(2), sigma_pos=np.eye(2),
                nu_neg=2.5, nu_pos=2.5,
            )
            rng = np.random.default_rng(2)
            pts = rng.normal(size=(50, 2)) * 3
            np.testing.assert_allclose(true_eta(params, pts), p, rtol=1e-12)

    def test_eta_monotone_toward_positive_class(self):
        params = StudentMixtureParams(
            p=0.2, mu_neg=np.zeros(2), mu_pos=np.array([5.0, 5.0]),
            sigma_neg=np.eye(2), sigma_pos=np.eye(2),
            nu_neg=2.5, nu_pos=2.5,
        )
        ts = np.linspace(0.0, 1.0, 30)
        ray = ts[:, None] * params.mu_pos[None, :]
        etas = true_eta(params, ray)
        assert np.all(np.diff(etas) > 0)
        assert etas[-1] > 0.98

    def test_eta_stable_at_extreme_inputs(self):
        params = StudentMixtureParams.default(0.05)
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((100_000, 2))
        pts *= np.exp(rng.uniform(0, math.log(1e6), size=(100_000, 1)))
        etas = true_eta(params, pts)
        assert np.all(np.isfinite(etas))
        assert np.all((etas >= 0.0) & (etas <= 1.0))


class TestSubsample:
    def test_counts_against_target(self):
        feats = np.arange(100, dtype=float).reshape(-1, 1)
        labels = np.array([1] * 20 + [-1] * 80)
        ds = make_dataset(feats, labels)
        out = subsample_to_prevalence(ds, 0.05, seed=9)
        n_pos, n_neg = out.class_counts()
        assert n_neg == 80
        assert n_pos in (4, 5)
        assert abs(n_pos - round(0.05 * out.n)) <= 1

    def test_keeps_at_least_one_positive(self):
        ds = make_dataset(np.zeros((50, 1)), [1] + [-1] * 49)
        out = subsample_to_prevalence(ds, 1e-6, seed=0)
        assert out.class_counts()[0] == 1

    def test_preserves_row_order(self):
        feats = np.arange(30, dtype=float).reshape(-1, 1)
        labels = np.array([1, -1] * 15)
        ds = make_dataset(feats, labels)
        out = subsample_to_prevalence(ds, 0.2, seed=4)
        assert np.all(np.diff(out.features[:, 0]) > 0)

    def test_seeded(self):
        feats = np.arange(60, dtype=float).reshape(-1, 1)
        ds = make_dataset(feats, [1] * 30 + [-1] * 30)
        a = subsample_to_prevalence(ds, 0.1, seed=5)
        b = subsample_to_prevalence(ds, 0.1, seed=5)
        c = subsample_to_prevalence(ds, 0.1, seed=6)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.features.tobytes() != c.features.tobytes()


class TestCsv:
    def test_basic_load(self, tmp_path):
        fp = tmp_path / "d.csv"
        fp.write_text("f1,f2,label\n1.0,2.0,1\n3.0,4.0,-1\n5.0,6.0,0\n")
        ds = load_csv(str(fp))
        assert ds.n == 3 and ds.dim == 2
        assert ds.labels.tolist() == [1, -1, -1]  # 0 maps to -1

    def test_no_header_and_delimiter(self, tmp_path):
        fp = tmp_path / "d.tsv"
        fp.write_text("1.0\t2.0\t1\n3.0\t4.0\t-1\n")
        ds = load_csv(str(fp), delimiter="\t", has_header=False)
        assert ds.n == 2

    def test_label_column_by_name_and_index(self, tmp_path):
        fp = tmp_path / "d.csv"
        fp.write_text("y,a,b\nok,1.0,2.0\nbad,3.0,4.0\n")
        by_name = load_csv(str(fp), label_column="y", positive_value="ok")
        assert by_name.labels.tolist() == [1, -1]
        np.testing.assert_array_equal(by_name.features, [[1, 2], [3, 4]])
        by_index = load_csv(str(fp), label_column=0, positive_value="ok")
        assert by_index.labels.tolist() == [1, -1]

    def test_malformed_row_names_physical_line(self, tmp_path):
        fp = tmp_path / "d.csv"
        fp.write_text("a,b,label\n1.0,2.0,1\nx,4.0,-1\n")
        with pytest.raises(DataFormatError, match="row 3"):
            load_csv(str(fp))

    def test_width_mismatch(self, tmp_path):
        fp = tmp_path / "d.csv"
        fp.write_text("a,b,label\n1.0,2.0,1\n1.0,-1\n")
        with pytest.raises(DataFormatError, match="row 3"):
            load_csv(str(fp))

    def test_bad_label_token(self, tmp_path):
        fp = tmp_path / "d.csv"
        fp.write_text("a,label\n1.0,7\n")
        with pytest.raises(DataFormatError, match="label"):
            load_csv(str(fp))

    def test_unlabeled_mode(self, tmp_path):
        fp = tmp_path / "q.csv"
        fp.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
        arr = load_csv(str(fp), labeled=False)
        assert isinstance(arr, np.ndarray) and arr.shape == (2, 2)

    def test_empty_file(self, tmp_path):
        fp = tmp_path / "e.csv"
        fp.write_text("a,label\n")
        with pytest.raises(DataFormatError, match="no data rows"):
            load_csv(str(fp))


class TestCache:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = make_dataset(rng.normal(size=(37, 4)), [1, -1] * 18 + [1])
        fp = tmp_path / "d.bin"
        save_cache(str(fp), ds)
        back = load_cache(str(fp))
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.labels.tolist() == ds.labels.tolist()

    def test_header_layout(self, tmp_path):
        ds = make_dataset([[1.5, 2.5]], [1])
        fp = tmp_path / "d.bin"
        save_cache(str(fp), ds)
        raw = fp.read_bytes()
        assert raw[:4] == b"BRL1"
        n, d = struct.unpack("<II", raw[4:12])
        assert (n, d) == (1, 2)
        assert len(raw) == 12 + n * (8 * d + 1)

    def test_bad_magic(self, tmp_path):
        fp = tmp_path / "d.bin"
        fp.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataFormatError):
            load_cache(str(fp))

    def test_truncated_file(self, tmp_path):
        ds = make_dataset([[1.0], [2.0]], [1, -1])
        fp = tmp_path / "d.bin"
        save_cache(str(fp), ds)
        raw = fp.read_bytes()
        fp.write_bytes(raw[:-3])
        with pytest.raises(DataFormatError):
            load_cache(str(fp))


class TestUnitBox:
    def test_scales_to_unit_interval(self):
        feats = np.array([[0.0, 10.0], [5.0, 20.0], [10.0, 30.0]])
        scaled, mins, ranges = scale_unit_box(feats)
        assert scaled.min() == 0.0 and scaled.max() == 1.0
        np.testing.assert_allclose(
            apply_unit_box(feats, mins, ranges), scaled
        )

    def test_constant_column_maps_to_half(self):
        feats = np.array([[3.0, 1.0], [3.0, 2.0]])
        scaled, _, _ = scale_unit_box(feats)
        np.testing.assert_array_equal(scaled[:, 0], [0.5, 0.5])
