import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchreg.sketch import (
    SketchError,
    SketchMatrix,
    apply_sketch,
    content_digest,
    generate_sketch_matrix,
    load_sketched,
    read_raw_csv,
    save_sketched,
    verify_isometry,
)


def naive_product(a, b):
    """Triple-loop matrix product, independent of BLAS."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestGenerate:
    def test_degenerate_bound_rejected(self):
        with pytest.raises(SketchError, match="strictly compress"):
            generate_sketch_matrix(1, 1, seed=0)

    @pytest.mark.parametrize("m,n", [(0, 10), (5, 0), (10, 10), (11, 10)])
    def test_bad_dimensions(self, m, n):
        with pytest.raises(SketchError):
            generate_sketch_matrix(m, n, seed=0)

    def test_moments(self):
        m, n = 200, 2000
        phi = generate_sketch_matrix(m, n, seed=7)
        e = phi.entries
        assert e.shape == (m, n)
        assert abs(e.mean()) < 4.0 / np.sqrt(n * m * n)
        assert abs(e.var() - 1.0 / n) < 0.05 / n

    def test_deterministic(self):
        a = generate_sketch_matrix(200, 2000, seed=7)
        b = generate_sketch_matrix(200, 2000, seed=7)
        assert a.entries.tobytes() == b.entries.tobytes()

    def test_independent_of_worker_count(self):
        a = generate_sketch_matrix(64, 500, seed=3, workers=1)
        b = generate_sketch_matrix(64, 500, seed=3, workers=4)
        assert a.entries.tobytes() == b.entries.tobytes()

    def test_row_substreams(self):
        # a row depends only on (seed, row index), not on m
        a = generate_sketch_matrix(10, 300, seed=11)
        b = generate_sketch_matrix(20, 300, seed=11)
        np.testing.assert_array_equal(a.entries, b.entries[:10])

    def test_different_seeds_differ(self):
        a = generate_sketch_matrix(5, 50, seed=1)
        b = generate_sketch_matrix(5, 50, seed=2)
        assert not np.array_equal(a.entries, b.entries)

    def test_entries_read_only(self):
        phi = generate_sketch_matrix(3, 10, seed=0)
        with pytest.raises(ValueError):
            phi.entries[0, 0] = 1.0


class TestApply:
    def test_identity_sketch(self, rng):
        n, p = 30, 4
        y = rng.standard_normal(n)
        x = rng.standard_normal((n, p))
        phi = SketchMatrix(np.eye(n), seed=None, strict=False)
        d = apply_sketch(phi, y, x)
        np.testing.assert_array_equal(d.y_tilde, y)
        np.testing.assert_array_equal(d.x_tilde, x)

    def test_zero_response(self, rng):
        phi = generate_sketch_matrix(5, 40, seed=1)
        d = apply_sketch(phi, np.zeros(40), rng.standard_normal((40, 3)))
        np.testing.assert_array_equal(d.y_tilde, np.zeros(5))

    def test_matches_naive_product(self, rng):
        n, m, p = 50, 10, 8
        phi = generate_sketch_matrix(m, n, seed=5)
        y = rng.standard_normal(n)
        x = rng.standard_normal((n, p))
        d = apply_sketch(phi, y, x, block_rows=7)
        xt = naive_product(phi.entries, x)
        yt = naive_product(phi.entries, y)[:, 0]
        assert np.linalg.norm(d.x_tilde - xt) <= 1e-12 * np.linalg.norm(xt)
        assert np.linalg.norm(d.y_tilde - yt) <= 1e-12 * np.linalg.norm(yt)
        assert (d.m, d.p, d.seed) == (m, p, 5)

    @pytest.mark.parametrize("block", [1, 3, 16, 1000])
    def test_streaming_equals_dense(self, rng, block):
        n, m, p = 120, 12, 9
        phi = generate_sketch_matrix(m, n, seed=9)
        y = rng.standard_normal(n)
        x = rng.standard_normal((n, p))
        d = apply_sketch(phi, y, x, block_rows=block)
        dense = phi.entries @ x
        assert np.linalg.norm(d.x_tilde - dense) <= 1e-12 * np.linalg.norm(dense)
        assert d.source_hash == apply_sketch(phi, y, x, block_rows=n).source_hash

    def test_dimension_mismatch(self, rng):
        phi = generate_sketch_matrix(3, 20, seed=0)
        with pytest.raises(SketchError, match="mismatch"):
            apply_sketch(phi, rng.standard_normal(19), rng.standard_normal((20, 2)))
        with pytest.raises(SketchError, match="mismatch"):
            apply_sketch(phi, rng.standard_normal(20), rng.standard_normal((21, 2)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_rejected(self, rng, bad):
        phi = generate_sketch_matrix(3, 20, seed=0)
        x = rng.standard_normal((20, 2))
        x[7, 1] = bad
        with pytest.raises(SketchError, match="non-finite"):
            apply_sketch(phi, rng.standard_normal(20), x)

    def test_digest_deterministic(self, rng):
        y = rng.standard_normal(40)
        x = rng.standard_normal((40, 3))
        a = apply_sketch(generate_sketch_matrix(6, 40, seed=4), y, x)
        b = apply_sketch(generate_sketch_matrix(6, 40, seed=4), y, x)
        assert a.digest() == b.digest()
        assert a.source_hash == b.source_hash

    @settings(max_examples=40, deadline=None)
    @given(
        a=st.floats(-5, 5, allow_nan=False),
        b=st.floats(-5, 5, allow_nan=False),
        seed=st.integers(0, 2**32),
    )
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        n = 30
        phi = generate_sketch_matrix(4, n, seed=seed)
        x = r.standard_normal((n, 2))
        y1, y2 = r.standard_normal(n), r.standard_normal(n)
        lhs = apply_sketch(phi, a * y1 + b * y2, x).y_tilde
        rhs = a * apply_sketch(phi, y1, x).y_tilde + b * apply_sketch(phi, y2, x).y_tilde
        scale = max(np.linalg.norm(rhs), 1e-300)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * scale + 1e-12


class TestIsometry:
    def test_scalar_case(self):
        rep = verify_isometry(generate_sketch_matrix(1, 10_000, seed=3), slack=0.1)
        assert abs(rep.min_eig - 1) < 0.1
        assert rep.min_eig == rep.max_eig
        assert rep.passed

    def test_zero_operator(self):
        rep = verify_isometry(SketchMatrix(np.zeros((4, 40)), seed=None, strict=False), slack=0.05)
        assert rep.min_eig == 0 and rep.max_eig == 0
        assert rep.spectral_dev == 1.0
        assert not rep.passed

    def test_report_invariants(self):
        rep = verify_isometry(generate_sketch_matrix(20, 200, seed=1))
        assert 0 <= rep.min_eig <= rep.max_eig
        assert rep.spectral_dev >= 0
        assert rep.lemma1_lower < 1 < rep.lemma1_upper
        assert rep.lemma1_lower == pytest.approx(((np.sqrt(200) - np.sqrt(20)) / np.sqrt(200)) ** 2)
        assert rep.lemma1_upper == pytest.approx(((np.sqrt(200) + np.sqrt(20)) / np.sqrt(200)) ** 2)
        assert json.loads(json.dumps(rep.to_dict()))["pass"] == rep.passed

    def test_negative_slack(self):
        with pytest.raises(SketchError):
            verify_isometry(generate_sketch_matrix(2, 20, seed=1), slack=-1)

    @pytest.mark.slow
    def test_pass_rate_and_concentration(self):
        m, n = 200, 2000
        reps = [verify_isometry(generate_sketch_matrix(m, n, seed=s), slack=0.05) for s in range(100)]
        assert sum(r.passed for r in reps) >= 95
        assert np.median([r.spectral_dev for r in reps]) <= 3 * np.sqrt(m / n)


class TestPersistence:
    def test_roundtrip(self, tmp_path, rng):
        y = rng.standard_normal(50)
        x = rng.standard_normal((50, 6))
        d = apply_sketch(generate_sketch_matrix(8, 50, seed=12), y, x)
        paths = save_sketched(d, tmp_path / "sk", n=50)
        assert sorted(p.name for p in paths) == ["meta.json", "x_tilde.csv", "y_tilde.csv"]
        meta = json.loads((tmp_path / "sk" / "meta.json").read_text())
        assert {k: meta[k] for k in ("m", "n", "p", "seed")} == {"m": 8, "n": 50, "p": 6, "seed": 12}
        assert meta["source_hash"] == d.source_hash
        d2, _ = load_sketched(tmp_path / "sk")
        np.testing.assert_array_equal(d2.x_tilde, d.x_tilde)
        np.testing.assert_array_equal(d2.y_tilde, d.y_tilde)

    def test_single_feature_roundtrip(self, tmp_path, rng):
        d = apply_sketch(generate_sketch_matrix(4, 30, seed=1), rng.standard_normal(30), rng.standard_normal((30, 1)))
        save_sketched(d, tmp_path, n=30)
        d2, _ = load_sketched(tmp_path)
        assert d2.x_tilde.shape == (4, 1)

    def test_read_csv_named_response(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("a,resp,b\n1,10,2\n3,30,4\n5,50,6\n")
        y, x, names = read_raw_csv(f, "resp")
        np.testing.assert_array_equal(y, [10, 30, 50])
        np.testing.assert_array_equal(x, [[1, 2], [3, 4], [5, 6]])
        assert names == ["a", "b"]

    def test_read_csv_indexed_headerless(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("1,2,3\n4,5,6\n")
        y, x, names = read_raw_csv(f, -1)
        np.testing.assert_array_equal(y, [3, 6])
        assert names is None and x.shape == (2, 2)

    def test_read_csv_missing_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("a,b\n1,2\n")
        with pytest.raises(SketchError):
            read_raw_csv(f, "zzz")


def test_content_digest_sensitive_to_shape():
    a = np.arange(6.0)
    assert content_digest(a) != content_digest(a.reshape(2, 3))
