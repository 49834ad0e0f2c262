from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from sepspike import sampling
from sepspike.errors import IndexOutOfRange, MissingVectors
from sepspike.sampling import EntryLaw, draw, from_matrix, haar_basis, interlacing_ok, overlap, rng_for
from sepspike.spectra import PopulationSpectrum, SeparableModel, spiked_to


def test_rng_streams_are_reproducible_and_distinct():
    a = rng_for(3, 0).standard_normal(5)
    b = rng_for(3, 0).standard_normal(5)
    c = rng_for(3, 1).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


@pytest.mark.parametrize("kind", ["gaussian", "uniform", "student_t"])
def test_entry_variance_is_one_over_n(kind):
    n = 400
    x, _ = EntryLaw(kind).sample(rng_for(0, 0), 400, n)
    assert abs(x.mean()) < 5 / math.sqrt(x.size) / math.sqrt(n)
    assert x.var() * n == pytest.approx(1.0, abs=0.02)


def test_student_t_truncation_bound():
    n = 400
    law = EntryLaw("student_t", 6.0)
    x, cut = law.sample(rng_for(1, 0), 300, n)
    assert np.max(np.abs(x)) <= n ** (2 / 6 - 0.5)
    assert cut >= 0


def test_student_t_scale_gives_exact_truncated_variance():
    df, n = 6.0, 400
    c, phi = sampling._t_scale(df, n)
    lim = phi / c
    second, _ = integrate.quad(lambda t: t * t * stats.t.pdf(t, df), -lim, lim)
    assert c * c * second == pytest.approx(1 / n, rel=1e-8)


def test_student_t_needs_df_above_four():
    with pytest.raises(ValueError):
        EntryLaw("student_t", 4.0)
    with pytest.raises(ValueError):
        EntryLaw("cauchy")


def test_largest_eigenvalue_near_mp_edge():
    model = SeparableModel.null(200, 200)
    hits = [3.5 <= draw(model, seed=0, rep=i, vectors=False).eigenvalues[0] <= 4.5 for i in range(100)]
    assert np.mean(hits) >= 0.99


def test_draw_is_bit_reproducible():
    model = spiked_to(SeparableModel.null(60, 80), [3.0])
    a = draw(model, seed=11, rep=4)
    b = draw(model, seed=11, rep=4)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.left_vectors, b.left_vectors)


def test_singular_vectors_orthonormal_and_parseval():
    model = spiked_to(SeparableModel.null(50, 70), [3.0], [2.0])
    d = draw(model, seed=0)
    u, v = d.left_vectors, d.right_vectors
    assert np.max(np.abs(u.T @ u - np.eye(u.shape[1]))) <= 1e-8
    assert np.max(np.abs(v.T @ v - np.eye(v.shape[1]))) <= 1e-8
    w = rng_for(5, 0).standard_normal(50)
    w /= np.linalg.norm(w)
    assert sum(overlap(d, w, k) for k in range(1, 51)) == pytest.approx(1.0, abs=1e-8)


def test_both_gram_orderings_share_nonzero_spectrum():
    model = spiked_to(SeparableModel.null(30, 45), [4.0])
    x, _ = EntryLaw().sample(rng_for(0, 0), 30, 45)
    y = sampling.transform(x, model.raw_tilde_a, None, model.raw_tilde_b, None)
    l1 = np.sort(np.linalg.eigvalsh(y @ y.T))[::-1]
    l2 = np.sort(np.linalg.eigvalsh(y.T @ y))[::-1][:30]
    np.testing.assert_allclose(l1, l2, rtol=1e-8)
    d = draw(model, seed=0, rep=0, vectors=False)
    np.testing.assert_allclose(d.eigenvalues, l1, rtol=1e-8)


def test_transform_with_basis_matches_dense_product():
    rng = rng_for(2, 0)
    qa, qb = haar_basis(6, rng), haar_basis(8, rng)
    a = np.array([4.0, 2, 1, 1, 1, 0.5])
    b = np.linspace(2, 0.5, 8)
    x = rng.standard_normal((6, 8))
    dense = (qa @ np.diag(np.sqrt(a)) @ qa.T) @ x @ (qb @ np.diag(np.sqrt(b)) @ qb.T)
    np.testing.assert_allclose(sampling.transform(x, a, qa, b, qb), dense, atol=1e-12)


def test_haar_basis_is_orthogonal():
    q = haar_basis(20, rng_for(0, 0))
    np.testing.assert_allclose(q.T @ q, np.eye(20), atol=1e-12)


def test_top_k_matches_full_decomposition():
    model = spiked_to(SeparableModel.null(80, 120), [5.0], [3.0])
    full = draw(model, seed=3, rep=1)
    top = draw(model, seed=3, rep=1, top_k=4)
    np.testing.assert_allclose(top.eigenvalues, full.eigenvalues[:4], rtol=1e-10)
    for k in range(4):
        assert abs(top.left_vectors[:, k] @ full.left_vectors[:, k]) == pytest.approx(1.0, abs=1e-8)
        assert abs(top.right_vectors[:, k] @ full.right_vectors[:, k]) == pytest.approx(1.0, abs=1e-8)
    assert not top.complete
    with pytest.raises(MissingVectors):
        _ = top.q1_spectrum


def test_leading_triplet_by_lanczos_matches_gram():
    y = rng_for(0, 0).standard_normal((1000, 1000)) / math.sqrt(1000)
    y[:, 0] *= 3.0
    lam, u, v = sampling._top_svd(y, 1)
    gram = np.linalg.eigvalsh(y @ y.T)[-1]
    assert lam[0] == pytest.approx(gram, rel=1e-10)
    np.testing.assert_allclose(y @ v[:, 0], math.sqrt(lam[0]) * u[:, 0], atol=1e-8)


def test_padded_spectra():
    model = SeparableModel.null(10, 15)
    d = draw(model, seed=0, vectors=False)
    assert d.q1_spectrum.size == 10
    assert d.q2_spectrum.size == 15
    assert np.all(d.q2_spectrum[10:] == 0)


def test_coupled_draw_interlaces():
    model = spiked_to(SeparableModel.null(60, 60), [4.0], [3.0])
    for rep in range(10):
        d = draw(model, seed=0, rep=rep, vectors=False, with_unspiked=True)
        assert interlacing_ok(d, model.r + model.s).all()


def test_interlacing_needs_coupled_spectrum():
    d = draw(SeparableModel.null(10, 10), seed=0, vectors=False)
    with pytest.raises(ValueError):
        interlacing_ok(d, 1)


def test_overlap_of_sample_vector_with_itself():
    d = draw(spiked_to(SeparableModel.null(30, 40), [3.0]), seed=0)
    assert overlap(d, d.left_vectors[:, 2], 3) == pytest.approx(1.0)
    assert overlap(d, d.right_vectors[:, 0], 1, side="right") == pytest.approx(1.0)


def test_overlap_errors():
    model = spiked_to(SeparableModel.null(30, 40), [3.0])
    d = draw(model, seed=0)
    with pytest.raises(IndexOutOfRange):
        overlap(d, 1, 31, model=model)
    with pytest.raises(ValueError):
        overlap(d, np.ones(30), 1)
    with pytest.raises(MissingVectors):
        overlap(draw(model, seed=0, vectors=False), 1, 1, model=model)


def test_bulk_overlap_is_order_one_over_p():
    p = 200
    model = SeparableModel.null(p, 300)
    d = draw(model, seed=0)
    mean = np.mean([overlap(d, 7, k, model=model) for k in range(1, p + 1)])
    assert mean == pytest.approx(1 / p, rel=1e-8)


def test_from_matrix_and_reader(tmp_path):
    y = rng_for(0, 0).standard_normal((5, 7))
    path = tmp_path / "y.csv"
    np.savetxt(path, y, delimiter=",")
    loaded = sampling.read_matrix(str(path))
    np.testing.assert_allclose(loaded, y)
    s = from_matrix(loaded)
    np.testing.assert_allclose(s.eigenvalues, np.linalg.svd(y, compute_uv=False) ** 2)


def test_non_identity_spectra_are_applied():
    a = PopulationSpectrum.from_values([4.0] + [1.0] * 99)
    model = SeparableModel(a, PopulationSpectrum.identity(2000))
    d = draw(model, seed=0, vectors=False, top_k=1)
    # with n >> p the sample covariance approaches A
    assert d.eigenvalues[0] == pytest.approx(4.0, rel=0.1)
