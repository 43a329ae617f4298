import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilinear_decomp.errors import DimensionError
from bilinear_decomp.model import (
    BilinearLayer,
    BilinearModel,
    fold_bias,
    forward,
    init_model,
    interaction_matrix_for_neuron,
    reduce,
    symmetrize,
)


def random_layer(rng, d_in, d_hidden, d_out=None):
    P = None if d_out is None else rng.standard_normal((d_out, d_hidden))
    return BilinearLayer(rng.standard_normal((d_hidden, d_in)), rng.standard_normal((d_hidden, d_in)), P)


class TestForward:
    def test_identity_squares(self):
        eye = np.eye(2)
        model = BilinearModel(eye, [BilinearLayer(eye, eye)], eye)
        np.testing.assert_array_equal(forward(model, [2.0, 3.0]), [4.0, 9.0])

    def test_zero_input(self, rng):
        model = init_model(5, 4, 3, n_layers=2, seed=1)
        assert not forward(model, np.zeros(5)).any()

    def test_quadratic_form_per_class(self, rng):
        model = init_model(6, 5, 4, seed=2)
        x = rng.standard_normal(6)
        xe = model.embed @ x
        expected = [xe @ reduce(model.layers[0], model.unembed[c]).q @ xe for c in range(4)]
        np.testing.assert_allclose(forward(model, x), expected, rtol=1e-10)

    def test_batch_matches_rows(self, rng):
        model = init_model(4, 3, 2, n_layers=2, seed=3)
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(forward(model, x), [forward(model, r) for r in x])

    def test_input_dimension_checked(self):
        with pytest.raises(DimensionError):
            forward(init_model(4, 3, 2), np.ones(5))

    def test_chain_checked(self, rng):
        with pytest.raises(DimensionError):
            BilinearModel(np.ones((3, 4)), [random_layer(rng, 2, 3)], np.ones((2, 3)))
        with pytest.raises(DimensionError):
            BilinearModel(np.ones((3, 4)), [random_layer(rng, 3, 3)], np.ones((2, 5)))

    def test_projection_sets_output_dim(self, rng):
        layer = random_layer(rng, 3, 7, d_out=3)
        assert (layer.d_in, layer.d_hidden, layer.d_out) == (3, 7, 3)
        model = BilinearModel(np.eye(3), [layer, layer], np.eye(3))
        assert forward(model, np.ones(3)).shape == (3,)


class TestFoldBias:
    def test_example(self):
        folded = fold_bias([[1.0, 2.0]], [3.0])
        np.testing.assert_array_equal(folded, [[1.0, 2.0, 3.0]])
        x1, x2 = 0.5, -2.0
        assert folded @ [x1, x2, 1.0] == pytest.approx(x1 + 2 * x2 + 3)

    def test_zero_bias(self, rng):
        w = rng.standard_normal((3, 2))
        folded = fold_bias(w, np.zeros(3))
        x = rng.standard_normal(2)
        np.testing.assert_array_equal(folded[:, -1], 0.0)
        np.testing.assert_allclose(folded @ np.append(x, 1.0), w @ x)

    def test_random_equivalence(self, rng):
        w, b, x = rng.standard_normal((4, 3)), rng.standard_normal(4), rng.standard_normal(3)
        np.testing.assert_allclose(fold_bias(w, b) @ np.append(x, 1.0), w @ x + b, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            fold_bias(np.ones((2, 2)), np.ones(3))


class TestNeuronInteraction:
    def test_example(self):
        layer = BilinearLayer([[1.0, 2.0]], [[3.0, 4.0]])
        np.testing.assert_array_equal(interaction_matrix_for_neuron(layer, 0).q, [[3.0, 5.0], [5.0, 8.0]])

    def test_equal_vectors_rank_one(self):
        w = np.array([[1.0, -2.0, 0.5]])
        q = interaction_matrix_for_neuron(BilinearLayer(w, w), 0).q
        np.testing.assert_allclose(q, np.outer(w[0], w[0]))

    def test_scalar_product(self, rng):
        layer = random_layer(rng, 5, 3)
        x = rng.standard_normal(5)
        q = interaction_matrix_for_neuron(layer, 1).q
        assert x @ q @ x == pytest.approx((layer.W[1] @ x) * (layer.V[1] @ x), abs=1e-12)

    def test_out_of_range(self, rng):
        with pytest.raises(IndexError):
            interaction_matrix_for_neuron(random_layer(rng, 2, 2), 2)

    def test_projection_rejected(self, rng):
        with pytest.raises(DimensionError):
            interaction_matrix_for_neuron(random_layer(rng, 2, 3, d_out=2), 0)


class TestReduce:
    def test_basis_vector_is_neuron(self, rng):
        layer = random_layer(rng, 4, 3)
        np.testing.assert_allclose(reduce(layer, np.eye(3)[2]).q, interaction_matrix_for_neuron(layer, 2).q)

    def test_zero_direction(self, rng):
        assert not reduce(random_layer(rng, 4, 3), np.zeros(3)).q.any()

    def test_wrong_length(self, rng):
        with pytest.raises(DimensionError):
            reduce(random_layer(rng, 4, 3), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.one_of(st.none(), st.integers(1, 6)), st.integers(0, 2**32 - 1))
def test_reduce_matches_forward(d_in, d_hidden, d_out, seed):
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, d_in, d_hidden, d_out)
    u = rng.standard_normal(layer.d_out)
    x = rng.standard_normal(d_in)
    q = reduce(layer, u).q
    np.testing.assert_allclose(q, q.T, atol=1e-10)
    expected = u @ layer(x)
    assert x @ q @ x == pytest.approx(expected, rel=1e-10, abs=1e-10)


class TestSymmetrize:
    def test_example(self):
        np.testing.assert_array_equal(symmetrize([[1.0, 2.0], [3.0, 4.0]]), [[1.0, 2.5], [2.5, 4.0]])

    def test_fixed_point(self):
        s = np.array([[2.0, -1.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(symmetrize(s), s)

    def test_quadratic_form_preserved(self, rng):
        m, x = rng.standard_normal((6, 6)), rng.standard_normal(6)
        assert x @ symmetrize(m) @ x == pytest.approx(x @ m @ x, abs=1e-12)

    def test_non_square(self):
        with pytest.raises(DimensionError):
            symmetrize(np.ones((2, 3)))


def test_init_scale_and_shapes():
    model = init_model(400, 300, 10, seed=0)
    assert model.embed.shape == (300, 400)
    assert model.layers[0].P is None
    assert np.std(model.embed) == pytest.approx(1 / np.sqrt(400), rel=0.02)
    assert model.unembed.shape == (10, 300)


def test_copy_is_deep():
    model = init_model(3, 2, 2, seed=0)
    clone = model.copy()
    clone.layers[0].W[0, 0] += 1.0
    assert clone.layers[0].W[0, 0] != model.layers[0].W[0, 0]
