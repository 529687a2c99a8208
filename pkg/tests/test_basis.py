"""Shared polynomial basis values and analytic derivatives."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from xvareg import BasisSpec, basis_derivatives, eval_basis
from xvareg.errors import ConfigurationError


def test_monomials_at_two():
    assert np.array_equal(eval_basis(BasisSpec((2,)), 2.0), [1.0, 2.0, 4.0])


@pytest.mark.parametrize("family", ["monomial", "chebyshev"])
def test_neutral_point(family):
    v = eval_basis(BasisSpec((4,), family=family), 0.0)
    if family == "monomial":
        assert np.array_equal(v, [1, 0, 0, 0, 0])
    else:
        # T_n(0) = cos(n pi / 2)
        assert np.allclose(v, np.cos(np.arange(5) * np.pi / 2), atol=1e-15)


def test_chebyshev_degree_two_at_half():
    x = 0.5
    t2 = 2 * x * x - 1
    assert np.allclose(eval_basis(BasisSpec((2,), family="chebyshev"), x), [1.0, x, t2])
    assert t2 == -0.5


def test_chebyshev_matches_trig_identity():
    z = np.linspace(-1, 1, 11)
    v = eval_basis(BasisSpec((6,), family="chebyshev"), z)
    assert np.allclose(v, np.cos(np.arange(7)[None, :] * np.arccos(z)[:, None]), atol=1e-13)


def test_monomial_derivatives_at_three():
    spec = BasisSpec((2,))
    assert np.array_equal(basis_derivatives(spec, 3.0, 1)[:, 0], [0.0, 1.0, 6.0])
    for x in (-2.0, 0.0, 7.5):
        assert np.array_equal(basis_derivatives(spec, x, 2)[:, 0, 0], [0.0, 0.0, 2.0])


def test_normalisation_applies_chain_factor():
    spec = BasisSpec((2,), center=(1.0,), scale=(2.0,))
    assert np.allclose(eval_basis(spec, 5.0), [1.0, 2.0, 4.0])
    assert np.allclose(basis_derivatives(spec, 5.0, 1)[:, 0], [0.0, 0.5, 2.0])


def test_ordering_and_size():
    spec = BasisSpec((2, 2), max_total_degree=2)
    assert spec.exponents[0] == (0, 0)
    assert spec.size == 6
    assert [sum(e) for e in spec.exponents] == sorted(sum(e) for e in spec.exponents)
    assert BasisSpec((2, 2), cross_terms=False).size == 5
    assert BasisSpec((2, 3), max_total_degree=3).size == 9


@pytest.mark.parametrize("kw", [{"max_degree": (-1,)}, {"max_degree": (2,), "family": "x"},
                                {"max_degree": (2,), "scale": (0.0,)},
                                {"max_degree": (2, 2), "center": (1.0,)}])
def test_bad_specs(kw):
    with pytest.raises(ConfigurationError):
        BasisSpec(**kw)


def test_state_dimension_checked():
    with pytest.raises(ConfigurationError):
        eval_basis(BasisSpec((2, 2)), np.zeros((4, 3)))


states2 = arrays(np.float64, (6, 2), elements=st.floats(-1.5, 1.5))


@settings(max_examples=40, deadline=None)
@given(x=states2, family=st.sampled_from(["monomial", "chebyshev"]))
def test_gradient_matches_central_difference(x, family):
    spec = BasisSpec((3, 3), family=family, max_total_degree=4)
    h = 1e-6
    grad = basis_derivatives(spec, x, 1)
    for b in range(2):
        e = np.zeros(2)
        e[b] = h
        fd = (eval_basis(spec, x + e) - eval_basis(spec, x - e)) / (2 * h)
        assert np.max(np.abs(fd - grad[..., b])) < 1e-8


@settings(max_examples=40, deadline=None)
@given(x=states2, family=st.sampled_from(["monomial", "chebyshev"]))
def test_hessian_matches_difference_of_gradients(x, family):
    spec = BasisSpec((3, 3), family=family, max_total_degree=4)
    h = 1e-6
    hess = basis_derivatives(spec, x, 2)
    for b in range(2):
        e = np.zeros(2)
        e[b] = h
        fd = (basis_derivatives(spec, x + e, 1) - basis_derivatives(spec, x - e, 1)) / (2 * h)
        assert np.max(np.abs(fd - hess[..., b, :])) < 1e-7
    assert np.array_equal(hess, np.swapaxes(hess, -1, -2))


def test_roundtrip_dict():
    spec = BasisSpec((2, 3), family="chebyshev", max_total_degree=3, center=(1.0, 2.0),
                     scale=(3.0, 4.0))
    assert BasisSpec.from_dict(spec.as_dict()) == spec
