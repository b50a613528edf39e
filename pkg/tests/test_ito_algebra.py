from itertools import product

import numpy as np
import pytest

from qsde.errors import DimensionError
from qsde.ito_algebra import (
    ItoAlgebraBasis,
    ItoElement,
    canonical_element,
    check_closure,
    death_element,
    flat,
    hp_product,
    mean,
    multiplication_table,
    poisson_element,
    quantum_basis,
    wiener_element,
    zero_element,
)

DT = canonical_element("-", "+", 1.0)
CREATE = canonical_element("•", "+", [1.0])
ANNIHILATE = canonical_element("-", "•", [1.0])
EXCHANGE = canonical_element("•", "•", [[1.0]])

# left * right for the single-channel quantum table; everything else vanishes
NONZERO_PRODUCTS = {
    ("dA-", "dA+"): DT,
    ("dA-", "dN"): ANNIHILATE,
    ("dN", "dA+"): CREATE,
    ("dN", "dN"): EXCHANGE,
}


def test_canonical_table_is_exact():
    named = {"dt": DT, "dA+": CREATE, "dA-": ANNIHILATE, "dN": EXCHANGE}
    for (ln, left), (rn, right) in product(named.items(), repeat=2):
        expected = NONZERO_PRODUCTS.get((ln, rn), zero_element(1))
        assert hp_product(left, right) == expected, (ln, rn)


def test_wiener_square_is_dt():
    dQ = wiener_element(0.0, 1.0)
    assert hp_product(dQ, dQ) == death_element(1)


def test_poisson_square():
    dP = poisson_element(0.0, 1.0)
    assert hp_product(dP, dP) == dP + death_element(1)


def test_wiener_with_drift():
    a = wiener_element(0.3, 2.0)
    sq = hp_product(a, a)
    assert sq == ItoElement(1, scalar=4.0)
    assert mean(a) == 0.3


def test_death_annihilates():
    basis = quantum_basis(2)
    d = death_element(2)
    for e in basis.elements:
        assert hp_product(d, e).is_zero()
        assert hp_product(e, d).is_zero()


def test_flat_is_involution(rng):
    k = 3
    a = ItoElement(k, scalar=1 + 2j, row=rng.standard_normal(k) + 1j * rng.standard_normal(k),
                   col=rng.standard_normal(k), block=rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k)))
    assert flat(flat(a)) == a
    assert flat(CREATE) == ANNIHILATE


def test_flat_reverses_products(rng):
    k = 2

    def rand():
        return ItoElement(k, scalar=rng.standard_normal(), row=rng.standard_normal(k) + 1j * rng.standard_normal(k),
                          col=rng.standard_normal(k) + 1j * rng.standard_normal(k),
                          block=rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k)))

    a, b = rand(), rand()
    assert flat(hp_product(a, b)).allclose(hp_product(flat(b), flat(a)))


def test_product_is_associative(rng):
    basis = quantum_basis(2)
    coeffs = rng.standard_normal((3, len(basis)))
    a, b, c = (ItoElement.from_vector(2, basis.matrix() @ w) for w in coeffs)
    assert hp_product(hp_product(a, b), c).allclose(hp_product(a, hp_product(b, c)), atol=1e-10)


def test_positivity_of_squares(rng):
    k = 2
    a = ItoElement(k, scalar=0.0, row=rng.standard_normal(k), col=rng.standard_normal(k),
                   block=rng.standard_normal((k, k)))
    assert mean(hp_product(flat(a), a)).real >= 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        hp_product(ItoElement(1), ItoElement(2))
    with pytest.raises(DimensionError):
        ItoElement(2, row=[1.0])
    with pytest.raises(DimensionError):
        canonical_element("+", "-", 1.0)


def test_canonical_accepts_ascii_dot():
    assert canonical_element(".", ".", [[2.0]]) == canonical_element("•", "•", [[2.0]])


def test_vector_coordinates_round_trip():
    a = ItoElement(2, scalar=1j, row=[1, 2], col=[3, 4], block=[[5, 6], [7, 8]])
    assert ItoElement.from_vector(2, a.to_vector()) == a
    assert a.to_vector().shape == (1 + 2 + 2 + 4,)


@pytest.mark.parametrize("k_dim", [1, 2, 3])
def test_quantum_basis_closed(k_dim):
    report = check_closure(quantum_basis(k_dim))
    assert report.is_closed
    assert report.contains_death
    assert report.worst_residual <= 1e-12


def test_wiener_span_closed():
    basis = ItoAlgebraBasis([death_element(1), wiener_element(0.0, 1.0)], ["dt", "dQ"])
    report = check_closure(basis)
    assert report.is_closed
    np.testing.assert_allclose(report.structure_constants[1, 1], [1.0, 0.0], atol=1e-12)


def test_poisson_span_closed():
    basis = ItoAlgebraBasis([death_element(1), poisson_element(0.0, 1.0)], ["dt", "dP"])
    report = check_closure(basis)
    assert report.is_closed
    np.testing.assert_allclose(report.structure_constants[1, 1], [1.0, 1.0], atol=1e-12)


def test_creation_alone_is_not_closed():
    basis = ItoAlgebraBasis([CREATE, ANNIHILATE], ["dA+", "dA-"])
    report = check_closure(basis)
    assert not report.is_closed
    assert not report.contains_death
    assert report.residuals[("dA-", "dA+")] > 0.5


def test_multiplication_table_text():
    table = multiplication_table(quantum_basis(1))
    assert table[("dA-[1]", "dA+[1]")] == "dt"
    assert table[("dN[1,1]", "dA+[1]")] == "dA+[1]"
    assert table[("dA+[1]", "dA-[1]")] == "0"
    assert table[("dt", "dt")] == "0"


def test_basis_validation():
    with pytest.raises(DimensionError):
        ItoAlgebraBasis([])
    with pytest.raises(DimensionError):
        ItoAlgebraBasis([ItoElement(1), ItoElement(2)])
    with pytest.raises(DimensionError):
        ItoAlgebraBasis([ItoElement(1)], ["a", "b"])


def test_report_as_dict_is_plain():
    report = check_closure(quantum_basis(1)).as_dict()
    assert report["is_closed"] is True
    assert len(report["labels"]) == 4
    assert np.asarray(report["structure_constants"]).shape == (4, 4, 4, 2)
