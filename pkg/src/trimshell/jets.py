"""Truncated bivariate Taylor polynomials ("jets") in the parameter coordinates.

A jet of degree ``d`` stores the Taylor coefficients ``c[a, b] = D^(a,b) f / (a! b!)``
of a function of ``(u, v)`` around a point, for all ``a + b <= d``, in the trailing
axis of an array.  Coefficients are ordered by total degree; within one total
degree ``t`` the exponent of ``u`` runs from ``t`` down to ``0``.  Because of that
ordering, truncating to a lower degree is a plain slice.

Surface differential operators of any order are obtained by repeated
application of the parametric chain rule on jets, which keeps every derivative
exact (no differencing) and lets the same code serve basis functions and
solution fields.
"""
from functools import lru_cache
from math import comb, factorial

import numpy as np


def ncoef(d: int) -> int:
    """Number of coefficients of a jet of degree ``d``."""
    return (d + 1) * (d + 2) // 2


@lru_cache(maxsize=None)
def monomials(d: int) -> tuple:
    return tuple((t - b, b) for t in range(d + 1) for b in range(t + 1))


@lru_cache(maxsize=None)
def index(d: int) -> dict:
    return {m: i for i, m in enumerate(monomials(d))}


@lru_cache(maxsize=None)
def _mul_table(d: int) -> np.ndarray:
    nc = ncoef(d)
    idx = index(d)
    table = np.zeros((nc * nc, nc))
    for i, (a1, b1) in enumerate(monomials(d)):
        for j, (a2, b2) in enumerate(monomials(d)):
            if a1 + a2 + b1 + b2 <= d:
                table[i * nc + j, idx[(a1 + a2, b1 + b2)]] = 1.0
    return table


@lru_cache(maxsize=None)
def _deriv_map(d: int, direction: int):
    """Source indices and factors for the derivative of a degree ``d`` jet."""
    src = []
    fac = []
    idx = index(d)
    for a, b in monomials(d - 1):
        if direction == 0:
            src.append(idx[(a + 1, b)])
            fac.append(a + 1.0)
        else:
            src.append(idx[(a, b + 1)])
            fac.append(b + 1.0)
    return np.array(src, dtype=int), np.array(fac)


def degree_of(arr: np.ndarray) -> int:
    nc = arr.shape[-1]
    d = 0
    while ncoef(d) < nc:
        d += 1
    if ncoef(d) != nc:
        raise ValueError(f"trailing axis {nc} is not a jet size")
    return d


def truncate(a: np.ndarray, d: int) -> np.ndarray:
    return a[..., : ncoef(d)]


def constant(a: np.ndarray) -> np.ndarray:
    """Value (degree-0 coefficient) of a jet."""
    return a[..., 0]


def from_derivatives(ders: np.ndarray, d: int) -> np.ndarray:
    """Build jets from partial derivatives.

    ``ders[..., a, b]`` holds ``D^(a,b) f`` for ``a + b <= d`` (the two trailing
    axes have length at least ``d + 1``).
    """
    out = np.empty(ders.shape[:-2] + (ncoef(d),))
    for i, (a, b) in enumerate(monomials(d)):
        out[..., i] = ders[..., a, b] / (factorial(a) * factorial(b))
    return out


def to_derivatives(jet: np.ndarray) -> np.ndarray:
    d = degree_of(jet)
    out = np.zeros(jet.shape[:-1] + (d + 1, d + 1))
    for i, (a, b) in enumerate(monomials(d)):
        out[..., a, b] = jet[..., i] * factorial(a) * factorial(b)
    return out


def mul(a: np.ndarray, b: np.ndarray, d: int | None = None) -> np.ndarray:
    """Truncated product of two broadcast-compatible jet arrays."""
    if d is None:
        d = min(degree_of(a), degree_of(b))
    nc = ncoef(d)
    a = a[..., :nc]
    b = b[..., :nc]
    if d == 0:
        return a * b
    outer = a[..., :, None] * b[..., None, :]
    shape = outer.shape[:-2]
    return (outer.reshape(shape + (nc * nc,)) @ _mul_table(d)).reshape(shape + (nc,))


def deriv(a: np.ndarray, direction: int) -> np.ndarray:
    """Parametric derivative; the result has one degree less."""
    d = degree_of(a)
    if d == 0:
        raise ValueError("cannot differentiate a degree-0 jet")
    src, fac = _deriv_map(d, direction)
    return a[..., src] * fac


def _series(x: np.ndarray, coeffs, d: int) -> np.ndarray:
    # sum_k coeffs[k] x^k for x without constant term
    out = np.zeros(x.shape)
    out[..., 0] = coeffs[0]
    power = None
    for k in range(1, d + 1):
        power = x if power is None else mul(power, x, d)
        out = out + coeffs[k] * power
    return out


def power(a: np.ndarray, alpha: float, d: int | None = None) -> np.ndarray:
    """Real power ``a**alpha`` of a jet with nonzero constant term."""
    if d is None:
        d = degree_of(a)
    a = truncate(a, d)
    a0 = a[..., :1]
    x = a / a0
    x[..., 0] = 0.0
    coeffs = [1.0]
    c = 1.0
    for k in range(1, d + 1):
        c = c * (alpha - k + 1) / k
        coeffs.append(c)
    return _series(x, coeffs, d) * a0**alpha


def reciprocal(a: np.ndarray, d: int | None = None) -> np.ndarray:
    return power(a, -1.0, d)


def surface_derivative(field: np.ndarray, jplus: np.ndarray) -> np.ndarray:
    """Directional surface gradient of a jet field.

    Parameters
    ----------
    field : array (N, *extra, nc_d)
        Jet of degree ``d >= 1`` of any tensor-valued field.
    jplus : array (N, 2, 3, nc_e)
        Jet of the pseudo-inverse of the surface Jacobian with ``e >= d - 1``.

    Returns
    -------
    array (N, *extra, 3, nc_{d-1})
        ``out[..., j, :]`` is the derivative in the Cartesian direction ``j``.
    """
    d = degree_of(field)
    extra = field.ndim - 2
    out = None
    for alpha in range(2):
        df = deriv(field, alpha)[..., None, :]
        jp = jplus[:, alpha].reshape((jplus.shape[0],) + (1,) * extra + jplus.shape[2:])
        term = mul(df, jp, d - 1)
        out = term if out is None else out + term
    return out


def binomial(n: int, k: int) -> int:
    return comb(n, k)
