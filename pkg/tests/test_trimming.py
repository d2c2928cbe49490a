"""Level-set trimming: composition, classification and the expression parser."""
import numpy as np
import pytest

from trimshell import benchmarks as B
from trimshell.spline import KnotVector, SplineSurface, TensorBasis
from trimshell.trimming import (
    CUT,
    INSIDE,
    OUTSIDE,
    ExpressionError,
    LevelSetFunction,
    TrimmedPatch,
    classify_span,
    composite_levelset,
    disk_levelset,
    expression_levelset,
    linear_levelset,
    parse_expression,
    span_bounds,
)


def _square_patch(n=8, lo=-0.875, hi=0.875, p=3, levelsets=()):
    kv = KnotVector.uniform(lo, hi, n, p)
    basis = TensorBasis(kv, kv)
    g = np.linspace(lo, hi, basis.shape[0])
    R, S = np.meshgrid(g, g, indexing="ij")
    ctrl = np.stack([R, S, 0 * R], axis=-1)
    return TrimmedPatch(SplineSurface(basis, ctrl), list(levelsets))


def test_single_levelset_passes_through(rng):
    ls = disk_levelset(0.5)
    patch = _square_patch(levelsets=[ls])
    xi = rng.uniform(-0.8, 0.8, (50, 2))
    val, idx = composite_levelset(patch, xi)
    assert np.array_equal(val, ls(xi)) and np.all(idx == 0)


def test_flat_shell_composite_takes_minimum():
    phi1 = linear_levelset(0, 1, 0, "phi1")   # s
    phi3 = linear_levelset(1, 0, 0, "phi3")   # r
    patch = _square_patch(lo=-0.5, hi=1.5, levelsets=[phi1, phi3])
    val, idx = composite_levelset(patch, np.array([0.5, 0.2]))
    assert val == pytest.approx(0.2) and patch.levelsets[idx].name == "phi1"


def test_point_outside_one_curve_is_negative():
    patch = _square_patch(lo=-0.5, hi=1.5, levelsets=[linear_levelset(0, 1, 0), linear_levelset(1, 0, 0)])
    assert composite_levelset(patch, np.array([-0.1, 0.5]))[0] < 0


def test_constant_levelsets_classify_inside_and_outside():
    patch = _square_patch(n=2, levelsets=[LevelSetFunction(lambda r, s: 1.0 + 0 * r)])
    span = (patch.basis.kv_u.spans()[0],) * 2
    assert classify_span(patch, span) == INSIDE
    # a patch with phi = -1 would be rejected as empty, so swap the level set afterwards
    patch.levelsets = [LevelSetFunction(lambda r, s: -1.0 + 0 * r)]
    assert classify_span(patch, span) == OUTSIDE


def _dense_class(patch, span, m):
    r0, r1, s0, s1 = span_bounds(patch, span)
    R, S = np.meshgrid(np.linspace(r0, r1, m), np.linspace(s0, s1, m), indexing="ij")
    phi = composite_levelset(patch, np.stack([R, S], axis=-1))[0]
    if np.all(phi > 0):
        return INSIDE
    if np.all(phi < 0):
        return OUTSIDE
    return CUT


def test_circle_classification_matches_dense_sampling():
    patch = _square_patch(n=8, levelsets=[disk_levelset(0.7123)])
    su = patch.basis.kv_u.spans()
    labels = {}
    for i in su:
        for j in su:
            labels[(i, j)] = classify_span(patch, (i, j))
            assert labels[(i, j)] == _dense_class(patch, (i, j), 101)
    corners = [(su[0], su[0]), (su[0], su[-1]), (su[-1], su[0]), (su[-1], su[-1])]
    assert all(labels[c] == OUTSIDE for c in corners)
    assert labels[(su[3], su[3])] == INSIDE and labels[(su[4], su[4])] == INSIDE
    assert sum(v == CUT for v in labels.values()) > 0


@pytest.mark.parametrize("name,n,p", [("scordelis_lo", 6, 3), ("flat_shell", 4, 3), ("circular", 4, 3)])
def test_classification_never_contradicts_dense_samples(name, n, p):
    patch = B.get_benchmark(name).instance(n, p).problem.patch
    su, sv = patch.basis.kv_u.spans(), patch.basis.kv_v.spans()
    for i in su:
        for j in sv:
            c = classify_span(patch, (i, j), p)
            if c == CUT:
                continue
            r0, r1, s0, s1 = span_bounds(patch, (i, j))
            R, S = np.meshgrid(np.linspace(r0, r1, 501), np.linspace(s0, s1, 501), indexing="ij")
            phi = composite_levelset(patch, np.stack([R, S], axis=-1))[0]
            assert np.all(phi >= 0) if c == INSIDE else np.all(phi <= 0)


def test_min_composition_preserves_lipschitz_one(rng):
    ls = [disk_levelset(0.6, (0.1, -0.1)), linear_levelset(0.6, 0.8, 0.2), linear_levelset(-1.0, 0.0, 0.7)]
    patch = _square_patch(lo=-1, hi=1, levelsets=ls)
    a = rng.uniform(-1, 1, (2000, 2))
    b = rng.uniform(-1, 1, (2000, 2))
    da = composite_levelset(patch, a)[0] - composite_levelset(patch, b)[0]
    assert np.all(np.abs(da) <= np.linalg.norm(a - b, axis=1) + 1e-14)


def test_expression_parser_operators_and_functions():
    f = parse_expression("0.7123 - norm(r, s) + sin(pi*r)^2 - abs(s)/2 + sqrt(4) - cos(0)")
    r, s = 0.3, -0.4
    exact = 0.7123 - 0.5 + np.sin(np.pi * r) ** 2 - 0.2 + 2.0 - 1.0
    assert f(r, s) == pytest.approx(exact, abs=1e-15)
    ls = expression_levelset("1 - r")
    assert ls(np.array([0.25, 0.0])) == pytest.approx(0.75)
    assert np.allclose(ls.gradient(np.array([0.3, 0.2])), [-1.0, 0.0], atol=1e-8)


@pytest.mark.parametrize("bad", ["r +", "exp(r)", "q * 2", "__import__('os')", "r.real"])
def test_expression_parser_rejects_unsupported_input(bad):
    with pytest.raises(ExpressionError):
        parse_expression(bad)


def test_empty_visible_domain_rejected():
    with pytest.raises(ValueError):
        _square_patch(levelsets=[LevelSetFunction(lambda r, s: -1.0 + 0 * r)])
