"""Extended B-splines: classification, de Boor-Fix extrapolation weights and
the extension matrix that maps the stable basis onto the full basis."""
import csv
from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .spline import KnotVector, TensorBasis, eval_basis

STABLE = "stable"
DEGENERATE = "degenerate"
EXTERIOR = "exterior"


class UnsolvableConfigurationError(RuntimeError):
    """No stable functions or no all-stable knot span to extrapolate from."""


@dataclass
class BasisClassification:
    """Per-function class, relative visible support and donor span.

    ``labels`` and ``fraction`` are indexed by the global function index
    ``A = i * n2 + j``.  ``donor`` maps degenerate functions to the knot-span
    index pair whose stable functions they are extrapolated from.
    """

    labels: np.ndarray
    fraction: np.ndarray
    donor: dict
    alpha: float

    @property
    def stable(self) -> np.ndarray:
        return np.nonzero(self.labels == STABLE)[0]

    @property
    def degenerate(self) -> np.ndarray:
        return np.nonzero(self.labels == DEGENERATE)[0]

    @property
    def exterior(self) -> np.ndarray:
        return np.nonzero(self.labels == EXTERIOR)[0]

    def dump_csv(self, path) -> None:
        """Write function index, class and donor span as CSV."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["function", "class", "fraction", "donor_i", "donor_j"])
            for A, (lab, fr) in enumerate(zip(self.labels, self.fraction)):
                d = self.donor.get(A, ("", ""))
                w.writerow([A, lab, repr(float(fr)), d[0], d[1]])


def visible_span_areas(basis: TensorBasis, mesh) -> np.ndarray:
    """Visible parameter area per knot span, indexed by knot indices ``(s1, s2)``."""
    n1 = len(basis.kv_u.knots) - 1
    n2 = len(basis.kv_v.knots) - 1
    areas = np.zeros((n1, n2))
    np.add.at(areas, (mesh.spans[:, 0], mesh.spans[:, 1]), mesh.weights)
    return areas


def _support_sums(arr: np.ndarray, p1: int, p2: int, m1: int, m2: int) -> np.ndarray:
    """Sum of ``arr`` over the ``(p1+1) x (p2+1)`` span window of each function."""
    c = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1))
    c[1:, 1:] = arr.cumsum(0).cumsum(1)
    i = np.arange(m1)[:, None]
    j = np.arange(m2)[None, :]
    return c[i + p1 + 1, j + p2 + 1] - c[i, j + p2 + 1] - c[i + p1 + 1, j] + c[i, j]


def classify_functions(basis: TensorBasis, mesh, alpha: float = 0.5) -> BasisClassification:
    """Label functions stable, degenerate or exterior by relative visible support.

    The relative support is the visible parameter area of the support (summed
    from the integration-mesh weights) divided by the full support area.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    p1, p2 = basis.degrees
    m1, m2 = basis.shape
    ku, kv = basis.kv_u.knots, basis.kv_v.knots
    vis = _support_sums(visible_span_areas(basis, mesh), p1, p2, m1, m2)
    full = np.outer(ku[p1 + 1 : p1 + 1 + m1] - ku[:m1], kv[p2 + 1 : p2 + 1 + m2] - kv[:m2])
    frac = vis / full
    labels = np.full((m1, m2), DEGENERATE, dtype=object)
    labels[frac >= alpha * (1 - 1e-12)] = STABLE
    labels[vis <= 1e-14 * full] = EXTERIOR
    labels = labels.reshape(-1)
    if not np.any(labels == STABLE):
        raise UnsolvableConfigurationError("no stable basis functions")
    donor = {}
    deg = np.nonzero(labels == DEGENERATE)[0]
    if len(deg):
        stable_grid = (labels == STABLE).reshape(m1, m2).astype(float)
        # all-stable spans: every active function stable
        spans_u = basis.kv_u.spans()
        spans_v = basis.kv_v.spans()
        S1, S2 = np.meshgrid(spans_u, spans_v, indexing="ij")
        c = np.zeros((m1 + 1, m2 + 1))
        c[1:, 1:] = stable_grid.cumsum(0).cumsum(1)
        lo1, lo2 = S1 - p1, S2 - p2
        tot = c[S1 + 1, S2 + 1] - c[lo1, S2 + 1] - c[S1 + 1, lo2] + c[lo1, lo2]
        good = tot == (p1 + 1) * (p2 + 1)
        cand = np.stack([S1[good], S2[good]], axis=1)
        if len(cand) == 0:
            raise UnsolvableConfigurationError("no knot span with only stable functions")
        order = np.lexsort((cand[:, 1], cand[:, 0]))
        cand = cand[order]
        for A in deg:
            i1, i2 = divmod(int(A), m2)
            d1 = np.maximum(0, np.maximum(i1 - cand[:, 0], cand[:, 0] - (i1 + p1)))
            d2 = np.maximum(0, np.maximum(i2 - cand[:, 1], cand[:, 1] - (i2 + p2)))
            # Chebyshev distance first; among ties prefer the Euclidean-closest
            # span (no needless extrapolation in a direction where the donor
            # already overlaps the support), then the lower index (``cand``
            # is lexicographically sorted and lexsort is stable)
            k = int(np.lexsort((d1**2 + d2**2, np.maximum(d1, d2)))[0])
            donor[int(A)] = (int(cand[k, 0]), int(cand[k, 1]))
    return BasisClassification(labels=labels, fraction=frac.reshape(-1), donor=donor, alpha=alpha)


def max_feasible_alpha(basis: TensorBasis, mesh) -> float:
    """Largest threshold for which some knot span has only stable functions.

    For each span the smallest relative visible support among its active
    functions bounds the thresholds that make the span all-stable; the
    maximum over spans with visible area is returned.
    """
    p1, p2 = basis.degrees
    m1, m2 = basis.shape
    ku, kv = basis.kv_u.knots, basis.kv_v.knots
    areas = visible_span_areas(basis, mesh)
    frac = _support_sums(areas, p1, p2, m1, m2) / np.outer(
        ku[p1 + 1 : p1 + 1 + m1] - ku[:m1], kv[p2 + 1 : p2 + 1 + m2] - kv[:m2]
    )
    best = 0.0
    for s1 in basis.kv_u.spans():
        for s2 in basis.kv_v.spans():
            if areas[s1, s2] <= 0:
                continue
            best = max(best, float(frac[s1 - p1 : s1 + 1, s2 - p2 : s2 + 1].min()))
    return best


def power_coeffs(kv: KnotVector, s: int, frame: int | None = None) -> np.ndarray:
    """Power-basis coefficients of the polynomial pieces on knot span ``s``.

    Returns ``A`` of shape ``(p+1, p+1)`` with ``sum_c A[c, i] r^c`` equal to
    the piece of ``N_{s-p+i}`` on span ``s``, written in the local coordinate
    ``r = (u - u_f) / (u_{f+1} - u_f)`` of span ``f = frame`` (default ``s``).
    Outside span ``s`` this is the polynomial extension of the piece.
    """
    p = kv.degree
    f = s if frame is None else frame
    u0 = kv.knots[f]
    h = kv.knots[f + 1] - u0
    if h <= 0:
        raise ValueError("empty knot span")
    ders = eval_basis(kv, np.array([u0]), p, span=np.array([s]))[0]  # (p+1, p+1)
    scale = np.array([h**c / factorial(c) for c in range(p + 1)])
    return ders * scale[:, None]


def newton_poly_coeffs(knots_local) -> np.ndarray:
    """Coefficients ``beta_0..beta_p`` of ``prod_d (r - r_d)`` in powers of ``r``."""
    coeffs = np.array([1.0])
    for rd in knots_local:
        coeffs = np.concatenate([[0.0], coeffs]) - rd * np.concatenate([coeffs, [0.0]])
    return coeffs


def extrapolation_weights(kv: KnotVector, s: int, s_trim: int) -> np.ndarray:
    """de Boor-Fix extrapolation weights from donor span ``s`` to span ``s_trim``.

    Returns ``e`` of shape ``(p+1, p+1)``: ``e[a, b]`` is the coefficient of
    ``N_{s_trim-p+b}`` when the piece of ``N_{s-p+a}`` on span ``s`` is
    extended to span ``s_trim``, i.e. the de Boor-Fix functional of
    ``N_{s_trim-p+b}`` applied to that piece.
    """
    p = kv.degree
    A = power_coeffs(kv, s, frame=s_trim)
    u0 = kv.knots[s_trim]
    h = kv.knots[s_trim + 1] - u0
    e = np.zeros((p + 1, p + 1))
    fac = np.array([factorial(c) for c in range(p + 1)], dtype=float)
    for b in range(p + 1):
        j = s_trim - p + b
        beta = newton_poly_coeffs((kv.knots[j + 1 : j + p + 1] - u0) / h)
        # (1/p!) sum_c (-1)^c (p-c)! beta_{p-c} c! a_c
        w = np.array([(-1) ** c * fac[p - c] * beta[p - c] * fac[c] for c in range(p + 1)]) / fac[p]
        e[:, b] = w @ A
    return e


def _univariate_weight(kv: KnotVector, s: int, j: int) -> np.ndarray:
    """Weights of function ``j`` w.r.t. functions ``s-p..s`` of donor span ``s``."""
    p = kv.degree
    valid = kv.spans()
    lo = max(j, valid[0])
    hi = min(j + p, valid[-1])
    s_trim = int(np.clip(s, lo, hi))
    e = extrapolation_weights(kv, s, s_trim)
    return e[:, j - (s_trim - p)]


def build_extension_matrix(classification: BasisClassification, basis: TensorBasis) -> sp.csr_matrix:
    """Sparse extension matrix ``E`` (all functions x stable functions)."""
    labels = classification.labels
    m = len(labels)
    stable = classification.stable
    col = -np.ones(m, dtype=int)
    col[stable] = np.arange(len(stable))
    p1, p2 = basis.degrees
    m1, m2 = basis.shape
    rows = list(stable)
    cols = list(range(len(stable)))
    vals = [1.0] * len(stable)
    w = None if basis.weights is None else basis.weights.reshape(-1)
    for A in classification.degenerate:
        A = int(A)
        s1, s2 = classification.donor[A]
        j1, j2 = divmod(A, m2)
        e1 = _univariate_weight(basis.kv_u, s1, j1)
        e2 = _univariate_weight(basis.kv_v, s2, j2)
        for a in range(p1 + 1):
            for b in range(p2 + 1):
                i = (s1 - p1 + a) * m2 + (s2 - p2 + b)
                if col[i] < 0:
                    raise UnsolvableConfigurationError("donor span contains a non-stable function")
                val = e1[a] * e2[b]
                if w is not None:
                    val *= w[i] / w[A]
                rows.append(A)
                cols.append(col[i])
                vals.append(val)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, len(stable)))


def vector_extension(E: sp.spmatrix, ncomp: int = 3) -> sp.csr_matrix:
    """Repeat ``E`` per displacement component (node-major dof layout)."""
    return sp.kron(E, sp.identity(ncomp), format="csr")


def apply_extension(K, f, E):
    """Stable system ``(E^T K E, E^T f)``; ``E`` must match the dimension of ``K``."""
    if K.shape[0] != K.shape[1] or K.shape[0] != E.shape[0] or f.shape[0] != E.shape[0]:
        raise ValueError("dimension mismatch between system and extension matrix")
    Et = E.T.tocsr() if sp.issparse(E) else E.T
    Kst = Et @ (K @ E)
    fst = Et @ f
    if sp.issparse(Kst):
        Kst = Kst.toarray() if not sp.issparse(K) else Kst
    return Kst, np.asarray(fst).reshape(-1)
