"""Dense exterior-algebra kernel: k-vectors, compound matrices, cofactors.

Grade-k objects are stored as flat coordinate arrays over the
lexicographic enumeration of strictly increasing k-tuples from 1..m.
The grade m-1 case carries a signed identification with vectors in R^m
under which the (m-1)-compound of a matrix acts as its cofactor matrix;
that identification is what the rest of the package builds on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeMismatchError, SignAmbiguityError, SingularMatrixError, SizeGuardError

MAX_DIM = 12  # C(12,6)^2 doubles stay under ~7 MB


class MultiIndex(NamedTuple):
    entries: tuple[int, ...]  # strictly increasing, 1-based
    rank: int                 # position in lexicographic enumeration


def _check_dims(m: int, k: int) -> None:
    if not (1 <= k <= m <= MAX_DIM):
        raise SizeGuardError(f"need 1 <= k <= m <= {MAX_DIM}, got m={m}, k={k}")


def enumerate_multi_indices(m: int, k: int) -> list[MultiIndex]:
    """All strictly increasing k-tuples from 1..m in lexicographic order."""
    _check_dims(m, k)
    combos = itertools.combinations(range(1, m + 1), k)
    return [MultiIndex(entries, rank) for rank, entries in enumerate(combos)]


def multi_index_rank(entries: Sequence[int], m: int) -> int:
    """Lexicographic rank of one strictly increasing tuple."""
    k = len(entries)
    _check_dims(m, k)
    rank = 0
    prev = 0
    for pos, e in enumerate(entries):
        if e <= prev:
            raise ShapeMismatchError(f"entries must be strictly increasing, got {tuple(entries)}")
        for skipped in range(prev + 1, e):
            rank += comb(m - skipped, k - pos - 1)
        prev = e
    if prev > m:
        raise ShapeMismatchError(f"entries exceed ambient dimension {m}: {tuple(entries)}")
    return rank


@dataclass
class KVector:
    """Grade-k multivector as coordinates over the lexicographic basis."""

    m: int
    k: int
    coords: np.ndarray

    def __post_init__(self):
        _check_dims(self.m, self.k)
        self.coords = np.asarray(self.coords, dtype=float)
        expected = comb(self.m, self.k)
        if self.coords.shape != (expected,):
            raise ShapeMismatchError(
                f"grade-{self.k} coordinates in dimension {self.m} must have length "
                f"{expected}, got shape {self.coords.shape}"
            )


@dataclass
class CompoundOperator:
    """Matrix of the induced grade-k map in the lexicographic wedge basis."""

    m: int
    k: int
    matrix: np.ndarray

    def apply(self, w: KVector) -> KVector:
        if (w.m, w.k) != (self.m, self.k):
            raise ShapeMismatchError(
                f"operator is ({self.m},{self.k}), argument is ({w.m},{w.k})"
            )
        return KVector(self.m, self.k, self.matrix @ w.coords)


def _index_array(m: int, k: int) -> np.ndarray:
    """0-based row-index array of shape (C(m,k), k)."""
    return np.array(list(itertools.combinations(range(m), k)), dtype=int)


def wedge_coordinates(vectors: Sequence[np.ndarray]) -> KVector:
    """Coordinates of v_1 ^ ... ^ v_k from the k x k row minors of the column matrix."""
    cols = [np.asarray(v, dtype=float) for v in vectors]
    k = len(cols)
    if k == 0:
        raise ShapeMismatchError("need at least one vector")
    m = cols[0].shape[0]
    for v in cols:
        if v.shape != (m,):
            raise ShapeMismatchError(
                f"all vectors must have shape ({m},), got {[c.shape for c in cols]}"
            )
    _check_dims(m, k)
    C = np.column_stack(cols)
    rows = _index_array(m, k)
    sub = C[rows]  # (C(m,k), k, k)
    return KVector(m, k, np.linalg.det(sub))


def compound_operator(A: np.ndarray, k: int) -> CompoundOperator:
    """k-th multiplicative compound: entry (I,J) is the minor on rows I, columns J."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {A.shape}")
    return CompoundOperator(A.shape[0], k, compound_matrices(A, k))


def compound_matrices(As: np.ndarray, k: int) -> np.ndarray:
    """k-th compounds of a stack of square matrices, shape (..., C(m,k), C(m,k))."""
    As = np.asarray(As, dtype=float)
    if As.ndim < 2 or As.shape[-1] != As.shape[-2]:
        raise ShapeMismatchError(f"expected stacked square matrices, got shape {As.shape}")
    m = As.shape[-1]
    _check_dims(m, k)
    idx = _index_array(m, k)
    sub = As[..., idx[:, None, :, None], idx[None, :, None, :]]  # (..., R, R, k, k)
    return np.linalg.det(sub)


def induced_inner_product(u, v) -> float:
    """Inner product on grade-k objects.

    Coordinate arrays pair by the Euclidean dot product (the lexicographic
    wedge basis of an orthonormal basis is orthonormal).  Lists of vectors
    pair by the Gram determinant det(<u_i, v_j>).
    """
    if isinstance(u, KVector) and isinstance(v, KVector):
        if (u.m, u.k) != (v.m, v.k):
            raise ShapeMismatchError(
                f"grade/dimension mismatch: ({u.m},{u.k}) vs ({v.m},{v.k})"
            )
        return float(u.coords @ v.coords)
    us = [np.asarray(x, dtype=float) for x in u]
    vs = [np.asarray(x, dtype=float) for x in v]
    if len(us) != len(vs):
        raise ShapeMismatchError(f"need equally many vectors, got {len(us)} and {len(vs)}")
    if any(x.shape != us[0].shape for x in us + vs):
        raise ShapeMismatchError("all vectors must share one dimension")
    gram = np.array([[ui @ vj for vj in vs] for ui in us])
    return float(np.linalg.det(gram))


def cofactor_operator(A: np.ndarray) -> np.ndarray:
    """Signed minor matrix [(-1)^(i+j) M_ij]; equals det(A) A^-T when A is invertible.

    No inversion is performed, so singular input is fine.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {A.shape}")
    m = A.shape[0]
    if m == 1:
        return np.ones((1, 1))
    idx = _index_array(m, m - 1)  # row idx[i] omits index m-1-i
    sub = A[idx[:, None, :, None], idx[None, :, None, :]]
    minors = np.linalg.det(sub)  # minors[a, b] deletes row m-1-a, col m-1-b
    C = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            C[i, j] = (-1) ** (i + j) * minors[m - 1 - i, m - 1 - j]
    return C


def codim1_signs(m: int) -> np.ndarray:
    """Sign table of the grade-(m-1) identification: +1 for odd missing index, -1 for even."""
    _check_dims(m, max(m - 1, 1))
    return np.array([1.0 if p % 2 == 1 else -1.0 for p in range(1, m + 1)])


def hodge_identify(w: KVector) -> np.ndarray:
    """Identify a grade-(m-1) multivector with a vector in R^m.

    The basis element omitting index p maps to sign(p) e_p.  Under this
    map the (m-1)-compound of any matrix acts as its cofactor matrix.
    """
    if w.k != w.m - 1:
        raise ShapeMismatchError(f"identification needs grade m-1={w.m - 1}, got grade {w.k}")
    signs = codim1_signs(w.m)
    # the tuple omitting p sits at lexicographic rank m - p
    v = np.empty(w.m)
    for p in range(1, w.m + 1):
        v[p - 1] = signs[p - 1] * w.coords[w.m - p]
    return v


def hodge_expand(v: np.ndarray, m: int) -> KVector:
    """Inverse of :func:`hodge_identify`."""
    v = np.asarray(v, dtype=float)
    if v.shape != (m,):
        raise ShapeMismatchError(f"expected a vector of shape ({m},), got {v.shape}")
    signs = codim1_signs(m)
    coords = np.empty(m)
    for p in range(1, m + 1):
        coords[m - p] = signs[p - 1] * v[p - 1]
    return KVector(m, m - 1, coords)


def identified_compound(A: np.ndarray) -> np.ndarray:
    """The (m-1)-compound of A conjugated into R^m by the identification."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    comp = compound_operator(A, m - 1).matrix
    signs = codim1_signs(m)
    # H[p-1, m-p] = signs[p-1]; conjugation H @ comp @ H^-1 with H^-1 = H^T here
    out = np.empty((m, m))
    for p in range(1, m + 1):
        for q in range(1, m + 1):
            out[q - 1, p - 1] = signs[q - 1] * signs[p - 1] * comp[m - q, m - p]
    return out


def recover_base_operator(C: np.ndarray, det_sign_hint: int | None = None) -> np.ndarray:
    """Invert A -> cofactor(A) on invertible input.

    det(cof A) = det(A)^(m-1), so |det A| = |det C|^(1/(m-1)) and
    A = det(A) C^-T.  For even m-1 both signs of det(A) produce valid
    preimages and the caller must pick one via ``det_sign_hint``.
    """
    C = np.asarray(C, dtype=float)
    m = C.shape[0]
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {C.shape}")
    sign_det, logdet = np.linalg.slogdet(C)
    if sign_det == 0:
        raise SingularMatrixError("cofactor image must be invertible to recover the base operator")
    n = m - 1
    if n % 2 == 0:
        if det_sign_hint not in (-1, 1):
            raise SignAmbiguityError(
                f"m-1={n} is even: both determinant signs are valid, pass det_sign_hint=+1 or -1"
            )
        if sign_det < 0:
            raise SingularMatrixError(
                f"no preimage: det of an (m-1)-cofactor image must be >= 0 when m-1={n} is even"
            )
        det_A = det_sign_hint * np.exp(logdet / n)
    else:
        det_A = sign_det * np.exp(logdet / n)
        if det_sign_hint is not None and det_sign_hint != np.sign(det_A):
            raise SignAmbiguityError(
                f"m-1={n} is odd: determinant sign {np.sign(det_A):+.0f} is forced, "
                f"hint {det_sign_hint:+d} contradicts it"
            )
    return det_A * np.linalg.inv(C).T


def codim1_generator(D: np.ndarray) -> np.ndarray:
    """Generator of the identified (m-1)-compound of exp(tD): trace(D) I - D^T."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {D.shape}")
    return np.trace(D) * np.eye(D.shape[0]) - D.T
