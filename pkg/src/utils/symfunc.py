"""
Elementary symmetric functions, Garding cones and the Hessian quotient
operator F = (sigma_k / sigma_l)^(1/(k-l)).

Every function accepts a single eigenvalue vector of shape (n,) or a batch
of shape (..., n); matrices are (n, n) or (..., n, n).
"""

import itertools
import logging
from typing import Tuple, Union

import numpy as np
from scipy.special import comb

from src.core.exceptions import ConeViolationError, DomainError

logger = logging.getLogger(__name__)

ArrayOrFloat = Union[np.ndarray, float]


def _as_eigenlist(lam) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise DomainError("an eigenvalue list needs at least one entry")
    if not np.all(np.isfinite(arr)):
        raise DomainError("eigenvalues must be finite")
    return arr


def _as_symmatrix(A) -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise DomainError(f"expected a square matrix, got shape {arr.shape}")
    scale = max(1.0, float(np.abs(arr).max(initial=0.0)))
    if not np.allclose(arr, np.swapaxes(arr, -1, -2), rtol=0.0, atol=1e-12 * scale):
        raise DomainError("matrix is not symmetric")
    # The upper triangle is authoritative.
    upper = np.triu(arr)
    return upper + np.swapaxes(np.triu(arr, 1), -1, -2)


def _scalar_or_array(x: np.ndarray) -> ArrayOrFloat:
    return float(x) if np.ndim(x) == 0 else x


def _check_quotient_indices(n: int, k: int, l: int) -> None:
    if not 0 <= l < k <= n:
        raise DomainError(f"need 0 <= l < k <= n, got n={n}, k={k}, l={l}")


def elementary_symmetric(lam) -> np.ndarray:
    """sigma_0, ..., sigma_n of lam along the last axis; shape (..., n + 1)."""
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i : i + 1]
        e[..., 1 : i + 2] = e[..., 1 : i + 2] + x * e[..., 0 : i + 1]
    return e


def sigma_k(lam, k: int) -> ArrayOrFloat:
    """k-th elementary symmetric function; sigma_0 = 1 and sigma_k = 0 for k > n."""
    if k < 0:
        raise DomainError(f"sigma_k needs k >= 0, got {k}")
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    if k > n:
        return _scalar_or_array(np.zeros(lam.shape[:-1]))
    return _scalar_or_array(elementary_symmetric(lam)[..., k])


def normalized_sigma_k(lam, k: int) -> ArrayOrFloat:
    """H_k = sigma_k / C(n, k)."""
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    if k > n:
        return sigma_k(lam, k)
    return sigma_k(lam, k) / comb(n, k, exact=True)


def sigma_k_matrix(A, k: int) -> ArrayOrFloat:
    """
    sigma_k of the eigenvalues of a symmetric matrix.

    Summed k x k principal minors for n <= 4, eigenvalues otherwise.
    """
    if k < 0:
        raise DomainError(f"sigma_k needs k >= 0, got {k}")
    A = _as_symmatrix(A)
    n = A.shape[-1]
    batch = A.shape[:-2]
    if k == 0:
        return _scalar_or_array(np.ones(batch))
    if k > n:
        return _scalar_or_array(np.zeros(batch))
    if n <= 4:
        total = np.zeros(batch)
        for subset in itertools.combinations(range(n), k):
            idx = np.asarray(subset)
            total = total + np.linalg.det(A[..., idx[:, None], idx[None, :]])
        return _scalar_or_array(total)
    return sigma_k(np.linalg.eigvalsh(A), k)


def sigma_k_gradient(A, k: int) -> np.ndarray:
    """
    d sigma_k / d A_ij via the Newton identity
    sum_{j<k} (-1)^j sigma_{k-1-j}(A) A^j.
    """
    if k < 0:
        raise DomainError(f"sigma_k needs k >= 0, got {k}")
    A = _as_symmatrix(A)
    n = A.shape[-1]
    grad = np.zeros_like(A)
    if k == 0 or k > n:
        return grad
    power = np.broadcast_to(np.eye(n), A.shape).copy()
    for j in range(k):
        coeff = np.asarray(sigma_k_matrix(A, k - 1 - j))
        grad = grad + ((-1) ** j) * coeff[..., None, None] * power
        power = power @ A
    return grad


def in_cone(lam, k: int) -> Union[np.ndarray, bool]:
    """True iff sigma_1, ..., sigma_k are all strictly positive."""
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"cone index must satisfy 1 <= k <= n, got k={k}, n={n}")
    e = elementary_symmetric(lam)
    result = np.all(e[..., 1 : k + 1] > 0.0, axis=-1)
    return bool(result) if np.ndim(result) == 0 else result


def cone_margin(lam, k: int) -> ArrayOrFloat:
    """min over 1 <= i <= k of sigma_i; positive iff lam is in Gamma_k."""
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"cone index must satisfy 1 <= k <= n, got k={k}, n={n}")
    return _scalar_or_array(elementary_symmetric(lam)[..., 1 : k + 1].min(axis=-1))


def _require_cone(lam: np.ndarray, k: int) -> np.ndarray:
    e = elementary_symmetric(lam)
    margins = e[..., 1 : k + 1].min(axis=-1)
    if not np.all(margins > 0.0):
        flat = np.atleast_1d(margins).ravel()
        worst = int(np.argmin(flat))
        node = worst if np.ndim(margins) > 0 else None
        raise ConeViolationError(k, node=node, margin=float(flat[worst]))
    return e


def quotient_F(lam, k: int, l: int) -> ArrayOrFloat:
    """F = (sigma_k / sigma_l)^(1/(k-l)), homogeneous of degree one on Gamma_k."""
    lam = _as_eigenlist(lam)
    _check_quotient_indices(lam.shape[-1], k, l)
    e = _require_cone(lam, k)
    return _scalar_or_array((e[..., k] / e[..., l]) ** (1.0 / (k - l)))


def quotient_F_gradient(lam, k: int, l: int) -> np.ndarray:
    """dF/dlambda_i; ascending when lam is sorted descending."""
    lam = _as_eigenlist(lam)
    n = lam.shape[-1]
    _check_quotient_indices(n, k, l)
    e = _require_cone(lam, k)
    F = (e[..., k] / e[..., l]) ** (1.0 / (k - l))
    grad = np.empty_like(lam)
    for i in range(n):
        without = lam.copy()
        without[..., i] = 0.0
        e_i = elementary_symmetric(without)
        d_k = e_i[..., k - 1] / e[..., k]
        d_l = e_i[..., l - 1] / e[..., l] if l >= 1 else 0.0
        grad[..., i] = F / (k - l) * (d_k - d_l)
    return grad


def trace_lower_bound(n: int, k: int, l: int) -> float:
    """Lower bound of sum_i dF/dlambda_i on Gamma_k: F at (1, ..., 1)."""
    _check_quotient_indices(n, k, l)
    return float((comb(n, k, exact=True) / comb(n, l, exact=True)) ** (1.0 / (k - l)))


def eigh_2x2(a, b, c) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of [[a, b], [b, c]], vectorised.

    Returns (lam1, lam2, angle) with lam1 >= lam2 and the eigenvector of lam1
    equal to (cos angle, sin angle). The smaller-magnitude root is recovered
    from the determinant to avoid cancellation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    mean = 0.5 * (a + c)
    radius = np.hypot(0.5 * (a - c), b)
    det = a * c - b * b
    upper = mean + radius
    lower = mean - radius
    with np.errstate(divide="ignore", invalid="ignore"):
        lam2 = np.where((mean > 0) & (upper != 0), det / np.where(upper != 0, upper, 1.0), lower)
        lam1 = np.where((mean <= 0) & (lower != 0), det / np.where(lower != 0, lower, 1.0), upper)
    angle = 0.5 * np.arctan2(2.0 * b, a - c)
    return lam1, lam2, angle
