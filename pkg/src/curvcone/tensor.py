"""Dense algebra of algebraic curvature tensors on R^n.

A curvature tensor R is stored as its full rank-4 component table
``R[i,j,k,l]`` and is required to satisfy

    R_ijkl = -R_jikl = -R_ijlk        (antisymmetry in each index pair)
    R_ijkl = R_klij                   (pair exchange)
    R_ijkl + R_jkil + R_kijl = 0      (first Bianchi identity)

The ambient inner product is the full index sum <R,S> = sum R_ijkl S_ijkl.
Under this convention the sphere tensor I (see :func:`identity_tensor`)
satisfies |I|^2 = 2n(n-1) and <I,S> = 2 scal(S) for every S.

Every tensor also splits orthogonally into a scalar part (multiple of I),
a traceless-Ricci part (Kulkarni-Nomizu product of a traceless symmetric
form with the metric) and a Weyl part (Ricci-flat remainder).  The mixing
endomorphism ell_{a,b} acts diagonally on this splitting, which is how its
inverse is computed here.

All operations are pure functions of their inputs; component arrays are
frozen after construction, so values can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_DIMS = range(3, 9)

#: absolute floor used when turning relative tolerances into thresholds
TOL_FLOOR = 1e-12


class DimensionError(ValueError):
    """Raised for dimensions outside the supported range 3..8."""


def _check_dim(n: int) -> int:
    n = int(n)
    if n not in SUPPORTED_DIMS:
        raise DimensionError(f"dimension {n} outside supported range 3..8")
    return n


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CurvatureTensor:
    """Element of the space of algebraic curvature tensors on R^n."""

    n: int
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_dim(self.n)
        comp = np.asarray(self.components, dtype=float)
        if comp.shape != (self.n,) * 4:
            raise ValueError(f"component table must have shape {(self.n,)*4}")
        object.__setattr__(self, "components", _freeze(comp))

    # Linear-space arithmetic keeps results inside C_B exactly, so no
    # reprojection is needed for combinations of valid tensors.
    def __add__(self, other: "CurvatureTensor") -> "CurvatureTensor":
        self._same_dim(other)
        return CurvatureTensor(self.n, self.components + other.components)

    def __sub__(self, other: "CurvatureTensor") -> "CurvatureTensor":
        self._same_dim(other)
        return CurvatureTensor(self.n, self.components - other.components)

    def __mul__(self, c: float) -> "CurvatureTensor":
        return CurvatureTensor(self.n, self.components * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> "CurvatureTensor":
        return CurvatureTensor(self.n, self.components / float(c))

    def __neg__(self) -> "CurvatureTensor":
        return CurvatureTensor(self.n, -self.components)

    def _same_dim(self, other: "CurvatureTensor"):
        if self.n != other.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def symmetry_defect(self) -> float:
        """Largest absolute violation of the three defining symmetries."""
        c = self.components
        d = max(
            np.max(np.abs(c + np.einsum("jikl->ijkl", c))),
            np.max(np.abs(c + np.einsum("ijlk->ijkl", c))),
            np.max(np.abs(c - np.einsum("klij->ijkl", c))),
            np.max(np.abs(c + np.einsum("jkil->ijkl", c) + np.einsum("kijl->ijkl", c))),
        )
        return float(d)


@dataclass(frozen=True)
class SymBilinear:
    """Symmetric bilinear form on R^n, stored canonically symmetric."""

    n: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_dim(self.n)
        m = np.asarray(self.entries, dtype=float)
        if m.shape != (self.n, self.n):
            raise ValueError(f"entries must have shape ({self.n}, {self.n})")
        object.__setattr__(self, "entries", _freeze(0.5 * (m + m.T)))

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


def metric(n: int) -> SymBilinear:
    """The Euclidean metric g (identity table)."""
    return SymBilinear(n, np.eye(_check_dim(n)))


@dataclass(frozen=True)
class EllParams:
    """Parameters (a, b) of the curvature-mixing endomorphism ell_{a,b}."""

    a: float
    b: float

    def scalar_factor(self, n: int) -> float:
        """Multiplier of the pure-scalar part: 1 + 2a(n-1)."""
        return 1.0 + 2.0 * self.a * (n - 1)

    def ricci_factor(self, n: int) -> float:
        """Multiplier of the traceless-Ricci part: 1 + (n-2)b."""
        return 1.0 + (n - 2) * self.b

    def invertible(self, n: int, tol: float = 1e-14) -> bool:
        return abs(self.scalar_factor(n)) > tol and abs(self.ricci_factor(n)) > tol


def upsilon(n: int) -> float:
    """Dimensional ceiling for the b parameter of the tilde-cone family."""
    _check_dim(n)
    return (np.sqrt(2.0 * n * (n - 2) + 4.0) - 2.0) / (n * (n - 2))


def tilde_params(n: int, b: float) -> EllParams:
    """EllParams used by the tilde-cone family: a = b + (n-2) b^2 / 2."""
    return EllParams(a=b + 0.5 * (n - 2) * b * b, b=b)


# ---------------------------------------------------------------------------
# construction / canonicalization
# ---------------------------------------------------------------------------

def _pair_symmetrize(raw: np.ndarray) -> np.ndarray:
    # average over the 8-element group generated by the two pair
    # antisymmetries and the pair exchange
    t = raw
    t = 0.25 * (
        t
        - np.einsum("jikl->ijkl", t)
        - np.einsum("ijlk->ijkl", t)
        + np.einsum("jilk->ijkl", t)
    )
    return 0.5 * (t + np.einsum("klij->ijkl", t))


def _bianchi_cyclic(t: np.ndarray) -> np.ndarray:
    # average over cyclic permutations of the first three slots; on the
    # pair-symmetric subspace this is the orthogonal projection onto the
    # 4-forms, whose kernel is exactly the Bianchi subspace
    return (t + np.einsum("jkil->ijkl", t) + np.einsum("kijl->ijkl", t)) / 3.0


def canonical_project(raw: np.ndarray, n: int | None = None) -> CurvatureTensor:
    """Orthogonally project a raw rank-4 table onto the curvature subspace.

    Group-averages the index symmetries first, then removes the cyclic
    (4-form) component, which enforces the first Bianchi identity.  The
    composite is the orthogonal projection onto C_B(R^n) and is idempotent.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 4 or len(set(raw.shape)) != 1:
        raise ValueError("expected a cubical rank-4 table")
    dim = raw.shape[0]
    if n is not None and int(n) != dim:
        raise ValueError(f"declared dimension {n} does not match table shape {raw.shape}")
    _check_dim(dim)
    sym = _pair_symmetrize(raw)
    return CurvatureTensor(dim, sym - _bianchi_cyclic(sym))


def zero_tensor(n: int) -> CurvatureTensor:
    return CurvatureTensor(_check_dim(n), np.zeros((n,) * 4))


def identity_tensor(n: int) -> CurvatureTensor:
    """The curvature tensor of the unit round sphere: I_ijkl = d_ik d_jl - d_il d_jk."""
    _check_dim(n)
    e = np.eye(n)
    comp = np.einsum("ik,jl->ijkl", e, e) - np.einsum("il,jk->ijkl", e, e)
    return CurvatureTensor(n, comp)


def random_tensor(n: int, rng: np.random.Generator) -> CurvatureTensor:
    """Projection of a standard Gaussian component table onto C_B."""
    return canonical_project(rng.standard_normal((n,) * 4))


# ---------------------------------------------------------------------------
# contractions and products
# ---------------------------------------------------------------------------

def ricci(R: CurvatureTensor) -> SymBilinear:
    """Ricci contraction Ric(R)_ik = R_ijkj."""
    return SymBilinear(R.n, np.einsum("ijkj->ik", R.components))


def scal(R: CurvatureTensor) -> float:
    """Scalar curvature, the trace of the Ricci contraction."""
    return float(np.einsum("ijij->", R.components))


def kulkarni_nomizu(A, B) -> CurvatureTensor:
    """Kulkarni-Nomizu product of two symmetric bilinear forms."""
    a = A.entries if isinstance(A, SymBilinear) else np.asarray(A, dtype=float)
    b = B.entries if isinstance(B, SymBilinear) else np.asarray(B, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    comp = (
        np.einsum("ik,jl->ijkl", a, b)
        - np.einsum("il,jk->ijkl", a, b)
        - np.einsum("jk,il->ijkl", a, b)
        + np.einsum("jl,ik->ijkl", a, b)
    )
    # the formula lands in C_B exactly; reprojection removes rounding skew
    return canonical_project(comp)


def ell_ab(R: CurvatureTensor, p: EllParams) -> CurvatureTensor:
    """Mixing map R + b Ric(R) kn g + ((a-b)/n) scal(R) g kn g."""
    n = R.n
    g = metric(n)
    out = (
        R
        + p.b * kulkarni_nomizu(ricci(R), g)
        + ((p.a - p.b) / n) * scal(R) * kulkarni_nomizu(g, g)
    )
    return out


def decompose(R: CurvatureTensor):
    """Split R into (scalar, traceless-Ricci, Weyl) orthogonal parts.

    scalar part    = scal(R)/(n(n-1)) * I
    ricci part     = (Ric(R) - scal(R)/n g) kn g / (n-2)
    weyl part      = remainder, which is Ricci-flat
    """
    n = R.n
    s = scal(R)
    ric0 = ricci(R).entries - (s / n) * np.eye(n)
    scalar_part = (s / (n * (n - 1))) * identity_tensor(n)
    ricci_part = kulkarni_nomizu(SymBilinear(n, ric0), metric(n)) / (n - 2)
    weyl_part = R - scalar_part - ricci_part
    return scalar_part, ricci_part, weyl_part


def ell_ab_inverse(R: CurvatureTensor, p: EllParams) -> CurvatureTensor:
    """Exact inverse of :func:`ell_ab` via the orthogonal decomposition.

    The mixing map is the identity on the Weyl part, scales the
    traceless-Ricci part by 1 + (n-2)b and the scalar part by 1 + 2a(n-1);
    the inverse divides each factor.
    """
    n = R.n
    if not p.invertible(n):
        raise ValueError(
            f"ell_({p.a},{p.b}) is not invertible in dimension {n}: "
            f"scalar factor {p.scalar_factor(n)}, ricci factor {p.ricci_factor(n)}"
        )
    scalar_part, ricci_part, weyl_part = decompose(R)
    return (
        scalar_part / p.scalar_factor(n)
        + ricci_part / p.ricci_factor(n)
        + weyl_part
    )


def q_map(R: CurvatureTensor) -> CurvatureTensor:
    """Quadratic vector field of the curvature reaction ODE dR/dt = Q(R).

    Q(R)_ijkl = R_ijpq R_klpq + 2 R_ipkq R_jplq - 2 R_iplq R_jpkq
    """
    c = R.components
    t1 = np.einsum("ijpq,klpq->ijkl", c, c, optimize=True)
    t2 = np.einsum("ipkq,jplq->ijkl", c, c, optimize=True)
    t3 = np.einsum("iplq,jpkq->ijkl", c, c, optimize=True)
    # the raw sum lies in C_B up to roundoff; projection is a rounding guard
    return canonical_project(t1 + 2.0 * t2 - 2.0 * t3)


def inner(R: CurvatureTensor, S: CurvatureTensor) -> float:
    """Full index-sum inner product."""
    R._same_dim(S)
    return float(np.tensordot(R.components, S.components, axes=4))


def norm(R: CurvatureTensor) -> float:
    return float(np.linalg.norm(R.components.ravel()))


def rel_scale(R: CurvatureTensor) -> float:
    """Normalization max(1, |R|) used by all relative tolerances."""
    return max(1.0, norm(R))


def rotate(R: CurvatureTensor, O: np.ndarray) -> CurvatureTensor:
    """Pull back R along an orthogonal matrix: (O.R)_ijkl = O_ip O_jq O_kr O_ls R_pqrs."""
    O = np.asarray(O, dtype=float)
    n = R.n
    if O.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix")
    if np.max(np.abs(O.T @ O - np.eye(n))) > 1e-12:
        raise ValueError("matrix is not orthogonal to 1e-12")
    comp = np.einsum("ip,jq,kr,ls,pqrs->ijkl", O, O, O, O, R.components, optimize=True)
    return CurvatureTensor(n, comp)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
