"""Complex sections, complex sectional curvature, and the section invariant.

A section is a two-complex-dimensional subspace of C^n, represented by a
Hermitian-orthonormal basis pair (v, w).  Curvature tensors extend to C^n
by complex bilinearity, and the sectional curvature of the section is the
real number R(v, w, vbar, wbar).

Two bilinear pairings appear throughout and must not be confused:

    (x, y)  = sum x_i y_i            complex-bilinear, no conjugation
    <x, y>  = sum x_i conj(y_i)      Hermitian

A vector is isotropic when (v, v) = 0.  Every section contains an
isotropic unit vector, found by solving a scalar quadratic.  Writing the
Hermitian-orthonormal completion of that vector inside the section as w,
the invariant alpha = |(v, w)| in [0, 1] measures how far the section is
from the distinguished family with alpha = 0 (conjugate of v orthogonal
to the whole section) versus a real section with alpha = 1 (the
complexification of a 2-plane in R^n).

The module also rebuilds, from any section, the orthonormal 4-frame and
the pair (lambda, mu) in [0,1]^2 through which the cone functionals of
:mod:`curvcone.cones` see that section; this gives two independent
routes to the same scalar and is cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import CurvatureTensor, rel_scale, _check_dim

_ORTHO_TOL = 1e-12


class SectionError(ValueError):
    """Raised when a basis pair fails the section invariants."""


def bilinear(x: np.ndarray, y: np.ndarray) -> complex:
    """Complex-bilinear pairing (no conjugation)."""
    return complex(np.dot(x, y))


def hermitian(x: np.ndarray, y: np.ndarray) -> complex:
    """Hermitian inner product, conjugating the second argument."""
    return complex(np.dot(x, np.conj(y)))


@dataclass(frozen=True)
class ComplexSection:
    """Two-complex-dimensional subspace given by a Hermitian-orthonormal pair."""

    n: int
    v: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_dim(self.n)
        v = np.asarray(self.v, dtype=complex)
        w = np.asarray(self.w, dtype=complex)
        if v.shape != (self.n,) or w.shape != (self.n,):
            raise SectionError(f"basis vectors must have shape ({self.n},)")
        if abs(hermitian(v, v) - 1.0) > _ORTHO_TOL or abs(hermitian(w, w) - 1.0) > _ORTHO_TOL:
            raise SectionError("basis vectors are not unit length to 1e-12")
        if abs(hermitian(v, w)) > _ORTHO_TOL:
            raise SectionError("basis vectors are not Hermitian-orthogonal to 1e-12")
        for name, arr in (("v", v), ("w", w)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def rebased(self, U: np.ndarray) -> "ComplexSection":
        """Same subspace in a new basis (v, w) @ U for unitary 2x2 U."""
        U = np.asarray(U, dtype=complex)
        if np.max(np.abs(U.conj().T @ U - np.eye(2))) > 1e-12:
            raise SectionError("rebasing matrix is not unitary")
        v2 = U[0, 0] * self.v + U[1, 0] * self.w
        w2 = U[0, 1] * self.v + U[1, 1] * self.w
        return ComplexSection(self.n, v2, w2)


def complex_sectional_curvature(R: CurvatureTensor, sec: ComplexSection) -> float:
    """Evaluate R(v, w, vbar, wbar) for the section's basis pair.

    The imaginary part must vanish (to 1e-10 relative) for a genuine
    curvature tensor; a larger residue signals a non-curvature input.
    """
    if R.n != sec.n:
        raise ValueError(f"dimension mismatch: {R.n} vs {sec.n}")
    val = np.einsum(
        "ijkl,i,j,k,l->",
        R.components.astype(complex),
        sec.v, sec.w, np.conj(sec.v), np.conj(sec.w),
        optimize=True,
    )
    if abs(val.imag) > 1e-10 * rel_scale(R):
        raise ValueError(f"imaginary residue {val.imag:.3e} exceeds tolerance")
    return float(val.real)


def _phase_normalize(v: np.ndarray) -> np.ndarray:
    # rotate the global phase so the first sizeable entry is real positive
    idx = np.argmax(np.abs(v) > 1e-9)
    pivot = v[idx]
    if abs(pivot) == 0.0:
        return v
    return v * (np.conj(pivot) / abs(pivot))


def isotropic_unit_vector(sec: ComplexSection) -> np.ndarray:
    """Deterministic isotropic unit vector inside the section.

    Solves (v + z w, v + z w) = 0 for z; if w itself is isotropic it is
    returned directly.  Of two roots the one with smaller modulus wins,
    ties broken by lexicographic (real, imaginary) comparison, and the
    result is phase-normalized so repeated calls are bitwise identical.
    """
    v, w = sec.v, sec.w
    a = bilinear(w, w)
    b = 2.0 * bilinear(v, w)
    c = bilinear(v, v)
    if abs(a) <= 1e-14:
        if abs(b) <= 1e-14:
            # bilinear form vanishes identically on span{v,w} up to the
            # c coefficient; if c is also ~0 every vector is isotropic
            cand = w if abs(c) > 1e-14 else v
            out = cand
        else:
            z = -c / b
            out = v + z * w
    else:
        disc = b * b - 4.0 * a * c
        # entries of the restricted bilinear form are bounded by 1, so an
        # absolute snap threshold is safe; without it a nearly-double root
        # (the alpha ~ 0 sections) loses half the working precision
        sq = 0.0 if abs(disc) <= 1e-13 else np.sqrt(complex(disc))
        roots = [(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)]
        roots.sort(key=lambda z: (abs(z), z.real, z.imag))
        out = v + roots[0] * w
    out = out / np.sqrt(hermitian(out, out).real)
    out = _phase_normalize(out)
    if abs(bilinear(out, out)) > 1e-12:
        raise SectionError("isotropic root did not converge")
    return out


def alpha(sec: ComplexSection) -> float:
    """Section invariant in [0, 1]: |(v_iso, w_perp)| for an isotropic v_iso.

    Zero exactly when the conjugate of some isotropic vector is orthogonal
    to the whole section; one exactly for real sections.  The value depends
    only on the subspace, not on the basis (tested under random rebasing).
    """
    viso = isotropic_unit_vector(sec)
    # Hermitian-orthonormal completion of viso inside the section
    cand = sec.w if abs(hermitian(sec.w, viso)) < 0.999 else sec.v
    u = cand - hermitian(cand, viso) * viso
    nu = np.sqrt(hermitian(u, u).real)
    if nu < 1e-9:
        cand = sec.v if cand is sec.w else sec.w
        u = cand - hermitian(cand, viso) * viso
        nu = np.sqrt(hermitian(u, u).real)
    u = u / nu
    a = abs(bilinear(viso, u))
    return float(min(max(a, 0.0), 1.0))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _orthonormal_real(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return (q * np.sign(np.diag(r))).T          # rows are the vectors


def sample_section(n: int, kind: str, seed) -> ComplexSection:
    """Seeded sampler for 'generic', 'pic1' (alpha = 0) or 'real' (alpha = 1)."""
    _check_dim(n)
    rng = np.random.default_rng(seed)
    if kind == "pic1":
        if n < 4:
            raise ValueError("pic1 sampling needs n >= 4")
        e1, e2, e3, e4 = _orthonormal_real(n, 4, rng)
        lam = rng.uniform(0.0, 1.0)
        v = (e1 + 1j * e2) / np.sqrt(2.0)
        w = (e3 + 1j * lam * e4) / np.sqrt(1.0 + lam * lam)
        return ComplexSection(n, v, w)
    if kind == "real":
        u1, u2 = _orthonormal_real(n, 2, rng)
        return ComplexSection(n, u1.astype(complex), u2.astype(complex))
    if kind == "generic":
        if n < 4:
            raise ValueError("generic sampling needs n >= 4")
        z = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        q = q * (np.conj(d) / np.abs(d))
        return ComplexSection(n, q[:, 0], q[:, 1])
    raise ValueError(f"unknown section kind {kind!r}")


# ---------------------------------------------------------------------------
# frame reconstruction (link between sections and frame functionals)
# ---------------------------------------------------------------------------

def _takagi_pair(B: np.ndarray):
    """Takagi vectors of a 2x2 complex symmetric matrix.

    Returns a unitary 2x2 A and nonnegative (s1, s2), s1 >= s2, such that
    A^T B A = diag(s1, s2).  Implemented through the real 4x4 symmetric
    embedding M = [[Re B, Im B], [Im B, -Re B]], whose +s eigenvectors
    (x; y) give Takagi vectors x + i y.
    """
    M = np.block([[B.real, B.imag], [B.imag, -B.real]])
    M = 0.5 * (M + M.T)
    evals, evecs = np.linalg.eigh(M)           # ascending
    cols = []
    sigs = []
    for idx in (3, 2):                         # two largest eigenvalues
        s = max(evals[idx], 0.0)
        x, y = evecs[:2, idx], evecs[2:, idx]
        a = (x + 1j * y)
        a = a / np.sqrt(hermitian(a, a).real)
        # a satisfies B conj(a) = s a, so conj(a) is the basis-change column
        cols.append(np.conj(a))
        sigs.append(s)
    A = np.stack(cols, axis=1)
    return A, float(sigs[0]), float(sigs[1])


def _complete_orthonormal(found: list[np.ndarray], n: int) -> np.ndarray:
    """Orthonormal vectors spanning the complement of the found set."""
    if found:
        M = np.stack(found)
        _, sv, vt = np.linalg.svd(M, full_matrices=True)
        return vt[len(found):]
    return np.eye(n)


def reconstruct_frame(sec: ComplexSection):
    """Express a section through an orthonormal 4-frame and (lambda, mu).

    Returns ``(frame, lam, mu, scale)`` where ``frame`` is a (4, n) array of
    orthonormal rows and scale = 1/((1+lam^2)(1+mu^2)), such that for every
    curvature tensor R

        K(sec) + (alpha(sec)^2 / s) scal(R)
            = scale * [ R_1313 + lam^2 R_1414 + mu^2 R_2323
                        + lam^2 mu^2 R_2424 - 2 lam mu R_1234
                        + (1/s)(1 - lam^2)(1 - mu^2) scal(R) ]

    with frame components on the right.  Built by diagonalizing the
    restricted bilinear form (Takagi), splitting the resulting basis
    vectors into real and imaginary parts and normalizing.
    """
    n = sec.n
    if n < 4:
        raise SectionError("frame reconstruction needs n >= 4")
    B = np.array(
        [[bilinear(sec.v, sec.v), bilinear(sec.v, sec.w)],
         [bilinear(sec.w, sec.v), bilinear(sec.w, sec.w)]]
    )
    A, s1, s2 = _takagi_pair(B)
    X = A[0, 0] * sec.v + A[1, 0] * sec.w      # (X, X) = s1 >= 0
    Y = A[0, 1] * sec.v + A[1, 1] * sec.w      # (Y, Y) = s2 >= 0
    Yp = 1j * Y                                # (Y', Y') = -s2 <= 0

    p, q = X.real, X.imag                      # |p| >= |q|, p.q = 0
    r, s = Yp.real, Yp.imag                    # |s| >= |r|, r.s = 0
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    nr, ns = np.linalg.norm(r), np.linalg.norm(s)

    mu = nq / np_
    lam = nr / ns
    e1 = p / np_
    e4 = s / ns
    e2 = q / nq if nq > 1e-9 * np_ else None
    e3 = r / nr if nr > 1e-9 * ns else None

    found = [e1, e4] + [e for e in (e2, e3) if e is not None]
    fill = list(_complete_orthonormal(found, n))
    if e2 is None:
        e2 = fill.pop(0)
        mu = 0.0
    if e3 is None:
        e3 = fill.pop(0)
        lam = 0.0

    frame = np.stack([e1, e2, e4, -e3])
    lam = float(min(max(lam, 0.0), 1.0))
    mu = float(min(max(mu, 0.0), 1.0))
    scale = 1.0 / ((1.0 + lam * lam) * (1.0 + mu * mu))
    return frame, lam, mu, scale
