"""Cone families, frame functionals, and membership-margin searches.

Five families of closed convex O(n)-invariant cones of curvature tensors
are supported, all defined through linear functionals indexed by
orthonormal 4-frames (e1, e2, e3, e4) and parameters lam, mu in [0, 1]:

    pic2          R_1313 + lam^2 R_1414 + mu^2 R_2323 + lam^2 mu^2 R_2424
                  - 2 lam mu R_1234  >= 0
    pic1          same family with mu frozen to 1
    checkc:s      pic2 functional + (1/s)(1-lam^2)(1-mu^2) scal(R) >= 0
    hatc:s        preimage cone: ell^-1(R) must lie in pic2 and satisfy
                  Ric >= (p/n) scal, with branch parameters in `hatc_params`
    tildec:b,s    preimage cone: ell^-1(R) must lie in checkc:s, with
                  a = b + (n-2) b^2 / 2 and 0 < b < upsilon(n)

plus the auxiliary family ``ric`` (nonnegative Ricci), whose functionals
are indexed by unit vectors.  In dimension three the pic1 family
degenerates to orthonormal 3-frames with the single functional
R_1313 + R_2323, which equals a Ricci diagonal entry; this is the only
cone family supported at n = 3.

A membership margin is the infimum of the defining functionals normalized
by max(1, |R|), estimated by random Stiefel sampling plus Givens-rotation
coordinate descent.  A nonnegative result under an exhausted budget is
one-sided evidence of membership; a negative result is a sound
non-membership certificate, since re-evaluating the stored frame
reproduces it exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import (
    CurvatureTensor,
    EllParams,
    SymBilinear,
    canonical_project,
    ell_ab_inverse,
    identity_tensor,
    inner,
    norm,
    rel_scale,
    ricci,
    scal,
    tilde_params,
    upsilon,
)

DIRECT_FAMILIES = ("pic1", "pic2", "checkc")
PREIMAGE_FAMILIES = ("hatc", "tildec")
FAMILIES = DIRECT_FAMILIES + PREIMAGE_FAMILIES + ("ric",)


def seed_entropy(seed) -> list[int]:
    """Flatten a nested seed description into SeedSequence entropy words."""
    import zlib

    out: list[int] = []
    stack = [seed]
    while stack:
        item = stack.pop()
        if item is None:
            out.append(0)
        elif isinstance(item, (tuple, list)):
            stack.extend(reversed(item))
        elif isinstance(item, str):
            out.append(zlib.crc32(item.encode()))
        elif isinstance(item, (int, np.integer)):
            out.append(int(item) & 0xFFFFFFFF)
            out.append((int(item) >> 32) & 0xFFFFFFFF)
        else:
            raise TypeError(f"cannot derive seed entropy from {item!r}")
    return out


class ConeSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConeSpec:
    """Tagged description of one cone, tied to a dimension."""

    family: str
    n: int
    s: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConeSpecError(f"unknown cone family {self.family!r}")
        if self.family in ("checkc", "hatc", "tildec"):
            if self.s is None or self.s <= 0:
                raise ConeSpecError(f"{self.family} needs a parameter s > 0")
        elif self.s is not None:
            raise ConeSpecError(f"{self.family} takes no s parameter")
        if self.family == "tildec":
            ups = upsilon(self.n)
            if self.b is None or not 0.0 < self.b < ups:
                raise ConeSpecError(
                    f"tildec needs 0 < b < upsilon({self.n}) = {ups:.6g}"
                )
        elif self.b is not None:
            raise ConeSpecError(f"{self.family} takes no b parameter")
        if self.n == 3 and self.family not in ("pic1", "ric"):
            raise ConeSpecError(
                f"family {self.family!r} needs n >= 4 (only pic1/ric support n = 3)"
            )

    def label(self) -> str:
        if self.family == "checkc":
            return f"checkc:s={self.s:g}"
        if self.family == "hatc":
            return f"hatc:s={self.s:g}"
        if self.family == "tildec":
            return f"tildec:b={self.b:g},s={self.s:g}"
        return self.family

    def ell_params(self) -> EllParams:
        """Mixing parameters of the preimage families."""
        if self.family == "tildec":
            return tilde_params(self.n, self.b)
        if self.family == "hatc":
            a, b, _ = hatc_params(self.n, self.s)
            return EllParams(a, b)
        raise ConeSpecError(f"{self.family} has no ell parameters")


def hatc_params(n: int, s: float):
    """Branch parameters (a, b, p) of the hatc family."""
    if s <= 0.5:
        denom = 1.0 + (n - 2) * s * s
        a = 0.5 * (2.0 * s + (n - 2) * s * s) / denom
        return a, s, 1.0 - 1.0 / denom
    return s, 0.5, 1.0 - 4.0 / (n - 2 + 8.0 * s)


def parse_cone(text: str, n: int) -> ConeSpec:
    """Parse the CLI cone syntax, e.g. ``tildec:b=0.2,s=1``."""
    head, _, tail = text.strip().partition(":")
    head = head.lower()
    kwargs = {}
    if tail:
        for item in tail.split(","):
            key, _, val = item.partition("=")
            if key.strip() not in ("s", "b") or not val:
                raise ConeSpecError(f"bad cone parameter {item!r} in {text!r}")
            kwargs[key.strip()] = float(val)
    return ConeSpec(head, n, **kwargs)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameCertificate:
    """Orthonormal frame plus (lambda, mu) witnessing a functional value."""

    frame: np.ndarray = field(repr=False)   # (k, n) rows, k = 4 (3 when n = 3)
    lam: float = 0.0
    mu: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        f = np.ascontiguousarray(self.frame, dtype=float)
        if f.ndim != 2 or f.shape[0] not in (3, 4):
            raise ValueError("frame must be a (4, n) or (3, n) array of rows")
        gram = f @ f.T
        if np.max(np.abs(gram - np.eye(f.shape[0]))) > 1e-12:
            raise ValueError("frame rows are not orthonormal to 1e-12")
        if not (0.0 <= self.lam <= 1.0 and 0.0 <= self.mu <= 1.0):
            raise ValueError("lambda and mu must lie in [0, 1]")
        f.flags.writeable = False
        object.__setattr__(self, "frame", f)


@dataclass(frozen=True)
class UnitVectorCertificate:
    """Unit vector witnessing a Ricci-type eigenvalue constraint."""

    u: np.ndarray = field(repr=False)
    value: float = 0.0

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("certificate vector must be unit length")
        u.flags.writeable = False
        object.__setattr__(self, "u", u)


Certificate = FrameCertificate | UnitVectorCertificate


@dataclass(frozen=True)
class MarginReport:
    """Result of a membership-margin search.

    ``margin`` is the smallest functional value found divided by ``scale``
    (max(1, |R|), or max(1, |preimage|) for the hatc/tildec families).
    ``sound_violation`` is set when the margin is negative, in which case
    the certificate reproduces ``raw_value`` under re-evaluation.
    """

    cone: str
    n: int
    margin: float
    raw_value: float
    scale: float
    certificate: Certificate
    sound_violation: bool
    budget_used: dict

    def to_dict(self) -> dict:
        cert: dict
        if isinstance(self.certificate, FrameCertificate):
            cert = {
                "frame": self.certificate.frame.tolist(),
                "lambda": self.certificate.lam,
                "mu": self.certificate.mu,
                "value": self.certificate.value,
            }
        else:
            cert = {"vector": self.certificate.u.tolist(), "value": self.certificate.value}
        return {
            "cone": self.cone,
            "n": self.n,
            "margin": self.margin,
            "raw_value": self.raw_value,
            "scale": self.scale,
            "sound_violation": self.sound_violation,
            "certificate": cert,
            "budget_used": self.budget_used,
        }


@dataclass(frozen=True)
class SearchBudget:
    """Knobs of the frame search; defaults suit standalone membership calls."""

    frames: int = 20000
    descents: int = 50
    coarse_grid: int = 9
    fine_grid: int = 33
    polish_rounds: int = 10
    max_sweeps: int = 30
    angle_points: int = 15
    newton_iters: int = 6
    chunk: int = 4096

    def halved(self) -> "SearchBudget":
        return replace(self, frames=self.frames // 2, descents=max(1, self.descents // 2))

    def scaled(self, frames: int, descents: int, **kw) -> "SearchBudget":
        return replace(self, frames=frames, descents=descents, **kw)


DEFAULT_BUDGET = SearchBudget()


# ---------------------------------------------------------------------------
# functional evaluation
# ---------------------------------------------------------------------------

def _frame_slots(R: np.ndarray, frames: np.ndarray):
    """Per-frame components (R_1313, R_1414, R_2323, R_2424, R_1234).

    For 3-frames returns (R_1313, R_2323) padded with zeros, matching the
    n = 3 pic1 functional R_1313 + R_2323.  The contraction is organized
    as a chain of matrix products so BLAS does the heavy lifting.
    """
    B, k, n = frames.shape
    # slot 1
    t = frames @ R.reshape(n, n * n * n)                      # (B,k,jkl)
    # slot 2
    t = t.reshape(B, k, n, n * n).transpose(0, 2, 1, 3).reshape(B, n, k * n * n)
    t = frames @ t                                            # (B,k,(p,kl))
    # slot 3
    t = t.reshape(B, k, k, n, n).transpose(0, 3, 1, 2, 4).reshape(B, n, k * k * n)
    t = frames @ t                                            # (B,k,(q,p,l))
    # slot 4
    t = t.reshape(B, k, k, k, n).transpose(0, 4, 1, 2, 3).reshape(B, n, k * k * k)
    t = frames @ t                                            # (B,k,(r,q,p))
    t = t.reshape(B, k, k, k, k)                              # [b, s, r, q, p]
    comp = lambda p, q, r, s: t[:, s, r, q, p]
    if k == 3:
        A = comp(0, 2, 0, 2)
        C = comp(1, 2, 1, 2)
        z = np.zeros_like(A)
        return A, z, C, z, z
    return (
        comp(0, 2, 0, 2),
        comp(0, 3, 0, 3),
        comp(1, 2, 1, 2),
        comp(1, 3, 1, 3),
        comp(0, 1, 2, 3),
    )


def _functional_id_value(family: str, lam, mu, sigma_id):
    """The same functional evaluated on the sphere tensor I (frame free)."""
    lam2, mu2 = lam * lam, mu * mu
    if family == "pic1":
        return 2.0 + 2.0 * lam2
    val = (1.0 + lam2) * (1.0 + mu2)
    if family == "checkc":
        val = val + sigma_id * (1.0 - lam2) * (1.0 - mu2)
    return val


class _Objective:
    """Vectorized per-frame evaluation and (lambda, mu) minimization.

    ``ratio=True`` minimizes functional(R)/functional(I) instead, which is
    what the pinching-threshold estimator needs.
    """

    def __init__(self, R: CurvatureTensor, family: str, s: float | None = None,
                 ratio: bool = False):
        if family not in DIRECT_FAMILIES:
            raise ConeSpecError(f"direct evaluation needs a direct family, got {family}")
        self.R = R
        self.family = family
        self.n = R.n
        self.k = 3 if (R.n == 3 and family == "pic1") else 4
        if self.k == 4 and R.n < 4:
            raise ConeSpecError(f"{family} needs n >= 4")
        self.sigma = 0.0
        self.sigma_id = 0.0
        if family == "checkc":
            self.sigma = scal(R) / s
            self.sigma_id = self.n * (self.n - 1) / s
        self.ratio = ratio
        self._grid_cache: dict = {}

    # -- scalar evaluation ---------------------------------------------------
    def value_at(self, frame: np.ndarray, lam: float, mu: float) -> float:
        A, B, C, D, E = _frame_slots(self.R.components, frame[None])
        v = self._value(A, B, C, D, E, np.array([lam]), np.array([mu]))[0]
        if self.ratio:
            return float(v / _functional_id_value(self.family, lam, mu, self.sigma_id))
        return float(v)

    def _value(self, A, B, C, D, E, lam, mu):
        lam2, mu2 = lam * lam, mu * mu
        if self.family == "pic1" and self.k == 4:
            return A + C + lam2 * (B + D) - 2.0 * lam * E
        if self.family == "pic1":        # n = 3
            return A + C
        val = A + lam2 * B + mu2 * C + lam2 * mu2 * D - 2.0 * lam * mu * E
        if self.family == "checkc":
            val = val + self.sigma * (1.0 - lam2) * (1.0 - mu2)
        return val

    # -- batched evaluation ----------------------------------------------------
    def best_over_params(self, frames: np.ndarray, grid: int, polish: int):
        """Minimize over (lambda, mu) for every frame in the batch.

        Returns (values, lams, mus); values are ratios when ratio=True.
        """
        A, B, C, D, E = _frame_slots(self.R.components, frames)
        if self.family == "pic1":
            return self._best_pic1(A, B, C, D, E)
        return self._best_biquadratic(A, B, C, D, E, grid, polish)

    def _score(self, A, B, C, D, E, lam, mu):
        v = self._value(A, B, C, D, E, lam, mu)
        if self.ratio:
            return v / _functional_id_value(self.family, lam, mu, self.sigma_id)
        return v

    def _best_pic1(self, A, B, C, D, E):
        if self.k == 3:
            vals = A + C
            if self.ratio:
                vals = vals / 2.0
            zer = np.zeros_like(vals)
            return vals, zer, np.ones_like(vals)
        cands = [np.zeros_like(A), np.ones_like(A)]
        if not self.ratio:
            # quadratic in lam: (A+C) + lam^2 (B+D) - 2 lam E
            denom = B + D
            with np.errstate(divide="ignore", invalid="ignore"):
                lam_star = np.where(denom > 1e-300, E / np.maximum(denom, 1e-300), 0.0)
            cands.append(np.clip(lam_star, 0.0, 1.0))
        else:
            # stationary points of the ratio solve E lam^2 + (B+D-A-C) lam - E = 0
            aa, bb, cc = E, (B + D - A - C), -E
            disc = np.maximum(bb * bb - 4.0 * aa * cc, 0.0)
            sq = np.sqrt(disc)
            with np.errstate(divide="ignore", invalid="ignore"):
                for sign in (+1.0, -1.0):
                    root = np.where(
                        np.abs(aa) > 1e-300,
                        (-bb + sign * sq) / np.where(np.abs(aa) > 1e-300, 2.0 * aa, 1.0),
                        np.where(np.abs(bb) > 1e-300, -cc / np.where(np.abs(bb) > 1e-300, bb, 1.0), 0.0),
                    )
                    cands.append(np.clip(np.nan_to_num(root), 0.0, 1.0))
        ones = np.ones_like(A)
        best_v = None
        best_l = None
        for lam in cands:
            v = self._score(A, B, C, D, E, lam, ones)
            if best_v is None:
                best_v, best_l = v, lam
            else:
                take = v < best_v
                best_v = np.where(take, v, best_v)
                best_l = np.where(take, lam, best_l)
        return best_v, best_l, ones

    def _best_biquadratic(self, A, B, C, D, E, grid, polish):
        if not self.ratio:
            return self._best_biquadratic_exact(A, B, C, D, E)
        lam_g, mu_g, basis, denom = self._grid_basis(grid)
        coeffs = np.stack([np.ones_like(A), A, B, C, D, E], axis=1)
        vals = coeffs @ basis                       # (B, G) in one gemm
        vals = vals / denom[None, :]
        idx = np.argmin(vals, axis=1)
        lam = lam_g[idx]
        mu = mu_g[idx]
        for _ in range(polish):
            lam = self._coord_min(A, B, C, D, E, mu, minimize_lam=True)
            mu = self._coord_min(A, B, C, D, E, lam, minimize_lam=False)
        v = self._score(A, B, C, D, E, lam, mu)
        return v, lam, mu

    def _best_biquadratic_exact(self, A, B, C, D, E):
        """Exact global (lambda, mu) minimum of the biquadratic per frame.

        Writing B' = B - sigma, C' = C - sigma, D' = D + sigma, interior
        stationary points satisfy lam (B' + mu^2 D') = mu E and
        mu (C' + lam^2 D') = lam E, which reduces to the quadratic

            C' D'^2 x^2 + 2 B' C' D' x + B' (B' C' - E^2) = 0,  x = mu^2.

        The candidates are those roots plus the exactly-minimized edges of
        the unit square; every candidate is evaluated and the smallest
        taken, so no basin of the inner problem can be missed.
        """
        sig = self.sigma
        Bp, Cp, Dp = B - sig, C - sig, D + sig
        zeros, ones = np.zeros_like(A), np.ones_like(A)
        cands = [(zeros, zeros), (zeros, ones), (ones, zeros), (ones, ones)]

        def vertex(num, den):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(den > 1e-300, num / np.maximum(den, 1e-300), 0.0)
            return np.clip(np.nan_to_num(t), 0.0, 1.0)

        # edges mu = 1 and lam = 1 (the mu = 0 / lam = 0 edges are monotone
        # in the squared variable, so their minima sit at corners)
        cands.append((vertex(E, B + D), ones))
        cands.append((ones, vertex(E, C + D)))
        # interior critical points
        qa = Cp * Dp * Dp
        qb = 2.0 * Bp * Cp * Dp
        qc = Bp * (Bp * Cp - E * E)
        disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
        sq = np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            for sign in (+1.0, -1.0):
                x = np.where(
                    np.abs(qa) > 1e-300,
                    (-qb + sign * sq) / np.where(np.abs(qa) > 1e-300, 2.0 * qa, 1.0),
                    np.where(np.abs(qb) > 1e-300,
                             -qc / np.where(np.abs(qb) > 1e-300, qb, 1.0), 0.0),
                )
                x = np.clip(np.nan_to_num(x), 0.0, 1.0)
                mu = np.sqrt(x)
                lam = vertex(mu * E, Bp + x * Dp)
                cands.append((lam, mu))

        best_v = None
        best_l = best_m = None
        for lam, mu in cands:
            v = self._value(A, B, C, D, E, lam, mu)
            if best_v is None:
                best_v, best_l, best_m = v, lam, mu
            else:
                take = v < best_v
                best_v = np.where(take, v, best_v)
                best_l = np.where(take, lam, best_l)
                best_m = np.where(take, mu, best_m)
        return best_v, best_l, best_m

    def _grid_basis(self, grid: int):
        """Cached (lam, mu) grid and the 6-row basis of the functional."""
        cached = self._grid_cache.get(grid)
        if cached is not None:
            return cached
        ts = np.linspace(0.0, 1.0, grid)
        lam_g, mu_g = np.meshgrid(ts, ts, indexing="ij")
        lam_g, mu_g = lam_g.ravel(), mu_g.ravel()
        lam2, mu2 = lam_g * lam_g, mu_g * mu_g
        sig = self.sigma * (1.0 - lam2) * (1.0 - mu2)
        basis = np.stack([sig, np.ones_like(lam_g), lam2, mu2, lam2 * mu2,
                          -2.0 * lam_g * mu_g])
        denom = (1.0 + lam2) * (1.0 + mu2) + self.sigma_id * (1.0 - lam2) * (1.0 - mu2)
        self._grid_cache[grid] = (lam_g, mu_g, basis, denom)
        return self._grid_cache[grid]

    def _coord_min(self, A, B, C, D, E, other, minimize_lam: bool):
        """Exact minimization over one coordinate, the other held fixed.

        Both the functional and (in ratio mode) its denominator are
        quadratics in the free coordinate, so candidate minimizers are the
        endpoints plus roots of a quadratic.
        """
        o2 = other * other
        if minimize_lam:
            # f = p2 lam^2 + p1 lam + p0
            p2 = B + o2 * D - self.sigma * (1.0 - o2) if self.family == "checkc" else B + o2 * D
            p1 = -2.0 * other * E
            p0 = A + o2 * C + (self.sigma * (1.0 - o2) if self.family == "checkc" else 0.0)
            d2_id = (1.0 + o2) - (self.sigma_id * (1.0 - o2) if self.family == "checkc" else 0.0)
            d0_id = (1.0 + o2) + (self.sigma_id * (1.0 - o2) if self.family == "checkc" else 0.0)
        else:
            p2 = C + o2 * D - self.sigma * (1.0 - o2) if self.family == "checkc" else C + o2 * D
            p1 = -2.0 * other * E
            p0 = A + o2 * B + (self.sigma * (1.0 - o2) if self.family == "checkc" else 0.0)
            d2_id = (1.0 + o2) - (self.sigma_id * (1.0 - o2) if self.family == "checkc" else 0.0)
            d0_id = (1.0 + o2) + (self.sigma_id * (1.0 - o2) if self.family == "checkc" else 0.0)

        cands = [np.zeros_like(p2), np.ones_like(p2)]
        if not self.ratio:
            with np.errstate(divide="ignore", invalid="ignore"):
                t_star = np.where(p2 > 1e-300, -p1 / np.maximum(2.0 * p2, 1e-300), 0.0)
            cands.append(np.clip(np.nan_to_num(t_star), 0.0, 1.0))
        else:
            # d(t) = d2 t^2 + d0; critical points of (p2 t^2 + p1 t + p0)/d
            aa = p1 * d2_id
            bb = 2.0 * (p0 * d2_id - p2 * d0_id)
            cc = -p1 * d0_id
            disc = np.maximum(bb * bb - 4.0 * aa * cc, 0.0)
            sq = np.sqrt(disc)
            with np.errstate(divide="ignore", invalid="ignore"):
                for sign in (+1.0, -1.0):
                    root = np.where(
                        np.abs(aa) > 1e-300,
                        (-bb + sign * sq) / np.where(np.abs(aa) > 1e-300, 2.0 * aa, 1.0),
                        np.where(np.abs(bb) > 1e-300, -cc / np.where(np.abs(bb) > 1e-300, bb, 1.0), 0.0),
                    )
                    cands.append(np.clip(np.nan_to_num(root), 0.0, 1.0))

        best_v = None
        best_t = None
        for t in cands:
            if minimize_lam:
                v = self._score(A, B, C, D, E, t, other)
            else:
                v = self._score(A, B, C, D, E, other, t)
            if best_v is None:
                best_v, best_t = v, t
            else:
                take = v < best_v
                best_v = np.where(take, v, best_v)
                best_t = np.where(take, t, best_t)
        return best_t


def frame_functional(R: CurvatureTensor, cert: FrameCertificate, spec: ConeSpec) -> float:
    """Evaluate the defining functional of a direct family at a certificate."""
    if spec.family not in DIRECT_FAMILIES:
        raise ConeSpecError(
            f"frame_functional needs family pic1/pic2/checkc, got {spec.family}"
        )
    if spec.n != R.n:
        raise ValueError("cone and tensor dimensions differ")
    obj = _Objective(R, spec.family, spec.s)
    if cert.frame.shape != (obj.k, R.n):
        raise ValueError(f"certificate frame must have shape ({obj.k}, {R.n})")
    mu = 1.0 if spec.family == "pic1" else cert.mu
    return obj.value_at(cert.frame, cert.lam, mu)


# ---------------------------------------------------------------------------
# frame sampling and refinement
# ---------------------------------------------------------------------------

def _random_frames(n: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, n, k))
    q, r = np.linalg.qr(g)
    sign = np.sign(np.einsum("bii->bi", r))
    sign[sign == 0.0] = 1.0
    return np.swapaxes(q * sign[:, None, :], 1, 2)


def _structured_frames(R: CurvatureTensor, k: int) -> np.ndarray:
    """Deterministic frame candidates: coordinate subsets and Ricci eigenbases."""
    n = R.n
    eye = np.eye(n)
    evecs = np.linalg.eigh(ricci(R).entries)[1].T
    frames = []
    for basis in (eye, evecs):
        for combo in itertools.combinations(range(n), k):
            frames.append(basis[list(combo)])
    return np.asarray(frames)


def _plane_rotations(frame: np.ndarray, n: int):
    """Rotation planes touching the frame: frame pairs and frame x complement."""
    k = frame.shape[0]
    _, _, vt = np.linalg.svd(frame, full_matrices=True)
    complement = vt[k:]
    planes = [(i, j, None) for i, j in itertools.combinations(range(k), 2)]
    planes += [(i, None, c) for i in range(k) for c in range(n - k)]
    return planes, complement


def _rotate_candidates(frames, windows, angle_points):
    """Single-plane rotation candidates for a batch of frames.

    frames: (K, k, n); windows: per-frame angle scale (K,).  Returns
    (K, P*A, k, n) candidates, P running over the rotation planes (frame
    pairs, then frame x complement) and A over the angle grid scaled by
    each frame's window.
    """
    K, k, n = frames.shape
    base = np.linspace(-1.0, 1.0, angle_points)
    base = base[base != 0.0]
    th = windows[:, None] * base[None, :]           # (K, A)
    ct, st = np.cos(th)[..., None], np.sin(th)[..., None]
    A = th.shape[1]
    blocks = []
    for (i, j) in itertools.combinations(range(k), 2):
        cand = np.broadcast_to(frames[:, None], (K, A, k, n)).copy()
        fi, fj = frames[:, None, i, :], frames[:, None, j, :]
        cand[:, :, i, :] = ct * fi + st * fj
        cand[:, :, j, :] = -st * fi + ct * fj
        blocks.append(cand)
    if n > k:
        _, _, vt = np.linalg.svd(frames, full_matrices=True)
        complement = vt[:, k:, :]                   # (K, n-k, n)
        for i in range(k):
            for c in range(n - k):
                cand = np.broadcast_to(frames[:, None], (K, A, k, n)).copy()
                fi = frames[:, None, i, :]
                v = complement[:, None, c, :]
                cand[:, :, i, :] = ct * fi + st * v
                blocks.append(cand)
    return np.concatenate(blocks, axis=1)


def _descend_batch(obj: _Objective, frames, values, budget: SearchBudget,
                   window_floor: float = 1e-8, max_rounds: int | None = None):
    """Lockstep Givens coordinate descent on a batch of frames.

    Each round evaluates every single-plane rotation of every live frame in
    one batched call, accepts the best improvement per frame, and shrinks
    that frame's angle window when no rotation improves it.  A frame
    retires once its window falls below ``window_floor``.
    """
    best_f = frames.copy()
    best_v = values.copy()
    window = np.full(frames.shape[0], np.pi / 2.0)
    live = np.ones(frames.shape[0], dtype=bool)
    for _ in range(budget.max_sweeps if max_rounds is None else max_rounds):
        if not np.any(live):
            break
        idx = np.flatnonzero(live)
        cands = _rotate_candidates(best_f[idx], window[idx], budget.angle_points)
        Kp, C = cands.shape[0], cands.shape[1]
        vals, _, _ = obj.best_over_params(
            cands.reshape(Kp * C, *cands.shape[2:]), budget.coarse_grid, 8
        )
        vals = vals.reshape(Kp, C)
        arg = vals.argmin(axis=1)
        mins = vals[np.arange(Kp), arg]
        improved = mins < best_v[idx] - 1e-15 * (1.0 + np.abs(best_v[idx]))
        gi = idx[improved]
        best_v[gi] = mins[improved]
        best_f[gi] = cands[np.flatnonzero(improved), arg[improved]]
        stuck = idx[~improved]
        window[stuck] /= 4.0
        live[stuck[window[stuck] < window_floor]] = False
    # rotations accumulate roundoff; restore exact orthonormality
    q, r = np.linalg.qr(best_f.transpose(0, 2, 1))
    sign = np.sign(np.einsum("bii->bi", r))
    sign[sign == 0.0] = 1.0
    best_f = (q * sign[:, None, :]).transpose(0, 2, 1)
    vals, lams, mus = obj.best_over_params(best_f, budget.fine_grid, budget.polish_rounds)
    return best_f, vals, lams, mus


def _plane_generators(frame: np.ndarray):
    """Skew generators of the rotation planes touching the frame."""
    k, n = frame.shape
    _, _, vt = np.linalg.svd(frame, full_matrices=True)
    complement = vt[k:]
    gens = []
    for (i, j) in itertools.combinations(range(k), 2):
        gens.append((frame[i], frame[j]))
    for i in range(k):
        for c in range(n - k):
            gens.append((frame[i], complement[c]))
    return gens


def _newton_polish(obj: _Objective, frame: np.ndarray, value: float,
                   iters: int = 6):
    """Finite-difference Newton steps in the rotation chart at the frame.

    The Givens descent converges linearly and can leave a ~1e-6 tail on
    ill-conditioned basins; a few Newton iterations in the local rotation
    coordinates remove it.  Steps that fail to improve are rejected, so the
    polish can only lower the value.
    """
    best_f, best_v = frame, value
    for _ in range(iters):
        gens = _plane_generators(best_f)
        P = len(gens)

        def retract(theta):
            f = best_f.copy()
            for p, (a, b) in enumerate(gens):
                if theta[p]:
                    f = f + theta[p] * (np.outer(f @ a, b) - np.outer(f @ b, a))
            q, r = np.linalg.qr(f.T)
            return (q * np.sign(np.diag(r))).T

        h = 1e-4
        thetas = [np.zeros(P)]
        for p in range(P):
            for sgn in (+h, -h):
                t = np.zeros(P); t[p] = sgn
                thetas.append(t)
        for p in range(P):
            for q_ in range(p + 1, P):
                for sp, sq in ((h, h), (h, -h), (-h, h), (-h, -h)):
                    t = np.zeros(P); t[p] = sp; t[q_] = sq
                    thetas.append(t)
        cands = np.asarray([retract(t) for t in thetas])
        vals, _, _ = obj.best_over_params(cands, 9, 2)
        f0 = vals[0]
        grad = np.empty(P)
        hess = np.empty((P, P))
        pos = 1
        for p in range(P):
            fp, fm = vals[pos], vals[pos + 1]
            grad[p] = (fp - fm) / (2 * h)
            hess[p, p] = (fp - 2 * f0 + fm) / (h * h)
            pos += 2
        for p in range(P):
            for q_ in range(p + 1, P):
                fpp, fpm, fmp, fmm = vals[pos: pos + 4]
                hess[p, q_] = hess[q_, p] = (fpp - fpm - fmp + fmm) / (4 * h * h)
                pos += 4
        # regularize to a positive model; clip the step to the chart radius
        w, V = np.linalg.eigh(hess)
        w = np.maximum(np.abs(w), 1e-6)
        step = -V @ ((V.T @ grad) / w)
        nrm = np.linalg.norm(step)
        if nrm > 0.3:
            step *= 0.3 / nrm
        cand = retract(step)
        v, lam, mu = obj.best_over_params(cand[None], 33, 10)
        if v[0] < best_v - 1e-16 * (1.0 + abs(best_v)):
            best_f, best_v = cand, float(v[0])
        else:
            break
    vals, lams, mus = obj.best_over_params(best_f[None], 33, 10)
    return best_f, float(vals[0]), float(lams[0]), float(mus[0])


def _two_form_operator(R: CurvatureTensor) -> np.ndarray:
    """Matrix of the curvature quadratic form on 2-forms.

    With rows/columns indexed by pairs i < j, the Hermitian form
    omega^H M conj-pairing equals 4 K of the section when omega = v ^ w,
    so bottom eigenvectors point at small complex sectional curvatures.
    """
    n = R.n
    pairs = list(itertools.combinations(range(n), 2))
    M = np.empty((len(pairs), len(pairs)))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            M[a, b] = 2.0 * R.components[i, j, k, l]
    return 0.5 * (M + M.T)


def _spectral_frames(R: CurvatureTensor) -> np.ndarray:
    """Frame candidates aimed at the smallest complex sectional curvatures.

    Bottom eigenvectors of the 2-form operator are combined into complex
    2-forms; the dominant decomposable plane of each (via SVD of the
    corresponding antisymmetric matrix) yields a section whose
    reconstructed frame usually sits inside the minimizing basin.
    """
    from .sections import ComplexSection, reconstruct_frame

    n = R.n
    if n < 4:
        return np.empty((0, 3, n))
    pairs = list(itertools.combinations(range(n), 2))
    M = _two_form_operator(R)
    _, vecs = np.linalg.eigh(M)
    m = min(3, vecs.shape[1])
    forms = [vecs[:, i].astype(complex) for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            forms.append(vecs[:, i] + 1j * vecs[:, j])
            forms.append(vecs[:, i] - 1j * vecs[:, j])
    frames = []
    for omega in forms:
        W = np.zeros((n, n), dtype=complex)
        for a, (i, j) in enumerate(pairs):
            W[i, j] = omega[a]
            W[j, i] = -omega[a]
        U, sv, _ = np.linalg.svd(W)
        basis = U[:, :2]
        q, r = np.linalg.qr(basis)
        d = np.diag(r)
        d = np.where(np.abs(d) > 1e-12, d, 1.0)
        q = q * (np.conj(d) / np.abs(d))
        try:
            sec = ComplexSection(n, q[:, 0], q[:, 1])
            frame, _, _, _ = reconstruct_frame(sec)
        except Exception:
            continue
        frames.append(frame)
    if not frames:
        return np.empty((0, 4, n))
    return np.asarray(frames)


def _search_direct(R: CurvatureTensor, family: str, s: float | None,
                   budget: SearchBudget, seed, ratio: bool = False,
                   warm_frames: list[np.ndarray] | None = None,
                   pool_size: int = 0):
    """Minimize a direct-family functional (or its I-ratio) over frames.

    Returns ``(value, frame, lam, mu, pool)`` where pool is a list of
    (value, frame, lam, mu) tuples of the refined candidates, used by the
    projection loop and the transversality probe.
    """
    obj = _Objective(R, family, s, ratio=ratio)
    rng = np.random.default_rng(seed_entropy(seed))
    k = obj.k
    n = R.n

    frames_list = [_structured_frames(R, k)]
    if k == 4:
        sf = _spectral_frames(R)
        if len(sf):
            frames_list.append(sf)
    if warm_frames:
        wf = [f for f in warm_frames if f.shape == (k, n)]
        if wf:
            frames_list.append(np.asarray(wf))

    n_starts = max(budget.descents, 1)
    pool_cap = 3 * n_starts
    best: list[tuple[float, int, np.ndarray, float, float]] = []
    counter = 0

    def consume(frames):
        nonlocal counter
        vals, lams, mus = obj.best_over_params(frames, budget.coarse_grid, 2)
        order = np.argsort(vals, kind="stable")
        for i in order[:pool_cap]:
            best.append((float(vals[i]), counter + i, frames[i],
                         float(lams[i]), float(mus[i])))
        counter += len(frames)
        best.sort(key=lambda t: (t[0], t[1]))
        del best[pool_cap:]

    for fr in frames_list:
        for lo in range(0, len(fr), budget.chunk):
            consume(fr[lo: lo + budget.chunk])
    remaining = budget.frames
    while remaining > 0:
        m = min(remaining, budget.chunk)
        consume(_random_frames(n, k, m, rng))
        remaining -= m

    # spectral and warm-start frames always join the descent cohort,
    # whatever their coarse rank
    special = []
    for fr in frames_list[1:]:
        vals, lams, mus = obj.best_over_params(fr, budget.coarse_grid, 2)
        for i in range(len(fr)):
            special.append((float(vals[i]), -1 - i, fr[i], float(lams[i]), float(mus[i])))

    # phase 0: one cheap descent pass over a wide cohort, then keep leaders
    cohort = best[: pool_cap] + special
    c_f = np.asarray([t[2] for t in cohort])
    c_v = np.asarray([t[0] for t in cohort])
    c_f, c_v, _, _ = _descend_batch(obj, c_f, c_v, budget, window_floor=3e-2,
                                    max_rounds=8)
    order0 = np.argsort(c_v, kind="stable")[:n_starts]
    start_f = c_f[order0]
    start_v = c_v[order0]

    # phase 1: rough descent on the cohort; phase 2: polish every frame
    # whose rough value is within reach of the leader (they may overtake it)
    frames_ref, vals, lams, mus = _descend_batch(obj, start_f, start_v, budget,
                                                 window_floor=3e-4)
    order = np.argsort(vals, kind="stable")
    gap = 1e-3 * (1.0 + abs(vals[order[0]]))
    n_lead = int(np.sum(vals <= vals[order[0]] + gap))
    lead = order[: min(max(6, n_lead), max(16, budget.descents // 3))]
    f2, v2, l2, m2 = _descend_batch(obj, frames_ref[lead], vals[lead], budget,
                                    window_floor=1e-5,
                                    max_rounds=2 * budget.max_sweeps)
    # Newton polish wipes out the linear-convergence tail of the leaders
    if budget.newton_iters > 0:
        n_polish = min(3, len(f2))
        for i in np.argsort(v2, kind="stable")[:n_polish]:
            fi, vi, li, mi = _newton_polish(obj, f2[i], float(v2[i]),
                                            iters=budget.newton_iters)
            f2[i], v2[i], l2[i], m2[i] = fi, vi, li, mi
    frames_ref = np.concatenate([f2, frames_ref])
    vals = np.concatenate([v2, vals])
    lams = np.concatenate([l2, lams])
    mus = np.concatenate([m2, mus])
    order = np.argsort(vals, kind="stable")
    pool = [
        (float(vals[i]), frames_ref[i], float(lams[i]), float(mus[i]))
        for i in order
    ]
    v, f, l, m = pool[0]
    return v, f, l, m, pool[:pool_size] if pool_size else []


# ---------------------------------------------------------------------------
# membership margins
# ---------------------------------------------------------------------------

def _ric_eig_certificate(R: CurvatureTensor, p_over_n: float = 0.0):
    """Smallest eigenvalue and eigenvector of Ric(R) - (p/n) scal(R) g."""
    m = ricci(R).entries - p_over_n * scal(R) * np.eye(R.n)
    evals, evecs = np.linalg.eigh(m)
    return float(evals[0]), evecs[:, 0]


def membership_margin(R: CurvatureTensor, spec: ConeSpec,
                      budget: SearchBudget = DEFAULT_BUDGET,
                      seed=0,
                      warm_start: list[Certificate] | None = None) -> MarginReport:
    """Estimate the normalized membership margin of R in the given cone.

    The preimage families first apply the inverse mixing map and then run
    the direct search on the preimage; their margins are normalized by the
    preimage norm.  Negative margins come with a certificate that
    re-evaluates exactly.
    """
    if spec.n != R.n:
        raise ValueError("cone and tensor dimensions differ")
    used = {"frames": budget.frames, "descents": budget.descents}

    if spec.family == "ric":
        val, u = _ric_eig_certificate(R)
        sc = rel_scale(R)
        return MarginReport(
            cone=spec.label(), n=R.n, margin=val / sc, raw_value=val, scale=sc,
            certificate=UnitVectorCertificate(u, value=val),
            sound_violation=val < 0.0, budget_used={"eig": 1},
        )

    if spec.family in PREIMAGE_FAMILIES:
        params = spec.ell_params()
        S = ell_ab_inverse(R, params)
        sc = rel_scale(S)
        if spec.family == "tildec":
            inner_spec = ConeSpec("checkc", R.n, s=spec.s)
            rep = membership_margin(S, inner_spec, budget, seed, warm_start)
            return MarginReport(
                cone=spec.label(), n=R.n, margin=rep.raw_value / sc,
                raw_value=rep.raw_value, scale=sc, certificate=rep.certificate,
                sound_violation=rep.raw_value < 0.0, budget_used=rep.budget_used,
            )
        # hatc: pic2 margin of the preimage and its Ricci eigenvalue margin
        _, _, p = hatc_params(R.n, spec.s)
        rep = membership_margin(S, ConeSpec("pic2", R.n), budget, seed, warm_start)
        eig_val, u = _ric_eig_certificate(S, p / R.n)
        if rep.raw_value <= eig_val:
            raw, cert = rep.raw_value, rep.certificate
        else:
            raw, cert = eig_val, UnitVectorCertificate(u, value=eig_val)
        return MarginReport(
            cone=spec.label(), n=R.n, margin=raw / sc, raw_value=raw, scale=sc,
            certificate=cert, sound_violation=raw < 0.0, budget_used=rep.budget_used,
        )

    warm_frames = None
    if warm_start:
        warm_frames = [c.frame for c in warm_start if isinstance(c, FrameCertificate)]
    val, frame, lam, mu, _ = _search_direct(
        R, spec.family, spec.s, budget, seed, warm_frames=warm_frames
    )
    sc = rel_scale(R)
    cert = FrameCertificate(frame, lam, 1.0 if spec.family == "pic1" else mu, value=val)
    return MarginReport(
        cone=spec.label(), n=R.n, margin=val / sc, raw_value=val, scale=sc,
        certificate=cert, sound_violation=val < 0.0, budget_used=used,
    )


def re_evaluate(R: CurvatureTensor, report: MarginReport) -> float:
    """Recompute the certificate's raw functional value from scratch."""
    spec = parse_cone(report.cone, R.n)
    if spec.family == "ric":
        assert isinstance(report.certificate, UnitVectorCertificate)
        u = report.certificate.u
        return float(u @ ricci(R).entries @ u)
    if spec.family in PREIMAGE_FAMILIES:
        S = ell_ab_inverse(R, spec.ell_params())
        if spec.family == "tildec":
            inner_spec = ConeSpec("checkc", R.n, s=spec.s)
            assert isinstance(report.certificate, FrameCertificate)
            return frame_functional(S, report.certificate, inner_spec)
        if isinstance(report.certificate, UnitVectorCertificate):
            _, _, p = hatc_params(R.n, spec.s)
            u = report.certificate.u
            return float(u @ ricci(S).entries @ u - (p / R.n) * scal(S))
        return frame_functional(S, report.certificate, ConeSpec("pic2", R.n))
    assert isinstance(report.certificate, FrameCertificate)
    return frame_functional(R, report.certificate, spec)


# ---------------------------------------------------------------------------
# certificate normals (supporting halfspaces)
# ---------------------------------------------------------------------------

def _outer4(a, b, c, d):
    return np.einsum("i,j,k,l->ijkl", a, b, c, d)


def certificate_normal(cert: Certificate, spec: ConeSpec) -> CurvatureTensor:
    """Tensor N with <N, R> equal to the certificate's functional on R.

    For the preimage families the normal is pulled back through the inverse
    mixing map (which is self-adjoint), so the result is a supporting
    halfspace normal for the cone itself in all cases.
    """
    n = spec.n
    if spec.family == "ric":
        assert isinstance(cert, UnitVectorCertificate)
        u = cert.u
        raw = np.einsum("i,k,jl->ijkl", u, u, np.eye(n))
        return canonical_project(raw)

    if spec.family in PREIMAGE_FAMILIES:
        params = spec.ell_params()
        if spec.family == "tildec":
            base = certificate_normal(cert, ConeSpec("checkc", n, s=spec.s))
        elif isinstance(cert, UnitVectorCertificate):
            _, _, p = hatc_params(n, spec.s)
            u = cert.u
            raw = np.einsum("i,k,jl->ijkl", u, u, np.eye(n))
            base = canonical_project(raw) - (p / n) * 0.5 * identity_tensor(n)
        else:
            base = certificate_normal(cert, ConeSpec("pic2", n))
        return ell_ab_inverse(base, params)

    assert isinstance(cert, FrameCertificate)
    f = cert.frame
    lam = cert.lam
    mu = 1.0 if spec.family == "pic1" else cert.mu
    if f.shape[0] == 3:
        raw = _outer4(f[0], f[2], f[0], f[2]) + _outer4(f[1], f[2], f[1], f[2])
        return canonical_project(raw)
    raw = (
        _outer4(f[0], f[2], f[0], f[2])
        + lam * lam * _outer4(f[0], f[3], f[0], f[3])
        + mu * mu * _outer4(f[1], f[2], f[1], f[2])
        + lam * lam * mu * mu * _outer4(f[1], f[3], f[1], f[3])
        - 2.0 * lam * mu * _outer4(f[0], f[1], f[2], f[3])
    )
    out = canonical_project(raw)
    if spec.family == "checkc":
        coef = (1.0 - lam * lam) * (1.0 - mu * mu) / spec.s
        out = out + 0.5 * coef * identity_tensor(n)
    return out


def pinch_shift(R: CurvatureTensor, eps: float, sign: str = "-") -> CurvatureTensor:
    """R -/+ eps scal(R) I, the affine pinch used throughout."""
    if sign not in ("-", "+"):
        raise ValueError("sign must be '-' or '+'")
    shift = eps * scal(R)
    I = identity_tensor(R.n)
    return R - shift * I if sign == "-" else R + shift * I
