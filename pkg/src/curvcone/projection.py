"""Metric projection onto the cone families by cutting planes.

Every supported cone is an intersection of halfspaces through the origin,
one per certificate (see :func:`curvcone.cones.certificate_normal`).  The
projection of R is computed by an outer cutting-plane loop: run the
membership search on the current iterate, turn each violated certificate
into a halfspace, project R exactly onto the intersection of the
accumulated halfspaces, and repeat until the full-budget search finds no
violation beyond the tolerance.

The inner projection is an exact polyhedral-cone projection.  By Moreau's
decomposition it reduces to a nonnegative least-squares problem in the
plane multipliers, solved with an active-set NNLS; a Dykstra cyclic
scheme is also provided and the two are cross-checked in the tests.  Only
the most recently violated planes are kept (LRU, default 200): dropped
constraints are re-discovered by later searches if they matter.

The outward unit normal at a non-member factors through the same loop:
xi(R) = (R - project(R)) / |R - project(R)|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .tensor import CurvatureTensor, inner, norm, random_tensor, rel_scale
from .cones import (
    Certificate,
    ConeSpec,
    DEFAULT_BUDGET,
    FrameCertificate,
    MarginReport,
    SearchBudget,
    UnitVectorCertificate,
    certificate_normal,
    membership_margin,
    _ric_eig_certificate,
    _search_direct,
    hatc_params,
)
from . import cones as _cones
from .tensor import ell_ab_inverse, ricci, scal


class ProjectionBudgetError(RuntimeError):
    """Raised when the cutting-plane loop exhausts its budget.

    Carries the best iterate found so callers can still inspect it.
    """

    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


@dataclass
class ProjectionResult:
    tensor: CurvatureTensor
    distance: float
    converged: bool
    outer_iterations: int
    final_margin: float
    planes_kept: int
    report: MarginReport | None = None


def _violated_certificates(R: CurvatureTensor, spec: ConeSpec,
                           budget: SearchBudget, seed, top: int,
                           warm_frames=None):
    """Certificates with negative functional value on R, most violated first.

    For the preimage families the search runs on the mixing-map preimage
    and the returned certificates are expressed in that frame language;
    their pulled-back normals support the actual cone.
    """
    n = R.n
    target = R
    fam, s = spec.family, spec.s
    out: list[tuple[float, Certificate]] = []
    if spec.family == "ric":
        val, u = _ric_eig_certificate(R)
        return [(val, UnitVectorCertificate(u, value=val))], val
    if spec.family in ("hatc", "tildec"):
        target = ell_ab_inverse(R, spec.ell_params())
        if spec.family == "tildec":
            fam = "checkc"
        else:
            fam, s = "pic2", None
            _, _, p = hatc_params(n, spec.s)
            val, u = _ric_eig_certificate(target, p / n)
            if val < 0:
                out.append((val, UnitVectorCertificate(u, value=val)))
    v, f, lam, mu, pool = _search_direct(
        target, fam, s, budget, seed, warm_frames=warm_frames,
        pool_size=max(top * 3, 8),
    )
    for pv, pf, pl, pm in pool:
        if pv < 0:
            out.append((pv, FrameCertificate(pf, pl, 1.0 if fam == "pic1" else pm,
                                             value=pv)))
    # bundle cuts: violated functionals at frames rotated around the deepest
    # minimizers capture the local curvature of the boundary and cut the
    # number of outer iterations drastically; the window scale tracks the
    # frame distance to the boundary foot, which grows like sqrt(violation)
    obj = _cones._Objective(target, fam, s)
    seeds_f = [c[1].frame for c in out[:6] if isinstance(c[1], FrameCertificate)]
    if seeds_f and out[0][0] < 0:
        base = np.sqrt(min(-out[0][0], 1.0) / rel_scale(target))
        sf = np.asarray(seeds_f)
        for window in (0.5 * base, 1.5 * base, 4.0 * base):
            window = min(max(window, 3e-3), 0.8)
            cands = _cones._rotate_candidates(
                sf, np.full(len(sf), window), 9
            ).reshape(-1, sf.shape[1], sf.shape[2])
            vals, lams, mus = obj.best_over_params(cands, 9, 4)
            for i in np.flatnonzero(vals < 0):
                out.append((float(vals[i]),
                            FrameCertificate(cands[i], float(lams[i]),
                                             1.0 if fam == "pic1" else float(mus[i]),
                                             value=float(vals[i]))))
    out.sort(key=lambda t: t[0])
    # drop near-duplicate certificates by normal direction
    kept: list[tuple[float, Certificate]] = []
    feats: list[np.ndarray] = []
    for val, cert in out:
        nrm = certificate_normal(cert, spec).components.ravel()
        nrm = nrm / max(np.linalg.norm(nrm), 1e-300)
        if any(abs(nrm @ g) > 1.0 - 1e-9 for g in feats):
            continue
        kept.append((val, cert))
        feats.append(nrm)
        if len(kept) >= top:
            break
    return kept, min(v, out[0][0] if out else v)


def _project_halfspaces_nnls(x0: np.ndarray, normals: np.ndarray):
    """Exact projection onto {x : N x >= 0} via Moreau + NNLS.

    Returns the projection and the active multipliers.
    """
    lam, _ = nnls(normals.T, -x0)
    return x0 + normals.T @ lam, lam


def _project_halfspaces_dykstra(x0: np.ndarray, normals: np.ndarray,
                                max_sweeps: int = 2000,
                                tol: float = 1e-14) -> np.ndarray:
    """Dykstra cyclic projection onto the same halfspace intersection."""
    m = normals.shape[0]
    sq = np.einsum("ij,ij->i", normals, normals)
    x = x0.copy()
    corr = np.zeros((m, x0.size))
    for _ in range(max_sweeps):
        delta = 0.0
        for i in range(m):
            y = x + corr[i]
            viol = normals[i] @ y
            if viol < 0.0:
                xn = y - (viol / sq[i]) * normals[i]
            else:
                xn = y
            corr[i] = y - xn
            delta = max(delta, np.max(np.abs(xn - x)))
            x = xn
        if delta <= tol * (1.0 + np.linalg.norm(x0)):
            break
    return x


@dataclass
class _PlaneStore:
    """LRU store of supporting halfspaces, keyed by normal direction."""

    cap: int = 200
    normals: list[np.ndarray] = field(default_factory=list)
    stamps: list[int] = field(default_factory=list)
    clock: int = 0

    def add(self, normal: np.ndarray):
        self.clock += 1
        unit = normal / max(np.linalg.norm(normal), 1e-300)
        if self.normals:
            cos = np.abs(np.asarray(self.normals) @ unit)
            hit = int(np.argmax(cos))
            if cos[hit] > 1.0 - 1e-10:
                self.stamps[hit] = self.clock
                return
        self.normals.append(unit)
        self.stamps.append(self.clock)
        if len(self.normals) > self.cap:
            drop = int(np.argmin(self.stamps))
            del self.normals[drop]
            del self.stamps[drop]

    def touch(self, indices):
        self.clock += 1
        for i in indices:
            self.stamps[i] = self.clock

    def matrix(self) -> np.ndarray:
        return np.asarray(self.normals)


def project_report(R: CurvatureTensor, spec: ConeSpec, tol: float = 1e-9,
                   budget: SearchBudget | None = None, seed=0,
                   max_outer: int = 80, max_planes: int = 200,
                   method: str = "nnls",
                   verify_budget: SearchBudget | None = None) -> ProjectionResult:
    """Cutting-plane projection of R onto the cone, with diagnostics.

    ``tol`` bounds the normalized membership margin of the returned point.
    Interior searches use a reduced budget plus warm starts from previous
    violations; ``verify_budget`` (default: a mid-size share of ``budget``)
    runs the final no-violation check.
    """
    if budget is None:
        budget = DEFAULT_BUDGET
    small = budget.scaled(frames=max(600, budget.frames // 16),
                          descents=max(8, budget.descents // 6),
                          newton_iters=1, max_sweeps=20)
    tail = small.scaled(frames=64, descents=3, newton_iters=0, max_sweeps=10)
    if verify_budget is None:
        verify_budget = budget.scaled(frames=max(2000, budget.frames // 8),
                                      descents=max(12, budget.descents // 4))
    store = _PlaneStore(cap=max_planes)
    x0 = R.components.ravel().copy()
    x = R
    warm: list[np.ndarray] = []
    final_margin = -np.inf
    last_v = -np.inf
    boost = 0
    for it in range(max_outer):
        use = small if (boost > 0 or last_v < -5e-2 * rel_scale(x)) else tail
        boost = max(0, boost - 1)
        certs, _ = _violated_certificates(x, spec, use, (seed, it), top=48,
                                          warm_frames=warm or None)
        if not certs or certs[0][0] >= -tol * rel_scale(x):
            # nothing (strongly) violated at the small budget: verify
            warm_certs = [FrameCertificate(f, 0.0, 1.0) for f in warm[:8]]
            rep = membership_margin(x, spec, verify_budget, (seed, 7777, it),
                                    warm_start=warm_certs or None)
            final_margin = rep.margin
            if rep.margin >= -tol:
                return ProjectionResult(
                    tensor=x, distance=float(np.linalg.norm(x.components.ravel() - x0)),
                    converged=True, outer_iterations=it + 1,
                    final_margin=rep.margin, planes_kept=len(store.normals),
                    report=rep,
                )
            certs = [(rep.raw_value, rep.certificate)]
            boost = 2
        last_v = certs[0][0]
        warm = []
        for val, cert in certs:
            store.add(certificate_normal(cert, spec).components.ravel())
            if isinstance(cert, FrameCertificate) and len(warm) < 12:
                warm.append(cert.frame)
        normals = store.matrix()
        if method == "dykstra":
            y = _project_halfspaces_dykstra(x0, normals)
        else:
            y, lam = _project_halfspaces_nnls(x0, normals)
            store.touch(np.flatnonzero(lam > 0.0))
        x = CurvatureTensor(R.n, y.reshape(R.components.shape))
    result = ProjectionResult(
        tensor=x, distance=float(np.linalg.norm(x.components.ravel() - x0)),
        converged=False, outer_iterations=max_outer,
        final_margin=final_margin, planes_kept=len(store.normals),
    )
    raise ProjectionBudgetError(
        f"projection onto {spec.label()} did not reach tol={tol} "
        f"in {max_outer} cutting iterations", result,
    )


def project(R: CurvatureTensor, spec: ConeSpec, tol: float = 1e-9,
            budget: SearchBudget | None = None, seed=0,
            method: str = "nnls") -> CurvatureTensor:
    """Projection of R onto the cone (see :func:`project_report`)."""
    return project_report(R, spec, tol=tol, budget=budget, seed=seed,
                          method=method).tensor


def distance(R: CurvatureTensor, spec: ConeSpec, tol: float = 1e-9,
             budget: SearchBudget | None = None, seed=0) -> float:
    """Distance |R - project(R)| to the cone."""
    return project_report(R, spec, tol=tol, budget=budget, seed=seed).distance


class XiUndefinedError(ValueError):
    """Outward normal requested at a point that already lies in the cone."""


def xi(R: CurvatureTensor, spec: ConeSpec, tol: float = 1e-9,
       budget: SearchBudget | None = None, seed=0) -> CurvatureTensor:
    """Unit outward normal (R - project(R)) / |R - project(R)|."""
    res = project_report(R, spec, tol=tol, budget=budget, seed=seed)
    if res.distance <= tol * rel_scale(R):
        raise XiUndefinedError(
            f"xi undefined: point is within {res.distance:.3e} of {spec.label()}"
        )
    diff = R.components - res.tensor.components
    return CurvatureTensor(R.n, diff / np.linalg.norm(diff.ravel()))


def sample_member(spec: ConeSpec, rng: np.random.Generator,
                  tol: float = 1e-9, budget: SearchBudget | None = None,
                  min_norm: float = 1e-6) -> CurvatureTensor:
    """Random cone member: projection of a Gaussian-component tensor.

    Draws are discarded when the projection collapses to (near) zero.
    """
    for _ in range(64):
        raw = random_tensor(spec.n, rng)
        seed = int(rng.integers(0, 2**32))
        out = project(raw, spec, tol=tol, budget=budget, seed=seed)
        if norm(out) > min_norm:
            return out
    raise RuntimeError(f"could not sample a nonzero member of {spec.label()}")
