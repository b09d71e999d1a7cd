"""Penalized-MAP calibration of the stationary and spatially varying models.

The objective is the log posterior: Gaussian ln-velocity likelihood plus the
coefficient priors. Positive parameters are optimized on the log scale (the
prior density then carries the Jacobian). For the spatial model the per-profile
slope adjustments are integrated out with a Laplace approximation around their
conditional mode, so the GP hyperparameters have a proper optimum; the modes
and their curvature-based sds are reported as the fitted dBr field.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, stats

from . import core, geostat
from .coefficients import CoefficientSet
from .core import DiscretizationRule, LayeredProfile, Provenance

log = logging.getLogger(__name__)

LN_2PI = math.log(2.0 * math.pi)

STATIONARY_PARAMS = ("vs30_ref", "vs30_w", "r1", "r2", "r3", "s2", "sigma")
SPATIAL_PARAMS = ("dr1", "dr2", "sigma", "ell", "omega")
LOG_PARAMS = frozenset({"vs30_w", "s2", "r2", "r3", "sigma", "ell", "omega"})


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Prior:
    """Univariate prior. ``kind`` is one of normal, gamma, lognormal,
    exponential, invgamma, halfnormal.

    Conventions: gamma(shape, scale) has mean shape*scale; invgamma(shape,
    scale) has mode scale/(shape+1); lognormal(mu, sd) is on ln x;
    exponential(rate); halfnormal(loc, sd) is a normal truncated at loc.
    """

    kind: str
    a: float
    b: float = 0.0

    def _dist(self):
        if self.kind == "normal":
            return stats.norm(self.a, self.b)
        if self.kind == "gamma":
            return stats.gamma(self.a, scale=self.b)
        if self.kind == "lognormal":
            return stats.lognorm(self.b, scale=math.exp(self.a))
        if self.kind == "exponential":
            return stats.expon(scale=1.0 / self.a)
        if self.kind == "invgamma":
            return stats.invgamma(self.a, scale=self.b)
        if self.kind == "halfnormal":
            return stats.halfnorm(self.a, self.b)
        raise ValueError(f"unknown prior kind {self.kind!r}")

    def logpdf(self, x: float) -> float:
        x = float(x)
        if self.kind == "normal":
            return -0.5 * ((x - self.a) / self.b) ** 2 - math.log(self.b) - 0.5 * LN_2PI
        if self.kind == "gamma":
            if x <= 0:
                return -math.inf
            return (self.a - 1) * math.log(x) - x / self.b - math.lgamma(self.a) - self.a * math.log(self.b)
        if self.kind == "lognormal":
            if x <= 0:
                return -math.inf
            lx = math.log(x)
            return -0.5 * ((lx - self.a) / self.b) ** 2 - math.log(self.b) - 0.5 * LN_2PI - lx
        if self.kind == "exponential":
            if x < 0:
                return -math.inf
            return math.log(self.a) - self.a * x
        if self.kind == "invgamma":
            if x <= 0:
                return -math.inf
            return self.a * math.log(self.b) - math.lgamma(self.a) - (self.a + 1) * math.log(x) - self.b / x
        if self.kind == "halfnormal":
            if x < self.a:
                return -math.inf
            return math.log(2.0) - 0.5 * ((x - self.a) / self.b) ** 2 - math.log(self.b) - 0.5 * LN_2PI
        raise ValueError(f"unknown prior kind {self.kind!r}")

    def sample(self, rng: np.random.Generator) -> float:
        return float(self._dist().rvs(random_state=rng))

    def ppf(self, q):
        return self._dist().ppf(q)

    def mode(self) -> float:
        if self.kind == "normal":
            return self.a
        if self.kind == "gamma":
            return max(self.a - 1, 0.0) * self.b
        if self.kind == "lognormal":
            return math.exp(self.a - self.b**2)
        if self.kind in ("exponential", "halfnormal"):
            return 0.0 if self.kind == "exponential" else self.a
        if self.kind == "invgamma":
            return self.b / (self.a + 1)
        raise ValueError(self.kind)


def default_priors() -> dict[str, Prior]:
    return {
        "vs30_ref": Prior("normal", 5.7, 0.1),
        "vs30_w": Prior("gamma", 2.0, 0.5),
        "s2": Prior("lognormal", 2.0, 0.3),
        "r1": Prior("normal", 0.0, 5.0),
        "r2": Prior("lognormal", 0.5, 0.5),
        "r3": Prior("exponential", 2.0),
        "sigma": Prior("lognormal", -1.0, 0.6),
        "dr1": Prior("normal", 0.0, 0.2),
        "dr2": Prior("normal", 0.0, 0.2),
        "ell": Prior("invgamma", 2.0, 50.0),
        "omega": Prior("halfnormal", 0.0, 0.02),
    }


PriorSpec = dict  # name -> Prior


# --------------------------------------------------------------------------
# data preparation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProfileData:
    """Flattened layer observations of a profile set."""

    ids: tuple
    vs30: np.ndarray  # per profile
    z: np.ndarray  # layer mid-depths
    y: np.ndarray  # ln vs
    idx: np.ndarray  # profile index per layer
    lat: np.ndarray
    lon: np.ndarray

    @property
    def n_profiles(self) -> int:
        return self.vs30.size

    @property
    def n_obs(self) -> int:
        return self.y.size


def profile_vs30(p: LayeredProfile, source: str = "profile") -> float:
    """Conditioning Vs30 of a profile.

    ``profile``: computed from the top 30 m, metadata for shallower columns;
    ``metadata``: metadata when present, else computed.
    """
    if source == "metadata" and p.vs30 is not None:
        return float(p.vs30)
    if source not in ("profile", "metadata"):
        raise ValueError(f"unknown vs30 source {source!r}")
    if p.depth >= core.DEPTH_30:
        return core.time_averaged_vs(p, core.DEPTH_30)
    return p.site_vs30()


def prepare(profiles, vs30_source: str = "profile") -> ProfileData:
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no profiles")
    vs30 = np.array([profile_vs30(p, vs30_source) for p in profiles])
    z = np.concatenate([p.mid_depth for p in profiles])
    y = np.concatenate([np.log(p.vs) for p in profiles])
    idx = np.concatenate([np.full(p.n_layers, i) for i, p in enumerate(profiles)])
    lat = np.array([np.nan if p.lat is None else p.lat for p in profiles])
    lon = np.array([np.nan if p.lon is None else p.lon for p in profiles])
    return ProfileData(tuple(p.id for p in profiles), vs30, z, y, idx, lat, lon)


def _ln_median(data: ProfileData, vs30_ref, vs30_w, r1, r2, r3, s2, dbr=0.0):
    """ln median at every observation plus per-profile (k, n)."""
    x = (np.log(data.vs30) - vs30_ref) / vs30_w
    n = 1.0 + s2 * core.sigmoid(x)
    lnk = core.ln_k_of_scaled(x, r1, r2, r3, vs30_w) + dbr
    k = np.exp(lnk)
    ln_vs0 = np.log(data.vs30) + np.log(core.travel_time_factor(k, n)) - math.log(core.DEPTH_30)
    kk, nn = k[data.idx], n[data.idx]
    f = ln_vs0[data.idx] + np.log1p(kk * np.maximum(data.z - core.Z_STAR, 0.0)) / nn
    return f, k, n


def _gauss_loglik(resid, sigma):
    return float(-0.5 * np.sum(resid**2) / sigma**2 - resid.size * (math.log(sigma) + 0.5 * LN_2PI))


# --------------------------------------------------------------------------
# public likelihood / prior
# --------------------------------------------------------------------------


def _theta_dict(theta) -> dict:
    if isinstance(theta, CoefficientSet):
        return theta.to_dict()
    return dict(theta)


def _in_support(th: dict) -> bool:
    for name in ("vs30_w", "s2", "sigma"):
        if name in th and not th[name] > 0:
            return False
    for name in ("r2", "r3"):
        if name in th and not th[name] >= 0:
            return False
    return True


def log_likelihood(profiles, theta, *, dbr=None, vs30_source: str = "profile") -> float:
    """Sum of normal ln-densities of ``ln vs_obs - ln median`` with sd ``sigma``.

    ``theta`` is a CoefficientSet or mapping with the stationary keys; ``dbr``
    gives per-profile slope adjustments for spatial evaluation. Returns -inf
    outside the parameter support.
    """
    th = _theta_dict(theta)
    if not _in_support(th):
        return -math.inf
    data = profiles if isinstance(profiles, ProfileData) else prepare(profiles, vs30_source)
    d = 0.0 if dbr is None else np.asarray(dbr, dtype=float)
    f, _, _ = _ln_median(data, th["vs30_ref"], th["vs30_w"], th["r1"], th["r2"], th["r3"], th["s2"], d)
    return _gauss_loglik(data.y - f, th["sigma"])


def gp_log_density(dbr, x_km, y_km, omega: float, ell: float) -> float:
    """Multivariate normal ln-density of ``dbr`` under the exponential-kernel GP."""
    dbr = np.asarray(dbr, dtype=float)
    if not (omega > 0 and ell > 0):
        return -math.inf
    K = geostat.spatial_kernel(geostat.pairwise_distance(x_km, y_km), omega, ell)
    cf = geostat._cholesky_with_jitter(K, "GP prior covariance")
    alpha = linalg.cho_solve(cf, dbr, check_finite=False)
    return float(-0.5 * dbr @ alpha - np.sum(np.log(np.diag(cf[0]))) - 0.5 * dbr.size * LN_2PI)


def log_prior(theta, priors: PriorSpec | None = None, model: str = "stationary", *, coords=None) -> float:
    """Sum of prior ln-densities of the active parameters (natural scale).

    For ``model="spatial"`` the active set is dr1, dr2, sigma, ell, omega and,
    if ``theta`` has a ``dbr`` vector and ``coords=(x_km, y_km)`` is given, the
    GP density of that vector.
    """
    priors = priors or default_priors()
    th = _theta_dict(theta)
    names = STATIONARY_PARAMS if model == "stationary" else SPATIAL_PARAMS
    total = 0.0
    for name in names:
        lp = priors[name].logpdf(th[name])
        if lp == -math.inf:
            return -math.inf
        total += lp
    if model == "spatial" and th.get("dbr") is not None and coords is not None:
        total += gp_log_density(th["dbr"], coords[0], coords[1], th["omega"], th["ell"])
    return total


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    """Point estimate with curvature-based uncertainty and diagnostics."""

    model: str
    coefficients: CoefficientSet
    params: dict
    sd: dict
    neg_log_posterior: float
    iterations: int
    grad_norm: float
    status: str
    restarts: list = field(default_factory=list)
    profile_ids: tuple = ()
    dbr_mean: np.ndarray | None = None
    dbr_sd: np.ndarray | None = None
    x_km: np.ndarray | None = None
    y_km: np.ndarray | None = None
    projection: geostat.LocalProjection | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def spatial_field(self) -> geostat.SpatialField:
        if self.dbr_mean is None:
            raise ValueError("not a spatial fit")
        return geostat.SpatialField(
            self.x_km, self.y_km, self.dbr_mean, self.dbr_sd,
            self.params["omega"], self.params["ell"], self.projection, tuple(self.profile_ids),
        )

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "status": self.status,
            "neg_log_posterior": self.neg_log_posterior,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "params": self.params,
            "sd": self.sd,
            "coefficients": self.coefficients.to_dict(),
            "restarts": self.restarts,
        }
        if self.dbr_mean is not None:
            out["profiles"] = [
                {"id": pid, "dBr_mean": float(m), "dBr_sd": float(s)}
                for pid, m, s in zip(self.profile_ids, self.dbr_mean, self.dbr_sd)
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        names = list(self.params)
        width = max(10, *(len(n) + 2 for n in names))
        head = "Coefficient".ljust(14) + "".join(n.rjust(width) for n in names)
        est = "MAP".ljust(14) + "".join(f"{self.params[n]:{width}.4f}" for n in names)
        sds = "Approx. sd".ljust(14) + "".join(f"{self.sd.get(n, float('nan')):{width}.4f}" for n in names)
        rule = "-" * len(head)
        lines = [f"{self.model} model fit ({self.status}, -log posterior {self.neg_log_posterior:.3f})", rule, head, rule, est, sds, rule]
        return "\n".join(lines)


@dataclass
class FitOptions:
    max_iter: int = 500
    n_restarts: int = 5
    seed: int = 0
    fixed: dict = field(default_factory=dict)
    vs30_source: str = "profile"
    gtol: float = 1e-4
    rel_step: float = 1e-6


# --------------------------------------------------------------------------
# optimizer plumbing
# --------------------------------------------------------------------------


def _to_u(name, value):
    return math.log(value) if name in LOG_PARAMS else float(value)


def _from_u(name, u):
    return math.exp(u) if name in LOG_PARAMS else float(u)


def numerical_gradient(fun, u, rel_step=1e-6):
    """Central differences with step ``rel_step * max(1, |u_i|)``."""
    u = np.asarray(u, dtype=float)
    g = np.empty_like(u)
    for i in range(u.size):
        h = rel_step * max(1.0, abs(u[i]))
        up = u.copy()
        dn = u.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fun(up) - fun(dn)) / (2 * h)
    return g


def numerical_hessian(fun, u, rel_step=1e-4):
    u = np.asarray(u, dtype=float)
    m = u.size
    H = np.empty((m, m))
    f0 = fun(u)
    hs = rel_step * np.maximum(1.0, np.abs(u))
    for i in range(m):
        for j in range(i, m):
            if i == j:
                up = u.copy()
                dn = u.copy()
                up[i] += hs[i]
                dn[i] -= hs[i]
                H[i, i] = (fun(up) - 2 * f0 + fun(dn)) / hs[i] ** 2
            else:
                vals = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    v = u.copy()
                    v[i] += si * hs[i]
                    v[j] += sj * hs[j]
                    vals.append(fun(v))
                H[i, j] = H[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * hs[i] * hs[j])
    return H


def _scaled_grad_norm(g, u, f):
    return float(np.max(np.abs(g) * np.maximum(1.0, np.abs(u))) / max(1.0, abs(f)))


def _minimize(objective, u0, options: FitOptions):
    """BFGS on ``objective`` with central-difference gradients."""
    def fun(u):
        v = objective(u)
        return v if np.isfinite(v) else 1e300

    def jac(u):
        return numerical_gradient(fun, u, options.rel_step)

    if options.max_iter <= 0:
        f0 = fun(u0)
        g0 = jac(u0)
        return np.asarray(u0, float), f0, 0, _scaled_grad_norm(g0, u0, f0), "not-converged"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(fun, u0, jac=jac, method="BFGS", options={"maxiter": options.max_iter, "gtol": 1e-7})
    u = res.x
    f = float(res.fun)
    g = jac(u)
    gn = _scaled_grad_norm(g, u, f)
    status = "converged" if gn < options.gtol else "not-converged"
    return u, f, int(res.nit), gn, status


def _curvature_sd(objective, u, names, rel_step=1e-4):
    H = numerical_hessian(objective, u, rel_step)
    try:
        cov = np.linalg.inv(H)
        var_u = np.diag(cov)
    except np.linalg.LinAlgError:
        var_u = np.full(len(names), np.nan)
    sd = {}
    for i, name in enumerate(names):
        su = math.sqrt(var_u[i]) if var_u[i] > 0 else float("nan")
        # delta method back to the natural scale
        sd[name] = _from_u(name, u[i]) * su if name in LOG_PARAMS else su
    return sd


# --------------------------------------------------------------------------
# stationary fit
# --------------------------------------------------------------------------


def _stationary_objective(data: ProfileData, priors, free, fixed):
    def objective(u):
        th = dict(fixed)
        lp = 0.0
        for name, ui in zip(free, u):
            th[name] = _from_u(name, ui)
            p = priors[name].logpdf(th[name])
            if p == -math.inf:
                return math.inf
            lp += p + (ui if name in LOG_PARAMS else 0.0)
        if not _in_support(th):
            return math.inf
        f, _, _ = _ln_median(data, th["vs30_ref"], th["vs30_w"], th["r1"], th["r2"], th["r3"], th["s2"])
        return -(lp + _gauss_loglik(data.y - f, th["sigma"]))

    return objective


def _prior_draw(names, priors, rng):
    out = {}
    for name in names:
        v = priors[name].sample(rng)
        if name in LOG_PARAMS:
            v = max(v, 1e-3)
        out[name] = v
    return out


def _run_restarts(objective, names, init: dict, priors, options: FitOptions):
    rng = np.random.default_rng(np.random.SeedSequence([options.seed, 0xCA11]))
    starts = [init] + [_prior_draw(names, priors, rng) for _ in range(options.n_restarts)]
    best = None
    record = []
    for i, start in enumerate(starts):
        u0 = np.array([_to_u(n, start[n]) for n in names])
        if not np.isfinite(objective(u0)):
            record.append({"restart": i, "status": "invalid-start"})
            continue
        u, f, nit, gn, status = _minimize(objective, u0, options)
        record.append({"restart": i, "objective": f, "iterations": nit, "status": status})
        # strict improvement beyond 1e-9 keeps the lowest index on ties
        if best is None or f < best[1] - 1e-9:
            best = (u, f, nit, gn, status)
    if best is None:
        raise geostat.NumericalError("no restart produced a finite objective")
    return best, record


def fit_stationary(profiles, priors: PriorSpec | None = None, init=None, options: FitOptions | None = None) -> FitResult:
    options = options or FitOptions()
    priors = priors or default_priors()
    profiles = list(profiles)
    if len(profiles) < 10:
        log.warning("map_fit with %d profiles; priors will dominate weakly identified parameters", len(profiles))
    data = prepare(profiles, options.vs30_source)
    free = [n for n in STATIONARY_PARAMS if n not in options.fixed]
    init_d = _theta_dict(init) if init is not None else {n: _prior_center(n, priors) for n in STATIONARY_PARAMS}
    fixed = {n: float(v) for n, v in options.fixed.items()}
    objective = _stationary_objective(data, priors, free, fixed)
    (u, f, nit, gn, status), record = _run_restarts(objective, free, init_d, priors, options)
    params = {**fixed, **{n: _from_u(n, ui) for n, ui in zip(free, u)}}
    params = {n: params[n] for n in STATIONARY_PARAMS}
    sd = _curvature_sd(objective, u, free)
    for n in fixed:
        sd[n] = 0.0
    coeffs = CoefficientSet(**params)
    return FitResult(
        model="stationary",
        coefficients=coeffs,
        params=params,
        sd={n: sd[n] for n in STATIONARY_PARAMS},
        neg_log_posterior=f,
        iterations=nit,
        grad_norm=gn,
        status=status,
        restarts=record,
        profile_ids=data.ids,
    )


def _prior_center(name, priors):
    p = priors[name]
    if p.kind in ("exponential", "halfnormal"):
        return float(p.ppf(0.5))
    return float(p.ppf(0.5))


# --------------------------------------------------------------------------
# spatial fit (Laplace-marginalized slope adjustments)
# --------------------------------------------------------------------------


def _spatial_pieces(data: ProfileData, base: CoefficientSet, dr1, dr2):
    """Per-profile pieces that do not depend on dBr."""
    x = (np.log(data.vs30) - base.vs30_ref) / base.vs30_w
    n = 1.0 + base.s2 * core.sigmoid(x)
    lnk0 = core.ln_k_of_scaled(x, base.r1 + dr1, base.r2 + dr2, base.r3, base.vs30_w)
    return n, lnk0


def _spatial_median(data: ProfileData, n, lnk0, b):
    """ln median at all observations and its derivative with respect to dBr."""
    k = np.exp(lnk0 + b)
    ln_vs0 = np.log(data.vs30) + np.log(core.travel_time_factor(k, n)) - math.log(core.DEPTH_30)
    kk, nn = k[data.idx], n[data.idx]
    kz = kk * np.maximum(data.z - core.Z_STAR, 0.0)
    f = ln_vs0[data.idx] + np.log1p(kz) / nn
    df = kz / (1.0 + kz) / nn + core.dln_vs0_dln_k(k, n)[data.idx]
    return f, df


@dataclass
class _LaplaceState:
    log_marginal: float
    b: np.ndarray
    b_sd: np.ndarray
    loglik: float


def laplace_dbr(data: ProfileData, n, lnk0, sigma, K, tol=1e-10, max_iter=100) -> _LaplaceState:
    """Mode of the dBr vector under the GP prior and the Laplace log marginal.

    Newton iterations in the ``b = K a`` parameterization with the
    Gauss-Newton likelihood curvature (always PSD), step-halved to ascend.
    """
    m = data.n_profiles
    a = np.zeros(m)
    b = np.zeros(m)

    def psi_of(a, b):
        f, df = _spatial_median(data, n, lnk0, b)
        r = data.y - f
        ll = _gauss_loglik(r, sigma)
        grad = np.bincount(data.idx, weights=r * df, minlength=m) / sigma**2
        W = np.bincount(data.idx, weights=df * df, minlength=m) / sigma**2
        return -0.5 * a @ b + ll, ll, grad, W

    psi, ll, grad, W = psi_of(a, b)
    for _ in range(max_iter):
        sw = np.sqrt(W)
        B = np.eye(m) + sw[:, None] * K * sw[None, :]
        L = linalg.cholesky(B, lower=True, check_finite=False)
        c = W * b + grad
        t = linalg.solve_triangular(L, sw * (K @ c), lower=True, check_finite=False)
        a_new = c - sw * linalg.solve_triangular(L.T, t, lower=False, check_finite=False)
        da = a_new - a
        step = 1.0
        for _ in range(30):
            a_try = a + step * da
            b_try = K @ a_try
            psi_try, ll_try, grad_try, W_try = psi_of(a_try, b_try)
            if psi_try >= psi - 1e-12 * max(1.0, abs(psi)):
                break
            step *= 0.5
        improvement = psi_try - psi
        a, b, psi, ll, grad, W = a_try, b_try, psi_try, ll_try, grad_try, W_try
        if abs(improvement) < tol * max(1.0, abs(psi)) and step == 1.0:
            break
    sw = np.sqrt(W)
    B = np.eye(m) + sw[:, None] * K * sw[None, :]
    L = linalg.cholesky(B, lower=True, check_finite=False)
    V = linalg.solve_triangular(L, sw[:, None] * K, lower=True, check_finite=False)
    var = np.diag(K) - np.sum(V * V, axis=0)
    logm = psi - float(np.sum(np.log(np.diag(L))))
    return _LaplaceState(logm, b, np.sqrt(np.maximum(var, 0.0)), ll)


def _spatial_objective(data, base, priors, free, fixed, D):
    cache = {}

    def state(u):
        key = tuple(np.round(u, 15))
        if key in cache:
            return cache[key]
        th = dict(fixed)
        lp = 0.0
        for name, ui in zip(free, u):
            th[name] = _from_u(name, ui)
            p = priors[name].logpdf(th[name])
            if p == -math.inf:
                return math.inf, None, th
            lp += p + (ui if name in LOG_PARAMS else 0.0)
        n, lnk0 = _spatial_pieces(data, base, th["dr1"], th["dr2"])
        K = th["omega"] ** 2 * np.exp(-D / th["ell"])
        st = laplace_dbr(data, n, lnk0, th["sigma"], K)
        val = -(lp + st.log_marginal)
        if len(cache) > 64:
            cache.clear()
        cache[key] = (val, st, th)
        return cache[key]

    def objective(u):
        return state(u)[0]

    return objective, state


def fit_spatial(
    profiles,
    priors: PriorSpec | None = None,
    init=None,
    options: FitOptions | None = None,
    base: CoefficientSet | None = None,
    projection: geostat.LocalProjection | None = None,
) -> FitResult:
    """Spatially varying fit at fixed ``base`` {vs30_ref, vs30_w, r3, s2}.

    ``r1``/``r2`` of the result are ``base.r1 + dr1`` and ``base.r2 + dr2``.
    """
    from .coefficients import preset

    options = options or FitOptions()
    priors = priors or default_priors()
    base = base or preset("stationary")
    profiles = list(profiles)
    if len(profiles) < 10:
        log.warning("map_fit with %d profiles; priors will dominate weakly identified parameters", len(profiles))
    data = prepare(profiles, options.vs30_source)
    if np.any(np.isnan(data.lat)) or np.any(np.isnan(data.lon)):
        raise ValueError("spatial fit needs lat/lon on every profile")
    proj = projection or geostat.LocalProjection.about_centroid(data.lat, data.lon)
    x, y = proj.forward(data.lat, data.lon)
    D = geostat.pairwise_distance(x, y)

    free = [n for n in SPATIAL_PARAMS if n not in options.fixed]
    fixed = {n: float(v) for n, v in options.fixed.items()}
    if init is None:
        init_d = {"dr1": 0.0, "dr2": 0.0, "sigma": base.sigma, "ell": 5.0, "omega": 0.1}
    else:
        init_d = _theta_dict(init)
    objective, state = _spatial_objective(data, base, priors, free, fixed, D)
    (u, f, nit, gn, status), record = _run_restarts(objective, free, init_d, priors, options)
    _, st, th = state(u)
    sd = _curvature_sd(objective, u, free)
    for n in fixed:
        sd[n] = 0.0
    params = {n: th[n] for n in SPATIAL_PARAMS}
    coeffs = base.with_values(
        r1=base.r1 + params["dr1"],
        r2=max(base.r2 + params["dr2"], 0.0),
        sigma=params["sigma"],
        ell_km=params["ell"],
        omega=params["omega"],
        dbr_training=tuple(float(v) for v in st.b),
    )
    return FitResult(
        model="spatial",
        coefficients=coeffs,
        params=params,
        sd={n: sd[n] for n in SPATIAL_PARAMS},
        neg_log_posterior=f,
        iterations=nit,
        grad_norm=gn,
        status=status,
        restarts=record,
        profile_ids=data.ids,
        dbr_mean=st.b,
        dbr_sd=st.b_sd,
        x_km=x,
        y_km=y,
        projection=proj,
    )


def objective_function(profiles, priors=None, model: str = "stationary", options: FitOptions | None = None, base=None):
    """Negative log posterior in the optimizer's unconstrained coordinates.

    Returns ``(objective, names, to_u, from_u)`` where ``objective(u)`` takes
    the free parameters ``names`` (log scale for positive ones).
    """
    from .coefficients import preset

    options = options or FitOptions()
    priors = priors or default_priors()
    data = profiles if isinstance(profiles, ProfileData) else prepare(profiles, options.vs30_source)
    fixed = {n: float(v) for n, v in options.fixed.items()}
    if model == "stationary":
        names = [n for n in STATIONARY_PARAMS if n not in fixed]
        objective = _stationary_objective(data, priors, names, fixed)
    elif model == "spatial":
        base = base or preset("stationary")
        proj = geostat.LocalProjection.about_centroid(data.lat, data.lon)
        x, y = proj.forward(data.lat, data.lon)
        names = [n for n in SPATIAL_PARAMS if n not in fixed]
        objective, _ = _spatial_objective(data, base, priors, names, fixed, geostat.pairwise_distance(x, y))
    else:
        raise ValueError(f"unknown model {model!r}")

    def to_u(theta):
        return np.array([_to_u(n, theta[n]) for n in names])

    def from_u(u):
        return {n: _from_u(n, ui) for n, ui in zip(names, u)}

    return objective, names, to_u, from_u


def map_fit(profiles, priors=None, model: str = "stationary", init=None, options: FitOptions | None = None, **kw) -> FitResult:
    """Maximum a posteriori fit of the stationary or spatial model."""
    if model == "stationary":
        return fit_stationary(profiles, priors, init, options)
    if model == "spatial":
        return fit_spatial(profiles, priors, init, options, **kw)
    raise ValueError(f"unknown model {model!r}")


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthLayout:
    n_profiles: int = 200
    vs30_range: tuple = (120.0, 1200.0)
    depth_range: tuple = (30.0, 100.0)
    extent_km: tuple = (20.0, 20.0)
    origin: tuple = (37.7, -122.2)
    rule: DiscretizationRule = DiscretizationRule(top=1.0, growth=1.1, cap=5.0)
    depth_sill: float | None = None
    depth_range_m: float | None = None

    def __post_init__(self):
        lo, hi = self.vs30_range
        if not (0 < lo <= hi):
            raise ValueError("vs30_range must be positive and ordered")
        dlo, dhi = self.depth_range
        if not (0 < dlo <= dhi):
            raise ValueError("depth_range must be positive and ordered")
        if not (self.extent_km[0] > 0 and self.extent_km[1] > 0):
            raise ValueError("degenerate spatial extent")
        if self.n_profiles < 1:
            raise ValueError("n_profiles must be >= 1")


@dataclass(frozen=True, eq=False)
class SynthDataset:
    profiles: list
    vs30: np.ndarray
    x_km: np.ndarray
    y_km: np.ndarray
    dbr: np.ndarray
    projection: geostat.LocalProjection

    def truth_field(self, omega: float, ell: float) -> geostat.SpatialField:
        ids = tuple(p.id for p in self.profiles)
        return geostat.SpatialField(self.x_km, self.y_km, self.dbr, np.zeros_like(self.dbr), omega, ell, self.projection, ids)


def synth_dataset(
    theta_true: CoefficientSet, layout: SynthLayout = SynthLayout(), seed=0, noise_sd: float | None = None
) -> SynthDataset:
    """Draw profiles from the model.

    Vs30 is log-uniform in range, locations uniform over the extent, dBr from
    the GP when ``theta_true`` carries a spatial block, and layer ln-velocities
    get Normal(0, sigma) noise. With ``layout.depth_sill`` set, the noise is
    along-depth correlated (exponential covariance) with the same total
    variance ``sigma**2``. ``noise_sd`` overrides ``theta_true.sigma`` (0 gives
    noise-free medians). Profiles carry the generating Vs30 as metadata.
    """
    ss = np.random.SeedSequence([int(seed), 0x5E7])
    site_seed, noise_seed = ss.spawn(2)
    rng = np.random.default_rng(site_seed)
    m = layout.n_profiles
    lo, hi = layout.vs30_range
    vs30 = np.exp(rng.uniform(math.log(lo), math.log(hi), m))
    depth = rng.uniform(*layout.depth_range, m)
    x = rng.uniform(-0.5, 0.5, m) * layout.extent_km[0]
    y = rng.uniform(-0.5, 0.5, m) * layout.extent_km[1]
    proj = geostat.LocalProjection(*layout.origin)
    lat, lon = proj.inverse(x, y)
    if theta_true.has_spatial and theta_true.omega > 0:
        K = geostat.spatial_kernel(geostat.pairwise_distance(x, y), theta_true.omega, theta_true.ell_km)
        L = np.linalg.cholesky(K + geostat.JITTER * np.eye(m))
        dbr = L @ rng.standard_normal(m)
    else:
        dbr = np.zeros(m)
    sigma = theta_true.sigma if noise_sd is None else float(noise_sd)
    noise_streams = noise_seed.spawn(m)
    profiles = []
    for i in range(m):
        params = core.ProfileParams.from_vs30(vs30[i], theta_true, dbr[i])
        col = core.discretize(params, depth[i], layout.rule)
        nrng = np.random.default_rng(noise_streams[i])
        if sigma <= 0:
            eps = np.zeros(col.n_layers)
        elif layout.depth_sill is not None:
            sill = min(layout.depth_sill, sigma**2)
            eps = geostat.sample_depth_residuals(col.mid_depth, sill, layout.depth_range_m, sigma**2, nrng)
        else:
            eps = nrng.normal(0.0, sigma, col.n_layers)
        profiles.append(
            col.replace(
                vs=col.vs * np.exp(eps),
                id=f"S{i:04d}",
                lat=float(lat[i]),
                lon=float(lon[i]),
                provenance=Provenance.MEASURED,
                vs30=float(vs30[i]),
            )
        )
    return SynthDataset(profiles, vs30, x, y, dbr, proj)
