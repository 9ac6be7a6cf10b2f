"""Error metrics, noise functionals and the step-size constant calculus.

Observations ``obs = (s, a, s2)`` may be scalars or equal-length integer
arrays; the functionals broadcast over the leading sample axis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import oracle
from .errors import AssumptionOneViolated, NonErgodic, ParameterError
from .features import FeatureMap
from .mdp import FiniteMdp, induced_chain
from .policy import BoltzmannPolicy, PolicyConstants, policy_constants
from .simulate import Trace, mixing_time_tau


# --- error trajectories ------------------------------------------------------------


@dataclass
class ErrorTrajectories:
    t: np.ndarray
    y: np.ndarray  # eta_t - J(theta_t)
    z_norm_sq: np.ndarray  # ||omega_t - omega*(theta_t)||^2
    grad_norm_sq: np.ndarray  # ||grad J(theta_t)||^2
    flagged: np.ndarray  # oracle failed at this checkpoint
    lambda_min: float = float("nan")
    omega_star_outside: int = 0  # checkpoints whose omega* leaves the projection ball

    @property
    def usable(self) -> bool:
        return not self.flagged.any()


def error_trajectories(trace: Trace, mdp: FiniteMdp, fmap: FeatureMap, check: bool = True) -> ErrorTrajectories:
    """Evaluate y_t, ||z_t||^2 and ||grad J(theta_t)||^2 at every checkpoint."""
    n = len(trace.ckpt_t)
    y = np.full(n, np.nan)
    z = np.full(n, np.nan)
    g = np.full(n, np.nan)
    flagged = np.zeros(n, dtype=bool)
    lam_min = math.inf
    outside = 0
    for k in range(n):
        try:
            b = oracle.compute_bundle(mdp, fmap, trace.ckpt_theta[k], check=check)
        except (NonErgodic, AssumptionOneViolated):
            flagged[k] = True
            continue
        y[k] = trace.ckpt_eta[k] - b.j
        diff = trace.ckpt_omega[k] - b.omega_star
        z[k] = diff @ diff
        g[k] = b.grad_j @ b.grad_j
        lam_min = min(lam_min, b.lambda_margin)
        if np.linalg.norm(b.omega_star) > trace.u_omega:
            outside += 1
    return ErrorTrajectories(trace.ckpt_t.copy(), y, z, g, flagged, lam_min, outside)


@dataclass
class WindowedMeans:
    y_mean: float
    z_mean: float
    g_mean: float
    tau: int
    t_total: int
    n_seeds: int
    y_se: float = 0.0
    z_se: float = 0.0
    g_se: float = 0.0
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def windowed_means(trajectories: Sequence[ErrorTrajectories], tau: int, t_total: int) -> WindowedMeans:
    """Average squared errors over checkpoints t in [tau, T - 1], then over seeds.

    Seeds whose trajectory carries an oracle failure are excluded and
    counted in ``n_excluded``. Standard errors are across-seed.
    """
    if t_total < 2 * tau:
        raise ParameterError(f"T = {t_total} is below 2 * tau_T = {2 * tau}")
    per_seed = []
    excluded = 0
    for tr in trajectories:
        if not tr.usable:
            excluded += 1
            continue
        win = (tr.t >= tau) & (tr.t <= t_total - 1)
        if not win.any():
            raise ParameterError("no checkpoint falls inside the averaging window")
        per_seed.append((np.mean(tr.y[win] ** 2), np.mean(tr.z_norm_sq[win]), np.mean(tr.grad_norm_sq[win])))
    if not per_seed:
        raise ParameterError("every seed was excluded")
    arr = np.array(per_seed)
    n = len(arr)
    means = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(3)
    return WindowedMeans(float(means[0]), float(means[1]), float(means[2]), int(tau), int(t_total), n,
                         float(se[0]), float(se[1]), float(se[2]), excluded)


@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(pairs) -> RateFit:
    """Least-squares line through (log T, log value)."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ParameterError("need at least 3 (T, value) pairs")
    ts = np.array([p[0] for p in pairs], dtype=float)
    vals = np.array([p[1] for p in pairs], dtype=float)
    if np.any(vals <= 0) or np.any(ts <= 0):
        raise ParameterError("T and values must be positive")
    x, yv = np.log(ts), np.log(vals)
    slope, intercept = np.polyfit(x, yv, 1)
    resid = yv - (slope * x + intercept)
    ss_tot = float(((yv - yv.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


# --- noise functionals -------------------------------------------------------------


@dataclass
class SemiGradientTerms:
    g: np.ndarray
    gbar: np.ndarray
    delta_g: np.ndarray
    h: np.ndarray
    delta_h: np.ndarray
    delta_h_prime: np.ndarray


@dataclass
class BiasFunctionals:
    phi_f: np.ndarray
    psi_f: np.ndarray
    theta_f: np.ndarray
    xi_f: Optional[np.ndarray] = None


def _score_vectors(bundle, s, a) -> np.ndarray:
    """grad log pi(a|s) as rows of shape (..., n_states * n_actions)."""
    n_s, n_a = bundle.probs.shape
    s = np.asarray(s)
    a = np.asarray(a)
    out = np.zeros(s.shape + (n_s, n_a))
    idx = np.indices(s.shape)
    out[(*idx, s)] = -bundle.probs[s]
    out[(*idx, s, a)] += 1.0
    return out.reshape(s.shape + (n_s * n_a,))


def _score_dot(bundle, u: np.ndarray, s, a) -> np.ndarray:
    """<u, grad log pi(a|s)> without materialising the score vectors."""
    ut = np.asarray(u).reshape(bundle.probs.shape)
    return ut[s, a] - (bundle.probs[s] * ut[s]).sum(axis=-1)


def _score_expectation(bundle, c_sa: np.ndarray) -> np.ndarray:
    """E_{s~mu, a~pi}[c(s, a) grad log pi(a|s)] for a table c(s, a)."""
    probs = bundle.probs
    base = (probs * c_sa).sum(axis=1, keepdims=True)
    return (bundle.mu[:, None] * probs * (c_sa - base)).ravel()


def expected_h(mdp: FiniteMdp, fmap: FeatureMap, bundle) -> np.ndarray:
    """E_{O'}[h(O', theta)] as an exact finite sum."""
    fw = fmap.table @ bundle.omega_star
    c_sa = mdp.reward - bundle.j + mdp.transition @ fw - fw[:, None]
    return _score_expectation(bundle, c_sa)


def expected_delta_h_prime(mdp: FiniteMdp, fmap: FeatureMap, bundle) -> np.ndarray:
    err = fmap.table @ bundle.omega_star - bundle.v
    c_sa = mdp.transition @ err - err[:, None]
    return _score_expectation(bundle, c_sa)


def semigradient_terms(mdp: FiniteMdp, fmap: FeatureMap, bundle, obs, eta: float,
                       omega: np.ndarray) -> SemiGradientTerms:
    """g, g-bar, Delta g, h, Delta h and Delta h' at the bundle's theta."""
    s, a, s2 = (np.asarray(o) for o in obs)
    tab = fmap.table
    j = bundle.j
    w = np.asarray(omega, dtype=float)
    ws = bundle.omega_star
    r = mdp.reward[s, a]
    fs, fs2 = tab[s], tab[s2]
    dphi = fs2 - fs
    score = _score_vectors(bundle, s, a)
    err = tab @ ws - bundle.v

    g = (r - j + dphi @ w)[..., None] * fs
    delta_g = (j - eta) * fs
    h = (r - j + dphi @ ws)[..., None] * score
    delta_h = (j - eta + dphi @ (w - ws))[..., None] * score
    delta_h_prime = (err[s2] - err[s])[..., None] * score
    gbar = bundle.b_vec + bundle.a_mat @ w
    return SemiGradientTerms(g, gbar, delta_g, h, delta_h, delta_h_prime)


def bias_functionals(mdp: FiniteMdp, fmap: FeatureMap, bundle, obs, eta: float, omega: np.ndarray,
                     jacobian: Optional[np.ndarray] = None) -> BiasFunctionals:
    """Phi, Psi, Theta and (given d omega*/d theta) Xi at the bundle's theta.

    ``jacobian`` has shape (dim, n_states * n_actions), as returned by
    :func:`aclab.oracle.critic_target_jacobian`.
    """
    s, a, s2 = (np.asarray(o) for o in obs)
    tab = fmap.table
    j = bundle.j
    w = np.asarray(omega, dtype=float)
    ws = bundle.omega_star
    zvec = w - ws
    r = mdp.reward[s, a]
    fw = tab @ w
    fws = tab @ ws

    phi_f = (eta - j) * (r - j)
    # <z, g(O) - gbar> with g(O) = [r - J + phi(s')w - phi(s)w] phi(s)
    psi_f = (r - j + fw[s2] - fw[s]) * (tab[s] @ zvec) - zvec @ (bundle.b_vec + bundle.a_mat @ w)

    eh = expected_h(mdp, fmap, bundle)
    coef_h = r - j + fws[s2] - fws[s]
    theta_f = float(bundle.grad_j @ eh) - coef_h * _score_dot(bundle, bundle.grad_j, s, a)

    xi_f = None
    if jacobian is not None:
        u = np.asarray(jacobian).T @ zvec
        xi_f = float(u @ eh) - coef_h * _score_dot(bundle, u, s, a)
    return BiasFunctionals(np.asarray(phi_f), np.asarray(psi_f), np.asarray(theta_f),
                           None if xi_f is None else np.asarray(xi_f))


# --- constants ----------------------------------------------------------------------


@dataclass(frozen=True)
class StepsizeVerdict:
    condition_a: bool
    condition_b: bool
    passed: bool
    lhs_a: float  # 4 l3, compared with 1/4
    lhs_b: float  # l1 (1 + 2 l4^2 + 8 l4^2 (2 l2^2 + l3)), compared with 1


def check_stepsize_condition(constants) -> StepsizeVerdict:
    """Small-gain conditions under which the coupled error system contracts."""
    l1, l2, l3, l4 = constants.l1, constants.l2, constants.l3, constants.l4
    lhs_a = 4.0 * l3
    lhs_b = l1 * (1.0 + 2.0 * l4**2 + 8.0 * l4**2 * (2.0 * l2**2 + l3))
    a_ok = lhs_a <= 0.25
    b_ok = lhs_b <= 1.0
    return StepsizeVerdict(a_ok, b_ok, a_ok and b_ok, lhs_a, lhs_b)


@dataclass(frozen=True)
class PaperConstants:
    u_r: float
    u_omega: float
    u_delta: float
    g_bound: float
    lambda_: float
    m: float
    rho: float
    l_j: float
    l_star: float
    b_bound: float
    l_pi: float
    l_l: float
    n_actions: int
    c: float
    c_threshold: float
    l1: float
    l2: float
    l3: float
    l4: float
    l_jprime: Optional[float] = None
    l_s: Optional[float] = None
    l_mu: Optional[float] = None
    n_probes: int = 1
    probe_lambdas: list = field(default_factory=list)

    def tau(self, t_total: int) -> int:
        return mixing_time_tau(self.m, self.rho, t_total)

    def with_c(self, c: float) -> "PaperConstants":
        return _bind_c(self, float(c))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        verdict = check_stepsize_condition(self)
        d["condition"] = asdict(verdict)
        return d


def _bind_c(pc: PaperConstants, c: float) -> PaperConstants:
    from dataclasses import replace

    return replace(pc, c=c, l1=c * pc.g_bound, l2=2.0 / pc.lambda_,
                   l3=2.0 * c * pc.b_bound * pc.l_star / pc.lambda_, l4=pc.b_bound)


def mixing_factor(m: float, rho: float) -> float:
    """1 + ceil(log_rho(1/m)) + 1/(1 - rho), with the ceiling clamped at 0."""
    ceil_term = max(0, math.ceil(math.log(1.0 / m) / math.log(rho)))
    return 1.0 + ceil_term + 1.0 / (1.0 - rho)


def c_threshold(lam: float, b: float, g: float, l_star: float) -> float:
    return min(lam / (32.0 * b * l_star), lam**2 / (g * (lam**2 + 3.0 * b**2 * lam**2 + 64.0 * b**2)))


def paper_constants(mdp: FiniteMdp, fmap: FeatureMap, probe_thetas, c=None,
                    policy_consts: PolicyConstants | None = None, tau_max: int = 64,
                    probe_lipschitz: bool = False) -> PaperConstants:
    """Evaluate the closed-form constants with worst-case (lambda, m, rho) over the probes.

    ``c`` may be a float, or None / "auto" for the threshold value. The
    optional Lipschitz probes (L_J', L_s, L_mu) are finite-difference ratios
    over probe pairs, reported for inspection only.
    """
    probes = [np.asarray(t, dtype=float).ravel() for t in probe_thetas]
    if not probes:
        raise ParameterError("need at least one probe parameter")
    pc = policy_consts or policy_constants(mdp.n_states, mdp.n_actions)
    lams, ms, rhos = [], [], []
    for th in probes:
        b = oracle.compute_bundle(mdp, fmap, th)
        lams.append(b.lambda_margin)
        est = oracle.mixing_estimate(induced_chain(mdp, b.probs), tau_max=tau_max, mu=b.mu)
        ms.append(est.m)
        rhos.append(est.rho)
    lam = min(lams)
    if lam <= oracle.TOL:
        raise AssumptionOneViolated(f"exploration margin {lam:.3e} is not positive on the probe set")
    m, rho = max(ms), max(rhos)
    u_r = mdp.u_r
    n_a = mdp.n_actions
    factor = mixing_factor(m, rho)
    u_omega = 2.0 * u_r / lam
    u_delta = 2.0 * u_r + 2.0 * u_omega
    g_bound = u_delta * pc.b_bound
    l_j = 2.0 * u_r * n_a * pc.l_pi * factor
    l_star = (2.0 * u_r / lam**2 + 3.0 * u_r / lam) * n_a * pc.l_pi * factor
    c_thr = c_threshold(lam, pc.b_bound, g_bound, l_star)

    extra = {}
    if probe_lipschitz and len(probes) >= 2:
        extra = _lipschitz_probes(mdp, fmap, probes)

    out = PaperConstants(
        u_r=u_r, u_omega=u_omega, u_delta=u_delta, g_bound=g_bound, lambda_=lam, m=m, rho=rho,
        l_j=l_j, l_star=l_star, b_bound=pc.b_bound, l_pi=pc.l_pi, l_l=pc.l_l, n_actions=n_a,
        c=c_thr, c_threshold=c_thr, l1=0.0, l2=0.0, l3=0.0, l4=0.0,
        n_probes=len(probes), probe_lambdas=[float(x) for x in lams], **extra,
    )
    bound = _bind_c(out, c_thr)
    # the min-formula is exact in reals; step down an ulp or two if rounding
    # pushes the boundary condition over
    while not check_stepsize_condition(bound).passed:
        c_thr = math.nextafter(c_thr, 0.0)
        bound = _bind_c(out, c_thr)
    from dataclasses import replace

    out = replace(bound, c_threshold=c_thr)
    if c is None or c == "auto":
        return out
    return _bind_c(out, float(c))


def _lipschitz_probes(mdp, fmap, probes) -> dict:
    policy = BoltzmannPolicy(mdp.n_states, mdp.n_actions)
    grads, jacs, mu_jacs = [], [], []
    for th in probes:
        grads.append(oracle.exact_policy_gradient(mdp, th))
        jacs.append(oracle.critic_target_jacobian(mdp, fmap, th))
        mu_jacs.append(_mu_jacobian(mdp, policy, th))
    l_jp = l_s = l_mu = 0.0
    for i in range(len(probes)):
        for k in range(i + 1, len(probes)):
            dist = np.linalg.norm(probes[i] - probes[k])
            if dist == 0:
                continue
            l_jp = max(l_jp, np.linalg.norm(grads[i] - grads[k]) / dist)
            l_s = max(l_s, np.linalg.norm(jacs[i] - jacs[k], 2) / dist)
            l_mu = max(l_mu, np.linalg.norm(mu_jacs[i] - mu_jacs[k], 2) / dist)
    return {"l_jprime": float(l_jp), "l_s": float(l_s), "l_mu": float(l_mu)}


def _mu_jacobian(mdp, policy, theta, step=1e-5):
    jac = np.empty((mdp.n_states, theta.size))
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        up = oracle.stationary_distribution(induced_chain(mdp, policy.probs(theta + e)))
        dn = oracle.stationary_distribution(induced_chain(mdp, policy.probs(theta - e)))
        jac[:, k] = (up - dn) / (2 * step)
    return jac


def default_probes(theta0, n_extra: int = 8, scale: float = 1.0, seed: int = 0) -> list:
    """theta0 plus ``n_extra`` Gaussian perturbations of it."""
    theta0 = np.asarray(theta0, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    return [theta0] + [theta0 + scale * rng.standard_normal(theta0.size) for _ in range(n_extra)]


# --- per-trace invariant audits -------------------------------------------------------------


@dataclass
class BoundAudit:
    omega_violations: int
    delta_violations: int
    actor_violations: int
    eta_outside: int  # steps with |eta_t| > U_r, where the delta bound is not claimed

    @property
    def clean(self) -> bool:
        return self.omega_violations == 0 and self.delta_violations == 0 and self.actor_violations == 0


def audit_bounds(trace: Trace, u_r: float, b_bound: float) -> BoundAudit:
    """Count steps breaking ||omega|| <= U_w, |delta| <= U_delta, ||d theta|| <= alpha G.

    U_delta and G are recomputed from the trace's own projection radius.
    """
    u_w = trace.u_omega
    u_delta = 2.0 * u_r + 2.0 * u_w
    g = u_delta * b_bound
    eta_ok = np.abs(trace.eta) <= u_r
    omega_bad = int((trace.omega_norm > u_w + 1e-12).sum())
    if np.linalg.norm(trace.final.omega) > u_w + 1e-12:
        omega_bad += 1
    return BoundAudit(
        omega_violations=omega_bad,
        delta_violations=int((np.abs(trace.delta[eta_ok]) > u_delta).sum()),
        actor_violations=int((trace.actor_step > trace.steps.alpha * g).sum()),
        eta_outside=int((~eta_ok).sum()),
    )
