"""Block coordinate descent over combiners, weights, stream powers and SIM phases.

One outer iteration refreshes the MMSE combiners ``U``, the weights
``Z = E^{-1}``, solves the per-stream power QCQP by bisection on its
multiplier, and takes projected-gradient steps on each layer's phasors.
The WMMSE objective ``Σ η (log det Z - tr(Z E) + M)`` never decreases.

The phase block works on the MSE form

    F(G) = Re tr(G^H C G D) - 2 Re tr(Ē G),
    C = Σ_k η_k H_k^H U_k Z_k U_k^H H_k,
    D = Σ_k W1_k P_k^2 W1_k^H,
    Ē = Σ_k η_k W1_k P_k Z_k U_k^H H_k,

which differs from ``Σ_k η_k tr(Z_k E_k)`` by a term that does not depend on
the phases.  The optimizer never forms the ``N x N`` products: it
propagates the ``K*M`` user rows backwards and the ``M_BS`` feed columns
forwards, so a sweep over all layers costs ``O(L N^2 K M)``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .cascade import PhaseState, project_unit_modulus
from .channel import ChannelSet
from .errors import ConfigurationError, NumericalError
from .rate import LN2, block, interference_covariance, mse_matrices, weighted_sum_rate, \
    wmmse_objective

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BcdConfig:
    """Algorithm constants.

    ``step_init`` is the first trial step measured in radians of the largest
    phasor move, i.e. the initial step is ``step_init / max|∇F|``.
    """

    epsilon: float = 1e-4
    max_outer: int = 200
    step_init: float = 1.0
    backtrack_ratio: float = 0.5
    max_backtracks: int = 30
    inner_phase_steps: int = 1
    bisect_tol: float = 1e-10
    sweep_order: str = "forward"
    step_rule: str = "bb"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 < self.backtrack_ratio < 1:
            raise ConfigurationError("backtrack_ratio must lie in (0, 1)")
        if not self.step_init > 0:
            raise ConfigurationError("step_init must be positive")
        if self.max_outer < 1 or self.inner_phase_steps < 0 or self.max_backtracks < 1:
            raise ConfigurationError("iteration counts must be positive")
        if self.sweep_order not in ("forward", "reverse"):
            raise ConfigurationError("sweep_order must be 'forward' or 'reverse'")
        if self.step_rule not in ("fixed", "bb"):
            raise ConfigurationError("step_rule must be 'fixed' or 'bb'")


@dataclass
class PowerAllocation:
    """Stream amplitudes ``p[k, m]`` (square roots of powers, in sqrt(W))."""

    amplitudes: np.ndarray
    budget: float
    multiplier: float = 0.0

    @classmethod
    def equal(cls, users: int, antennas: int, budget: float) -> "PowerAllocation":
        amp = math.sqrt(budget / (users * antennas)) if budget > 0 else 0.0
        return cls(np.full((users, antennas), amp), budget)

    @property
    def total(self) -> float:
        return float(np.sum(self.amplitudes ** 2))


# -- combiners and weights -------------------------------------------------

def update_combiners(t, p, noise_var) -> np.ndarray:
    """MMSE combiners ``U_k = (Q_k + T_kk P_k^2 T_kk^H)^{-1} T_kk P_k``."""
    n_users, m = p.shape
    u = np.empty((n_users, m, m), dtype=complex)
    for k in range(n_users):
        tk = block(t, k, k, m) * p[k]
        cov = interference_covariance(t, p, k, noise_var) + tk @ tk.conj().T
        try:
            u[k] = sla.cho_solve(sla.cho_factor(0.5 * (cov + cov.conj().T)), tk)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"received covariance of user {k} is singular") from exc
    return u


def update_aux(e) -> np.ndarray:
    """``Z_k = E_k^{-1}``; a singular ``E_k`` gets ``1e-12 I`` added first."""
    e = np.asarray(e)
    z = np.empty_like(e)
    eye = np.eye(e.shape[-1])
    for k, ek in enumerate(e):
        ek = 0.5 * (ek + ek.conj().T)
        try:
            zk = sla.cho_solve(sla.cho_factor(ek), eye)
        except np.linalg.LinAlgError:
            log.debug("MSE matrix of user %d singular, regularizing", k)
            try:
                zk = sla.cho_solve(sla.cho_factor(ek + 1e-12 * eye), eye)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"MSE matrix of user {k} is singular") from exc
        z[k] = 0.5 * (zk + zk.conj().T)
    return z


# -- power block -----------------------------------------------------------

def power_coefficients(t, u, z, eta, printed=False):
    """Quadratic ``a[i, m]`` and linear ``b[i, m]`` coefficients of the power subproblem.

    The weighted MSE, as a function of the amplitudes, is
    ``Σ a p^2 - 2 Σ b p + const``.  ``printed=True`` uses one shared
    quadratic matrix ``Σ_k η_k T_kk^H U_k Z_k U_k^H T_kk`` for every user
    instead of the per-user expansion; it is kept for comparison only.
    """
    n_users, m = u.shape[0], u.shape[1]
    eta = np.asarray(eta, dtype=float)
    a = np.zeros(n_users * m)
    b = np.zeros((n_users, m))
    shared = np.zeros(m)
    for k in range(n_users):
        v = u[k].conj().T @ t[k * m:(k + 1) * m]          # (M, K*M)
        a += eta[k] * np.real(np.sum(v.conj() * (z[k] @ v), axis=0))
        own = v[:, k * m:(k + 1) * m]
        b[k] = eta[k] * np.real(np.diag(z[k] @ own))
        shared += eta[k] * np.real(np.sum(own.conj() * (z[k] @ own), axis=0))
    if printed:
        return np.maximum(np.tile(shared, (n_users, 1)), 0.0), b
    return np.maximum(a.reshape(n_users, m), 0.0), b


def bisect_power(a, b, budget, tol=1e-10, max_iter=400):
    """Minimize ``Σ a p^2 - 2 b p`` over ``p >= 0, Σ p^2 <= budget``.

    Returns ``(p, mu)`` with ``p = max(b, 0) / (a + mu)``.  ``mu`` is zero
    when the unconstrained minimizer fits the budget, otherwise it is found by
    bisection so that ``Σ p^2`` meets the budget to relative ``tol`` from below.
    """
    a = np.asarray(a, dtype=float)
    bp = np.maximum(np.asarray(b, dtype=float), 0.0)
    dead = (a <= 1e-15) & (bp > 0)
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} stream(s) with vanishing quadratic coefficient disabled",
                      RuntimeWarning, stacklevel=2)
        bp = np.where(dead, 0.0, bp)
    if budget <= 0 or not np.any(bp > 0):
        return np.zeros_like(bp), 0.0

    def amplitudes(mu):
        return np.divide(bp, a + mu, out=np.zeros_like(bp), where=bp > 0)

    def power(mu):
        return float(np.sum(amplitudes(mu) ** 2))

    if power(0.0) <= budget:
        return amplitudes(0.0), 0.0
    lo, hi = 0.0, 1.0
    while power(hi) > budget:
        lo, hi = hi, 2.0 * hi
    for _ in range(max_iter):
        if budget - power(hi) <= tol * budget:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if power(mid) > budget:
            lo = mid
        else:
            hi = mid
    return amplitudes(hi), hi


def solve_power(t, u, z, eta, budget, tol=1e-10) -> PowerAllocation:
    a, b = power_coefficients(t, u, z, eta)
    p, mu = bisect_power(a, b, budget, tol)
    return PowerAllocation(p, budget, mu)


# -- phase block: full-matrix reference forms ------------------------------

def phase_aggregates(users, feed, u, z, p, eta, printed=False):
    """``(C, D, Ē)`` of the phase subproblem as ``N x N`` matrices.

    ``printed=True`` replaces ``D = Σ_k W1_k P_k^2 W1_k^H`` by
    ``Σ_i W1_i (Σ_k P_k^2) W1_i^H``, for comparison only.
    """
    n_users, m = p.shape
    eta = np.asarray(eta, dtype=float)
    n = feed.shape[0]
    c = np.zeros((n, n), dtype=complex)
    d = np.zeros((n, n), dtype=complex)
    e_bar = np.zeros((n, n), dtype=complex)
    pooled = np.sum(p ** 2, axis=0)
    for k in range(n_users):
        h = users[k]
        w = feed[:, k * m:(k + 1) * m]
        uh = u[k].conj().T @ h
        c += eta[k] * uh.conj().T @ z[k] @ uh
        d += (w * (pooled if printed else p[k] ** 2)) @ w.conj().T
        e_bar += eta[k] * (w * p[k]) @ z[k] @ uh
    return c, d, e_bar


def phase_objective(g, c, d, e_bar) -> float:
    """``Re tr(G^H C G D) - 2 Re tr(Ē G)``."""
    return float(np.real(np.trace(g.conj().T @ c @ g @ d)) - 2 * np.real(np.trace(e_bar @ g)))


def phase_gradient(r, j, g, c, d, e_bar, split=False):
    """Conjugate-coordinate gradient ``∂F/∂φ_l*`` from the partial products ``R_l, J_l``.

    The quadratic part is ``diag(R^H C G D J^H)``; the linear part is
    ``-conj(diag(J Ē R))``.  ``split=True`` returns both parts separately.
    """
    quad = np.einsum("ij,ji->i", r.conj().T @ c @ g @ d, j.conj().T)
    lin = -np.conj(np.einsum("ij,ji->i", j @ e_bar, r))
    return (quad, lin) if split else quad + lin


def quadratic_gradient(r, j, g, c, d) -> np.ndarray:
    """Quadratic-term gradient in its transposed form ``diag(J* D^T G^T C^T R*)``."""
    return np.diag(j.conj() @ d.T @ g.T @ c.T @ r.conj())


# -- phase block: propagated form used by the optimizer --------------------

class LayerProblem:
    """``F`` and ``∂F/∂φ*`` for one layer from propagated operators.

    ``hr`` is ``H R_l`` (``K*M x N``) and ``jw`` is ``J_l W1`` (``N x M_BS``),
    so the cross channel is ``hr @ diag(φ) @ jw``.
    """

    def __init__(self, hr, jw, u, z, p, eta):
        n_users, m = p.shape
        eta = np.asarray(eta, dtype=float)
        self.hr = hr
        self.jw = jw
        self.pw = (p ** 2).ravel()
        km = n_users * m
        self.c_hat = np.zeros((km, km), dtype=complex)
        self.b_hat = np.zeros((km, km), dtype=complex)
        for k in range(n_users):
            s = slice(k * m, (k + 1) * m)
            self.c_hat[s, s] = eta[k] * u[k] @ z[k] @ u[k].conj().T
            self.b_hat[s, s] = eta[k] * (p[k][:, None] * (z[k] @ u[k].conj().T))
        self._hr_c = self.c_hat @ hr            # rows of Ĉ H R
        self._jw_b = jw @ self.b_hat            # J W1 B̂

    def cross(self, phi) -> np.ndarray:
        return (self.hr * phi) @ self.jw

    def objective(self, phi) -> float:
        t = self.cross(phi)
        quad = np.real(np.sum((self.c_hat @ t) * self.pw * t.conj()))
        lin = np.real(np.sum(self.b_hat * t.T))
        return float(quad - 2 * lin)

    def gradient(self, phi) -> np.ndarray:
        t = self.cross(phi)
        quad = np.sum((self._hr_c.conj().T @ (t * self.pw)) * self.jw.conj(), axis=1)
        lin = -np.conj(np.sum(self._jw_b * self.hr.T, axis=1))
        return quad + lin


def armijo_step(phi, objective, gradient, config: BcdConfig, g=None, mu0=None):
    """One projected-gradient step with backtracking.

    Starting from ``mu0`` (default ``step_init / max|∇F|``) the step shrinks
    by ``backtrack_ratio`` until ``x = P(φ - μ ∇F)`` satisfies
    ``F(x) <= F(φ) - ||x - φ||^2 / (2 μ)``.  Returns
    ``(x, mu, backtracks, accepted)``; when backtracking is exhausted the
    iterate is returned unchanged.
    """
    g = gradient(phi) if g is None else g
    scale = float(np.max(np.abs(g)))
    if scale == 0.0 or not math.isfinite(scale):
        return phi, 0.0, 0, scale == 0.0
    f0 = objective(phi)
    mu = config.step_init / scale if mu0 is None else mu0
    for tries in range(config.max_backtracks):
        x = project_unit_modulus(phi - mu * g, fallback=phi)
        step = x - phi
        if objective(x) <= f0 - np.vdot(step, step).real / (2 * mu):
            return x, mu, tries, True
        mu *= config.backtrack_ratio
    return phi, mu, config.max_backtracks, False


def _backward_rows(h, inter, phi):
    """``[H R_0, ..., H R_{L-1}]`` for the current phasors."""
    n_layers = phi.shape[0]
    out = [None] * n_layers
    out[-1] = h
    for l in range(n_layers - 1, 0, -1):
        out[l - 1] = (out[l] * phi[l]) @ inter[l - 1]
    return out


def _forward_cols(feed, inter, phi):
    """``[J_0 W1, ..., J_{L-1} W1]`` for the current phasors."""
    out = [feed]
    for l in range(1, phi.shape[0]):
        out.append(inter[l - 1] @ (phi[l - 1][:, None] * out[-1]))
    return out


def cross_channel(channels: ChannelSet, phases: PhaseState) -> np.ndarray:
    """``T = H G W1`` by forward propagation of the feed columns."""
    phi = phases.phi
    x = channels.feed
    for l in range(phi.shape[0]):
        x = phi[l][:, None] * x
        if l + 1 < phi.shape[0]:
            x = channels.inter[l] @ x
    return channels.stacked_users() @ x


def _bb_step(s, y):
    """Barzilai-Borwein trial step ``||s||^2 / Re<s, y>``; ``None`` when curvature is not positive."""
    curv = np.vdot(s, y).real
    if not curv > 0:
        return None
    return float(np.vdot(s, s).real / curv)


@dataclass
class SweepStats:
    steps: int = 0
    backtracks: int = 0
    stalls: int = 0
    memory: dict = field(default_factory=dict)


def update_phases(phases: PhaseState, channels: ChannelSet, u, z, p, eta,
                  config: BcdConfig, stats: SweepStats | None = None) -> PhaseState:
    """Sweep all layers once, ``config.inner_phase_steps`` Armijo steps per layer."""
    stats = stats if stats is not None else SweepStats()
    phi = phases.phi.copy()
    h = channels.stacked_users()
    inter = channels.inter
    n_layers = phi.shape[0]
    hr = _backward_rows(h, inter, phi)
    jw = _forward_cols(channels.feed, inter, phi)
    order = range(n_layers) if config.sweep_order == "forward" else range(n_layers - 1, -1, -1)
    for l in order:
        prob = LayerProblem(hr[l], jw[l], u, z, p, eta)
        g = prob.gradient(phi[l])
        mu0 = stats.memory.get(l) if config.step_rule == "bb" else None
        for _ in range(config.inner_phase_steps):
            new, _, tries, ok = armijo_step(phi[l], prob.objective, prob.gradient, config, g, mu0)
            stats.steps += 1
            stats.backtracks += tries
            if not ok:
                stats.stalls += 1
                break
            g_new = prob.gradient(new)
            mu0 = _bb_step(new - phi[l], g_new - g) if config.step_rule == "bb" else None
            phi[l], g = new, g_new
            if mu0 is not None:
                stats.memory[l] = mu0
        if config.sweep_order == "forward" and l + 1 < n_layers:
            jw[l + 1] = inter[l] @ (phi[l][:, None] * jw[l])
        elif config.sweep_order == "reverse" and l > 0:
            hr[l - 1] = (hr[l] * phi[l]) @ inter[l - 1]
    return PhaseState.from_phasors(phi)


# -- outer loop ------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    objective: float
    wsr: float
    objective_after_uz: float
    mu: float
    backtracks: int
    stalls: int
    millis: float


@dataclass
class BcdTrace:
    records: list = field(default_factory=list)
    initial_wsr: float = 0.0

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def rates(self) -> np.ndarray:
        return np.array([r.wsr for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("iteration", "objective", "wsr", "mu", "backtracks", "millis"))
            for r in self.records:
                out.writerow((r.iteration, f"{r.objective:.17g}", f"{r.wsr:.17g}",
                              f"{r.mu:.17g}", r.backtracks, f"{r.millis:.3f}"))


@dataclass
class BcdResult:
    phases: PhaseState
    power: PowerAllocation
    trace: BcdTrace
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.trace.records)

    @property
    def wsr(self) -> float:
        return self.trace.records[-1].wsr if self.trace.records else self.trace.initial_wsr


class BcdAbort(NumericalError):
    """NaN or factorization failure inside the loop; ``state`` holds the last iterate."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def run_bcd(channels: ChannelSet, noise_var: float, budget: float, eta=None,
            config: BcdConfig = BcdConfig(), rng: np.random.Generator | None = None,
            phases: PhaseState | None = None, power: PowerAllocation | None = None) -> BcdResult:
    """Maximize the weighted sum rate over powers and SIM phases.

    Initial phases are uniform on ``[0, 2π)`` from ``rng`` and the budget is
    split equally over the ``K*M`` streams, unless given explicitly.
    """
    n_users, m = channels.k, channels.m
    eta = np.ones(n_users) if eta is None else np.asarray(eta, dtype=float)
    if phases is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        phases = PhaseState.random(channels.layers, channels.n, rng)
    power = power if power is not None else PowerAllocation.equal(n_users, m, budget)
    p = power.amplitudes.copy()

    t = cross_channel(channels, phases)
    try:
        prev = weighted_sum_rate(t, p, noise_var, eta)
    except NumericalError as exc:
        raise BcdAbort(f"initial point: {exc}", {"phases": phases, "power": p}) from exc
    trace = BcdTrace(initial_wsr=prev)
    converged = False
    mu = 0.0
    steps = {}
    for it in range(1, config.max_outer + 1):
        start = time.perf_counter()
        try:
            u = update_combiners(t, p, noise_var)
            z = update_aux(mse_matrices(u, t, p, noise_var))
            obj_uz = wmmse_objective(z, u, t, p, noise_var, eta)
            sol = solve_power(t, u, z, eta, budget, config.bisect_tol)
            p, mu = sol.amplitudes, sol.multiplier
            stats = SweepStats(memory=steps)
            phases = update_phases(phases, channels, u, z, p, eta, config, stats)
            t = cross_channel(channels, phases)
            obj = wmmse_objective(z, u, t, p, noise_var, eta)
            wsr = weighted_sum_rate(t, p, noise_var, eta)
        except NumericalError as exc:
            raise BcdAbort(f"iteration {it}: {exc}", {"phases": phases, "power": p}) from exc
        if not (math.isfinite(obj) and math.isfinite(wsr)):
            raise BcdAbort(f"iteration {it}: non-finite objective {obj} / rate {wsr}",
                           {"phases": phases, "power": p, "combiners": u, "weights": z})
        trace.records.append(IterationRecord(
            it, obj, wsr, obj_uz, mu, stats.backtracks, stats.stalls,
            1e3 * (time.perf_counter() - start)))
        if wsr - prev <= config.epsilon * abs(prev):
            converged = True
            break
        prev = wsr
    return BcdResult(phases, PowerAllocation(p, budget, mu), trace, converged)


def mse_constant(u, z, noise_var, eta) -> float:
    """Phase-independent part of ``Σ η tr(Z E)``: ``Σ η (tr Z + σ² tr(Z U^H U))``."""
    total = 0.0
    for k in range(len(u)):
        total += eta[k] * np.real(np.trace(z[k]) + noise_var * np.trace(z[k] @ u[k].conj().T @ u[k]))
    return float(total)


__all__ = [
    "BcdConfig", "PowerAllocation", "BcdTrace", "BcdResult", "BcdAbort", "IterationRecord",
    "update_combiners", "update_aux", "power_coefficients", "bisect_power", "solve_power",
    "phase_aggregates", "phase_objective", "phase_gradient", "quadratic_gradient", "LayerProblem",
    "armijo_step", "update_phases", "cross_channel", "run_bcd", "mse_constant", "LN2",
]
