"""Decentralized primal-dual power splitter.

Each node minimizes ``(beta_i / 2) p_i**2 + lambda_i p_i`` and the duals
ascend along ``W (p - p_A e_1)``: only node 1 knows the aggregate
reference, and ``W`` mixes the residual between neighbours. Active and
reactive power are handled by the same recursion with separate duals.
"""
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, NoConvergence, ZeroGridVoltage
from .plant import J


class CostKind(enum.Enum):
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class CostSpec:
    """Per-node cost ``f(p) = p**2`` with strong convexity / smoothness moduli."""

    kind: CostKind = CostKind.QUADRATIC
    mu: float = 1.0
    L_smooth: float = 1.0

    def __post_init__(self):
        if not 0 < self.mu <= self.L_smooth:
            raise ValueError("need 0 < mu <= L_smooth")


@dataclass(frozen=True, eq=False)
class AllocatorState:
    lam: np.ndarray
    nu: np.ndarray
    p: np.ndarray
    q: np.ndarray
    beta: np.ndarray
    alpha: float
    iter: int = 0
    residual_p: float = math.inf
    residual_q: float = math.inf
    converged: bool = False

    @classmethod
    def initial(cls, n, alpha, beta=None, p0=None, q0=None):
        zeros = np.zeros(n)
        return cls(
            lam=zeros.copy(),
            nu=zeros.copy(),
            p=zeros.copy() if p0 is None else np.asarray(p0, dtype=float).copy(),
            q=zeros.copy() if q0 is None else np.asarray(q0, dtype=float).copy(),
            beta=np.ones(n) if beta is None else np.asarray(beta, dtype=float).copy(),
            alpha=float(alpha),
        )

    @property
    def n(self):
        return self.lam.shape[0]


@dataclass(frozen=True, eq=False)
class CurrentReference:
    i_ref: np.ndarray


def primal_step(lambda_i, beta_i, cost=CostSpec()):
    """Minimizer of ``(beta/2) p**2 + lambda p``; vectorizes over nodes."""
    beta_i = np.asarray(beta_i, dtype=float)
    if np.any(beta_i <= 0):
        raise ValueError("beta must be positive")
    p = -np.asarray(lambda_i, dtype=float) / beta_i
    return float(p) if p.ndim == 0 else p


def reference_vector(n, total):
    vec = np.zeros(n)
    vec[0] = total
    return vec


def _check_dims(state, topology):
    n = topology.n_nodes
    for name in ("lam", "nu", "p", "q", "beta"):
        if getattr(state, name).shape != (n,):
            raise DimensionMismatch(
                f"{name} has shape {getattr(state, name).shape}, graph has {n} nodes"
            )


def dual_step(state, topology, p_A, q_A):
    """One dual ascent step ``lam += alpha W (p - p_A e_1)`` (and likewise for nu)."""
    _check_dims(state, topology)
    W = topology.weight
    n = topology.n_nodes
    lam = state.lam + state.alpha * (W @ (state.p - reference_vector(n, p_A)))
    nu = state.nu + state.alpha * (W @ (state.q - reference_vector(n, q_A)))
    return replace(state, lam=lam, nu=nu, iter=state.iter + 1)


def solve(state, topology, p_A, q_A=0.0, max_iters=100_000, tol=1e-9,
          cost=CostSpec(), budgeted=False, trace=None):
    """Alternate primal and dual steps until the primal iterates settle.

    Convergence requires both the primal increments and the feasibility
    residuals ``|sum(p) - p_A|`` to fall below ``tol * max(1, |p_A|)``.
    In budgeted mode ``max_iters`` is a per-call iteration budget and no
    exception is raised when it runs out.

    ``trace``, when a list, receives one tuple
    ``(iter, node, lam, nu, p, q, residual_p)`` per node and iteration.
    """
    _check_dims(state, topology)
    scale_p = tol * max(1.0, abs(p_A))
    scale_q = tol * max(1.0, abs(q_A))
    p_prev, q_prev = state.p, state.q
    converged = False
    start_iter = state.iter
    for _ in range(int(max_iters)):
        # all primal updates of an iteration complete before its dual update
        p = primal_step(state.lam, state.beta, cost)
        q = primal_step(state.nu, state.beta, cost)
        state = dual_step(replace(state, p=p, q=q), topology, p_A, q_A)
        res_p = abs(float(p.sum()) - p_A)
        res_q = abs(float(q.sum()) - q_A)
        if trace is not None:
            for node in range(state.n):
                trace.append((state.iter, node + 1, float(state.lam[node]),
                              float(state.nu[node]), float(p[node]), float(q[node]), res_p))
        step_p = float(np.max(np.abs(p - p_prev)))
        step_q = float(np.max(np.abs(q - q_prev)))
        p_prev, q_prev = p, q
        if step_p <= scale_p and step_q <= scale_q and res_p <= scale_p and res_q <= scale_q:
            converged = True
            break
    res_p = abs(float(state.p.sum()) - p_A)
    res_q = abs(float(state.q.sum()) - q_A)
    state = replace(state, residual_p=res_p, residual_q=res_q, converged=converged)
    if not converged and not budgeted and max(res_p / max(1.0, abs(p_A)),
                                              res_q / max(1.0, abs(q_A))) > 100 * tol:
        raise NoConvergence("allocator hit max_iters", res_p, res_q, state.iter - start_iter)
    return state


def contraction_coefficient(alpha, cost, beta):
    if not alpha >= 0:
        raise ValueError("alpha must be non-negative")
    return max(abs(1.0 - alpha * cost.mu * beta), abs(1.0 - alpha * cost.L_smooth * beta))


def optimal_step_size(cost, beta):
    return 2.0 / (cost.L_smooth + cost.mu * beta)


def condition_number(cost, beta):
    return cost.L_smooth / (cost.mu * beta)


def iteration_estimate(cost, beta, eps):
    """Order-of-magnitude iteration count ``gamma * log(1/eps)``."""
    return condition_number(cost, beta) * math.log(1.0 / eps)


def worst_contraction(alpha, cost, betas):
    return max(contraction_coefficient(alpha, cost, float(b)) for b in betas)


@dataclass
class BetaScheduler:
    """Latched per-node penalty switching driven by resistance-estimate deviation.

    A node enters the fault state when ``|r_hat - r_nominal| >= threshold``
    and leaves it only once the deviation drops below
    ``threshold - hysteresis``. ``force_fault`` latches a node permanently.
    """

    nominal_r: np.ndarray
    threshold: np.ndarray
    hysteresis: np.ndarray
    beta_nominal: float = 1.0
    beta_fault: float = 1e4
    flags: np.ndarray = None
    forced: np.ndarray = None

    def __post_init__(self):
        n = len(self.nominal_r)
        self.nominal_r = np.asarray(self.nominal_r, dtype=float)
        self.threshold = np.broadcast_to(np.asarray(self.threshold, dtype=float), (n,)).copy()
        self.hysteresis = np.broadcast_to(np.asarray(self.hysteresis, dtype=float), (n,)).copy()
        if np.any(self.hysteresis <= 0) or np.any(self.threshold <= self.hysteresis):
            raise ValueError("need threshold > hysteresis > 0")
        if self.flags is None:
            self.flags = np.zeros(n, dtype=bool)
        if self.forced is None:
            self.forced = np.zeros(n, dtype=bool)

    def force_fault(self, node):
        self.forced[node] = True

    def update(self, r_hat):
        dev = np.abs(np.asarray(r_hat, dtype=float) - self.nominal_r)
        enter = dev >= self.threshold
        stay = self.flags & (dev >= self.threshold - self.hysteresis)
        self.flags = enter | stay | self.forced
        return self.beta()

    def beta(self):
        return np.where(self.flags, self.beta_fault, self.beta_nominal)


def beta_schedule(estimators, nominal_r, threshold, beta_nominal=1.0, beta_fault=1e4,
                  hysteresis=None, latched=None):
    """Penalty vector for a list of estimators.

    Returns ``(beta, flags)``; feed ``flags`` back as ``latched`` on the next
    call to get the hysteresis latch.
    """
    threshold = float(threshold)
    if hysteresis is None:
        hysteresis = 0.2 * threshold
    sched = BetaScheduler(
        nominal_r=np.asarray(nominal_r, dtype=float),
        threshold=threshold,
        hysteresis=float(hysteresis),
        beta_nominal=beta_nominal,
        beta_fault=beta_fault,
        flags=None if latched is None else np.asarray(latched, dtype=bool).copy(),
    )
    beta = sched.update([e.r_hat for e in estimators])
    return beta, sched.flags.copy()


def _unit_direction(env):
    v_g = env.v_g
    norm2 = float(v_g @ v_g)
    if norm2 == 0.0:
        raise ZeroGridVoltage("grid voltage is zero")
    return v_g / norm2


def current_reference(p_i, q_i, env):
    """dq current producing active power ``p_i`` and reactive power ``q_i``.

    The reactive part uses ``J.T`` so that ``v_g . J i_ref`` returns ``q_i``.
    """
    u = _unit_direction(env)
    return CurrentReference(u * p_i + (J.T @ u) * q_i)


def current_references(p, q, env):
    """Vectorized ``current_reference`` over nodes, shape (n, 2)."""
    u = _unit_direction(env)
    return np.outer(p, u) + np.outer(q, J.T @ u)


def closed_form_reference(lambda_i, nu_i, beta_i, env):
    if not beta_i > 0:
        raise ValueError("beta must be positive")
    u = _unit_direction(env)
    return CurrentReference(-(u * lambda_i + (J.T @ u) * nu_i) / beta_i)


def kkt_oracle(beta, p_A):
    """Centralized minimizer of ``sum (beta_i/2) p_i**2`` subject to ``sum p_i = p_A``."""
    inv = 1.0 / np.asarray(beta, dtype=float)
    if np.any(inv <= 0):
        raise ValueError("beta must be positive")
    return inv / inv.sum() * p_A
