"""Fixed-step hierarchical simulation of networked grid-following inverters.

The low level is integrated as one continuous-time closed loop per IBR
(line current, reference-model current and resistance estimate) with
classical RK4; the control law is evaluated inside every stage. The high
level (allocator or baseline splitter) runs every ``allocator_stride``
steps and its current references are held constant in between.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import allocator as alloc
from .errors import NumericalDivergence
from .graph_core import build_topology
from .mrac import proposition1_radius
from .plant import J

DIVERGENCE_LIMIT = 1e9
SETTLING_BAND = 0.02


@dataclass(frozen=True, eq=False)
class SimRecord:
    t: float
    i: np.ndarray
    i_m: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    i_ref: np.ndarray
    r_hat: np.ndarray
    beta: np.ndarray
    lyapunov: np.ndarray
    sum_p: float
    sum_q: float
    residual: float


@dataclass
class SimResult:
    config: object
    records: list
    metrics: dict
    allocator_trace: list = field(default_factory=list)
    t: np.ndarray = None
    sum_p: np.ndarray = None


class ClosedLoop:
    """Vectorized closed-loop right-hand side for ``n`` IBRs.

    State layout per row: ``[i_d, i_q, i_m_d, i_m_q, r_hat]``.
    """

    def __init__(self, ibrs, omega):
        col = lambda name: np.array([getattr(c, name) for c in ibrs], dtype=float)[:, None]
        self.omega = float(omega)
        self.r_g = col("r_g_ohm")
        self.l_g0 = col("l_g0_henry")
        self.l_g = self.l_g0 + col("delta_l_g_henry")
        self.r_m = col("r_m_ohm")
        self.l_m = col("l_m_henry")
        self.gain = self.r_m + col("k_ohm")
        self.gamma = col("gamma_r")[:, 0]
        self.r_bar = col("r_bar_ohm")[:, 0]
        self.eps = col("epsilon_ohm")[:, 0]
        self.healthy = np.ones((len(ibrs), 1))
        self.refresh()

    def control(self, x, i_ref, v_g):
        i, i_m, r_hat = x[:, 0:2], x[:, 2:4], x[:, 4:5]
        w = self.omega
        return (
            (r_hat - self.gain) * i
            - self.l_g0 * w * (i @ J.T)
            + self.l_m * w * (i_m @ J.T)
            + self.gain * i_ref
            - self.l_m * w * (i_ref @ J.T)
            + v_g
        )

    def rhs(self, x, i_ref, v_g):
        # control law substituted into the line dynamics; J(a, b) = (b, -a)
        i_d, i_q, m_d, m_q, r_hat = x.T
        ref_d, ref_q = i_ref.T
        e_d, e_q = m_d - ref_d, m_q - ref_q
        a = r_hat - self._gain - self._r_g
        out = np.empty_like(x)
        out[:, 0] = (a * i_d + self._dlw * i_q + self._lmw * e_q + self._gain * ref_d) * self._inv_lg
        out[:, 1] = (a * i_q - self._dlw * i_d - self._lmw * e_d + self._gain * ref_q) * self._inv_lg
        out[:, 2] = (self._lmw * e_q - self._gain * e_d) / self._l_m
        out[:, 3] = -(self._gain * e_q + self._lmw * e_d) / self._l_m
        y = -((i_d - m_d) * i_d + (i_q - m_q) * i_q)
        f = (r_hat * r_hat - self._rb2) * self._inv_den
        out[:, 4] = self.gamma * np.where((f > 0.0) & (r_hat * y > 0.0), y * (1.0 - f), y)
        return out

    def refresh(self):
        """Recompute the flat coefficient arrays after a parameter change."""
        self._r_g = self.r_g[:, 0].copy()
        self._gain = self.gain[:, 0]
        self._l_m = self.l_m[:, 0]
        self._lmw = self._l_m * self.omega
        self._dlw = (self.l_g - self.l_g0)[:, 0] * self.omega
        # a faulted line has no current dynamics
        self._inv_lg = self.healthy[:, 0] / self.l_g[:, 0]
        self._rb2 = self.r_bar**2
        self._inv_den = 1.0 / (2.0 * self.eps * self.r_bar + self.eps**2)

    def rk4(self, x, dt, i_ref, v_g):
        k1 = self.rhs(x, i_ref, v_g)
        k2 = self.rhs(x + 0.5 * dt * k1, i_ref, v_g)
        k3 = self.rhs(x + 0.5 * dt * k2, i_ref, v_g)
        k4 = self.rhs(x + dt * k3, i_ref, v_g)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def lyapunov(self, x):
        it = x[:, 0:2] - x[:, 2:4]
        r_tilde = x[:, 4] - self.r_g[:, 0]
        return 0.5 * self.l_g[:, 0] * np.einsum("ij,ij->i", it, it) + r_tilde**2 / (2.0 * self.gamma)


def baseline_adaptive_splitter(p_measured, p_A, health, rate, dt, shares):
    """First-order-lag share redistribution toward the healthy IBRs.

    Surrogate comparison splitter: the target share is uniform over healthy
    IBRs and zero elsewhere, and the shares relax toward it at ``rate``.
    ``p_measured`` and ``p_A`` are accepted for interface parity; per-IBR
    references are ``shares * p_A``.
    """
    health = np.asarray(health, dtype=bool)
    shares = np.asarray(shares, dtype=float)
    n_ok = int(health.sum())
    target = health / n_ok if n_ok else np.full(shares.shape, 1.0 / shares.size)
    return shares + rate * dt * (target - shares)


def event_step(t_event, dt):
    """Index of the first step boundary at or after ``t_event``."""
    return int(math.ceil(t_event / dt - 1e-9))


def run(cfg, record_every=None):
    """Simulate a scenario; returns a :class:`SimResult`."""
    n = cfg.n_ibrs
    dt = cfg.dt_plant_s
    n_steps = cfg.steps
    stride = cfg.allocator_stride
    record_every = cfg.record_every if record_every is None else int(record_every)
    topology = build_topology(cfg.edges, n, cfg.tau or None)
    cost = alloc.CostSpec(mu=cfg.cost_mu, L_smooth=cfg.cost_l_smooth)
    loop = ClosedLoop(cfg.ibrs, cfg.omega_g)

    v_g = np.array([cfg.v_gd_volt, cfg.v_gq_volt])
    x = np.zeros((n, 5))
    for k, ibr in enumerate(cfg.ibrs):
        x[k, 0:2] = ibr.i0_amp
        x[k, 2:4] = ibr.i_m0_amp
        x[k, 4] = ibr.r_hat0_ohm
    bound = loop.r_bar + loop.eps

    r_bar = loop.r_bar
    threshold = np.full(n, cfg.threshold_ohm) if cfg.threshold_ohm > 0 else 0.5 * r_bar
    if cfg.hysteresis_ohm > 0:
        hysteresis = np.full(n, cfg.hysteresis_ohm)
    elif cfg.threshold_ohm > 0:
        hysteresis = 0.2 * threshold
    else:
        hysteresis = 0.1 * r_bar
    scheduler = alloc.BetaScheduler(
        nominal_r=[c.r_g_nominal_ohm for c in cfg.ibrs],
        threshold=threshold,
        hysteresis=hysteresis,
        beta_nominal=cfg.beta_nominal,
        beta_fault=cfg.beta_fault,
    )
    radius = np.array([
        proposition1_radius(x[k, 0:2] - x[k, 2:4], c.r_bar_ohm, c.gamma_r)
        for k, c in enumerate(cfg.ibrs)
    ])
    cert_limit = cfg.certificate_margin * radius

    state = alloc.AllocatorState.initial(n, cfg.alpha, beta=scheduler.beta())
    shares = np.full(n, 1.0 / n)
    i_ref = np.zeros((n, 2))
    residual = math.nan

    events_at = {}
    for ev in cfg.events:
        events_at.setdefault(event_step(ev.t_s, dt), []).append(ev)

    records = []
    trace = []
    t_arr = np.arange(n_steps + 1) * dt
    sum_p_arr = np.empty(n_steps + 1)
    first_flag = [None] * n
    flag_source = [None] * n
    clamps = 0
    max_r_hat = -math.inf

    for step in range(n_steps + 1):
        t = step * dt
        for ev in events_at.get(step, ()):
            if ev.kind == "open_line":
                loop.healthy[ev.ibr - 1, 0] = 0.0
                x[ev.ibr - 1, 0:2] = 0.0
                loop.refresh()
            elif ev.kind == "swell":
                v_g = v_g * (1.0 + ev.fraction)
            elif ev.kind == "resistance_step":
                loop.r_g[ev.ibr - 1, 0] = ev.r_g_ohm
                loop.refresh()

        i = x[:, 0:2]
        i_tilde_norm = np.linalg.norm(i - x[:, 2:4], axis=1)
        for k in np.flatnonzero(i_tilde_norm > cert_limit):
            if not scheduler.forced[k]:
                scheduler.force_fault(k)
                flag_source[k] = flag_source[k] or "certificate"
        p_meas = i @ v_g
        q_meas = (i @ J.T) @ v_g

        if step % stride == 0:
            beta = scheduler.update(x[:, 4])
            if cfg.splitter == "decentralized":
                state = alloc.AllocatorState(
                    lam=state.lam, nu=state.nu, p=p_meas.copy(), q=q_meas.copy(),
                    beta=beta, alpha=state.alpha, iter=state.iter,
                )
                state = alloc.solve(state, topology, cfg.p_a_watt, cfg.q_a_var,
                                    max_iters=cfg.iters_per_period, tol=cfg.allocator_tol,
                                    cost=cost, budgeted=True)
                p_ref, q_ref = state.p, state.q
                residual = state.residual_p
                lam, nu = state.lam, state.nu
            else:
                shares = baseline_adaptive_splitter(
                    p_meas, cfg.p_a_watt, ~scheduler.flags, cfg.baseline_rate_per_s,
                    cfg.allocator_period_s, shares,
                )
                p_ref, q_ref = shares * cfg.p_a_watt, shares * cfg.q_a_var
                residual = abs(float(p_ref.sum()) - cfg.p_a_watt)
                lam = nu = np.full(n, math.nan)
            i_ref = alloc.current_references(p_ref, q_ref, _Env(v_g))
            for k in range(n):
                trace.append((t, state.iter if cfg.splitter == "decentralized" else step // stride,
                              k + 1, float(lam[k]), float(nu[k]), float(p_ref[k]),
                              float(q_ref[k]), residual))
            for k in np.flatnonzero(scheduler.flags):
                flag_source[k] = flag_source[k] or "estimate"
                if first_flag[k] is None:
                    first_flag[k] = t

        sum_p_arr[step] = p_meas.sum()
        if step % record_every == 0 or step == n_steps:
            records.append(SimRecord(
                t=t,
                i=i.copy(),
                i_m=x[:, 2:4].copy(),
                v=loop.control(x, i_ref, v_g),
                p=p_meas,
                q=q_meas,
                i_ref=i_ref.copy(),
                r_hat=x[:, 4].copy(),
                beta=scheduler.beta(),
                lyapunov=loop.lyapunov(x),
                sum_p=float(p_meas.sum()),
                sum_q=float(q_meas.sum()),
                residual=float(residual),
            ))
        if step == n_steps:
            break

        x = loop.rk4(x, dt, i_ref, v_g)
        over = np.abs(x[:, 4]) > bound
        if over.any():
            clamps += int(over.sum())
            x[:, 4] = np.clip(x[:, 4], -bound, bound)
        max_r_hat = max(max_r_hat, float(np.max(np.abs(x[:, 4]) - bound)))
        peak = np.max(np.abs(x), axis=1)
        if not np.all(np.isfinite(peak)) or peak.max() > DIVERGENCE_LIMIT:
            k = int(np.argmax(np.where(np.isfinite(peak), peak, np.inf)))
            raise NumericalDivergence(t + dt, k + 1, float(peak[k]))

    metrics = compute_metrics(cfg, t_arr, sum_p_arr, records, first_flag, clamps, max_r_hat)
    metrics["fault_flag_source"] = flag_source
    return SimResult(cfg, records, metrics, trace, t_arr, sum_p_arr)


class _Env:
    """Minimal grid-voltage holder accepted by the allocator's reference helpers."""

    __slots__ = ("v_g",)

    def __init__(self, v_g):
        self.v_g = v_g


def settling_index(deviation, band=SETTLING_BAND):
    """First index after which ``deviation`` stays within ``band``; None if never."""
    outside = np.flatnonzero(deviation > band)
    if outside.size == 0:
        return 0
    last = int(outside[-1])
    if last == deviation.size - 1:
        return None
    return last + 1


def compute_metrics(cfg, t, sum_p, records, first_flag, clamps, max_r_hat_excess):
    dt = cfg.dt_plant_s
    base = cfg.s_base
    dev = np.abs(sum_p - cfg.p_a_watt) / base

    groups = []
    for ev in cfg.events:
        k = event_step(ev.t_s, dt)
        if groups and groups[-1]["step"] == k:
            groups[-1]["kinds"].append(ev.kind)
        else:
            groups.append({"step": k, "t_s": ev.t_s, "kinds": [ev.kind]})
    bounds = [g["step"] for g in groups] + [len(t)]

    first_event = bounds[0]
    settle0 = settling_index(dev[:first_event])
    initial = {
        "settling_time_s": None if settle0 is None else float(t[settle0]),
        "max_deviation_pu_after_settling": (
            None if settle0 is None or settle0 >= first_event
            else float(dev[settle0:first_event].max())
        ),
    }

    events = []
    for g, start, stop in zip(groups, bounds[:-1], bounds[1:]):
        window = dev[start:stop]
        if window.size == 0:
            continue
        idx = settling_index(window)
        events.append({
            "t_s": g["t_s"],
            "applied_t_s": float(t[min(start, len(t) - 1)]),
            "kinds": g["kinds"],
            "max_abs_deviation_watt": float(window.max() * base),
            "max_abs_deviation_pu": float(window.max()),
            "settling_time_s": None if idx is None else float(t[start + idx] - t[start]),
        })

    p_a = cfg.p_a_watt if cfg.p_a_watt != 0 else 1.0
    pre = [r for r in records if r.t < t[min(first_event, len(t) - 1)]] if groups else records
    split = lambda rec: [float(x) / p_a for x in rec.p]
    return {
        "scenario": cfg.name,
        "splitter": cfg.splitter,
        "n_ibrs": cfg.n_ibrs,
        "p_a_watt": cfg.p_a_watt,
        "s_base_va": base,
        "band_pu": SETTLING_BAND,
        "no_event": not groups,
        "initial": initial,
        "events": events,
        "splits": {
            "pre_event": split(pre[-1]) if pre else None,
            "final": split(records[-1]),
        },
        "fault_flag_time_s": [None if f is None else float(f) for f in first_flag],
        "projection_clamps": int(clamps),
        "max_r_hat_bound_excess": float(max_r_hat_excess),
        "max_abs_deviation_pu": float(dev.max()),
    }
