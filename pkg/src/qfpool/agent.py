"""One contributor's problem: quasi-linear payoff, gradient, and best response.

A contributor picks a nonnegative amount for every project.  Their payoff is
the utility of the resulting pool allocation minus their own total spend; the
allocation is always evaluated through the full two-branch rule so behaviour
stays correct on both sides of the cap.  In the capped regime the payoff
gradient has a closed form: the relative-contribution factor times the
pool-to-target ratio times the gap between the project's own marginal utility
and the target-weighted average of all marginal utilities, minus one (the
marginal cost of the contributor's own money).

The solver below works on plain floats: instances are desk scale (a handful
of projects), where scalar math beats vectorisation by an order of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .allocation import ContributionLedger, MatchingPool
from .errors import BestResponseNonConvergence, DomainError
from .preferences import UtilityFamily, UtilitySpec


@dataclass(frozen=True)
class BestResponseConfig:
    """Termination and step control for the best-response solver."""

    max_iters: int = 200
    step_tol: float = 1e-11
    grad_tol: float = 1e-8
    upper_bound: float | None = None
    damping: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if not self.step_tol > 0:
            raise DomainError("step_tol must be > 0")
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be > 0")
        if self.upper_bound is not None and not self.upper_bound > 0:
            raise DomainError("upper_bound must be > 0")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must be in (0, 1]")


def _family_funcs(family: UtilityFamily, gamma):
    if family is UtilityFamily.SQRT:
        return (lambda w, f: w * math.sqrt(f)), (lambda w, f: w / (2.0 * math.sqrt(f)))
    if family is UtilityFamily.LOG1P:
        return (lambda w, f: w * math.log1p(f)), (lambda w, f: w / (1.0 + f))
    return (
        lambda w, f: w * f**gamma / gamma,
        lambda w, f: w * f ** (gamma - 1.0),
    )


class _AgentView:
    """Contributor ``i``'s slice of the game, with everyone else frozen.

    Caches the square-root column sums of the other rows so objective and
    gradient evaluations cost O(n_projects) scalar operations.
    """

    def __init__(self, spec: UtilitySpec, ledger: ContributionLedger, pool: MatchingPool, i: int):
        if not 0 <= i < ledger.n_contributors:
            raise DomainError(f"contributor index {i} out of range")
        if spec.weights.shape != ledger.amounts.shape:
            raise DomainError(
                f"utility weights shape {spec.weights.shape} does not match "
                f"ledger shape {ledger.amounts.shape}"
            )
        roots = np.sqrt(ledger.amounts)
        self.sqrt_others = (roots.sum(axis=0) - roots[i]).tolist()
        self.w = spec.weights[i].tolist()
        self.value, self.marginal = _family_funcs(spec.family, spec.exponent)
        self.d = pool.amount_d
        self.n_projects = ledger.n_projects
        self.i = i

    def check_candidate(self, candidate) -> list[float]:
        c = np.asarray(candidate, dtype=float)
        if c.shape != (self.n_projects,):
            raise DomainError(f"candidate has shape {c.shape}, expected ({self.n_projects},)")
        if (~np.isfinite(c)).any() or (c < 0).any():
            raise DomainError("candidate entries must be finite and >= 0")
        return c.tolist()

    def _targets(self, xs: list[float]):
        targets = []
        total = 0.0
        for p in range(self.n_projects):
            sigma = self.sqrt_others[p] + math.sqrt(xs[p])
            t = sigma * sigma
            targets.append(t)
            total += t
        return targets, total

    def _scale(self, total: float) -> float:
        """Funded amount per unit of target under the two-branch rule."""
        if total <= self.d:
            return 1.0
        return self.d / total if self.d > 0.0 else 0.0

    def objective(self, xs: list[float]) -> float:
        targets, total = self._targets(xs)
        scale = self._scale(total)
        acc = 0.0
        for p in range(self.n_projects):
            w = self.w[p]
            if w != 0.0:
                acc += self.value(w, targets[p] * scale)
            acc -= xs[p]
        return acc

    def gradient_interior(self, xs: list[float], p: int) -> float:
        """Analytic payoff derivative in coordinate ``p``; needs xs[p] > 0."""
        targets, total = self._targets(xs)
        own_root = math.sqrt(xs[p])
        lift = (self.sqrt_others[p] + own_root) / own_root
        if total <= self.d:
            # below the cap projects do not interact
            w = self.w[p]
            return (lift * self.marginal(w, targets[p]) if w != 0.0 else 0.0) - 1.0
        if self.d == 0.0:
            return -1.0
        scale = self.d / total
        weighted = 0.0
        marg_p = 0.0
        for q in range(self.n_projects):
            w = self.w[q]
            t = targets[q]
            if w != 0.0 and t > 0.0:
                m = self.marginal(w, t * scale)
                weighted += m * t
                if q == p:
                    marg_p = m
        return lift * scale * (marg_p - weighted / total) - 1.0

    def gradient_at_zero(self, xs: list[float], p: int) -> float:
        """One-sided directional derivative at a corner, by forward difference.

        The analytic form divides by the own square root and blows up at
        zero even though the payoff itself is well behaved, so the corner is
        probed numerically.
        """
        h = 1e-8 * max(1.0, math.fsum(xs))
        base = self.objective(xs)
        xs[p] = h
        bumped = self.objective(xs)
        xs[p] = 0.0
        return (bumped - base) / h

    def gradient_component(self, xs: list[float], p: int) -> float:
        if xs[p] > 0.0:
            return self.gradient_interior(xs, p)
        return self.gradient_at_zero(xs, p)

    def gradient(self, xs: list[float]) -> list[float]:
        return [self.gradient_component(xs, p) for p in range(self.n_projects)]


def contributor_objective(
    spec: UtilitySpec,
    ledger: ContributionLedger,
    pool: MatchingPool,
    i: int,
    candidate,
) -> float:
    """Payoff of contributor ``i`` if their row were replaced by ``candidate``.

    Utility of the resulting two-branch allocation minus the candidate's
    total spend.
    """
    view = _AgentView(spec, ledger, pool, i)
    return view.objective(view.check_candidate(candidate))


def objective_gradient(
    spec: UtilitySpec,
    ledger: ContributionLedger,
    pool: MatchingPool,
    i: int,
    candidate,
) -> np.ndarray:
    """Gradient of :func:`contributor_objective` in the candidate row.

    Positive entries get the closed form for whichever branch of the
    allocation rule is active at the candidate; zero entries are reported
    as one-sided forward-difference directional derivatives.
    """
    view = _AgentView(spec, ledger, pool, i)
    return np.array(view.gradient(view.check_candidate(candidate)))


def foc_residual(
    spec: UtilitySpec,
    ledger: ContributionLedger,
    pool: MatchingPool,
    i: int,
    p: int,
) -> float:
    """Stationarity residual for contributor ``i`` at project ``p``.

    Assembled from the raw first-order condition: the direct effect of the
    contribution on its own project's share, plus the crowding-out effect on
    every project's share through the larger target total, minus the unit
    cost of money.  Zero at an interior best response.  Only defined in the
    capped regime for strictly positive own contributions.
    """
    view = _AgentView(spec, ledger, pool, i)
    if not 0 <= p < view.n_projects:
        raise DomainError(f"project index {p} out of range")
    xs = ledger.amounts[i].tolist()
    if xs[p] == 0.0:
        raise DomainError("corner point; use objective_gradient")
    targets, total = view._targets(xs)
    d = view.d
    if total <= d:
        raise DomainError("first-order condition is defined only in the capped regime")
    if d == 0.0:
        return -1.0
    scale = d / total
    own_root = math.sqrt(xs[p])
    lift = (view.sqrt_others[p] + own_root) / own_root
    marg = [
        view.marginal(view.w[q], targets[q] * scale)
        if view.w[q] != 0.0 and targets[q] > 0.0
        else 0.0
        for q in range(view.n_projects)
    ]
    direct = marg[p] * (lift * d / total - (d / total**2) * targets[p] * lift)
    cross = 0.0
    for q in range(view.n_projects):
        if q != p:
            cross += marg[q] * (-(d / total**2) * lift * targets[q])
    return direct + cross - 1.0


# --- best-response solver -------------------------------------------------
#
# Projected coordinate ascent.  Each coordinate is maximised by a line search
# that brackets a sign change of the 1-d payoff derivative and closes the
# bracket with an Illinois (damped regula falsi) iteration; a backtracking
# check on the payoff guards every applied move.  Bracketing on the
# derivative sign also lands correctly on the regime-boundary kink, where the
# derivative jumps without crossing zero.
#
# Coordinate moves alone stall on that kink: the boundary is a ridge, and
# improving along it requires moving two coordinates at once.  Each sweep
# therefore also line-searches pairwise directions: the plain transfer
# e_p - e_q, and the exact constant-target-total curve through the current
# point, which is the tangent manifold of the kink.  Together with the
# coordinate directions these span every first-order escape from a ridge
# point.

_MAX_BRACKET = 80
_MAX_REFINE = 90


def _refine_root(eval_g, lo: float, g_lo: float, hi: float, g_hi: float) -> float:
    """Illinois iteration for the derivative's sign change inside [lo, hi]."""
    for _ in range(_MAX_REFINE):
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
        denom = g_lo - g_hi
        if denom > 0:
            mid = lo + (hi - lo) * (g_lo / denom)
            # keep strictly interior so the bracket always shrinks
            span = hi - lo
            mid = min(max(mid, lo + 1e-3 * span), hi - 1e-3 * span)
        else:
            mid = 0.5 * (lo + hi)
        g_mid = eval_g(mid)
        if g_mid > 0.0:
            if lo == mid:
                break
            lo, g_lo = mid, g_mid
            g_hi *= 0.5  # Illinois damping keeps regula falsi from stalling
        elif g_mid < 0.0:
            if hi == mid:
                break
            hi, g_hi = mid, g_mid
            g_lo *= 0.5
        else:
            return mid
    return 0.5 * (lo + hi)


def _line_search(view: _AgentView, x: list[float], p: int, ub: float, config: BestResponseConfig) -> float:
    """Move coordinate ``p`` toward its 1-d optimum.  Returns the move size."""
    t0 = x[p]
    g0 = view.gradient_component(x, p)
    if t0 == 0.0 and g0 <= 0.0:
        return 0.0
    if t0 > 0.0 and abs(g0) <= 0.25 * config.grad_tol:
        return 0.0

    work = list(x)

    def eval_g(t: float) -> float:
        work[p] = t
        return view.gradient_component(work, p)

    if g0 > 0.0:
        lo, g_lo = t0, g0
        hi = None
        step = max(0.5 * max(t0, 1.0), 10.0 * config.step_tol)
        for _ in range(_MAX_BRACKET):
            cand = min(lo + step, ub)
            g_cand = eval_g(cand)
            if g_cand <= 0.0:
                hi, g_hi = cand, g_cand
                break
            lo, g_lo = cand, g_cand
            if cand >= ub:
                break
            step *= 2.0
        t_star = ub if hi is None else _refine_root(eval_g, lo, g_lo, hi, g_hi)
    else:
        hi, g_hi = t0, g0
        lo = None
        cand = t0
        for _ in range(_MAX_BRACKET):
            cand *= 0.5
            if cand <= 1e-3 * config.step_tol:
                break
            g_cand = eval_g(cand)
            if g_cand >= 0.0:
                lo, g_lo = cand, g_cand
                break
            hi, g_hi = cand, g_cand
        t_star = 0.0 if lo is None else _refine_root(eval_g, lo, g_lo, hi, g_hi)

    work[p] = t0
    base = view.objective(work)
    target = t0 + config.damping * (t_star - t0)
    target = min(max(target, 0.0), ub)
    # backtracking safeguard: only strict payoff improvements are applied,
    # so the sweep is monotone no matter what the root finder returned
    for _ in range(60):
        if target == t0 or abs(target - t0) < 0.25 * config.step_tol:
            return 0.0
        work[p] = target
        if view.objective(work) > base:
            x[p] = target
            return abs(target - t0)
        target = t0 + 0.5 * (target - t0)
    return 0.0


def _pair_search(view: _AgentView, x: list[float], p: int, q: int, ub: float, config: BestResponseConfig) -> float:
    """Shift money from coordinate ``q`` into ``p`` along e_p - e_q."""
    t_max = min(x[q], ub - x[p])
    if t_max <= 0.0:
        return 0.0

    work = list(x)

    def eval_g(t: float) -> float:
        work[p] = x[p] + t
        work[q] = x[q] - t
        return view.gradient_component(work, p) - view.gradient_component(work, q)

    h0 = min(1e-7 * max(1.0, t_max), 0.5 * t_max)
    base = view.objective(x)
    work[p] = x[p] + h0
    work[q] = x[q] - h0
    if (view.objective(work) - base) / h0 <= 0.25 * config.grad_tol:
        return 0.0

    lo, g_lo = h0, eval_g(h0)
    if g_lo <= 0.0:
        t_star = h0
    else:
        hi = None
        step = max(0.25 * t_max, 10.0 * config.step_tol)
        for _ in range(_MAX_BRACKET):
            cand = min(lo + step, t_max)
            g_cand = eval_g(cand)
            if g_cand <= 0.0:
                hi, g_hi = cand, g_cand
                break
            lo, g_lo = cand, g_cand
            if cand >= t_max:
                break
            step *= 2.0
        t_star = lo if hi is None else _refine_root(eval_g, lo, g_lo, hi, g_hi)

    target = config.damping * t_star
    for _ in range(60):
        if target <= 0.0 or target < 0.25 * config.step_tol:
            return 0.0
        work[p] = x[p] + target
        work[q] = max(x[q] - target, 0.0)
        if view.objective(work) > base:
            x[p] = work[p]
            x[q] = work[q]
            return target
        target *= 0.5
    return 0.0


def _ridge_search(view: _AgentView, x: list[float], p: int, q: int, ub: float, config: BestResponseConfig) -> float:
    """Rebalance coordinates ``p`` and ``q`` along their constant-target curve.

    Holding every other coordinate fixed, the curve keeps the two projects'
    combined QF target (and hence the grand total and every project's funded
    amount) exactly constant, so it parametrises the regime-boundary ridge
    whenever the point sits on it.  The search variable is the coordinate
    ``p`` amount; ``q`` is recovered from the conserved pair target.
    """
    if x[q] <= 0.0:
        return 0.0
    targets, total = view._targets(x)
    so_p = view.sqrt_others[p]
    so_q = view.sqrt_others[q]
    pair_total = targets[p] + targets[q]
    slack = pair_total - so_q * so_q
    if slack <= 0.0:
        return 0.0
    u0 = x[p]
    root_slack = math.sqrt(slack)
    u_max = min((root_slack - so_p) ** 2 if root_slack > so_p else 0.0, ub)
    if u_max <= u0:
        return 0.0
    scale = view._scale(total)

    def c_q_of(u: float) -> float:
        t_q = pair_total - (so_p + math.sqrt(u)) ** 2
        if t_q <= 0.0:
            return 0.0
        root = math.sqrt(t_q) - so_q
        return root * root if root > 0.0 else 0.0

    def eval_g(u: float) -> float:
        # derivative of the pair's payoff along the curve, in units of c_p
        sig_p = so_p + math.sqrt(u)
        t_p = sig_p * sig_p
        t_q = pair_total - t_p
        if t_q <= so_q * so_q or u <= 0.0:
            return -1.0
        sig_q = math.sqrt(t_q)
        m_p = view.marginal(view.w[p], t_p * scale) if view.w[p] != 0.0 and t_p > 0.0 else 0.0
        m_q = view.marginal(view.w[q], t_q * scale) if view.w[q] != 0.0 else 0.0
        lam_p = sig_p / math.sqrt(u)
        inv_lam_q = (sig_q - so_q) / sig_q  # sqrt(c_q)/sigma_q
        return lam_p * (scale * (m_p - m_q) + inv_lam_q) - 1.0

    work = list(x)
    base = view.objective(x)
    h0 = min(1e-7 * max(1.0, u_max), 0.5 * (u_max - u0))
    work[p] = u0 + h0
    work[q] = c_q_of(u0 + h0)
    if (view.objective(work) - base) / h0 <= 0.25 * config.grad_tol:
        return 0.0

    lo, g_lo = u0 + h0, eval_g(u0 + h0)
    if g_lo <= 0.0:
        t_star = u0 + h0
    else:
        hi = None
        step = max(0.25 * (u_max - u0), 10.0 * config.step_tol)
        for _ in range(_MAX_BRACKET):
            cand = min(lo + step, u_max)
            g_cand = eval_g(cand)
            if g_cand <= 0.0:
                hi, g_hi = cand, g_cand
                break
            lo, g_lo = cand, g_cand
            if cand >= u_max:
                break
            step *= 2.0
        t_star = lo if hi is None else _refine_root(eval_g, lo, g_lo, hi, g_hi)

    target = u0 + config.damping * (t_star - u0)
    for _ in range(60):
        if abs(target - u0) < 0.25 * config.step_tol:
            return 0.0
        work[p] = target
        work[q] = c_q_of(target)
        if view.objective(work) > base:
            moved = max(abs(target - u0), abs(work[q] - x[q]))
            x[p] = work[p]
            x[q] = work[q]
            return moved
        target = u0 + 0.5 * (target - u0)
    return 0.0


def _kkt_violation(view: _AgentView, x: list[float], ub: float, config: BestResponseConfig) -> float:
    """Largest first-order improvement rate available at ``x``.

    Checks the coordinate directions and the pairwise transfer and ridge
    directions.  Interior coordinates start from the analytic |gradient|;
    where that is large the point may still be a regime-boundary kink (the
    derivative jumps there), so the violation is confirmed with one-sided
    payoff probes before it counts.
    """
    n = view.n_projects
    worst = 0.0
    base = view.objective(x)
    work = list(x)
    for p in range(n):
        g = view.gradient_component(x, p)
        if x[p] == 0.0:
            worst = max(worst, g)
            continue
        if abs(g) <= config.grad_tol:
            continue
        h = 1e-7 * max(1.0, x[p])
        rate = 0.0
        if x[p] + h <= ub:
            work[p] = x[p] + h
            rate = max(rate, (view.objective(work) - base) / h)
        down = min(h, x[p])
        if down > 0:
            work[p] = x[p] - down
            rate = max(rate, (view.objective(work) - base) / down)
        work[p] = x[p]
        worst = max(worst, rate)
    for q in range(n):
        if x[q] <= 0.0:
            continue
        h = min(1e-7 * max(1.0, x[q]), 0.5 * x[q])
        for p in range(n):
            if p == q or x[p] + h > ub:
                continue
            work[p] = x[p] + h
            work[q] = x[q] - h
            worst = max(worst, (view.objective(work) - base) / h)
            work[p] = x[p]
            work[q] = x[q]
    # ridge directions: probe along each pair's constant-target curve
    targets, _ = view._targets(x)
    for p in range(n):
        for q in range(n):
            if p == q or x[q] <= 0.0:
                continue
            so_p = view.sqrt_others[p]
            so_q = view.sqrt_others[q]
            pair_total = targets[p] + targets[q]
            slack = pair_total - so_q * so_q
            if slack <= 0.0:
                continue
            root_slack = math.sqrt(slack)
            u_cap = min((root_slack - so_p) ** 2 if root_slack > so_p else 0.0, ub)
            u0 = x[p]
            if u_cap <= u0:
                continue
            h = min(1e-7 * max(1.0, u0), 0.5 * (u_cap - u0))
            if h <= 0.0:
                continue
            t_q = pair_total - (so_p + math.sqrt(u0 + h)) ** 2
            root = math.sqrt(t_q) - so_q if t_q > 0.0 else -1.0
            work[p] = u0 + h
            work[q] = root * root if root > 0.0 else 0.0
            worst = max(worst, (view.objective(work) - base) / h)
            work[p] = x[p]
            work[q] = x[q]
    return worst


def _ascend(view: _AgentView, x: list[float], ub: float, config: BestResponseConfig):
    viol = math.inf
    for _ in range(config.max_iters):
        max_move = 0.0
        for p in range(view.n_projects):
            max_move = max(max_move, _line_search(view, x, p, ub, config))
        for p in range(view.n_projects):
            for q in range(view.n_projects):
                if p != q:
                    max_move = max(max_move, _pair_search(view, x, p, q, ub, config))
                    max_move = max(max_move, _ridge_search(view, x, p, q, ub, config))
        viol = _kkt_violation(view, x, ub, config)
        if viol <= config.grad_tol:
            return x, view.objective(x), viol, True
        if max_move <= config.step_tol:
            break
    return x, view.objective(x), viol, False


def best_response(
    spec: UtilitySpec,
    ledger: ContributionLedger,
    pool: MatchingPool,
    i: int,
    config: BestResponseConfig | None = None,
) -> np.ndarray:
    """Maximise contributor ``i``'s payoff over their own row, others fixed.

    Solves from the contributor's current row and from the zero row (a cheap
    hedge against landing in a poor basin) and returns the better point.
    Raises :class:`BestResponseNonConvergence` carrying the best iterate if
    neither run certifies the first-order conditions.
    """
    config = config or BestResponseConfig()
    view = _AgentView(spec, ledger, pool, i)
    if config.upper_bound is not None:
        ub = config.upper_bound
    else:
        ub = max(1.0, 10.0 * (pool.amount_d + ledger.total()))
    start = [min(max(v, 0.0), ub) for v in ledger.amounts[i].tolist()]
    start_obj = view.objective(start)

    x, obj, viol, ok = _ascend(view, list(start), ub, config)
    if any(start):
        x2, obj2, viol2, ok2 = _ascend(view, [0.0] * view.n_projects, ub, config)
        strictly_better = obj2 > obj + 1e-13 * max(1.0, abs(obj))
        tied = abs(obj2 - obj) <= 1e-13 * max(1.0, abs(obj))
        if strictly_better or (tied and ok2 and not ok):
            x, obj, viol, ok = x2, obj2, viol2, ok2
    if obj < start_obj:
        # ascent is monotone so this should not happen; keep the contract anyway
        x, obj = list(start), start_obj
        viol = _kkt_violation(view, x, ub, config)
        ok = viol <= config.grad_tol
    if not ok:
        raise BestResponseNonConvergence(i, np.array(x), viol, config.max_iters)
    return np.array(x)
