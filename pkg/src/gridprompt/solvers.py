"""Ground-truth solvers: Newton-Raphson AC power flow and AC optimal power flow.

The OPF works in the reduced space of control variables (non-slack generator
active power and generator-bus voltage setpoints). Every objective/constraint
evaluation runs an inner power flow, so the AC physics holds exactly along the
whole search path; inequality limits are handled with an augmented Lagrangian
and the inner minimization uses L-BFGS-B with central-difference gradients.
Grids in scope are small (tens of buses), so everything is dense numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .grid_model import BusKind, GridCase, admittance_matrix


class SolverError(Exception):
    """Numerical failure that is not a plain non-convergence (e.g. singular Jacobian)."""


@dataclass(frozen=True)
class PfSolution:
    vm_pu: np.ndarray          # per bus
    va_deg: np.ndarray         # per bus, slack = 0
    gen_p_mw: np.ndarray       # per generator, case order (slack included)
    gen_q_mvar: np.ndarray
    converged: bool
    iterations: int
    max_mismatch_pu: float


@dataclass(frozen=True)
class OpfSolution:
    gen: tuple[tuple[int, float, float], ...]    # (id, p_mw, q_mvar), non-slack
    slack: tuple[int, float, float]              # (id, p_mw, q_mvar)
    bus: tuple[tuple[int, float, float], ...]    # (id, vm_pu, va_deg)
    objective_cost: float                        # $/h
    feasible: bool
    max_violation_pu: float
    controls: np.ndarray                         # warm-start vector for related cases
    message: str = ""


@dataclass(frozen=True)
class OpfOptions:
    pf_tol: float = 1e-8
    pf_max_iter: int = 50
    optimality_tol: float = 1e-4     # relative cost
    constraint_tol: float = 1e-4     # per-unit
    penalty_growth: float = 10.0
    max_outer: int = 20
    mu0: float = 10.0
    inner_maxiter: int = 120
    x0: np.ndarray | None = None     # warm-start controls


class _Network:
    """Precomputed per-unit arrays for one GridCase."""

    def __init__(self, case: GridCase):
        self.case = case
        n = case.n_bus
        self.Y = admittance_matrix(case)
        self.base = case.base_mva
        kinds = [b.bus_kind for b in case.buses]
        self.slack_bus = kinds.index(BusKind.SLACK)
        self.pv = np.array([i for i, k in enumerate(kinds) if k == BusKind.PV], int)
        self.pq = np.array([i for i, k in enumerate(kinds) if k == BusKind.PQ], int)
        self.pvpq = np.concatenate([self.pv, self.pq])

        self.p_load = np.zeros(n)
        self.q_load = np.zeros(n)
        for ld in case.loads:
            self.p_load[ld.bus] += ld.p_mw / self.base
            self.q_load[ld.bus] += ld.q_mvar / self.base

        self.gen_bus = np.array([g.bus for g in case.generators], dtype=int)
        self.gen_is_slack = np.array([g.is_slack for g in case.generators], dtype=bool)
        self.vm_min = np.array([b.vm_min for b in case.buses])
        self.vm_max = np.array([b.vm_max for b in case.buses])

    def gen_p_bus(self, gen_p_pu: np.ndarray) -> np.ndarray:
        """Sum generator setpoints onto buses (slack machine excluded)."""
        p = np.zeros(self.case.n_bus)
        for i, g in enumerate(self.case.generators):
            if not g.is_slack:
                p[g.bus] += gen_p_pu[i]
        return p


def _bus_vm_setpoints(net: _Network, gen_vm: np.ndarray) -> np.ndarray:
    """Voltage magnitude target per generator bus (last machine wins on shared buses)."""
    vm = np.ones(net.case.n_bus)
    for i, g in enumerate(net.case.generators):
        vm[g.bus] = gen_vm[i]
    return vm


def _newton_pf(
    net: _Network,
    gen_p_pu: np.ndarray,
    gen_vm: np.ndarray,
    tol: float,
    max_iter: int,
    v0: np.ndarray | None = None,
):
    """Core NR loop; returns (V complex, converged, iterations, max_mismatch)."""
    n = net.case.n_bus
    vm_target = _bus_vm_setpoints(net, gen_vm)

    if v0 is not None:
        V = v0.copy()
    else:
        V = np.ones(n, dtype=complex)
    # pin controlled magnitudes, keep warm-start angles
    fixed = np.concatenate([[net.slack_bus], net.pv])
    V[fixed] = vm_target[fixed] * V[fixed] / np.abs(V[fixed])
    V[net.slack_bus] = vm_target[net.slack_bus]  # slack angle = 0

    p_spec = net.gen_p_bus(gen_p_pu) - net.p_load
    q_spec = -net.q_load

    pv, pq, pvpq = net.pv, net.pq, net.pvpq
    npv, npq = len(pv), len(pq)

    def mismatch(V):
        S = V * np.conj(net.Y @ V)
        dP = p_spec[pvpq] - S.real[pvpq]
        dQ = q_spec[pq] - S.imag[pq]
        return np.concatenate([dP, dQ])

    it = 0
    F = mismatch(V)
    norm = np.max(np.abs(F)) if F.size else 0.0
    while norm > tol and it < max_iter:
        Ibus = net.Y @ V
        diagV = np.diag(V)
        diagI = np.diag(Ibus)
        diagVnorm = np.diag(V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(diagI - net.Y @ diagV)
        dS_dVm = diagV @ np.conj(net.Y @ diagVnorm) + np.conj(diagI) @ diagVnorm

        J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
        J12 = dS_dVm[np.ix_(pvpq, pq)].real
        J21 = dS_dVa[np.ix_(pq, pvpq)].imag
        J22 = dS_dVm[np.ix_(pq, pq)].imag
        J = np.block([[J11, J12], [J21, J22]])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular power-flow Jacobian at iteration {it}") from exc

        va = np.angle(V)
        vm = np.abs(V)
        va[pvpq] += dx[: npv + npq]
        vm[pq] += dx[npv + npq :]
        V = vm * np.exp(1j * va)
        it += 1
        F = mismatch(V)
        norm = np.max(np.abs(F)) if F.size else 0.0

    return V, norm <= tol, it, norm


def _allocate_gen_q(net: _Network, V: np.ndarray) -> np.ndarray:
    """Split each generator bus's reactive output among its machines.

    Shared buses split proportionally to reactive range (equal if all ranges
    are zero); fixtures have one machine per bus so this is usually identity.
    """
    S = V * np.conj(net.Y @ V)
    q_bus = S.imag + net.q_load
    q = np.zeros(len(net.case.generators))
    by_bus: dict[int, list[int]] = {}
    for i, g in enumerate(net.case.generators):
        by_bus.setdefault(g.bus, []).append(i)
    for bus, idxs in by_bus.items():
        ranges = np.array(
            [net.case.generators[i].q_max_mvar - net.case.generators[i].q_min_mvar
             for i in idxs]
        )
        w = ranges / ranges.sum() if ranges.sum() > 0 else np.full(len(idxs), 1 / len(idxs))
        for i, wi in zip(idxs, w):
            q[i] = q_bus[bus] * net.base * wi  # MVAr
    return q


def _slack_p_mw(net: _Network, V: np.ndarray, gen_p_pu: np.ndarray) -> float:
    S = V * np.conj(net.Y @ V)
    p_bus = S.real[net.slack_bus] + net.p_load[net.slack_bus]
    others = sum(
        gen_p_pu[i]
        for i, g in enumerate(net.case.generators)
        if not g.is_slack and g.bus == net.slack_bus
    )
    return (p_bus - others) * net.base


def solve_pf(
    case: GridCase,
    tol: float = 1e-8,
    max_iter: int = 50,
    gen_p_mw: np.ndarray | None = None,
    gen_vm_pu: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    net: "_Network | None" = None,
) -> PfSolution:
    """Newton-Raphson power flow from a flat start (or warm start ``v0``).

    ``gen_p_mw`` / ``gen_vm_pu`` override the case's generator setpoints
    (used by the OPF loop). Non-convergence is reported in the result, not
    raised; a singular Jacobian raises SolverError.
    """
    if net is None:
        net = _Network(case)
    gen_p = np.array(
        [g.p_mw for g in case.generators] if gen_p_mw is None else gen_p_mw, float
    ) / net.base
    gen_vm = np.array(
        [g.vm_setpoint_pu for g in case.generators] if gen_vm_pu is None else gen_vm_pu,
        float,
    )
    V, converged, it, norm = _newton_pf(net, gen_p, gen_vm, tol, max_iter, v0)

    p_out = gen_p * net.base
    for i, g in enumerate(case.generators):
        if g.is_slack:
            p_out[i] = _slack_p_mw(net, V, gen_p)
    q_out = _allocate_gen_q(net, V)
    # loads at non-generator buses keep their own Q; zero out at pure PQ gens? no:
    # every generator bus is PV or slack by construction of the fixtures; if a
    # generator sits on a PQ bus its Q output is whatever closes the balance.
    return PfSolution(
        vm_pu=np.abs(V),
        va_deg=np.degrees(np.angle(V)),
        gen_p_mw=p_out,
        gen_q_mvar=q_out,
        converged=converged,
        iterations=it,
        max_mismatch_pu=float(norm),
    )


def generation_cost(case: GridCase, gen_p_mw: np.ndarray) -> float:
    """Total polynomial production cost in $/h."""
    total = 0.0
    for g, p in zip(case.generators, gen_p_mw):
        total += g.cost_c2 * p * p + g.cost_c1 * p + g.cost_c0
    return total


class _OpfProblem:
    """Reduced-space OPF: controls are non-slack gen P (pu) and gen bus Vm."""

    def __init__(self, case: GridCase, opts: OpfOptions):
        self.case = case
        self.opts = opts
        self.net = _Network(case)
        self.gens = case.generators
        self.free = [i for i, g in enumerate(self.gens) if not g.is_slack]
        self.slack_i = next(i for i, g in enumerate(self.gens) if g.is_slack)
        self.n_p = len(self.free)
        self.n_v = len(self.gens)
        self._v_warm: np.ndarray | None = None
        self._pf_fail_streak = 0

        lo = [self.gens[i].p_min_mw / self.net.base for i in self.free]
        hi = [self.gens[i].p_max_mw / self.net.base for i in self.free]
        for g in self.gens:
            b = case.buses[g.bus]
            lo.append(b.vm_min)
            hi.append(b.vm_max)
        self.bounds = optimize.Bounds(np.array(lo), np.array(hi))

        self.rated = [ln for ln in case.lines if ln.rate_mva > 0]
        # constraint count: slack P (2) + gen Q (2 each) + PQ-bus Vm (2 each)
        # + line flow (2 per rated line)
        self.n_con = 2 + 2 * len(self.gens) + 2 * len(self.net.pq) + 2 * len(self.rated)

    def x0(self) -> np.ndarray:
        p = [self.gens[i].p_mw / self.net.base for i in self.free]
        vm = [g.vm_setpoint_pu for g in self.gens]
        x = np.array(p + vm)
        return np.clip(x, self.bounds.lb, self.bounds.ub)

    def split(self, x: np.ndarray):
        gen_p = np.zeros(len(self.gens))
        for k, i in enumerate(self.free):
            gen_p[i] = x[k]
        gen_vm = x[self.n_p :]
        return gen_p, gen_vm

    def pf(self, x: np.ndarray):
        gen_p, gen_vm = self.split(x)
        V, conv, _, norm = _newton_pf(
            self.net, gen_p, gen_vm, self.opts.pf_tol, self.opts.pf_max_iter,
            self._v_warm,
        )
        if conv:
            self._v_warm = V
            self._pf_fail_streak = 0
        else:
            self._pf_fail_streak += 1
            if self._pf_fail_streak > 3:
                self._v_warm = None  # warm start went sour, fall back to flat
        return V, conv, norm

    def cost_pu(self, x: np.ndarray, V: np.ndarray) -> float:
        gen_p, _ = self.split(x)
        p_mw = gen_p * self.net.base
        p_mw[self.slack_i] = _slack_p_mw(self.net, V, gen_p)
        return generation_cost(self.case, p_mw)

    def constraints(self, x: np.ndarray, V: np.ndarray) -> np.ndarray:
        """g(x) <= 0, every entry expressed in per-unit so one tolerance fits all."""
        gen_p, _ = self.split(x)
        net = self.net
        g: list[float] = []

        sp = _slack_p_mw(net, V, gen_p) / net.base
        sg = self.gens[self.slack_i]
        g += [sp - sg.p_max_mw / net.base, sg.p_min_mw / net.base - sp]

        q_mvar = _allocate_gen_q(net, V)
        for gen, q in zip(self.gens, q_mvar):
            qpu = q / net.base
            g += [qpu - gen.q_max_mvar / net.base, gen.q_min_mvar / net.base - qpu]

        vm = np.abs(V)
        for b in net.pq:
            g += [vm[b] - net.vm_max[b], net.vm_min[b] - vm[b]]

        for ln in self.rated:
            sf, st = _line_flows(self.case, V, ln)
            rate = ln.rate_mva / net.base
            g += [abs(sf) / net.base - rate, abs(st) / net.base - rate]
        return np.array(g)

    def solve(self) -> OpfSolution:
        opts = self.opts
        x = opts.x0.copy() if opts.x0 is not None else self.x0()
        x = np.clip(x, self.bounds.lb, self.bounds.ub)

        V0, conv, _ = self.pf(x)
        if not conv:
            self._v_warm = None
            return self._result(x, None, False, "initial power flow diverged")
        f_scale = max(abs(self.cost_pu(x, V0)), 1.0)

        lam = np.zeros(self.n_con)
        mu = opts.mu0
        prev_cost = None
        prev_viol = np.inf
        best = (np.inf, x.copy())

        def auglag(xv: np.ndarray) -> float:
            V, conv, norm = self.pf(xv)
            if not conv:
                return 1e3 * (1.0 + norm)
            f = self.cost_pu(xv, V) / f_scale
            gv = self.constraints(xv, V)
            t = np.maximum(0.0, lam + mu * gv)
            return f + (np.sum(t * t) - np.sum(lam * lam)) / (2.0 * mu)

        message = ""
        for outer in range(opts.max_outer):
            res = optimize.minimize(
                auglag,
                x,
                method="L-BFGS-B",
                jac="3-point",
                bounds=self.bounds,
                options={
                    "maxiter": opts.inner_maxiter,
                    "ftol": 1e-10,
                    "gtol": 1e-7,
                    "finite_diff_rel_step": 1e-6,
                },
            )
            x = res.x
            V, conv, _ = self.pf(x)
            if not conv:
                message = "power flow diverged during optimization"
                break
            gv = self.constraints(x, V)
            viol = float(np.max(gv)) if gv.size else 0.0
            cost = self.cost_pu(x, V)

            if viol <= opts.constraint_tol and cost < best[0]:
                best = (cost, x.copy())
            done = (
                viol <= opts.constraint_tol
                and prev_cost is not None
                and abs(cost - prev_cost) <= opts.optimality_tol * max(abs(cost), 1.0)
            )
            if done:
                break
            lam = np.maximum(0.0, lam + mu * gv)
            if viol > max(opts.constraint_tol, 0.25 * prev_viol):
                mu *= opts.penalty_growth
            prev_cost, prev_viol = cost, viol

        if best[0] < np.inf:
            x = best[1]
        V, conv, _ = self.pf(x)
        if not conv:
            self._v_warm = None
            V, conv, _ = self.pf(x)
        return self._result(x, V if conv else None, conv, message)

    def _result(self, x, V, pf_ok: bool, message: str) -> OpfSolution:
        net = self.net
        if not pf_ok or V is None:
            return OpfSolution(
                gen=(), slack=(self.gens[self.slack_i].id, float("nan"), float("nan")),
                bus=(), objective_cost=float("nan"), feasible=False,
                max_violation_pu=float("inf"), controls=x,
                message=message or "power flow diverged",
            )
        gen_p, _ = self.split(x)
        p_mw = gen_p * net.base
        p_mw[self.slack_i] = _slack_p_mw(net, V, gen_p)
        q_mvar = _allocate_gen_q(net, V)
        gv = self.constraints(x, V)
        viol = float(np.max(gv)) if gv.size else 0.0
        feasible = viol <= self.opts.constraint_tol
        gen = tuple(
            (self.gens[i].id, float(p_mw[i]), float(q_mvar[i])) for i in self.free
        )
        slack = (
            self.gens[self.slack_i].id,
            float(p_mw[self.slack_i]),
            float(q_mvar[self.slack_i]),
        )
        bus = tuple(
            (b.id, float(np.abs(V[b.id])), float(np.degrees(np.angle(V[b.id]))))
            for b in self.case.buses
        )
        return OpfSolution(
            gen=gen,
            slack=slack,
            bus=bus,
            objective_cost=generation_cost(self.case, p_mw),
            feasible=feasible,
            max_violation_pu=viol,
            controls=x.copy(),
            message=message or ("" if feasible else f"max violation {viol:.3e} pu"),
        )


def _line_flows(case: GridCase, V: np.ndarray, ln) -> tuple[complex, complex]:
    """Complex power (MVA) entering the line at each end."""
    ys = 1.0 / complex(ln.r_pu, ln.x_pu)
    bc = 1j * ln.b_pu / 2.0
    t = ln.tap_ratio
    vf, vt = V[ln.from_bus], V[ln.to_bus]
    i_f = (ys + bc) * vf / (t * t) - ys * vt / t
    i_t = (ys + bc) * vt - ys * vf / t
    return vf * np.conj(i_f) * case.base_mva, vt * np.conj(i_t) * case.base_mva


def line_loadings_mva(case: GridCase, vm_pu, va_deg) -> list[tuple[int, float, float]]:
    """Apparent power at both ends of every line, for limit reporting."""
    V = np.asarray(vm_pu) * np.exp(1j * np.radians(np.asarray(va_deg)))
    out = []
    for ln in case.lines:
        sf, st = _line_flows(case, V, ln)
        out.append((ln.id, abs(sf), abs(st)))
    return out


def solve_opf(case: GridCase, opts: OpfOptions | None = None) -> OpfSolution:
    """Minimize total generation cost subject to AC physics and limits.

    Infeasibility or non-convergence comes back as ``feasible=False`` with a
    diagnostic message; only a structurally broken problem raises.
    """
    if not case.generators:
        raise SolverError("case has no generators")
    return _OpfProblem(case, opts or OpfOptions()).solve()
