#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
小规模凸问题求解器：对数障碍内点法 + Phase I 可行性阶段，LP 走 HiGHS 单纯形

问题形式（极小化线性目标，凹目标先写成上图形式）：
    min  cᵀx
    s.t. Gx ≤ h
         f_i(x[idx_i]) ≤ 0        （凸、二阶可微，按块向量化）
         Ax = b

SmoothConstraint 以“块”为单位：idx 为 r × w 下标表，fun(X, derivs) 对 r 个约束同时求值，
derivs=True 时返回 (值 r, 梯度 r×w, Hessian r×w×w)。定义域外须返回非有限值或正值。
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

DENSE_LIMIT = 400


class InfeasibleProblemError(RuntimeError):
    """Phase I 未找到严格可行点；certificate 为 Phase I 最优值 s*（≥ −margin）"""

    def __init__(self, message: str, certificate: Optional[float] = None):
        super().__init__(message)
        self.certificate = certificate


class SolverFailure(RuntimeError):
    """数值失败（奇异 KKT、迭代上限、无界等）"""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class BarrierSettings:
    t0: float = 1.0
    mu: float = 15.0
    gap_tol: float = 1e-9
    newton_tol: float = 1e-10
    alpha: float = 0.01
    beta: float = 0.5
    max_newton: int = 100
    max_total_newton: int = 3000
    reg: float = 1e-12
    phase1_margin: float = 1e-6
    kkt_tol: float = 1e-6
    blowup: float = 1e12
    phase1_box: float = 1e3       # Phase I 中原变量相对起点的盒约束半宽 box·(1+|x0|)


@dataclass
class SmoothConstraint:
    idx: np.ndarray
    fun: Callable
    name: str = ''

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[None, :]
        self.idx = idx

    @property
    def count(self) -> int:
        return self.idx.shape[0]

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fun(x[self.idx], False), dtype=float).reshape(-1)

    def derivatives(self, x: np.ndarray):
        val, grad, hess = self.fun(x[self.idx], True)
        r, w = self.idx.shape
        return (np.asarray(val, dtype=float).reshape(r),
                np.asarray(grad, dtype=float).reshape(r, w),
                np.asarray(hess, dtype=float).reshape(r, w, w))


@dataclass
class ConvexProgram:
    c: np.ndarray
    x0: np.ndarray
    G: Optional[Union[np.ndarray, sp.spmatrix]] = None
    h: Optional[np.ndarray] = None
    A: Optional[Union[np.ndarray, sp.spmatrix]] = None
    b: Optional[np.ndarray] = None
    smooth: List[SmoothConstraint] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.x0 = np.asarray(self.x0, dtype=float).ravel().copy()
        if self.x0.size != n:
            raise ValueError(f"x0 长度 {self.x0.size} ≠ 变量数 {n}")
        if self.G is None:
            self.G = sp.csr_matrix((0, n))
            self.h = np.zeros(0)
        self.G = sp.csr_matrix(self.G)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.A is None:
            self.A = sp.csr_matrix((0, n))
            self.b = np.zeros(0)
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.G.shape != (self.h.size, n) or self.A.shape != (self.b.size, n):
            raise ValueError("G/h 或 A/b 维度不一致")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_inequalities(self) -> int:
        return self.h.size + sum(con.count for con in self.smooth)


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: Optional[Union[np.ndarray, sp.spmatrix]] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[Union[np.ndarray, sp.spmatrix]] = None
    b_eq: Optional[np.ndarray] = None
    bounds: Optional[list] = None


@dataclass
class SolverResult:
    x: np.ndarray
    objective: float
    status: str
    multipliers: dict
    kkt: dict
    newton_steps: int = 0
    phase1_steps: int = 0


# -----------------------
# 障碍函数与导数
# -----------------------
def _constraint_values(prob: ConvexProgram, x: np.ndarray):
    lin = prob.G @ x - prob.h
    smooth = [con.values(x) for con in prob.smooth]
    return lin, smooth


def _barrier_value(prob: ConvexProgram, x: np.ndarray, t: float) -> float:
    slack = prob.h - prob.G @ x
    if np.any(~(slack > 0)):
        return math.inf
    val = t * float(prob.c @ x) - float(np.sum(np.log(slack)))
    for con in prob.smooth:
        with np.errstate(all='ignore'):
            f = con.values(x)
        if np.any(~(f < 0)):
            return math.inf
        val -= float(np.sum(np.log(-f)))
    return val


def _assemble(prob: ConvexProgram, x: np.ndarray, t: float, dense: bool):
    n = x.size
    g = t * prob.c.copy()
    slack = prob.h - prob.G @ x
    d = 1.0 / slack
    g += prob.G.T @ d
    lin_h = (prob.G.T @ sp.diags(d * d) @ prob.G) if prob.h.size else None

    rows, cols, vals = [], [], []
    for con in prob.smooth:
        f, gf, hf = con.derivatives(x)
        inv = -1.0 / f
        np.add.at(g, con.idx, gf * inv[:, None])
        block = gf[:, :, None] * gf[:, None, :] * (inv * inv)[:, None, None] + hf * inv[:, None, None]
        w = con.idx.shape[1]
        rows.append(np.repeat(con.idx, w, axis=1).ravel())
        cols.append(np.tile(con.idx, (1, w)).ravel())
        vals.append(block.ravel())

    if dense:
        H = np.zeros((n, n))
        if lin_h is not None:
            H += lin_h.toarray()
        for r, c_, v in zip(rows, cols, vals):
            np.add.at(H, (r, c_), v)
    else:
        if rows:
            H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n)).tocsr()
        else:
            H = sp.csr_matrix((n, n))
        if lin_h is not None:
            H = H + lin_h
    return g, H


def _newton_direction(H, g, A, reg: float, dense: bool):
    """解 [[H, Aᵀ], [A, 0]] [dx; w] = [−g; 0]，带对称对角缩放"""
    n = g.size
    p = A.shape[0]
    diag = H.diagonal() if not dense else np.diag(H).copy()
    scale = 1.0 / np.sqrt(np.maximum(np.abs(diag), 1e-300))
    scale[diag <= 0] = 1.0
    for attempt, shift in enumerate((reg, 1e-10, 1e-8, 1e-6)):
        if dense:
            Hs = H * scale[:, None] * scale[None, :] + shift * np.eye(n)
            if p:
                As = A.toarray() * scale[None, :]
                K = np.block([[Hs, As.T], [As, -shift * np.eye(p)]])
            else:
                K = Hs
            rhs = np.concatenate([-g * scale, np.zeros(p)])
            try:
                sol = sla.solve(K, rhs, assume_a='sym' if p == 0 else 'gen', check_finite=False)
            except (sla.LinAlgError, ValueError):
                sol = None
        else:
            S = sp.diags(scale)
            Hs = (S @ H @ S + shift * sp.identity(n)).tocsc()
            if p:
                As = A @ S
                K = sp.bmat([[Hs, As.T], [As, -shift * sp.identity(p)]], format='csc')
            else:
                K = Hs
            rhs = np.concatenate([-g * scale, np.zeros(p)])
            try:
                sol = spla.spsolve(K, rhs)
            except (RuntimeError, ValueError):
                sol = None
        if sol is not None and np.all(np.isfinite(sol)):
            dx = sol[:n] * scale
            w = sol[n:]
            return dx, w
    raise SolverFailure("KKT 系统奇异，Newton 方向无法求解", {'n': n, 'p': p})


def _barrier_solve(prob: ConvexProgram, x: np.ndarray, settings: BarrierSettings,
                   stop_when: Optional[Callable[[np.ndarray], bool]] = None):
    """从严格可行点出发的障碍法主循环，返回 (x, t, w, newton_steps, stopped_early)"""
    n = x.size
    dense = n + prob.A.shape[0] <= DENSE_LIMIT
    m = prob.num_inequalities
    t = settings.t0
    steps = 0
    w = np.zeros(prob.A.shape[0])
    if m == 0:
        raise SolverFailure("无不等式约束的线性目标无界或平凡", {'n': n})
    while True:
        for _ in range(settings.max_newton):
            g, H = _assemble(prob, x, t, dense)
            dx, w = _newton_direction(H, g, prob.A, settings.reg, dense)
            decrement = float(-g @ dx)
            if decrement / 2.0 <= settings.newton_tol:
                break
            phi = _barrier_value(prob, x, t)
            alpha = 1.0
            while alpha > 1e-14:
                trial = _barrier_value(prob, x + alpha * dx, t)
                if trial <= phi + settings.alpha * alpha * float(g @ dx):
                    break
                alpha *= settings.beta
            else:
                break
            x = x + alpha * dx
            steps += 1
            if not np.all(np.abs(x) < settings.blowup):
                raise SolverFailure("迭代发散（问题可能无界）", {'t': t, 'steps': steps})
            if stop_when is not None and stop_when(x):
                return x, t, w, steps, True
            if steps >= settings.max_total_newton:
                return x, t, w, steps, False
        if m / t < settings.gap_tol:
            return x, t, w, steps, False
        t *= settings.mu


def _project_equalities(prob: ConvexProgram, x: np.ndarray) -> np.ndarray:
    if prob.A.shape[0] == 0:
        return x
    resid = prob.b - prob.A @ x
    if np.max(np.abs(resid), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(prob.b), initial=0.0)):
        return x
    corr = spla.lsqr(prob.A, resid, atol=1e-15, btol=1e-15, iter_lim=10 * prob.A.shape[1])[0]
    return x + corr


def _phase_one(prob: ConvexProgram, x: np.ndarray, settings: BarrierSettings):
    """min s s.t. Gx − h ≤ s, f_i(x) ≤ s, s ≥ −1, |x − x0| ≤ R, Ax = b

    盒约束 R = phase1_box·(1+|x0|) 不随 s 平移：只有上界的变量（如上境图变量）
    在 Phase I 中不再能无界下降。
    """
    n = x.size
    lin, smooth = _constraint_values(prob, x)
    all_vals = np.concatenate([lin] + smooth) if (lin.size or smooth) else np.zeros(1)
    if not np.all(np.isfinite(all_vals)):
        raise SolverFailure("初始点不在光滑约束的定义域内", {'nonfinite': int(np.sum(~np.isfinite(all_vals)))})
    s0 = max(float(np.max(all_vals)), 0.0) + 1.0

    floor_row = sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    eye = sp.hstack([sp.identity(n, format='csr'), sp.csr_matrix((n, 1))], format='csr')
    radius = settings.phase1_box * (1.0 + np.abs(x))
    box_rows = sp.vstack([eye, -eye], format='csr')
    box_h = np.concatenate([x + radius, radius - x])
    if prob.h.size:
        shifted = sp.hstack([prob.G, sp.csr_matrix(-np.ones((prob.h.size, 1)))], format='csr')
        G_aug = sp.vstack([shifted, floor_row, box_rows], format='csr')
    else:
        G_aug = sp.vstack([floor_row, box_rows], format='csr')
    h_aug = np.concatenate([prob.h, [1.0], box_h])
    p = prob.A.shape[0]
    A_aug = sp.hstack([prob.A, sp.csr_matrix((p, 1))], format='csr') if p else sp.csr_matrix((0, n + 1))
    smooth_aug = []
    for con in prob.smooth:
        smooth_aug.append(_shifted(con, n))
    c_aug = np.zeros(n + 1)
    c_aug[-1] = 1.0
    aug = ConvexProgram(c=c_aug, x0=np.concatenate([x, [s0]]), G=G_aug, h=h_aug,
                        A=A_aug, b=prob.b, smooth=smooth_aug)
    margin = settings.phase1_margin
    z, _, _, steps, early = _barrier_solve(aug, aug.x0, settings, stop_when=lambda z: z[-1] < -margin)
    if not early and z[-1] >= -margin:
        raise InfeasibleProblemError(f"Phase I 未找到严格可行点 (s* = {z[-1]:.3e})", certificate=float(z[-1]))
    return z[:n], steps


def _shifted(con: SmoothConstraint, s_index: int) -> SmoothConstraint:
    r, w = con.idx.shape
    idx = np.hstack([con.idx, np.full((r, 1), s_index)])

    def fun(Z, derivs):
        X = Z[:, :w]
        s = Z[:, w]
        if not derivs:
            return con.fun(X, False) - s
        val, grad, hess = con.fun(X, True)
        val = np.asarray(val, dtype=float).reshape(r)
        grad = np.asarray(grad, dtype=float).reshape(r, w)
        hess = np.asarray(hess, dtype=float).reshape(r, w, w)
        g2 = np.hstack([grad, -np.ones((r, 1))])
        h2 = np.zeros((r, w + 1, w + 1))
        h2[:, :w, :w] = hess
        return val - s, g2, h2

    return SmoothConstraint(idx=idx, fun=fun, name=f"{con.name}-phase1")


def _kkt_report(prob: ConvexProgram, x: np.ndarray, t: float, w: np.ndarray):
    slack = prob.h - prob.G @ x
    lam_lin = 1.0 / (t * slack)
    stationarity = prob.c + prob.G.T @ lam_lin
    lam_smooth = []
    worst_f = -math.inf
    comp = float(np.max(lam_lin * slack, initial=0.0))
    for con in prob.smooth:
        f, gf, _ = con.derivatives(x)
        lam = 1.0 / (t * (-f))
        np.add.at(stationarity, con.idx, gf * lam[:, None])
        lam_smooth.append(lam)
        worst_f = max(worst_f, float(np.max(f)))
        comp = max(comp, float(np.max(-lam * f)))
    nu = w / t
    if prob.A.shape[0]:
        stationarity = stationarity + prob.A.T @ nu
    primal = max(0.0, float(np.max(-slack, initial=-math.inf)), worst_f,
                 float(np.max(np.abs(prob.A @ x - prob.b), initial=0.0)))
    scale = 1.0 + float(np.max(np.abs(prob.c)))
    kkt = {
        'stationarity': float(np.max(np.abs(stationarity), initial=0.0)) / scale,
        'primal': primal,
        'complementarity': comp,
        'gap': prob.num_inequalities / t,
    }
    return {'ineq': lam_lin, 'smooth': lam_smooth, 'eq': nu}, kkt


def solve_barrier(prob: ConvexProgram, settings: Optional[BarrierSettings] = None) -> SolverResult:
    settings = settings or BarrierSettings()
    x = _project_equalities(prob, prob.x0.copy())
    phase1_steps = 0
    if not np.isfinite(_barrier_value(prob, x, 1.0)):
        x, phase1_steps = _phase_one(prob, x, settings)
    x, t, w, steps, _ = _barrier_solve(prob, x, settings)
    multipliers, kkt = _kkt_report(prob, x, t, w)
    ok = all(kkt[key] <= settings.kkt_tol for key in ('stationarity', 'primal', 'complementarity'))
    return SolverResult(x=x, objective=float(prob.c @ x), status='optimal' if ok else 'inaccurate',
                        multipliers=multipliers, kkt=kkt, newton_steps=steps, phase1_steps=phase1_steps)


# -----------------------
# LP
# -----------------------
def solve_linear_program(lp: LinearProgram) -> SolverResult:
    """HiGHS 对偶单纯形；乘子按 λ ≥ 0 约定返回"""
    res = linprog(lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
                  bounds=lp.bounds if lp.bounds is not None else (0, None), method='highs-ds')
    if res.status == 2:
        raise InfeasibleProblemError(f"LP 不可行: {res.message}")
    if res.status == 3:
        raise SolverFailure(f"LP 无界: {res.message}", {'status': res.status})
    if res.status != 0:
        raise SolverFailure(f"LP 求解失败: {res.message}", {'status': res.status})
    c = np.asarray(lp.c, dtype=float)
    lam = -np.asarray(res.ineqlin.marginals) if lp.A_ub is not None else np.zeros(0)
    nu = -np.asarray(res.eqlin.marginals) if lp.A_eq is not None else np.zeros(0)
    stationarity = c.copy()
    if lp.A_ub is not None:
        stationarity += sp.csr_matrix(lp.A_ub).T @ lam
    if lp.A_eq is not None:
        stationarity += sp.csr_matrix(lp.A_eq).T @ nu
    stationarity -= np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    primal = 0.0
    if lp.A_ub is not None:
        primal = max(primal, float(np.max(sp.csr_matrix(lp.A_ub) @ res.x - np.asarray(lp.b_ub), initial=0.0)))
    kkt = {
        'stationarity': float(np.max(np.abs(stationarity), initial=0.0)) / (1.0 + float(np.max(np.abs(c)))),
        'primal': primal,
        'complementarity': 0.0,
        'gap': 0.0,
    }
    return SolverResult(x=np.asarray(res.x), objective=float(res.fun), status='optimal',
                        multipliers={'ineq': lam, 'eq': nu}, kkt=kkt, newton_steps=int(res.nit))


def lp_to_program(lp: LinearProgram, x0: Optional[np.ndarray] = None) -> ConvexProgram:
    """把 LP 改写成障碍法形式（变量界写成不等式行）"""
    c = np.asarray(lp.c, dtype=float)
    n = c.size
    blocks, rhs = [], []
    if lp.A_ub is not None:
        blocks.append(sp.csr_matrix(lp.A_ub))
        rhs.append(np.asarray(lp.b_ub, dtype=float))
    bounds = lp.bounds if lp.bounds is not None else [(0, None)] * n
    if isinstance(bounds, tuple) and len(bounds) == 2 and not isinstance(bounds[0], (tuple, list)):
        bounds = [bounds] * n
    for j, (lo, hi) in enumerate(bounds):
        if lo is not None and np.isfinite(lo):
            blocks.append(sp.csr_matrix(([-1.0], ([0], [j])), shape=(1, n)))
            rhs.append(np.array([-float(lo)]))
        if hi is not None and np.isfinite(hi):
            blocks.append(sp.csr_matrix(([1.0], ([0], [j])), shape=(1, n)))
            rhs.append(np.array([float(hi)]))
    G = sp.vstack(blocks, format='csr') if blocks else None
    h = np.concatenate(rhs) if rhs else None
    return ConvexProgram(c=c, x0=np.zeros(n) if x0 is None else x0, G=G, h=h,
                         A=lp.A_eq, b=lp.b_eq)


def solve_convex_restriction(problem: Union[LinearProgram, ConvexProgram],
                             settings: Optional[BarrierSettings] = None,
                             method: str = 'auto') -> SolverResult:
    """LP 默认走单纯形；method='barrier' 时 LP 也用内点法（用于交叉验证）"""
    if isinstance(problem, LinearProgram):
        if method == 'barrier':
            return solve_barrier(lp_to_program(problem), settings)
        return solve_linear_program(problem)
    if isinstance(problem, ConvexProgram):
        return solve_barrier(problem, settings)
    raise TypeError(f"不支持的问题类型: {type(problem).__name__}")
