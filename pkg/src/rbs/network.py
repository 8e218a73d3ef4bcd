"""State-space realisation of the switched pack for one SSV.

Every switch branch stays in the circuit with a state-dependent resistance, so
the mesh structure never changes and a single elimination recipe covers every
configuration.  Unknown branch currents are removed in three stages:

1. ``S1`` and ``S4`` currents are written as cumulative sums of the electrode
   KCL equations.
2. The mesh equations plus the terminal KCL give four square families
   ``E I_S5 = ...``, ``F I_S2 = ...``, ``G I_S2 = ...``, ``H I_S3 = ...``;
   ``I_S5`` and ``I_S3`` are substituted to get ``J I_S2 = ...`` and
   ``K I_S2 = ...``.
3. ``I_S2`` is eliminated, leaving ``I_B = C_IB X + D_IB i_t``.

Sign convention: ``i_t > 0`` and ``i_B > 0`` are discharge currents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve

from .cell import CellParams
from .topology import SwitchParams, n_switches, ssv_cells

COND_LIMIT = 1e12


class DegenerateConfigurationError(np.linalg.LinAlgError):
    def __init__(self, matrix: str, cond: float):
        super().__init__(f"degenerate configuration: {matrix} is singular (cond={cond:.3g})")
        self.matrix = matrix
        self.cond = cond


class PowerInfeasibleError(ValueError):
    def __init__(self, p_t: float, p_max: float):
        super().__init__(
            f"power infeasible for configuration: demand {p_t:.6g} W exceeds "
            f"maximum deliverable {p_max:.6g} W")
        self.p_t = p_t
        self.p_max = p_max


SwitchSpec = Union[SwitchParams, Sequence[SwitchParams]]


def switch_resistances(ssv: Sequence[int], switches: SwitchSpec = SwitchParams()) -> np.ndarray:
    """Vector of branch resistances aligned with the SSV layout."""
    s = np.asarray(ssv, dtype=float)
    if isinstance(switches, SwitchParams):
        on = switches.r_ds_on + switches.r_wire
        off = switches.r_ds_off + switches.r_wire
        return s * on + (1.0 - s) * off
    if len(switches) != s.size:
        raise ValueError(f"need {s.size} switch parameter sets, got {len(switches)}")
    r_on = np.array([p.r_ds_on for p in switches])
    r_off = np.array([p.r_ds_off for p in switches])
    r_w = np.array([p.r_wire for p in switches])
    return s * r_on + (1.0 - s) * r_off + r_w


def split_resistances(r: np.ndarray, n_cells: int) -> dict[int, np.ndarray]:
    """Per-switch-family resistance arrays: S1, S2, S4 have N-1 entries, S3, S5 N."""
    head = r[: 5 * (n_cells - 1)].reshape(n_cells - 1, 5)
    tail = r[5 * (n_cells - 1):]
    return {
        1: head[:, 0].copy(),
        2: head[:, 1].copy(),
        3: np.append(head[:, 2], tail[0]),
        4: head[:, 3].copy(),
        5: np.append(head[:, 4], tail[1]),
    }


@dataclass(frozen=True, eq=False)
class Intermediates:
    E_S5: np.ndarray
    E_B: np.ndarray
    E_S2: np.ndarray
    E_t: np.ndarray
    F_S2: np.ndarray
    F_B: np.ndarray
    F_X: np.ndarray
    F_S5: np.ndarray
    G_S2: np.ndarray
    G_B: np.ndarray
    G_X: np.ndarray
    G_S3: np.ndarray
    H_S3: np.ndarray
    H_B: np.ndarray
    H_S2: np.ndarray
    H_t: np.ndarray
    J_S2: np.ndarray
    J_B: np.ndarray
    J_X: np.ndarray
    M_t: np.ndarray
    K_S2: np.ndarray
    K_B: np.ndarray
    K_X: np.ndarray
    K_t: np.ndarray
    B_V: np.ndarray
    T1: np.ndarray
    T2: np.ndarray


@dataclass(frozen=True, eq=False)
class StateSpaceRealization:
    A: np.ndarray
    B: np.ndarray
    C_IB: np.ndarray
    D_IB: np.ndarray
    C_VB: np.ndarray
    D_VB: np.ndarray
    C_vt: np.ndarray
    D_vt: float
    # affine maps of every switch family current: I_Sm = C_S[m] X + D_S[m] i_t
    C_S: dict
    D_S: dict
    resistances: dict
    cells: tuple
    ssv: tuple
    ref_cell: int = 0
    intermediates: Intermediates | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def equilibrate(m: np.ndarray, sweeps: int = 8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-sided max-norm (Ruiz) scaling: returns ``(Dr m Dc, dr, dc)``."""
    m = np.array(m, dtype=float)
    dr = np.ones(m.shape[0])
    dc = np.ones(m.shape[1])
    for _ in range(sweeps):
        r = np.sqrt(np.abs(m).max(axis=1))
        c = np.sqrt(np.abs(m).max(axis=0))
        r[r == 0] = 1.0
        c[c == 0] = 1.0
        m /= r[:, None] * c[None, :]
        dr /= r
        dc /= c
    return m, dr, dc


def scaled_cond(m: np.ndarray) -> float:
    """Condition number after equilibration, so mixed units do not count."""
    return float(np.linalg.cond(equilibrate(m)[0]))


def _check_cond(name: str, m: np.ndarray, check: bool) -> None:
    if not check:
        return
    c = scaled_cond(m)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise DegenerateConfigurationError(name, c)


def assemble(
    cells: Sequence[CellParams],
    ssv: Sequence[int],
    switches: SwitchSpec = SwitchParams(),
    *,
    ref_cell: int = 0,
    check: bool = True,
    keep_intermediates: bool = False,
    refine: int = 2,
) -> StateSpaceRealization:
    """Build ``dX/dt = A X + B i_t`` and the output maps for one SSV.

    ``refine`` is the number of iterative-refinement sweeps applied to the
    eliminated solution (0 returns the raw elimination result).
    """
    n = len(cells)
    if n < 1:
        raise ValueError("need at least one cell")
    if len(ssv) != n_switches(n):
        raise ValueError(f"SSV has {len(ssv)} entries, expected {n_switches(n)} for {n} cells")
    if not 0 <= ref_cell < n:
        raise ValueError("ref_cell out of range")
    res = split_resistances(switch_resistances(ssv, switches), n)
    if np.any(np.concatenate(list(res.values())) <= 0):
        raise ValueError("switch branch resistances must be strictly positive")

    r0 = np.array([c.r0 for c in cells])
    r1 = np.array([c.r1 for c in cells])
    r2 = np.array([c.r2 for c in cells])
    tau1 = np.array([c.tau1 for c in cells])
    tau2 = np.array([c.tau2 for c in cells])
    kv = np.array([c.k_v for c in cells])
    qc = np.array([c.capacity for c in cells])

    m = n - 1
    I = np.eye(n)
    Lc = np.tril(np.ones((m, n)))           # Lc[k, j] = 1 for j <= k
    Ls = np.tril(np.ones((m, n)), -1)       # Ls[k, j] = 1 for j < k
    P = I[:m]                                # rows 0..N-2
    Q = I[1:]                                # rows 1..N-1 (cell k+1)
    R1s = np.diag(res[1])
    R4s = np.diag(res[4])
    R2s = P * res[2][:, None] if m else np.zeros((0, n))
    ones = np.ones((1, n))
    zrow = np.zeros((1, n))

    def diff(rv):
        d = np.zeros((m, n))
        d[np.arange(m), np.arange(m)] = rv[:-1]
        d[np.arange(m), np.arange(1, n)] = -rv[1:]
        return d

    # positive side: mesh between S5_k, S5_{k+1}, S1_k plus terminal KCL at T+
    E_S5 = np.vstack([diff(res[5]) + R1s @ Lc, ones])
    E_B = np.vstack([R1s @ Lc, zrow])
    E_S2 = np.vstack([-R1s @ Ls, zrow])
    E_t = np.append(np.zeros(m), 1.0)

    # negative side: mesh between S3_k, S3_{k+1}, S4_k plus terminal KCL at T-
    H_S3 = np.vstack([diff(res[3]) + R4s @ Lc, ones])
    H_B = np.vstack([R4s @ Lc, zrow])
    H_S2 = np.vstack([-R4s @ Lc, zrow])
    H_t = np.append(np.zeros(m), 1.0)

    # cell k loop through S1_k, S2_k; extra row pins the virtual S2_N current to 0
    vrow = np.zeros((1, n))
    vrow[0, -1] = 1.0
    F_S2 = np.vstack([R2s - R1s @ Ls, vrow])
    F_B = np.vstack([-P * r0 - R1s @ Lc, zrow])
    F_X = np.vstack([np.hstack([P, -P * r1, -P * r2]), np.zeros((1, 3 * n))])
    F_S5 = np.vstack([R1s @ Lc, zrow])

    # cell k+1 loop through S2_k, S4_k; extra row is the KCL at the last
    # negative electrode (sum of all negative-electrode KCLs)
    krow = np.ones((1, n))
    krow[0, -1] = 0.0
    G_S2 = np.vstack([R2s + R4s @ Lc, krow])
    G_B = np.vstack([-Q * r0 + R4s @ Lc, ones])
    G_X = np.vstack([np.hstack([Q, -Q * r1, -Q * r2]), np.zeros((1, 3 * n))])
    G_S3 = np.vstack([-R4s @ Lc, -ones])

    _check_cond("E_S5", E_S5, check)
    _check_cond("H_S3", H_S3, check)
    Einv = np.linalg.inv(E_S5)
    Hinv = np.linalg.inv(H_S3)

    J_S2 = F_S2 - F_S5 @ Einv @ E_S2
    J_B = F_B + F_S5 @ Einv @ E_B
    J_X = F_X
    M_t = F_S5 @ Einv @ E_t
    K_S2 = G_S2 - G_S3 @ Hinv @ H_S2
    K_B = G_B + G_S3 @ Hinv @ H_B
    K_X = G_X
    K_t = G_S3 @ Hinv @ H_t

    _check_cond("J_S2", J_S2, check)
    Jinv = np.linalg.inv(J_S2)
    KJ = K_S2 @ Jinv
    L = KJ @ J_B - K_B
    try:
        C_IB = np.linalg.solve(L, K_X - KJ @ J_X)
        D_IB = np.linalg.solve(L, K_t - KJ @ M_t)
    except np.linalg.LinAlgError:
        raise DegenerateConfigurationError("L_B", np.inf) from None

    C_S2 = Jinv @ (J_B @ C_IB + J_X)
    D_S2 = Jinv @ (J_B @ D_IB + M_t)
    C_S5 = Einv @ (E_B @ C_IB + E_S2 @ C_S2)
    D_S5 = Einv @ (E_B @ D_IB + E_S2 @ D_S2 + E_t)
    C_S3 = Hinv @ (H_B @ C_IB + H_S2 @ C_S2)
    D_S3 = Hinv @ (H_B @ D_IB + H_S2 @ D_S2 + H_t)
    C_S1 = Lc @ (-C_IB + C_S5) + Ls @ C_S2
    D_S1 = Lc @ (-D_IB + D_S5) + Ls @ D_S2
    C_S4 = Lc @ (C_IB - C_S2 - C_S3)
    D_S4 = Lc @ (D_IB - D_S2 - D_S3)

    # L inherits a conditioning of order (R_off / R_on)^2, which wipes out
    # leakage currents through open switches.  Polish the whole affine map
    # against the unreduced KCL/KVL system, residuals in extended precision.
    if refine:
        Y = np.vstack([
            np.hstack([C, D[:, None]]) for C, D in (
                (C_IB, D_IB), (C_S1, D_S1), (C_S2[:m], D_S2[:m]),
                (C_S3, D_S3), (C_S4, D_S4), (C_S5, D_S5))
        ])
        M_full, R_full = unreduced_system(cells, ssv, switches)
        _check_cond("unreduced", M_full, check)
        Y = refine_solution(M_full, R_full, Y, refine)
        blocks = np.split(Y, np.cumsum([n, m, m, n, m])[:5])
        (C_IB, C_S1, C_S2, C_S3, C_S4, C_S5) = [b[:, :-1] for b in blocks]
        (D_IB, D_S1, D_S2, D_S3, D_S4, D_S5) = [b[:, -1] for b in blocks]

    Z = np.zeros((n, n))
    sel_V = np.hstack([I, Z, Z])
    sel_R1 = np.hstack([Z, I, Z])
    sel_R2 = np.hstack([Z, Z, I])
    B_V = np.diag(-kv / qc)
    T1inv = np.diag(1.0 / tau1)
    T2inv = np.diag(1.0 / tau2)
    A = np.vstack([B_V @ C_IB, T1inv @ (C_IB - sel_R1), T2inv @ (C_IB - sel_R2)])
    B = np.concatenate([B_V @ D_IB, T1inv @ D_IB, T2inv @ D_IB])

    C_VB = np.hstack([I, -np.diag(r1), -np.diag(r2)]) - r0[:, None] * C_IB
    D_VB = -r0 * D_IB
    k = ref_cell
    C_vt = C_VB[k] - res[3][k] * C_S3[k] - res[5][k] * C_S5[k]
    D_vt = float(D_VB[k] - res[3][k] * D_S3[k] - res[5][k] * D_S5[k])

    inter = None
    if keep_intermediates:
        inter = Intermediates(E_S5, E_B, E_S2, E_t, F_S2, F_B, F_X, F_S5, G_S2, G_B, G_X,
                              G_S3, H_S3, H_B, H_S2, H_t, J_S2, J_B, J_X, M_t, K_S2, K_B,
                              K_X, K_t, B_V, np.diag(tau1), np.diag(tau2))
    return StateSpaceRealization(
        A=A, B=B, C_IB=C_IB, D_IB=D_IB, C_VB=C_VB, D_VB=D_VB, C_vt=C_vt, D_vt=D_vt,
        C_S={1: C_S1, 2: C_S2[:m], 3: C_S3, 4: C_S4, 5: C_S5},
        D_S={1: D_S1, 2: D_S2[:m], 3: D_S3, 4: D_S4, 5: D_S5},
        resistances=res, cells=tuple(cells), ssv=tuple(int(b) for b in ssv),
        ref_cell=ref_cell, intermediates=inter,
    )


def _x(ss: StateSpaceRealization, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (3 * ss.n_cells,):
        raise ValueError(f"state must have shape ({3 * ss.n_cells},), got {X.shape}")
    return X


def cell_currents(ss: StateSpaceRealization, X, i_t: float) -> np.ndarray:
    return ss.C_IB @ _x(ss, X) + ss.D_IB * i_t


def cell_voltages(ss: StateSpaceRealization, X, i_t: float) -> np.ndarray:
    return ss.C_VB @ _x(ss, X) + ss.D_VB * i_t


def terminal_voltage(ss: StateSpaceRealization, X, i_t: float) -> float:
    return float(ss.C_vt @ _x(ss, X) + ss.D_vt * i_t)


def terminal_voltage_via(ss: StateSpaceRealization, X, i_t: float, n: int) -> float:
    """Terminal voltage computed through cell ``n`` (0-based) instead of the reference cell."""
    X = _x(ss, X)
    vb = cell_voltages(ss, X, i_t)[n]
    i3 = ss.C_S[3][n] @ X + ss.D_S[3][n] * i_t
    i5 = ss.C_S[5][n] @ X + ss.D_S[5][n] * i_t
    return float(vb - ss.resistances[3][n] * i3 - ss.resistances[5][n] * i5)


def switch_currents(ss: StateSpaceRealization, X, i_t: float) -> dict[int, np.ndarray]:
    X = _x(ss, X)
    return {mm: ss.C_S[mm] @ X + ss.D_S[mm] * i_t for mm in ss.C_S}


def power_terms(ss: StateSpaceRealization, X, i_t: float) -> dict[str, float]:
    """Source power, load power, resistive dissipation and RC charging power."""
    X = _x(ss, X)
    n = ss.n_cells
    v, ir1, ir2 = X[:n], X[n:2 * n], X[2 * n:]
    ib = cell_currents(ss, X, i_t)
    r0 = np.array([c.r0 for c in ss.cells])
    r1 = np.array([c.r1 for c in ss.cells])
    r2 = np.array([c.r2 for c in ss.cells])
    isw = switch_currents(ss, X, i_t)
    p_switch = sum(float(ss.resistances[mm] @ isw[mm] ** 2) for mm in isw)
    p_cell = float(r0 @ ib ** 2 + r1 @ ir1 ** 2 + r2 @ ir2 ** 2)
    # power flowing into the capacitors of the RC pairs
    p_cap = float((r1 * ir1) @ (ib - ir1) + (r2 * ir2) @ (ib - ir2))
    return {
        "source": float(v @ ib),
        "load": terminal_voltage(ss, X, i_t) * i_t,
        "dissipation": p_cell + p_switch,
        "capacitor": p_cap,
    }


def current_from_power(ss: StateSpaceRealization, X, p_t: float) -> float:
    """Terminal current delivering ``p_t`` (smaller-magnitude root of v_t i_t = p_t)."""
    p_t = float(p_t)
    if not np.isfinite(p_t):
        raise ValueError("p_t must be finite")
    a = ss.D_vt
    b = float(ss.C_vt @ _x(ss, X))
    if abs(a) < 1e-15:
        if b == 0:
            raise PowerInfeasibleError(p_t, 0.0)
        return p_t / b
    disc = b * b + 4.0 * a * p_t
    if disc < 0:
        raise PowerInfeasibleError(p_t, -b * b / (4.0 * a))
    sq = np.sqrt(disc)
    # numerically stable pair of roots; pick the one closer to zero
    qv = -0.5 * (b + np.copysign(sq, b))
    roots = [qv / a]
    if qv != 0:
        roots.append(-p_t / qv)
    else:
        roots.append(0.0)
    root = min(roots, key=abs)
    # one Newton polish on f(i) = a i^2 + b i - p
    df = 2 * a * root + b
    if df != 0:
        root -= (a * root * root + b * root - p_t) / df
    return float(root)


def discretize(ss_or_A, dt: float, method: str = "euler", B=None) -> tuple[np.ndarray, np.ndarray]:
    """Discrete transition ``(A_d, B_d)`` over a step ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(ss_or_A, StateSpaceRealization):
        A, B = ss_or_A.A, ss_or_A.B
    else:
        A = np.atleast_2d(np.asarray(ss_or_A, dtype=float))
        B = np.zeros(A.shape[0]) if B is None else np.asarray(B, dtype=float).reshape(-1)
    k = A.shape[0]
    if method == "euler":
        return np.eye(k) + dt * A, dt * B
    if method == "zoh":
        aug = np.zeros((k + 1, k + 1))
        aug[:k, :k] = A
        aug[:k, k] = B
        ex = expm(aug * dt)
        return ex[:k, :k], ex[:k, k]
    raise ValueError(f"unknown discretisation method {method!r}")


# -- unreduced system ---------------------------------------------------------

def unreduced_system(
    cells: Sequence[CellParams],
    ssv: Sequence[int],
    switches: SwitchSpec = SwitchParams(),
) -> tuple[np.ndarray, np.ndarray]:
    """All KCL and KVL equations with every branch current as an unknown.

    Unknowns are stacked ``[I_B, I_S1, I_S2, I_S3, I_S4, I_S5]`` (6N-3 of
    them).  Returns ``(M, R)`` with ``M Y = R [X; i_t]``.
    """
    n = len(cells)
    m = n - 1
    res = split_resistances(switch_resistances(ssv, switches), n)
    off = dict(zip(("B", 1, 2, 3, 4, 5), np.cumsum([0, n, m, m, n, m])))
    size = 3 * n + 3 * m
    M = np.zeros((size, size))
    R = np.zeros((size, 3 * n + 1))

    def col(fam, k):
        return off[fam] + k

    row = 0
    # positive electrodes p_0 .. p_{N-2}; the last one is implied
    for k in range(m):
        M[row, col("B", k)] += 1
        M[row, col(1, k)] += 1
        M[row, col(5, k)] -= 1
        if k:
            M[row, col(1, k - 1)] -= 1
            M[row, col(2, k - 1)] -= 1
        row += 1
    for k in range(n):
        M[row, col(3, k)] += 1
        M[row, col("B", k)] -= 1
        if k < m:
            M[row, col(4, k)] += 1
            M[row, col(2, k)] += 1
        if k:
            M[row, col(4, k - 1)] -= 1
        row += 1
    for fam in (5, 3):
        M[row, col(fam, 0):col(fam, 0) + n] = 1.0
        R[row, -1] = 1.0
        row += 1

    def emf(r, k):
        R[r, k] = 1.0
        R[r, n + k] = -cells[k].r1
        R[r, 2 * n + k] = -cells[k].r2

    for k in range(m):
        M[row, [col(5, k), col(5, k + 1), col(1, k)]] = res[5][k], -res[5][k + 1], res[1][k]
        M[row + 1, [col(3, k), col(3, k + 1), col(4, k)]] = res[3][k], -res[3][k + 1], -res[4][k]
        M[row + 2, [col(2, k), col(1, k), col("B", k)]] = res[2][k], -res[1][k], cells[k].r0
        emf(row + 2, k)
        M[row + 3, [col(2, k), col(4, k), col("B", k + 1)]] = res[2][k], -res[4][k], cells[k + 1].r0
        emf(row + 3, k + 1)
        row += 4
    return M, R


def refine_solution(M: np.ndarray, R: np.ndarray, Y: np.ndarray, sweeps: int = 2) -> np.ndarray:
    """Mixed-precision iterative refinement of ``M Y = R``.

    Residuals are formed in ``np.longdouble``; corrections come from an LU
    factorisation of the equilibrated ``M``.
    """
    Ms, dr, dc = equilibrate(M)
    lu = lu_factor(Ms)
    Ml = M.astype(np.longdouble)
    Rl = R.astype(np.longdouble)
    Yl = Y.astype(np.longdouble)
    for _ in range(sweeps):
        resid = (Rl - Ml @ Yl).astype(float)
        Yl += (dc[:, None] * lu_solve(lu, dr[:, None] * resid)).astype(np.longdouble)
    return Yl.astype(float)


# -- independent oracle -------------------------------------------------------

def solve_nodal(
    cells: Sequence[CellParams],
    ssv: Sequence[int],
    X,
    i_t: float,
    switches: SwitchSpec = SwitchParams(),
) -> dict:
    """Direct modified-nodal solve of the full switched circuit.

    Does not use any of the mesh elimination above: node potentials and cell
    branch currents are the unknowns, each cell is a voltage source
    ``v - R1 i_R1 - R2 i_R2`` behind ``R0``.  The external load draws ``i_t``
    from T+ and returns it at T- (ground).
    """
    n = len(cells)
    X = np.asarray(X, dtype=float)
    v, ir1, ir2 = X[:n], X[n:2 * n], X[2 * n:]
    res = split_resistances(switch_resistances(ssv, switches), n)
    # node numbering: p_k -> k, n_k -> n + k, T+ -> 2n, T- ground (-1)
    P_, N_, TP, GND = (lambda k: k), (lambda k: n + k), 2 * n, -1
    nn = 2 * n + 1
    size = nn + n
    Y = np.zeros((size, size))
    rhs = np.zeros(size)

    def stamp(a, b, r):
        g = 1.0 / r
        for x, y, s in ((a, a, g), (b, b, g), (a, b, -g), (b, a, -g)):
            if x != GND and y != GND:
                Y[x, y] += s

    edges = []
    for k in range(n):
        if k < n - 1:
            edges.append((1, k, P_(k + 1), P_(k)))
            edges.append((2, k, P_(k + 1), N_(k)))
            edges.append((4, k, N_(k + 1), N_(k)))
        edges.append((3, k, GND, N_(k)))
        edges.append((5, k, P_(k), TP))
    for fam, k, a, b in edges:
        stamp(a, b, res[fam][k])

    # cell branches: current i_B flows n_k -> p_k through the cell
    for k, c in enumerate(cells):
        row = nn + k
        emf = v[k] - c.r1 * ir1[k] - c.r2 * ir2[k]
        # KCL: i_B enters p_k, leaves n_k
        Y[P_(k), row] -= 1.0
        Y[N_(k), row] += 1.0
        # branch law: phi_p - phi_n + R0 i_B = emf
        Y[row, P_(k)] += 1.0
        Y[row, N_(k)] -= 1.0
        Y[row, row] += c.r0
        rhs[row] = emf
    rhs[TP] -= i_t

    sol = np.linalg.solve(Y, rhs)
    phi = np.append(sol[:nn], 0.0)     # index -1 -> ground
    ib = sol[nn:]
    cur = {1: [], 2: [], 3: [], 4: [], 5: []}
    for fam, k, a, b in edges:
        cur[fam].append((phi[a] - phi[b]) / res[fam][k])
    return {
        "I_B": ib,
        "I_S": {fam: np.array(vals) for fam, vals in cur.items()},
        "v_t": float(phi[TP]),
        "phi": phi,
    }
