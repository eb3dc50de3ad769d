"""Minimal-norm internal control of the linear wave equation on the circle.

The control steers y_tt = y_xx + 1_omega f from y0 at t = 0 to a target at
t = T. It is written as f = 1_omega z where z is a free wave, and the
terminal datum of z is found from a Gramian solve.

Basis. Spatial functions are the real Fourier modes 1/sqrt(2 pi),
cos(m x)/sqrt(pi), sin(m x)/sqrt(pi), m = 1..n_max, orthonormal for the grid
quadrature ``dx * sum``. Each carries two terminal coordinates,
(omega_m * y_hat, y_t_hat), or (y_hat, y_t_hat) for the mean. In these
coordinates the reachability map R and its adjoint in L^2(0,T; L^2(omega))
give the Gramian G = R R^*, a Hadamard product of the spatial Gram matrix
over omega and a temporal Gram matrix of the free-wave time factors.

Propagators. ``"exact"`` uses the continuum free wave; its time integrals
are done in closed form. ``"scheme"`` uses the exact discrete response of the
Verlet stepper (the stepping used by both evolvers), so a control built
with it lands on target in the finite-difference replay up to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import GramianIllConditioned, TargetUnreachableZeroMode
from .evolver import ControlField
from .grid import Grid1D, ScalarWaveState, linear_norm

COND_LIMIT = 1e14


@dataclass(frozen=True)
class HumProblem:
    grid: Grid1D
    omega: tuple[float, float] | None = (-math.pi / 2, math.pi / 2)
    T: float = 2.0 * math.pi
    n_max: int | None = None
    ridge: float = 1e-10
    propagator: str = "exact"
    cfl: float = 0.5

    def __post_init__(self):
        if self.T < 2.0 * math.pi - 1e-12:
            raise ValueError("the control horizon must be at least 2*pi")
        n_max = self.grid.n // 4 if self.n_max is None else int(self.n_max)
        if not 0 <= n_max <= self.grid.n // 2:
            raise ValueError("n_max must lie in [0, n/2]")
        object.__setattr__(self, "n_max", n_max)
        if self.omega is not None:
            om = (float(self.omega[0]), float(self.omega[1]))
            if om[1] <= om[0]:
                raise ValueError("omega must have nonempty interior")
            object.__setattr__(self, "omega", om)
        if self.propagator not in ("exact", "scheme"):
            raise ValueError("propagator must be 'exact' or 'scheme'")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if not self.grid.mask(self.omega).any():
            raise ValueError("omega contains no grid points")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / (self.cfl * self.grid.dx) - 1e-9))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def mask(self) -> np.ndarray:
        return self.grid.mask(self.omega)


# basis --------------------------------------------------------------------

def mode_basis(grid: Grid1D, n_max: int) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Orthonormal real Fourier basis on the grid.

    Returns the (n, nb) matrix of values, the wavenumber of each column and
    column labels.
    """
    x = grid.x
    cols = [np.full(grid.n, 1.0 / math.sqrt(2.0 * math.pi))]
    waves = [0]
    labels = ["c0"]
    for m in range(1, n_max + 1):
        if 2 * m == grid.n:
            cols.append(np.cos(m * x) / math.sqrt(2.0 * math.pi))
            waves.append(m)
            labels.append(f"c{m}")
            continue
        cols.append(np.cos(m * x) / math.sqrt(math.pi))
        cols.append(np.sin(m * x) / math.sqrt(math.pi))
        waves += [m, m]
        labels += [f"c{m}", f"s{m}"]
    return np.column_stack(cols), np.array(waves), labels


def scheme_frequency(grid: Grid1D, m) -> np.ndarray:
    """Frequency of the 3-point Laplacian on wavenumber m."""
    return 2.0 / grid.dx * np.sin(0.5 * np.asarray(m, dtype=float) * grid.dx)


# closed-form time integrals -------------------------------------------------

def _fc(nu, T):
    # int_0^T cos(nu t) dt
    return T * np.sinc(nu * T / math.pi)


def _fs(nu, T):
    # int_0^T sin(nu t) dt
    return T * np.sin(0.5 * nu * T) * np.sinc(nu * T / (2.0 * math.pi))


def exact_time_gram(freqs: np.ndarray, T: float) -> np.ndarray:
    """Gram matrix of the time factors, ordered (pos, vel) per frequency.

    For frequency w > 0 the factors are sin(w tau), cos(w tau); for w = 0
    they are tau, 1; tau = T - t runs over [0, T].
    """
    w = np.asarray(freqs, dtype=float)
    nf = w.size
    a = w[:, None]
    b = w[None, :]
    ss = 0.5 * (_fc(a - b, T) - _fc(a + b, T))
    cc = 0.5 * (_fc(a - b, T) + _fc(a + b, T))
    sc = 0.5 * (_fs(a + b, T) + _fs(a - b, T))
    G = np.zeros((2 * nf, 2 * nf))
    G[0::2, 0::2] = ss
    G[1::2, 1::2] = cc
    G[0::2, 1::2] = sc
    G[1::2, 0::2] = sc.T
    for z in np.flatnonzero(w == 0):
        p, v = 2 * z, 2 * z + 1
        for j in range(nf):
            bj = w[j]
            if bj == 0:
                block = np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])
            else:
                st, ct = math.sin(bj * T), math.cos(bj * T)
                # rows: tau, 1; columns: sin(bj tau), cos(bj tau)
                block = np.array([[-T * ct / bj + st / bj ** 2, T * st / bj + (ct - 1.0) / bj ** 2],
                                  [_fs(bj, T), _fc(bj, T)]])
            G[p:v + 1, 2 * j:2 * j + 2] = block
            G[2 * j:2 * j + 2, p:v + 1] = block.T
    return G


def exact_time_factors(freqs: np.ndarray, T: float, t: np.ndarray) -> np.ndarray:
    """Time factors at times t, shape (2*nf, len(t))."""
    w = np.asarray(freqs, dtype=float)[:, None]
    tau = T - np.asarray(t, dtype=float)[None, :]
    out = np.empty((2 * w.shape[0], tau.shape[1]))
    out[0::2] = np.where(w > 0, np.sin(w * tau), tau)
    out[1::2] = np.where(w > 0, np.cos(w * tau), 1.0)
    return out


# discrete Verlet response ---------------------------------------------------

def verlet_matrices(wh: np.ndarray, dt: float):
    """Per-mode one-step map x' = A x + B0 F^n + B1 F^{n+1}, x = (y, y_t)."""
    w2 = np.asarray(wh, dtype=float) ** 2
    h = 0.5 * dt * dt * w2
    A = np.empty(w2.shape + (2, 2))
    A[..., 0, 0] = 1.0 - h
    A[..., 0, 1] = dt
    A[..., 1, 0] = -dt * w2 * (1.0 - 0.5 * h)
    A[..., 1, 1] = 1.0 - h
    B0 = np.stack([np.full_like(w2, 0.5 * dt * dt), 0.5 * dt - 0.25 * dt ** 3 * w2], axis=-1)
    B1 = np.stack([np.zeros_like(w2), np.full_like(w2, 0.5 * dt)], axis=-1)
    return A, B0, B1


def scheme_kernels(wh: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """K[f, :, n]: contribution of the forcing sample at step n to x^N.

    Shape (nf, 2, n_steps + 1).
    """
    A, B0, B1 = verlet_matrices(wh, dt)
    nf = A.shape[0]
    K = np.zeros((nf, 2, n_steps + 1))
    u = B0.copy()
    r = B1.copy()
    K[:, :, n_steps] += r
    for n in range(n_steps - 1, -1, -1):
        K[:, :, n] += u
        if n >= 1:
            r = np.einsum("fij,fj->fi", A, r)
            K[:, :, n] += r
        u = np.einsum("fij,fj->fi", A, u)
    return K


def scheme_free(wh: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    A, _, _ = verlet_matrices(wh, dt)
    return np.stack([np.linalg.matrix_power(a, n_steps) for a in A])


# assembly -------------------------------------------------------------------

@dataclass
class HumGramian:
    matrix: np.ndarray
    spatial: np.ndarray
    temporal: np.ndarray
    labels: list[str]
    eigenvalues: np.ndarray
    ridge: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def condition(self) -> float:
        lo = self.eigenvalues[0] + self.ridge
        hi = self.eigenvalues[-1] + self.ridge
        return float(hi / lo) if lo > 0 else math.inf

    @property
    def effective_rank(self) -> int:
        return int(np.sum(self.eigenvalues > self.ridge))


class HumSolver:
    """Precomputed Gramian, factorization and time factors for a problem."""

    def __init__(self, problem: HumProblem):
        self.problem = problem
        grid = problem.grid
        B, waves, labels = mode_basis(grid, problem.n_max)
        self.basis = B
        self.waves = waves
        self.mask = problem.mask
        m_all = np.arange(problem.n_max + 1)
        self.wh = scheme_frequency(grid, m_all)
        self.dt = problem.dt
        self.n_steps = problem.n_steps
        self.times = self.dt * np.arange(self.n_steps + 1)
        if problem.propagator == "exact":
            self.freqs = m_all.astype(float)
            self.factors = exact_time_factors(self.freqs, problem.T, self.times)
            temporal = exact_time_gram(self.freqs, problem.T)
        else:
            self.freqs = self.wh
            K = scheme_kernels(self.wh, self.dt, self.n_steps)
            scale = np.where(self.wh > 0, self.wh, 1.0)
            K[:, 0, :] *= scale[:, None]
            w = np.full(self.n_steps + 1, self.dt)
            w[0] = w[-1] = 0.5 * self.dt
            flat = K.reshape(2 * K.shape[0], -1)
            self.factors = flat / w[None, :]
            temporal = (flat / w[None, :]) @ flat.T
            self.free_maps = scheme_free(self.wh, self.dt, self.n_steps)
        dx = grid.dx
        spatial = dx * (B * self.mask[:, None]).T @ B
        idx = np.empty(2 * B.shape[1], dtype=int)
        idx[0::2] = 2 * waves
        idx[1::2] = 2 * waves + 1
        self.kidx = idx
        bidx = np.repeat(np.arange(B.shape[1]), 2)
        G = spatial[np.ix_(bidx, bidx)] * temporal[np.ix_(idx, idx)]
        G = 0.5 * (G + G.T)
        eig = np.linalg.eigvalsh(G)
        ulabels = [f"{lab}:{s}" for lab in labels for s in ("pos", "vel")]
        self.gramian = HumGramian(G, spatial, temporal, ulabels, eig, problem.ridge)
        cond = self.gramian.condition
        if not cond < COND_LIMIT:
            raise GramianIllConditioned("Gramian condition number exceeds 1e14",
                                        condition=cond)
        Gr = G + problem.ridge * np.eye(G.shape[0])
        self._Gr = Gr
        self._chol = sla.cho_factor(Gr, lower=True)
        self.zero_rows = np.array([0, 1])

    # coordinates ----------------------------------------------------------------

    def coords(self, s: ScalarWaveState) -> np.ndarray:
        """Terminal-style coordinates (w*y_hat, y_t_hat), shape (2*nb, m)."""
        dx = self.problem.grid.dx
        yh = dx * self.basis.T @ s.y
        vh = dx * self.basis.T @ s.y_t
        w = self.freqs[self.waves]
        q = np.empty((2 * yh.shape[0], yh.shape[1]))
        q[0::2] = np.where(w[:, None] > 0, w[:, None] * yh, yh)
        q[1::2] = vh
        return q

    def out_of_band(self, s: ScalarWaveState) -> float:
        """Relative size of the part of s the basis does not represent."""
        dx = self.problem.grid.dx
        B = self.basis
        ry = s.y - B @ (dx * B.T @ s.y)
        rv = s.y_t - B @ (dx * B.T @ s.y_t)
        total = linear_norm(s)
        if total == 0:
            return 0.0
        return linear_norm(ScalarWaveState(s.grid, ry, rv)) / total

    def free_flow(self, q: np.ndarray) -> np.ndarray:
        """Advance coordinates by the free propagator over [0, T]."""
        T = self.problem.T
        w = self.freqs[self.waves]
        out = np.empty_like(q)
        pos, vel = q[0::2], q[1::2]
        if self.problem.propagator == "exact":
            c = np.cos(w * T)[:, None]
            s = np.sin(w * T)[:, None]
            zero = (w == 0)[:, None]
            out[0::2] = np.where(zero, pos + T * vel, c * pos + s * vel)
            out[1::2] = np.where(zero, vel, -s * pos + c * vel)
            return out
        wh = self.wh[self.waves]
        scale = np.where(wh > 0, wh, 1.0)[:, None]
        y = pos / scale
        M = self.free_maps[self.waves]
        y1 = M[:, 0, 0, None] * y + M[:, 0, 1, None] * vel
        v1 = M[:, 1, 0, None] * y + M[:, 1, 1, None] * vel
        out[0::2] = scale * y1
        out[1::2] = v1
        return out

    # solve ----------------------------------------------------------------------

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        mu = sla.cho_solve(self._chol, rhs)
        for _ in range(2):
            mu = mu + sla.cho_solve(self._chol, rhs - self._Gr @ mu)
        return mu

    def coefficient_series(self, mu: np.ndarray) -> np.ndarray:
        """Spatial-basis coefficients of f at each control time, (N+1, nb, m)."""
        Fp = self.factors[self.kidx[0::2]]  # (nb, N+1)
        Fv = self.factors[self.kidx[1::2]]
        return (np.einsum("bt,bm->tbm", Fp, mu[0::2])
                + np.einsum("bt,bm->tbm", Fv, mu[1::2]))

    def field(self, mu: np.ndarray, t0: float = 0.0) -> ControlField:
        coef = self.coefficient_series(mu)
        samples = np.einsum("xb,tbm->txm", self.basis, coef)
        return ControlField(self.problem.grid, t0, self.dt, samples, self.mask)

    def evaluate(self, mu: np.ndarray, t) -> np.ndarray:
        """Control at arbitrary times t (exact propagator only), (len(t), n, m)."""
        if self.problem.propagator != "exact":
            raise ValueError("only the exact propagator has closed-form time factors")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        fac = exact_time_factors(self.freqs, self.problem.T, t)
        Fp, Fv = fac[self.kidx[0::2]], fac[self.kidx[1::2]]
        coef = np.einsum("bt,bm->tbm", Fp, mu[0::2]) + np.einsum("bt,bm->tbm", Fv, mu[1::2])
        return np.einsum("xb,tbm->txm", self.basis, coef) * self.mask[None, :, None]

    def operator_bound(self) -> float:
        """Largest ratio ||f||_{Linf_t L2_x} / ||data||_{H1 x L2} over all
        band-limited targets reached from rest, taken over the control
        sample times."""
        w = self.freqs[self.waves]
        wh = self.wh[self.waves]
        # data coordinates z orthonormal in the discrete H1 x L2 norm
        d = np.empty(2 * w.size)
        d[0::2] = np.where(w > 0, w, 1.0) / np.sqrt(1.0 + wh ** 2)
        d[1::2] = 1.0
        X = self.solve(np.diag(d))
        ev, V = np.linalg.eigh(self.gramian.spatial)
        root = (V * np.sqrt(np.clip(ev, 0.0, None))) @ V.T
        Fp = self.factors[self.kidx[0::2]]
        Fv = self.factors[self.kidx[1::2]]
        Xp, Xv = X[0::2], X[1::2]
        best = 0.0
        for i in range(self.n_steps + 1):
            M = root @ (Fp[:, i, None] * Xp + Fv[:, i, None] * Xv)
            best = max(best, float(np.linalg.norm(M, 2)))
        return best


@lru_cache(maxsize=16)
def get_solver(problem: HumProblem) -> HumSolver:
    return HumSolver(problem)


def assemble_gramian(problem: HumProblem) -> HumGramian:
    return get_solver(problem).gramian


@dataclass
class HumResult:
    field: ControlField
    mu: np.ndarray
    rhs: np.ndarray
    solver: HumSolver
    out_of_band: float = 0.0
    warnings: list[str] = dc_field(default_factory=list)

    def evaluate(self, t) -> np.ndarray:
        return self.solver.evaluate(self.mu, t)


def hum_solve(problem: HumProblem, y0: ScalarWaveState | None,
              target: ScalarWaveState | None = None) -> HumResult:
    """Control steering y0 at t = 0 to ``target`` at t = T."""
    solver = get_solver(problem)
    grid = problem.grid
    ref = y0 if y0 is not None else target
    if ref is None:
        raise ValueError("need at least one of y0 and target")
    m = ref.m
    y0 = ScalarWaveState.zeros(grid, m) if y0 is None else y0
    target = ScalarWaveState.zeros(grid, m) if target is None else target
    warnings = []
    oob = max(solver.out_of_band(y0), solver.out_of_band(target))
    if oob > 1e-8:
        warnings.append(f"data has a relative part {oob:.3e} above n_max that is not steered")
    rhs = solver.coords(target) - solver.free_flow(solver.coords(y0))
    mu = solver.solve(rhs)
    resid = rhs - solver.gramian.matrix @ mu - problem.ridge * mu
    scale = np.linalg.norm(rhs) + 1e-300
    if np.linalg.norm(resid[solver.zero_rows]) > 1e-6 * scale + 1e-14:
        raise TargetUnreachableZeroMode("mean-mode equations are not satisfied",
                                        residual=float(np.linalg.norm(resid[solver.zero_rows])))
    return HumResult(solver.field(mu), mu, rhs, solver, oob, warnings)


def hum_control(problem: HumProblem, y0: ScalarWaveState | None,
                target: ScalarWaveState | None = None) -> ControlField:
    return hum_solve(problem, y0, target).field


@dataclass
class CostReport:
    rows: list[dict]
    G_T: float
    operator_bound: float | None

    COLUMNS = ("sample", "data_norm", "control_norm", "ratio")


def control_cost_report(problem: HumProblem, samples: list[ScalarWaveState],
                        with_operator_bound: bool = True) -> CostReport:
    """Control size against data size when steering rest to each sample.

    The empirical G_T is the largest ratio; when requested the exact
    worst case over all band-limited data is folded in as well.
    """
    if not samples:
        raise ValueError("need at least one sample")
    rows = []
    for i, s in enumerate(samples):
        dn = linear_norm(s)
        if dn == 0:
            rows.append({"sample": i, "data_norm": 0.0, "control_norm": 0.0, "ratio": 0.0})
            continue
        f = hum_control(problem, None, s)
        cn = f.norm_linf_l2()
        rows.append({"sample": i, "data_norm": dn, "control_norm": cn, "ratio": cn / dn})
    bound = get_solver(problem).operator_bound() if with_operator_bound else None
    g = max(r["ratio"] for r in rows)
    if bound is not None:
        g = max(g, bound)
    return CostReport(rows, g, bound)


# optimality ---------------------------------------------------------------

@dataclass
class OptimalityReport:
    trials: int
    base_norm_sq: float
    worst_relative_change: float
    max_null_effect: float
    passed: bool
    tol: float


def optimality_trials(problem: HumProblem, y0: ScalarWaveState | None,
                      target: ScalarWaveState | None = None, trials: int = 64,
                      seed: int = 0, rel_size: float = 1e-4, tol: float = 1e-9,
                      panels: int | None = None, order: int = 16) -> OptimalityReport:
    """Compare the HUM control against f + h and f - h for random h that
    steer rest to rest.

    Each h starts as a random masked field with time profiles outside the
    Gramian's span (half-integer frequencies on [0, 2pi] scaled to T); the
    HUM correction of its terminal effect is subtracted. Norms are taken by
    composite Gauss-Legendre quadrature in time and the grid sum over omega
    in space; the null effect of h is checked against the Fourier oracle.
    """
    from .linear_wave import gauss_legendre_nodes, oracle_forced

    if problem.propagator != "exact":
        raise ValueError("optimality trials need the exact propagator")
    base = hum_solve(problem, y0, target)
    solver = base.solver
    grid = problem.grid
    T = problem.T
    m = base.mu.shape[1]
    dx = grid.dx
    mask = solver.mask[:, None]
    panels = max(16, 4 * int(math.ceil(T))) if panels is None else panels
    nodes, weights = gauss_legendre_nodes(0.0, T, panels, order)
    f_nodes = solver.evaluate(base.mu, nodes)

    def sq_norm(vals):
        return float(np.einsum("t,txm->", weights, vals ** 2) * dx)

    base_sq = sq_norm(f_nodes)
    rng = np.random.default_rng(seed)
    B = solver.basis
    nb = B.shape[1]
    fac = exact_time_factors(solver.freqs, T, nodes)
    Fp, Fv = fac[solver.kidx[0::2]], fac[solver.kidx[1::2]]
    worst = math.inf
    effect_max = 0.0
    for _ in range(trials):
        q = 2 * rng.integers(0, 6, size=3) + 1
        amp = rng.standard_normal((3, nb, m)) / (1.0 + np.arange(nb))[None, :, None]
        prof = np.cos(0.5 * q[:, None] * nodes[None, :] * (2.0 * math.pi / T))
        coef = np.einsum("qt,qbm->tbm", prof, amp)
        g = np.einsum("xb,tbm->txm", B, coef) * mask[None]
        # terminal effect <g, Phi_j> and its HUM cancellation
        proj = dx * np.einsum("xb,txm->tbm", B * mask, g)
        e = np.empty((2 * nb, m))
        e[0::2] = np.einsum("t,bt,tbm->bm", weights, Fp, proj)
        e[1::2] = np.einsum("t,bt,tbm->bm", weights, Fv, proj)
        c = solver.solve(e)
        h = g - solver.evaluate(c, nodes)
        h *= rel_size * math.sqrt(base_sq / max(sq_norm(h), 1e-300))
        for sign in (1.0, -1.0):
            worst = min(worst, (sq_norm(f_nodes + sign * h) - base_sq) / base_sq)
        # the oracle sees h steer rest to rest (in the truncated modes)
        lookup = {float(s): i for i, s in enumerate(nodes)}

        def forcing(t, _h=h):
            return _h[lookup[float(t)]]

        out = oracle_forced(grid, None, T, forcing, m, panels=panels, order=order,
                            n_max=problem.n_max)
        effect_max = max(effect_max, float(np.max(out.energy())) / base_sq)
    return OptimalityReport(trials, base_sq, worst, effect_max, worst >= -tol, tol)
