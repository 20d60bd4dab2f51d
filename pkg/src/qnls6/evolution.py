"""Time integration of the coupled system with conservation and virial monitors.

Semi-discrete system (original form):

    i u_t = -Delta_h u - conj(u) v,      i v_t = -kappa Delta_h v - u^2,

the transformed form doubles the first coupling (2 conj(u) v).  The default
scheme is Strang splitting: the linear half-steps apply exp(i dt Delta_h) and
exp(i kappa dt Delta_h) exactly in the eigenbasis of the discrete radial
Laplacian (unitary in the cell-mass norm, so the discrete mass is conserved
to the accuracy of the nonlinear substep), and the nonlinear substep advances
the pointwise ODE i u_t = -c1 conj(u) v, i v_t = -u^2 with a classical RK4
stage (the pointwise invariant c1^{-1}|u|^2 + ... is preserved to O(dt^5) per
step).  A Crank-Nicolson alternative with a fixed-point nonlinear midpoint is
provided for cross-checks.

Monitored quantities use the solver-consistent discrete functionals
(<-Delta_h u, u> with cell-mass weights), so the reported E/mass drift
measures integrator error rather than the fixed spatial quadrature offset.
Blow-up is flagged when the kinetic functional exceeds a configured multiple
of the reference value or the adaptive step collapses; "scattering" is
proxied by a trailing-window decay of the local L^4 density (stated as a
proxy, never as a proof).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .grid import FieldPair, GridError, RadialGrid, pair_from_arrays
from .functionals import VirialWeight, virial_F, virial_I, mass_type_vr


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 5e-4
    t_end: float = 10.0
    scheme: str = "strang-split"       # or "crank-nicolson"
    system: str = "original"           # or "transformed"
    blowup_H_factor: float = 50.0
    monitor_stride: int = 20
    snapshot_stride: int = 0           # in monitor points; 0 disables
    snapshot_times: tuple = ()         # explicit times (override stride)
    adapt: bool = False
    dt_min: float = 1e-9
    growth_limit: float = 1.15         # per-step max-norm growth before halving
    sponge: bool = False
    sponge_strength: float = 5.0
    sponge_start_frac: float = 0.8
    virial_radii: tuple = ()           # R values (math.inf allowed)
    vr_component_weights: tuple | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.blowup_H_factor <= 1:
            raise ValueError("blowup_H_factor must exceed 1")
        if self.scheme not in ("strang-split", "crank-nicolson"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.system not in ("original", "transformed"):
            raise ValueError(f"unknown system {self.system!r}")


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    H: np.ndarray
    P: np.ndarray
    E: np.ndarray
    mass: np.ndarray
    delta: np.ndarray
    l4_density: np.ndarray
    I_R: dict
    F_R: dict
    V_R: dict
    termination: str
    final_state: FieldPair
    final_time: float
    snapshots: list = field(default_factory=list)
    steps: int = 0
    min_dt: float = 0.0
    diagnostic: str = ""

    def drift(self) -> dict:
        e0, m0 = self.E[0], self.mass[0]
        return {
            "energy": float(np.max(np.abs(self.E - e0)) / max(abs(e0), 1e-300)),
            "mass": float(np.max(np.abs(self.mass - m0)) / max(abs(m0), 1e-300)),
        }

    def csv_rows(self):
        for i, t in enumerate(self.times):
            yield (t, self.H[i], self.P[i], self.E[i], self.mass[i], self.delta[i])


class RadialPropagator:
    """Spectral data of the discrete radial Laplacian shared by trajectories."""

    _MEMO: dict = {}

    def __init__(self, grid: RadialGrid, kappa: float):
        self.grid = grid
        self.kappa = kappa
        key = (grid.n, grid.r_max, grid.mapping, grid.stretch)
        if key not in RadialPropagator._MEMO:
            diag, off = grid.symmetrized_tridiag()
            evals, vecs = eigh_tridiagonal(diag, off)
            RadialPropagator._MEMO[key] = (evals, vecs)
        self.evals, self.vecs = RadialPropagator._MEMO[key]
        self.sm = np.sqrt(grid.cell_masses)
        self.w_op = np.pi ** 3 * grid.cell_masses
        sub, d2, sup, _ = grid.laplacian_tridiag("dirichlet")
        self._tri = (sub, d2, sup)
        self._cache: dict = {}

    # -- linear flow ------------------------------------------------------

    def _phases(self, dt: float):
        return np.exp(1j * self.evals * dt), np.exp(1j * self.kappa * self.evals * dt)

    def _cached_mats(self, dt: float):
        key = round(dt, 18)
        if key not in self._cache:
            if self.grid.n > 1536 or len(self._cache) >= 6:
                return None
            pu, pv = self._phases(dt)
            self._cache[key] = ((self.vecs * pu) @ self.vecs.T,
                                (self.vecs * pv) @ self.vecs.T)
        return self._cache[key]

    def apply_linear(self, u: np.ndarray, v: np.ndarray, dt: float):
        mats = self._cached_mats(dt)
        if mats is not None:
            mu, mv = mats
            return (mu @ (self.sm * u)) / self.sm, (mv @ (self.sm * v)) / self.sm
        # eigenbasis route with real-stacked products: a real-matrix @
        # complex-vector product would upcast (copy) the basis every call
        pu, pv = self._phases(dt)
        out = []
        for x, ph in ((u, pu), (v, pv)):
            xs = self.sm * x
            coef = self.vecs.T @ np.column_stack([xs.real, xs.imag])
            z = (coef[:, 0] + 1j * coef[:, 1]) * ph
            back = self.vecs @ np.column_stack([z.real, z.imag])
            out.append((back[:, 0] + 1j * back[:, 1]) / self.sm)
        return out[0], out[1]

    # -- discrete functionals ----------------------------------------------

    def apply_lap(self, x: np.ndarray) -> np.ndarray:
        sub, d2, sup = self._tri
        out = d2 * x
        out[:-1] += sup * x[1:]
        out[1:] += sub * x[:-1]
        return out

    def discrete_H(self, u, v, system: str = "original") -> float:
        cv = self.kappa if system == "transformed" else 0.5 * self.kappa
        t1 = -np.real(np.sum(self.w_op * np.conj(u) * self.apply_lap(u)))
        t2 = -np.real(np.sum(self.w_op * np.conj(v) * self.apply_lap(v)))
        return float(t1 + cv * t2)

    def discrete_P(self, u, v) -> float:
        return float(np.real(np.sum(self.w_op * u * u * np.conj(v))))

    def discrete_E(self, u, v, system: str = "original") -> float:
        if system == "transformed":
            return 0.5 * self.discrete_H(u, v, system) - self.discrete_P(u, v)
        return 0.5 * (self.discrete_H(u, v, system) - self.discrete_P(u, v))

    def discrete_mass(self, u, v) -> float:
        return float(np.sum(self.w_op * (np.abs(u) ** 2 + np.abs(v) ** 2)))


def linear_propagator(u: FieldPair, dt: float, prop: RadialPropagator | None = None) -> FieldPair:
    """Exact discrete free flow: (e^{i dt Delta} u, e^{i kappa dt Delta} v)."""
    if prop is None:
        prop = RadialPropagator(u.grid, u.kappa)
    un, vn = prop.apply_linear(u.u, u.v, dt)
    return u.with_values(un, vn)


def _c1(system: str) -> float:
    return 2.0 if system == "transformed" else 1.0


def nonlinear_substep(u: FieldPair, dt: float, system: str = "original") -> FieldPair:
    """RK4 step of the pointwise ODE i u_t = -c1 conj(u) v, i v_t = -u^2."""
    un, vn = _rk4(u.u, u.v, dt, _c1(system))
    return u.with_values(un, vn)


def _rk4(u, v, dt, c1):
    def f(a, b):
        return 1j * c1 * np.conj(a) * b, 1j * a * a
    k1u, k1v = f(u, v)
    k2u, k2v = f(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v)
    k3u, k3v = f(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v)
    k4u, k4v = f(u + dt * k3u, v + dt * k3v)
    return (u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
            v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))


def _sponge_profile(grid: RadialGrid, cfg: EvolutionConfig) -> np.ndarray:
    r = grid.nodes
    r0 = cfg.sponge_start_frac * grid.r_max
    ramp = np.clip((r - r0) / (grid.r_max - r0), 0.0, None)
    return cfg.sponge_strength * ramp ** 2


def run(u0: FieldPair, cfg: EvolutionConfig, reference_H: float | None = None,
        t0: float = 0.0) -> TrajectoryRecord:
    """Integrate from t0 to cfg.t_end (backward if t_end < t0); record monitors."""
    prop = RadialPropagator(u0.grid, u0.kappa)
    duration = cfg.t_end - t0
    if duration == 0:
        raise ValueError("empty integration interval")
    sgn = 1.0 if duration > 0 else -1.0
    dt = sgn * cfg.dt
    nsteps = max(1, int(round(abs(duration) / cfg.dt)))
    c1 = _c1(cfg.system)
    sponge = _sponge_profile(u0.grid, cfg) if cfg.sponge else None

    weights = {}
    for R in cfg.virial_radii:
        weights[R] = VirialWeight.build(u0.grid, R)

    times, Hs, Ps, Es, ms, dls, l4s = [], [], [], [], [], [], []
    i_r = {R: [] for R in weights}
    f_r = {R: [] for R in weights}
    v_r = {R: [] for R in weights}
    snapshots = []
    snap_due = sorted(cfg.snapshot_times, reverse=(sgn < 0))
    snap_idx = 0

    def record(t, u, v):
        nonlocal snap_idx
        H = prop.discrete_H(u, v, cfg.system)
        P = prop.discrete_P(u, v)
        E = prop.discrete_E(u, v, cfg.system)
        times.append(t); Hs.append(H); Ps.append(P); Es.append(E)
        ms.append(prop.discrete_mass(u, v))
        dls.append(abs(H - reference_H) if reference_H is not None else math.nan)
        l4s.append(float(np.sum(prop.w_op * (np.abs(u) ** 4 + np.abs(v) ** 4))))
        pair = None
        if weights:
            pair = pair_from_arrays(u0.grid, u, v, u0.kappa)
            for R, wgt in weights.items():
                i_r[R].append(virial_I(pair, wgt))
                f_r[R].append(virial_F(pair, wgt))
                v_r[R].append(mass_type_vr(pair, wgt, cfg.vr_component_weights))
        want_snap = False
        if cfg.snapshot_stride and (len(times) - 1) % cfg.snapshot_stride == 0:
            want_snap = True
        while snap_idx < len(snap_due) and (t - snap_due[snap_idx]) * sgn >= -0.25 * cfg.dt:
            want_snap = True
            snap_idx += 1
        if want_snap:
            if pair is None:
                pair = pair_from_arrays(u0.grid, u, v, u0.kappa)
            snapshots.append((t, pair))
        return H

    u, v = u0.u.copy(), u0.v.copy()
    H0 = record(t0, u, v)
    H_ref = reference_H if reference_H is not None else abs(H0)
    termination, diagnostic = "completed", ""
    min_dt = abs(dt)
    steps = 0

    if cfg.scheme == "crank-nicolson":
        stepper = _make_cn_stepper(prop, c1)
    else:
        stepper = None

    if cfg.adapt or cfg.scheme == "crank-nicolson":
        # plain (unfused) stepping with optional step halving
        t = t0
        dt_cur = dt
        while (cfg.t_end - t) * sgn > 0.25 * cfg.dt:
            if abs(cfg.t_end - t) < abs(dt_cur):
                dt_cur = cfg.t_end - t
            if stepper is not None:
                un, vn = stepper(u, v, dt_cur)
            else:
                un, vn = prop.apply_linear(u, v, dt_cur / 2)
                un, vn = _rk4(un, vn, dt_cur, c1)
                if sponge is not None:
                    damp = np.exp(-sponge * abs(dt_cur))
                    un *= damp; vn *= damp
                un, vn = prop.apply_linear(un, vn, dt_cur / 2)
            peak_old = max(np.max(np.abs(u)), np.max(np.abs(v)))
            peak_new = max(np.max(np.abs(un)), np.max(np.abs(vn)))
            if cfg.adapt and (not np.isfinite(peak_new) or peak_new > cfg.growth_limit * peak_old):
                dt_cur = 0.5 * dt_cur
                min_dt = min(min_dt, abs(dt_cur))
                if abs(dt_cur) < cfg.dt_min:
                    termination, diagnostic = "blowup", "step collapse"
                    break
                continue
            u, v = un, vn
            t += dt_cur
            steps += 1
            if not np.isfinite(peak_new):
                termination, diagnostic = "instability", "non-finite state"
                break
            if steps % cfg.monitor_stride == 0 or (cfg.t_end - t) * sgn <= 0.25 * cfg.dt:
                H = record(t, u, v)
                if H > cfg.blowup_H_factor * H_ref:
                    termination, diagnostic = "blowup", f"H exceeded {cfg.blowup_H_factor} x reference"
                    break
    else:
        # fused Strang: L(dt/2) [N L(dt)]^* N L(dt/2) with re-splits at monitors
        t = t0
        u, v = prop.apply_linear(u, v, dt / 2)
        for i in range(nsteps):
            u, v = _rk4(u, v, dt, c1)
            if sponge is not None:
                damp = np.exp(-sponge * abs(dt))
                u *= damp; v *= damp
            t = t0 + (i + 1) * dt
            steps += 1
            last = i == nsteps - 1
            at_monitor = ((i + 1) % cfg.monitor_stride == 0) or last
            if at_monitor:
                u, v = prop.apply_linear(u, v, dt / 2)
                if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                    termination, diagnostic = "instability", "non-finite state"
                    break
                H = record(t, u, v)
                if H > cfg.blowup_H_factor * H_ref:
                    termination, diagnostic = "blowup", f"H exceeded {cfg.blowup_H_factor} x reference"
                    break
                if not last:
                    u, v = prop.apply_linear(u, v, dt / 2)
            else:
                u, v = prop.apply_linear(u, v, dt)

    final = pair_from_arrays(u0.grid, u, v, u0.kappa)
    return TrajectoryRecord(
        times=np.array(times), H=np.array(Hs), P=np.array(Ps), E=np.array(Es),
        mass=np.array(ms), delta=np.array(dls), l4_density=np.array(l4s),
        I_R={R: np.array(s) for R, s in i_r.items()},
        F_R={R: np.array(s) for R, s in f_r.items()},
        V_R={R: np.array(s) for R, s in v_r.items()},
        termination=termination, final_state=final, final_time=times[-1],
        snapshots=snapshots, steps=steps, min_dt=min_dt, diagnostic=diagnostic)


def _make_cn_stepper(prop: RadialPropagator, c1: float):
    """Crank-Nicolson with fixed-point nonlinear midpoint; banded solves."""
    sub, d2, sup = prop._tri
    n = len(d2)

    def banded(dt, coeff):
        ab = np.zeros((3, n), dtype=complex)
        ab[0, 1:] = -0.5j * dt * coeff * sup
        ab[1, :] = 1.0 - 0.5j * dt * coeff * d2
        ab[2, :-1] = -0.5j * dt * coeff * sub
        return ab

    def apply_half(x, dt, coeff):
        out = (1.0 + 0.5j * dt * coeff * d2) * x
        out[:-1] += 0.5j * dt * coeff * sup * x[1:]
        out[1:] += 0.5j * dt * coeff * sub * x[:-1]
        return out

    def stepper(u, v, dt):
        ab_u = banded(dt, 1.0)
        ab_v = banded(dt, prop.kappa)
        rhs_u0 = apply_half(u, dt, 1.0)
        rhs_v0 = apply_half(v, dt, prop.kappa)
        un, vn = u, v
        for _ in range(3):
            um = 0.5 * (u + un)
            vm = 0.5 * (v + vn)
            fu = 1j * c1 * np.conj(um) * vm
            fv = 1j * um * um
            un = solve_banded((1, 1), ab_u, rhs_u0 + dt * fu)
            vn = solve_banded((1, 1), ab_v, rhs_v0 + dt * fv)
        return un, vn

    return stepper


def check_virial_identity(record: TrajectoryRecord, R) -> float:
    """max_t |d/dt I_R - F_R| / max_t |F_R| with centered time differences."""
    if R not in record.I_R:
        raise KeyError(f"record has no virial series at R={R}")
    t = record.times
    I = record.I_R[R]
    F = record.F_R[R]
    if len(t) < 5:
        raise ValueError("record too short for the identity check")
    dIdt = (I[2:] - I[:-2]) / (t[2:] - t[:-2])
    dev = np.abs(dIdt - F[1:-1])
    return float(np.max(dev) / max(np.max(np.abs(F)), 1e-300))


def vr_identity_defect(record: TrajectoryRecord, R) -> float:
    """max_t |d/dt V_R - I_R| / max_t |I_R| (mass-resonance diagnostic)."""
    t = record.times
    V = record.V_R[R]
    I = record.I_R[R]
    dVdt = (V[2:] - V[:-2]) / (t[2:] - t[:-2])
    dev = np.abs(dVdt - I[1:-1])
    return float(np.max(dev) / max(np.max(np.abs(I)), 1e-300))


def detect(record: TrajectoryRecord, delta0: float | None = None,
           lambda_series: np.ndarray | None = None,
           decay_ratio: float = 0.2) -> str:
    """Classification: blowup / trapped / global-decaying / undecided."""
    if record.termination == "blowup":
        return "blowup"
    if record.termination == "instability":
        return "undecided"
    nt = len(record.times)
    if delta0 is not None and np.all(np.isfinite(record.delta)):
        tail = record.delta[nt // 2:]
        if np.max(tail) < delta0:
            if lambda_series is None or (np.max(lambda_series) / max(np.min(lambda_series), 1e-300) < 10):
                return "trapped"
    l4 = record.l4_density
    early = float(np.max(l4[: max(2, nt // 2)]))
    late = float(np.mean(l4[-max(2, nt // 4):]))
    if early > 0 and late / early < decay_ratio:
        return "global-decaying"
    return "undecided"


# ---------------------------------------------------------------------------
# checkpoint format: header (n:u64, r_max:f64, kappa:f64, t:f64) then per
# component n little-endian (re, im) float64 pairs, u block first.

_MAGIC = struct.Struct("<Qddd")


def write_checkpoint(path: str, pair: FieldPair, t: float) -> None:
    g = pair.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC.pack(g.n, g.r_max, pair.kappa, t))
        for comp in (pair.u, pair.v):
            buf = np.empty(2 * g.n)
            buf[0::2] = comp.real
            buf[1::2] = comp.imag
            fh.write(buf.astype("<f8").tobytes())


def read_checkpoint(path: str, grid: RadialGrid) -> tuple[FieldPair, float]:
    with open(path, "rb") as fh:
        n, r_max, kappa, t = _MAGIC.unpack(fh.read(_MAGIC.size))
        if n != grid.n or abs(r_max - grid.r_max) > 1e-12 * grid.r_max:
            raise GridError(f"checkpoint grid (n={n}, r_max={r_max}) does not match")
        comps = []
        for _ in range(2):
            buf = np.frombuffer(fh.read(16 * n), dtype="<f8")
            comps.append(buf[0::2] + 1j * buf[1::2])
    return pair_from_arrays(grid, comps[0], comps[1], kappa), t
