"""Unstable eigenvalue of the linearized generator and coercivity sampling.

The generator script_E = [[0, -E_I], [E_R, 0]] has essential spectrum on the
imaginary axis and exactly one pair of simple real eigenvalues +-lambda1.
The constructive route used here:

1. E_I >= 0 with one-dimensional kernel span{T(bQ1)}; form its symmetric
   square root with the kernel channel projected out (sqrt_ei).
2. The symmetric product TT = E_I^{1/2} E_R E_I^{1/2} has a single negative
   eigenvalue mu = -lambda1^2 (negative_eigenpair_tt).
3. e1 = E_I^{1/2} g and e2 = E_R e1 / lambda1 solve the coupled system
   E_R e1 = lambda1 e2, -E_I e2 = lambda1 e1, so e+- = e1 +- i e2 are the
   eigenfunctions (eigenpair_e).  A few shift-inverted iterations on the raw
   sparse 4n system then polish the pair to an exact discrete eigenvector,
   which makes Phi_E(e+-) vanish identically (for an exact pair
   <E_R e1, e1> = lambda <e1, e2> = -<E_I e2, e2>).

Sign conventions.  Phi_E(e+, e-) = <E_R e1, e1> = <TT g, g> < 0, so the pair
can be normalized to Phi_E(e+, e-) = -1 but not +1 while keeping
e- = conj(e+); the achieved value is recorded in ``normalization``.  The
overall sign of e+ is fixed by (Re e+, T(bQ))_{H_N} > 0, which ties the sign
of the shooting amplitude to the kinetic-energy side the trajectory lands on.

A dense nonsymmetric eigensolve at reduced resolution cross-checks lambda1,
the count of real eigenvalues, and the kernel dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FieldPair, RadialGrid, h1dot_inner, h1dot_norm, pair_from_arrays
from .groundstate import GroundStateBundle, build_directions, transform_T
from .linops import (BlockOperatorE, PairOperator, assemble_E, assemble_L,
                     build_block_E, quad_form)


class SpectrumError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# square root of E_I


@dataclass(frozen=True)
class SqrtEI:
    """Symmetric square root of E_I on the complement of its kernel."""

    op: PairOperator
    basis: np.ndarray          # eigenvectors in symmetrized coordinates
    eigs: np.ndarray           # raw eigenvalues
    sqrt_eigs: np.ndarray      # clipped square roots
    kernel_index: int
    kernel_eig: float
    clip: float

    def _d(self) -> np.ndarray:
        m = self.op.grid.cell_masses
        return np.sqrt(np.concatenate([m, m]))

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        """E_I^{1/2} on nodal values (kernel component annihilated)."""
        d = self._d()
        y = self.basis.T @ (d * stacked)
        return (self.basis @ (self.sqrt_eigs * y)) / d

    def apply_sym(self, vec: np.ndarray) -> np.ndarray:
        return self.basis @ (self.sqrt_eigs * (self.basis.T @ vec))

    def project_out_kernel(self, stacked: np.ndarray) -> np.ndarray:
        d = self._d()
        v0 = self.basis[:, self.kernel_index]
        y = d * stacked
        return (y - (v0 @ y) * v0) / d


def sqrt_ei(e_i: PairOperator, bundle: GroundStateBundle,
            clip_rel: float = 1e-10) -> SqrtEI:
    """Eigendecompose E_I, project out the T(bQ1) kernel channel, clip, root.

    Any eigenvalue under the clip threshold other than the kernel channel
    signals an unexpected kernel dimension and raises.
    """
    S = e_i.symmetric_dense()
    eigs, basis = sla.eigh(S)
    m = bundle.grid.cell_masses
    d = np.sqrt(np.concatenate([m, m]))
    tq1 = transform_T(bundle.q1_vec)
    ref = d * np.concatenate([tq1.u.real, tq1.v.real])
    ref = ref / np.linalg.norm(ref)
    kernel_index = int(np.argmax(np.abs(basis.T @ ref)))
    clip = clip_rel * float(np.max(np.abs(eigs)))
    small = np.where(np.abs(eigs) < clip)[0]
    extra = [int(i) for i in small if i != kernel_index]
    negative = [int(i) for i in np.where(eigs < -clip)[0] if i != kernel_index]
    if extra or negative:
        raise SpectrumError(
            f"unexpected kernel dimension: {len(extra)} extra near-zero and "
            f"{len(negative)} negative eigenvalues of E_I beyond span{{T(Q1)}}")
    clipped = eigs.copy()
    clipped[kernel_index] = 0.0
    clipped[np.abs(clipped) < clip] = 0.0
    return SqrtEI(op=e_i, basis=basis, eigs=eigs, sqrt_eigs=np.sqrt(np.maximum(clipped, 0.0)),
                  kernel_index=kernel_index, kernel_eig=float(eigs[kernel_index]), clip=clip)


# ---------------------------------------------------------------------------
# the symmetric product operator and its negative eigenvalue


def negative_eigenpair_tt(e_r: PairOperator, root: SqrtEI,
                          tol_scale: float = 1e-12) -> tuple[float, np.ndarray, dict]:
    """Most negative eigenpair of TT = E_I^{1/2} E_R E_I^{1/2} (symmetrized).

    Returns (mu, g, info); raises if no negative eigenvalue is found.
    """
    S_er = e_r.symmetric_dense()
    SQ = root.basis * root.sqrt_eigs[None, :]
    half = S_er @ (SQ @ root.basis.T)
    T = (root.basis @ SQ.T @ half)
    T = 0.5 * (T + T.T)
    eigs, vecs = sla.eigh(T)
    scale = float(np.max(np.abs(eigs)))
    neg = np.where(eigs < -tol_scale * scale)[0]
    if len(neg) == 0:
        raise SpectrumError("no negative eigenvalue of E_I^{1/2} E_R E_I^{1/2}; "
                            "discretization too coarse or assembly bug")
    mu = float(eigs[0])
    g = vecs[:, 0]
    resid = float(np.linalg.norm(T @ g - mu * g))
    info = {"n_negative": int(len(neg)), "tt_residual": resid,
            "negative_eigs": [float(eigs[i]) for i in neg[:4]]}
    return mu, g, info


# ---------------------------------------------------------------------------
# eigenpair of script_E


@dataclass(frozen=True)
class SpectralResult:
    lambda1: float
    e_plus: FieldPair
    e_minus: FieldPair
    normalization: float       # Phi_E(e+, e-) after rescaling (= -1 by convention)
    residual: float            # ||script_E e+ - lambda1 e+|| / ||e+||, weighted L2
    residual_unpolished: float
    phi_e_plus: float          # Phi_E(e+) relative to ||e+||^2
    phi_e_minus: float
    mu: float
    kernel_eig: float
    n: int
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "normalization": self.normalization,
            "residual": self.residual,
            "residual_unpolished": self.residual_unpolished,
            "phi_e_plus_rel": self.phi_e_plus,
            "phi_e_minus_rel": self.phi_e_minus,
            "mu": self.mu,
            "ei_kernel_eig": self.kernel_eig,
            "n": self.n,
            **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str))},
        }


def _weighted_norm(grid: RadialGrid, stacked: np.ndarray) -> float:
    w = np.pi ** 3 * np.concatenate([grid.cell_masses, grid.cell_masses])
    return float(np.sqrt(np.real(np.sum(w * np.abs(stacked) ** 2))))


def _hn_inner(op_kin: tuple[sp.csr_matrix, float], grid: RadialGrid, kappa: float,
              a: np.ndarray, b: np.ndarray) -> float:
    """(a, b)_{H_N} = <(-Lap a1, -kappa Lap a2), b> with cell-mass weights."""
    lap = op_kin[0]
    n = grid.n
    w = np.pi ** 3 * grid.cell_masses
    t1 = np.sum(w * (-(lap @ a[:n])) * b[:n])
    t2 = kappa * np.sum(w * (-(lap @ a[n:])) * b[n:])
    return float(np.real(t1 + t2))


def eigenpair_e(bundle: GroundStateBundle, block: BlockOperatorE | None = None,
                polish_iterations: int = 3, clip_rel: float = 1e-10) -> SpectralResult:
    """Unstable eigenpair of script_E via the symmetric-product construction."""
    if block is None:
        block = build_block_E(bundle)
    root = sqrt_ei(block.e_i, bundle, clip_rel)
    mu, g, info = negative_eigenpair_tt(block.e_r, root)
    lam = math.sqrt(-mu)
    grid = bundle.grid
    n = grid.n
    m = grid.cell_masses
    d = np.sqrt(np.concatenate([m, m]))
    e1 = root.apply_sym(g) / d
    e2 = (block.e_r.mat @ e1) / lam

    def resid_of(e1v, e2v, lamv):
        z = e1v + 1j * e2v
        res = block.apply_complex(z) - lamv * z
        return _weighted_norm(grid, res) / _weighted_norm(grid, z)

    res0 = resid_of(e1, e2, lam)

    # polish on the raw sparse operator: shift-inverted iteration in the
    # symmetrized coordinates, Rayleigh-quotient eigenvalue updates
    E4 = block.sparse_real()
    D4 = np.concatenate([d, d])
    x = np.concatenate([e1, e2]) * D4
    x /= np.linalg.norm(x)
    Ssym = sp.diags(D4) @ E4 @ sp.diags(1.0 / D4)
    lam_p = lam
    for _ in range(polish_iterations):
        shifted = (Ssym - lam_p * sp.identity(4 * n, format="csc")).tocsc()
        try:
            x_new = spla.splu(shifted).solve(x)
        except RuntimeError:
            lam_p *= 1.0 + 1e-9
            shifted = (Ssym - lam_p * sp.identity(4 * n, format="csc")).tocsc()
            x_new = spla.splu(shifted).solve(x)
        x = x_new / np.linalg.norm(x_new)
        lam_p = float(x @ (Ssym @ x))
    e1 = (x[:2 * n] / D4[:2 * n])
    e2 = (x[2 * n:] / D4[2 * n:])
    lam = lam_p
    res1 = resid_of(e1, e2, lam)

    # normalization: |Phi_E(e+, e-)| = 1 (value itself is negative), then fix
    # the overall sign through the kinetic pairing with T(bQ)
    ops = (block.e_r, block.e_i)
    ep = pair_from_arrays(grid, e1[:n] + 1j * e2[:n], e1[n:] + 1j * e2[n:], bundle.kappa)
    em = ep.conj()
    pairing = quad_form(ep, em, "phi_e", bundle, ops)
    if abs(pairing) < 1e-300:
        raise SpectrumError("Phi_E(e+, e-) vanished; eigenpair degenerate")
    scale = 1.0 / math.sqrt(abs(pairing))
    e1 *= scale
    e2 *= scale
    lapmat = grid.laplacian_matrix("dirichlet", 2)
    tq = np.concatenate([bundle.t_q.u.real, bundle.t_q.v.real])
    if _hn_inner((lapmat, 0.0), grid, bundle.kappa, e1, tq) < 0:
        e1, e2 = -e1, -e2
    ep = pair_from_arrays(grid, e1[:n] + 1j * e2[:n], e1[n:] + 1j * e2[n:], bundle.kappa)
    em = ep.conj()
    norm_sq = _weighted_norm(grid, np.concatenate([ep.u, ep.v])) ** 2
    phi_p = quad_form(ep, ep, "phi_e", bundle, ops) / norm_sq
    phi_m = quad_form(em, em, "phi_e", bundle, ops) / norm_sq
    normalization = quad_form(ep, em, "phi_e", bundle, ops)
    info.update({"hn_pairing_sign_fixed": True})
    return SpectralResult(lambda1=lam, e_plus=ep, e_minus=em,
                          normalization=float(normalization),
                          residual=res1, residual_unpolished=res0,
                          phi_e_plus=float(phi_p), phi_e_minus=float(phi_m),
                          mu=mu, kernel_eig=root.kernel_eig, n=n, info=info)


def lambda1_inverse_iteration(bundle: GroundStateBundle, lam_guess: float,
                              iterations: int = 5) -> float:
    """lambda1 on this grid by shift-inverted iteration only (refinement checks)."""
    block = build_block_E(bundle)
    n = bundle.grid.n
    m = bundle.grid.cell_masses
    D4 = np.sqrt(np.concatenate([m, m, m, m]))
    Ssym = sp.diags(D4) @ block.sparse_real() @ sp.diags(1.0 / D4)
    rng = np.random.default_rng(7)
    x = rng.standard_normal(4 * n)
    x /= np.linalg.norm(x)
    lam = lam_guess
    lu = spla.splu((Ssym - lam * sp.identity(4 * n, format="csc")).tocsc())
    for it in range(iterations):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
        lam_new = float(x @ (Ssym @ x))
        if it >= 1 and abs(lam_new - lam_guess) > 0.5 * lam_guess:
            raise SpectrumError("inverse iteration wandered off the target eigenvalue")
        lam = lam_new
    return lam


# ---------------------------------------------------------------------------
# dense nonsymmetric cross-check


def dense_cross_check(bundle: GroundStateBundle, real_tol: float = 1e-4,
                      zero_tol: float = 1e-4) -> dict:
    """Full nonsymmetric spectrum of script_E at (small) production cost.

    Because E_R and E_I are symmetric in the mass inner product, the spectrum
    splits into exactly real and exactly imaginary pairs (up to roundoff);
    the counts below verify the expected picture: two simple real eigenvalues
    +-lambda1, a two-dimensional radial kernel, everything else imaginary.
    """
    block = build_block_E(bundle)
    m = bundle.grid.cell_masses
    D4 = np.sqrt(np.concatenate([m, m, m, m]))
    M = block.sparse_real().toarray()
    M = (M * D4[:, None]) / D4[None, :]
    ev = sla.eigvals(M)
    scale = float(np.max(np.abs(ev)))
    realish = ev[(np.abs(ev.imag) <= real_tol * np.maximum(np.abs(ev.real), 1.0)) &
                 (np.abs(ev.real) > zero_tol)]
    near_zero = ev[np.abs(ev) <= zero_tol]
    lam_pos = sorted(float(x.real) for x in realish if x.real > 0)
    return {
        "lambda1_dense": lam_pos[0] if lam_pos else None,
        "real_eigs": sorted(float(x.real) for x in realish),
        "n_real": int(len(realish)),
        "n_near_zero": int(len(near_zero)),
        "spectral_scale": scale,
    }


def shifted_solve_conditioning(bundle: GroundStateBundle, lam1: float,
                               j_values: tuple[int, ...] = (2, 3, 4)) -> dict:
    """Estimate ||(script_E - j lam1)^{-1}|| to confirm j lam1 stays off the spectrum."""
    block = build_block_E(bundle)
    n4 = 4 * bundle.grid.n
    out = {}
    for j in j_values:
        lu = spla.splu((block.sparse_real() - j * lam1 * sp.identity(n4, format="csc")).tocsc())
        op = spla.LinearOperator((n4, n4), matvec=lu.solve,
                                 rmatvec=lambda x: lu.solve(x, trans="T"))
        est = spla.onenormest(op)
        out[f"resolvent_norm_j{j}"] = float(est)
    return out


# ---------------------------------------------------------------------------
# coercivity sampling


def random_decaying_pair(grid: RadialGrid, kappa: float, rng: np.random.Generator,
                         real_only: bool = False) -> FieldPair:
    """Smooth decaying trial field: sum of r^p exp(-sigma r^2) modes."""
    r = grid.nodes
    powers = (0, 1, 2, 3)
    sigmas = (0.3, 0.6, 1.2, 2.5)
    u = np.zeros(grid.n, dtype=complex)
    v = np.zeros(grid.n, dtype=complex)
    for p in powers:
        for s in sigmas:
            base = r ** p * np.exp(-s * r * r)
            cu = rng.standard_normal() + (0 if real_only else 1j * rng.standard_normal())
            cv = rng.standard_normal() + (0 if real_only else 1j * rng.standard_normal())
            u += cu * base
            v += cv * base
    return pair_from_arrays(grid, u, v, kappa)


def _project(h: FieldPair, constraints, directions) -> FieldPair:
    """Remove components so that every constraint functional vanishes on h."""
    kvals = np.array([c(h) for c in constraints])
    G = np.array([[c(dvec) for dvec in directions] for c in constraints])
    coef = np.linalg.solve(G, kvals)
    if not np.all(np.isfinite(coef)):
        raise SpectrumError("projection rank-deficient")
    out = h
    for cf, dvec in zip(coef, directions):
        out = out - cf * dvec
    return out


def coercivity_sample(which: str, trials: int, seed: int,
                      bundle: GroundStateBundle,
                      spectral: SpectralResult | None = None) -> dict:
    """Minimum of form(h)/||h||_{Hdot1}^2 over seeded projected random trials.

    which:
      'phi_G'        Phi on the complement of {Phi(Q,.), i Q1, Lambda Q}
      'phi_e_Gtilde' Phi_E on the complement of {e+, e-, T(i Q1), T(Lambda Q)}
      'L_I'          <L_I v, v> for real v with (v, Q1)_{Hdot1} = 0
      'E_I'          <E_I v, v> for real v with (v, T(Q1))_{Hdot1} = 0
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = build_directions(bundle)
    ratios = []
    if which == "phi_G":
        ops = (assemble_L(bundle, "L_R"), assemble_L(bundle, "L_I"))
        constraints = [
            lambda h: quad_form(bundle.q_vec, h, "phi", bundle, ops),
            lambda h: h1dot_inner(dirs["i_q1"], h),
            lambda h: h1dot_inner(dirs["lambda_q"], h),
        ]
        directions = [dirs["q"], dirs["i_q1"], dirs["lambda_q"]]
        form = lambda h: quad_form(h, h, "phi", bundle, ops)
        real_only = False
    elif which == "phi_e_Gtilde":
        if spectral is None:
            raise ValueError("phi_e_Gtilde sampling needs the spectral result")
        ops = (assemble_E(bundle, "E_R"), assemble_E(bundle, "E_I"))
        ep, em = spectral.e_plus, spectral.e_minus
        constraints = [
            lambda h: quad_form(h, ep, "phi_e", bundle, ops),
            lambda h: quad_form(h, em, "phi_e", bundle, ops),
            lambda h: h1dot_inner(dirs["t_i_q1"], h),
            lambda h: h1dot_inner(dirs["t_lambda_q"], h),
        ]
        directions = [ep, em, dirs["t_i_q1"], dirs["t_lambda_q"]]
        form = lambda h: quad_form(h, h, "phi_e", bundle, ops)
        real_only = False
    elif which in ("L_I", "E_I"):
        if which == "L_I":
            op = assemble_L(bundle, "L_I")
            dvec = bundle.q1_vec
        else:
            op = assemble_E(bundle, "E_I")
            dvec = transform_T(bundle.q1_vec)
        constraints = [lambda h: h1dot_inner(dvec, h)]
        directions = [dvec]
        form = lambda h: float(op.quad(np.concatenate([h.u.real, h.v.real]),
                                       np.concatenate([h.u.real, h.v.real])))
        real_only = True
    else:
        raise ValueError(f"unknown coercivity target {which!r}")

    for _ in range(trials):
        h = random_decaying_pair(bundle.grid, bundle.kappa, rng, real_only)
        h = _project(h, constraints, directions)
        nrm = h1dot_norm(h)
        if nrm < 1e-12:
            continue
        ratios.append(form(h) / nrm ** 2)
    ratios = np.array(ratios)
    return {
        "which": which,
        "trials": int(len(ratios)),
        "min_ratio": float(np.min(ratios)),
        "median_ratio": float(np.median(ratios)),
        "max_ratio": float(np.max(ratios)),
    }
