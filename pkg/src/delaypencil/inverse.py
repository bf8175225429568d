"""Inverse problem: recover both potentials from the two spectra.

The pipeline follows the constructive route: identify the asymptotic
parameters by least squares, rebuild both characteristic functions from
their zeros with an exact anchor tail, sample the entire remainders at the
integers, invert the resulting Fourier data into the four boundary
functions, and read the potentials off the two decoupled subsystems.  A
solvability report implements the necessary-and-sufficient checks
(asymptotics, exponential type via support mass, parity, and the spurious
constant of the zero-product representation).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PI,
    DomainError,
    ParameterEstimate,
    ProblemConfig,
    RankDeficiencyError,
    SampledFunction,
    Spectrum,
    anchor,
    integrate,
    spectrum_indices,
)
from .forward import WTable

__all__ = [
    "estimate_parameters",
    "CharFnFromZeros",
    "build_delta_from_zeros",
    "extend_spectrum_asymptotically",
    "ThetaSamples",
    "compute_theta_samples",
    "refine_parameters",
    "theta_at",
    "fourier_invert_w",
    "recover_p",
    "assemble_q1",
    "q1_consistency_gap",
    "recover_q0",
    "recover_q0_conditional",
    "SolvabilityReport",
    "check_solvability",
    "InversionResult",
    "invert_spectra",
]


# ---------------------------------------------------------------------------
# parameter identification


def estimate_parameters(s0: Spectrum, s1: Spectrum,
                        cfg: ProblemConfig) -> ParameterEstimate:
    """Fit (omega, alpha0, alpha1) to the first-order eigenvalue asymptotics.

    The scaled deviations pi*n*(rho - anchor) follow a linear model in the
    three parameters with square-summable noise; a joint least-squares fit
    over all available indices replaces partial-limit extraction, which is
    ill posed on finite data.
    """
    rows, rhs = [], []
    for spec, j in ((s0, 0), (s1, 1)):
        if spec.j != j:
            raise DomainError(f"expected spectrum with j={j}, got j={spec.j}")
        for n in spec.indices():
            if n == 0:
                continue  # the scaled deviation is identically zero there
            a = anchor(n, j)
            rows.append([math.cos(a * cfg.a0),
                         math.sin(a * cfg.a1) if j == 0 else 0.0,
                         math.sin(a * cfg.a1) if j == 1 else 0.0])
            rhs.append(PI * n * (spec.value(n) - a))
    A = np.asarray(rows, dtype=float)
    b = np.asarray(rhs, dtype=np.complex128)
    if len(rows) < 3:
        raise DomainError("need eigenvalues at more than three indices")
    norms = np.linalg.norm(A, axis=0)
    names = ("cos(n*a0)", "sin(n*a1) [j=0]", "sin(n*a1) [j=1]")
    for k, nm in enumerate(norms):
        if nm < 1e-10 * math.sqrt(len(rows)):
            raise RankDeficiencyError(
                f"design column '{names[k]}' is numerically zero; the delays "
                "sample it degenerately")
    sol, _, rank, _ = np.linalg.lstsq(A.astype(np.complex128), b, rcond=None)
    if rank < 3:
        gram = (A.T @ A) / np.outer(norms, norms)
        off = np.unravel_index(np.argmax(np.abs(gram - np.eye(3))), gram.shape)
        raise RankDeficiencyError(
            f"design matrix rank {rank} < 3; columns '{names[off[0]]}' and "
            f"'{names[off[1]]}' are collinear")
    resid = float(np.linalg.norm(b - A @ sol))
    return ParameterEstimate.from_alphas(sol[0], sol[1], sol[2], resid)


# ---------------------------------------------------------------------------
# characteristic functions from zeros


def _sinc(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    out = np.where(small, 1.0 - z * z / 6.0, np.sin(zs) / zs)
    return out


@dataclass(frozen=True)
class CharFnFromZeros:
    """Entire characteristic function rebuilt from a finite set of zeros.

    Indices up to N_trunc carry the given zeros; all remaining factors are
    collapsed into the closed-form anchor tail, so the tail is represented
    without truncation bias.  Evaluating at an anchor beyond N_trunc returns
    the exact zero of the closed form.
    """

    j: int
    zeros: Spectrum
    N_trunc: int
    _idx: np.ndarray = field(repr=False, default=None)
    _z: np.ndarray = field(repr=False, default=None)
    _a: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        want = spectrum_indices(self.j, self.N_trunc)
        missing = [n for n in want if n not in self.zeros.entries]
        if missing:
            raise DomainError(
                f"zeros missing for indices {missing[:5]}... up to N_trunc")
        idx = np.asarray(want)
        object.__setattr__(self, "_idx", idx)
        object.__setattr__(self, "_z", np.asarray(
            [self.zeros.value(int(n)) for n in idx], dtype=np.complex128))
        object.__setattr__(self, "_a", np.asarray(
            [anchor(int(n), self.j) for n in idx], dtype=float))

    def __call__(self, rho):
        ra = np.atleast_1d(np.asarray(rho, dtype=np.complex128))
        diff_z = self._z[None, :] - ra[:, None]
        diff_a = self._a[None, :] - ra[:, None]
        near = np.abs(diff_a) < 0.3
        fold = near.any(axis=1)
        ratio = np.where(near, 1.0, diff_z / np.where(near, 1.0, diff_a))
        prod = np.prod(ratio, axis=1)
        out = np.empty(ra.shape, dtype=np.complex128)

        # plain points: closed-form tail times the finite correction
        plain = ~fold
        if plain.any():
            r = ra[plain]
            psi = PI * _sinc(r * PI) if self.j == 0 else np.cos(r * PI)
            out[plain] = psi * prod[plain]

        # near an anchor inside the truncation range: cancel the vanishing
        # denominator against the zero of the closed form analytically
        if fold.any():
            for i in np.nonzero(fold)[0]:
                k = int(np.argmin(np.abs(self._a - ra[i])))
                r = ra[i]
                u = r - self._a[k]
                m = int(self._idx[k])
                sgn = -1.0 if m % 2 == 0 else 1.0   # (-1)^(m+1)
                folded = sgn * PI * _sinc(PI * u)
                if self.j == 0:
                    folded = folded / r
                out[i] = folded * (self._z[k] - r) * prod[i]
        return out if np.ndim(rho) else complex(out[0])


def build_delta_from_zeros(z: Spectrum, N_trunc: int) -> CharFnFromZeros:
    """Wrap a spectrum as an evaluable characteristic function."""
    return CharFnFromZeros(z.j, z, N_trunc)


def extend_spectrum_asymptotically(s: Spectrum, est: ParameterEstimate,
                                   K: int, cfg: ProblemConfig) -> Spectrum:
    """Append asymptotically predicted eigenvalues for N < |n| <= K.

    Treating unknown far zeros as bare anchors leaves a slowly varying
    truncation error in the rebuilt characteristic function that the
    remainder formulas amplify by powers of rho near |rho| = N.  Filling the
    tail with the fitted first-order law removes the deterministic part of
    that error while using nothing but data-derived quantities.
    """
    alpha_j = est.alpha0 if s.j == 0 else est.alpha1
    entries = dict(s.entries)
    for n in spectrum_indices(s.j, K):
        if n in entries or n == 0:
            continue
        a = anchor(n, s.j)
        entries[n] = a + (est.omega * math.cos(a * cfg.a0)
                          + alpha_j * math.sin(a * cfg.a1)) / (PI * n)
    return Spectrum(s.j, entries, s.cutoff)


# ---------------------------------------------------------------------------
# entire remainders and their Fourier data


@dataclass(frozen=True)
class ThetaSamples:
    """Integer samples of the entire remainder of one characteristic fn."""

    j: int
    values: dict

    @property
    def N(self) -> int:
        return max(abs(n) for n in self.values)

    def arrays(self):
        ns = np.asarray(sorted(self.values))
        return ns, np.asarray([self.values[int(n)] for n in ns],
                              dtype=np.complex128)


def theta_at(d: CharFnFromZeros, est: ParameterEstimate, rho,
             cfg: ProblemConfig):
    """Entire remainder of the characteristic function at arbitrary rho."""
    ra = np.atleast_1d(np.asarray(rho, dtype=np.complex128))
    dv = np.asarray(d(ra))
    L0, L1 = PI - cfg.a0, PI - cfg.a1
    if d.j == 0:
        out = (ra ** 2 * dv - ra * np.sin(ra * PI)
               + est.omega * np.cos(ra * L0)
               - est.alpha0 * np.sin(ra * L1))
    else:
        out = (ra * dv - ra * np.cos(ra * PI)
               - est.omega * np.sin(ra * L0)
               - est.alpha1 * np.cos(ra * L1))
    return out if np.ndim(rho) else complex(out[0])


def compute_theta_samples(d: CharFnFromZeros, est: ParameterEstimate,
                          N: int, cfg: ProblemConfig) -> ThetaSamples:
    """Remainder samples at the integers |n| <= N (n = 0 included)."""
    ns = np.arange(-N, N + 1)
    vals = theta_at(d, est, ns.astype(np.complex128), cfg)
    return ThetaSamples(d.j, {int(n): complex(v) for n, v in zip(ns, vals)})


def refine_parameters(s0: Spectrum, s1: Spectrum, est: ParameterEstimate,
                      N: int, cfg: ProblemConfig,
                      rounds: int = 3) -> ParameterEstimate:
    """Defect-corrected re-fit of the asymptotic parameters.

    The plain regression treats the whole square-summable remainder as
    noise, and its finite-sample correlation with the regressors biases the
    fit at the few-1e-4 level, enough to leave visible kernel spikes at the
    support edges of the synthesized boundary functions.  Here the exact
    zero relations are used instead: the current reconstruction's boundary
    functions predict the transform term at every zero, that prediction is
    subtracted from the data, and the parameters are re-fit on what is left.
    Each round shrinks the un-modelled remainder and with it the bias.
    """
    from .forward import _cos_sin_transforms

    L0, L1 = PI - cfg.a0, PI - cfg.a1

    def zero_data(spec):
        ns = [n for n in spec.indices() if abs(n) <= N]
        rho = np.asarray([spec.value(n) for n in ns], dtype=np.complex128)
        par = np.asarray([(-1.0) ** n for n in ns])
        eps = rho - np.asarray([anchor(n, spec.j) for n in ns])
        return rho, par, eps

    rho0, par0, eps0 = zero_data(s0)
    rho1, par1, eps1 = zero_data(s1)

    A = np.zeros((rho0.size + rho1.size, 3), dtype=np.complex128)
    A[:rho0.size, 0] = np.cos(rho0 * L0)
    A[:rho0.size, 1] = -np.sin(rho0 * L1)
    A[rho0.size:, 0] = np.sin(rho1 * L0)
    A[rho0.size:, 2] = np.cos(rho1 * L1)

    params = est
    for _ in range(rounds):
        d0, d1 = _tail_extended_products(s0, s1, params, N, cfg)
        t0 = compute_theta_samples(d0, params, N, cfg)
        t1 = compute_theta_samples(d1, params, N, cfg)
        wt = fourier_invert_w(t0, t1, cfg)
        c00, _ = _cos_sin_transforms(wt.w00, rho0)
        _, s01 = _cos_sin_transforms(wt.w01, rho0)
        _, s10 = _cos_sin_transforms(wt.w10, rho1)
        c11, _ = _cos_sin_transforms(wt.w11, rho1)
        y0 = rho0 * par0 * np.sin(PI * eps0) + (c00 + s01)
        y1 = -rho1 * par1 * np.sin(PI * eps1) - (s10 + c11)
        b = np.concatenate([y0, y1])
        sol, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
        params = ParameterEstimate.from_alphas(sol[0], sol[1], sol[2],
                                               est.residual_l2)
    return params


def _series_on_grid(ts: ThetaSamples, x: np.ndarray):
    """Cosine and sine syntheses of the remainder samples on a grid."""
    ns, vals = ts.arrays()
    cos_part = (np.cos(np.outer(x, ns)) @ vals) / PI
    sin_part = (np.sin(np.outer(x, ns)) @ vals) / PI
    return cos_part, sin_part


def fourier_invert_w(t0: ThetaSamples, t1: ThetaSamples, cfg: ProblemConfig,
                     return_diagnostics: bool = False):
    """Boundary functions from the remainder samples by Fourier synthesis.

    The raw truncated series is used (no windowing, to keep the moment
    identities intact); each channel is then restricted to its natural
    support [0, pi - a_nu].  The mass the restriction discards feeds the
    solvability type test and is returned with the diagnostics.
    """
    if t0.j != 0 or t1.j != 1:
        raise DomainError("pass the j=0 samples first and the j=1 second")
    a = {0: cfg.a0, 1: cfg.a1}
    full_grid = np.linspace(0.0, PI, cfg.samples(0.0, PI))
    c0, s0 = _series_on_grid(t0, full_grid)
    c1, s1 = _series_on_grid(t1, full_grid)
    full = {
        (0, 0): SampledFunction(0.0, PI, c0),
        (0, 1): SampledFunction(0.0, PI, s0),
        (1, 0): SampledFunction(0.0, PI, s1),
        (1, 1): SampledFunction(0.0, PI, c1),
    }

    restricted = {}
    for (j, nu), fn in full.items():
        lo, hi = 0.0, PI - a[nu]
        grid = np.linspace(lo, hi, cfg.samples(lo, hi))
        cs, ss = _series_on_grid(t0 if j == 0 else t1, grid)
        vals = cs if nu == j else ss
        restricted[(j, nu)] = SampledFunction(lo, hi, vals)

    omega = integrate(restricted[(0, 0)], 0.0, PI - cfg.a0)
    w01 = restricted[(0, 1)]
    xw = SampledFunction(w01.lo, w01.hi, w01.values * w01.grid)
    alpha0 = integrate(xw, 0.0, PI - cfg.a1) / (cfg.a1 - PI)
    alpha1 = -integrate(restricted[(1, 1)], 0.0, PI - cfg.a1)

    wt = WTable(restricted[(0, 0)], restricted[(0, 1)],
                restricted[(1, 0)], restricted[(1, 1)],
                complex(omega), complex(alpha0), complex(alpha1))
    if not return_diagnostics:
        return wt
    overall = sum(
        abs(integrate(fn.map(lambda v: np.abs(v) ** 2), fn.lo, fn.hi))
        for fn in full.values())
    diag = {"full_profiles": full,
            "overall_mass": overall,
            "tail_mass": {key: _tail_fraction(full[key], PI - a[key[1]],
                                              overall)
                          for key in full}}
    return wt, diag


def _tail_fraction(fn: SampledFunction, edge: float, overall: float,
                   guard: float = None):
    """Squared mass of the profile beyond the support edge, relative to the
    combined mass of all four channels.

    Normalizing by the overall mass keeps channels whose true content is
    zero from dividing noise by noise.  A guard band of a few series
    wavelengths past the edge keeps the inevitable truncation ringing of the
    raw synthesis out of the measure.
    """
    if guard is None:
        guard = min(0.15, 0.5 * (PI - edge))
    if overall < 1e-30:
        return 0.0
    start = min(edge + guard, fn.hi)
    tail = abs(integrate(fn.map(lambda v: np.abs(v) ** 2), start, fn.hi))
    return float(tail / overall)


# ---------------------------------------------------------------------------
# potentials from the boundary functions


def recover_p(wt: WTable, cfg: ProblemConfig) -> SampledFunction:
    """Derivative of the second potential from the linear subsystem.

    Both halves of [a1, pi] are read off sums and differences of the two
    a1-channel boundary functions; no integral equation is involved.
    """
    a1 = cfg.a1
    mid = 0.5 * (a1 + PI)
    x = np.linspace(a1, PI, cfg.samples(a1, PI))
    lo_mask = x <= mid
    argl = np.clip(PI + a1 - 2.0 * x, 0.0, PI - a1)
    argr = np.clip(2.0 * x - PI - a1, 0.0, PI - a1)
    vals = np.where(
        lo_mask,
        2.0 * (wt.w11(argl) + wt.w01(argl)),
        2.0 * (wt.w11(argr) - wt.w01(argr)))
    return SampledFunction(a1, PI, vals)


def assemble_q1(p: SampledFunction, est: ParameterEstimate,
                cfg: ProblemConfig = None) -> SampledFunction:
    """Second potential from its derivative and the boundary parameters.

    Primary form: endpoint value alpha0 + alpha1 plus the running integral
    of p.  Cross-checked against the mean-zero projection of p's
    antiderivative; a discrepancy well above tolerance flags inconsistent
    input data (warning, not an error, since truncated reconstructions are
    mildly inconsistent by nature).
    """
    prim = p.antiderivative()
    q1 = SampledFunction(p.lo, p.hi,
                         (est.alpha0 + est.alpha1) + prim.values)
    gap = q1_consistency_gap(p, est)
    tol = (cfg.tolerance if cfg is not None else 1e-8)
    scale = max(1.0, float(np.max(np.abs(q1.values))))
    if gap > 10.0 * tol * scale:
        warnings.warn(
            f"mean-zero cross check differs from the endpoint form by "
            f"{gap:.3e}; input data is not perfectly consistent")
    return q1


def q1_consistency_gap(p: SampledFunction, est: ParameterEstimate) -> float:
    """Sup distance between the two assembly formulas for q1."""
    prim = p.antiderivative()
    direct = (est.alpha0 + est.alpha1) + prim.values
    tailint = prim.values[-1] - prim.values  # integral of p from x to pi
    mz = SampledFunction(p.lo, p.hi, tailint)
    projected = integrate(mz, p.lo, p.hi) / (p.hi - p.lo) - tailint
    return float(np.max(np.abs(direct - projected)))


def _v_from_w(wt: WTable, cfg: ProblemConfig, x: np.ndarray) -> np.ndarray:
    """Quadratic correction on the middle window from the boundary data."""
    a0 = cfg.a0
    mid = 0.5 * (PI + a0)
    n_half = cfg.samples(a0, mid)
    zeta = np.linspace(a0, mid, n_half)
    g_minus = 2.0 * (wt.w00(np.clip(PI + a0 - 2 * zeta, 0, PI - a0))
                     - wt.w10(np.clip(PI + a0 - 2 * zeta, 0, PI - a0)))
    Wm = SampledFunction(a0, mid, g_minus).antiderivative()

    tau = np.linspace(mid, PI, cfg.samples(mid, PI))
    g_plus = 2.0 * (wt.w00(np.clip(2 * tau - PI - a0, 0, PI - a0))
                    + wt.w10(np.clip(2 * tau - PI - a0, 0, PI - a0)))
    Gp = SampledFunction(mid, PI, g_plus)
    Tp = Gp.antiderivative()

    out = np.zeros(x.size, dtype=np.complex128)
    for i, xi in enumerate(x):
        lo = xi + 0.5 * a0
        if lo >= PI - 1e-14:
            continue
        r_plus = complex(Tp.values[-1]) - complex(Tp(lo))
        first = complex(Wm(min(xi - 0.5 * a0, mid))) * r_plus
        # remaining integral of G+(tau) * Wm(tau - x + a0/2) over [lo, pi]
        h = Gp.h
        i0 = int(math.ceil((lo - mid) / h - 1e-12))
        pts = np.concatenate([[lo], tau[i0:]]) if tau[i0] > lo + 1e-14 \
            else tau[i0:]
        gv = Gp(pts) * Wm(np.clip(pts - xi + 0.5 * a0, a0, mid))
        second = np.sum(0.5 * (gv[1:] + gv[:-1]) * np.diff(pts))
        out[i] = 0.5 * (first - second)
    return out


def recover_q0(wt: WTable, cfg: ProblemConfig) -> SampledFunction:
    """First potential from the nonlinear subsystem (large-delay regime).

    The two outer quarters come straight from sums and differences of the
    a0-channel boundary functions; on the middle window the quadratic
    correction is subtracted.  Requires the delay regime in which that
    correction is data-determined.
    """
    if not cfg.full_inversion:
        raise DomainError(
            "a0 < 2*pi/5: the middle window is not determined by the "
            "spectra alone; use recover_q0_conditional with prior data")
    a0 = cfg.a0
    mid = 0.5 * (PI + a0)
    x = np.linspace(a0, PI, cfg.samples(a0, PI))
    argl = np.clip(PI + a0 - 2.0 * x, 0.0, PI - a0)
    argr = np.clip(2.0 * x - PI - a0, 0.0, PI - a0)
    vals = np.where(
        x <= mid,
        2.0 * (wt.w00(argl) - wt.w10(argl)),
        2.0 * (wt.w00(argr) + wt.w10(argr)))
    if a0 < 0.5 * PI:
        window = (x > 1.5 * a0 + 1e-14) & (x < PI - 0.5 * a0 - 1e-14)
        vals[window] -= 2.0 * _v_from_w(wt, cfg, x[window])
    return SampledFunction(a0, PI, vals)


# ---------------------------------------------------------------------------
# solvability


@dataclass(frozen=True)
class SolvabilityReport:
    """Verdicts of the necessary-and-sufficient solvability conditions."""

    asymptotics_ok: bool
    asymptotics_residual: float
    type_ok: dict
    support_bound: dict
    tail_fraction: dict
    symmetry_ok: dict
    gamma_residual: dict
    estimate: ParameterEstimate

    @property
    def accepted(self) -> bool:
        return (self.asymptotics_ok
                and all(self.type_ok.values())
                and all(self.symmetry_ok.values()))

    def summary_lines(self):
        yield f"asymptotics_ok = {self.asymptotics_ok} (residual {self.asymptotics_residual:.3g})"
        for key in sorted(self.type_ok):
            yield (f"type_ok[{key}] = {self.type_ok[key]} "
                   f"(tail fraction {self.tail_fraction[key]:.3g}, "
                   f"support bound {self.support_bound[key]:.4f})")
        for key in sorted(self.symmetry_ok):
            yield f"symmetry_ok[{key}] = {self.symmetry_ok[key]}"
        for j in sorted(self.gamma_residual):
            yield f"gamma_residual[{j}] = {self.gamma_residual[j]:.3g}"
        yield f"accepted = {self.accepted}"


_TYPE_THRESHOLD = 1e-3
_ASYMPTOTIC_RESIDUAL_GATE = 5.0
_TAIL_EXTENSION_FACTOR = 4


def _tail_extended_products(s0, s1, est, N, cfg):
    K = _TAIL_EXTENSION_FACTOR * N
    d0 = build_delta_from_zeros(
        extend_spectrum_asymptotically(s0, est, K, cfg), K)
    d1 = build_delta_from_zeros(
        extend_spectrum_asymptotically(s1, est, K, cfg), K)
    return d0, d1


def _support_bound(fn: SampledFunction, budget: float) -> float:
    """Smallest L with squared mass beyond L under the given budget."""
    dens = np.abs(fn.values) ** 2
    h = fn.h
    from_right = np.concatenate(
        [[0.0], np.cumsum(0.5 * (dens[::-1][1:] + dens[::-1][:-1]) * h)])[::-1]
    if from_right[0] < 1e-30:
        return fn.lo
    k = np.argmax(from_right <= budget)
    return float(fn.grid[k])


def _gamma_residuals(d0, d1, est, N, cfg):
    lo, hi = max(4, N // 3), max(6, (3 * N) // 4)
    ms = np.asarray([m for m in range(lo, hi + 1)] +
                    [-m for m in range(lo, hi + 1)])
    half = ms + 0.5
    th0 = np.asarray(theta_at(d0, est, half.astype(np.complex128), cfg))
    g0 = np.mean(th0 * np.where(ms % 2 == 0, 1.0, -1.0))
    th1 = np.asarray(theta_at(d1, est, ms.astype(np.complex128), cfg))
    g1 = np.mean(th1 * np.where(ms % 2 == 0, 1.0, -1.0))
    return {0: complex(g0), 1: complex(g1)}


def check_solvability(s0: Spectrum, s1: Spectrum, cfg: ProblemConfig,
                      N: int = None) -> SolvabilityReport:
    """Test a spectra pair against the solvability characterization.

    Condition (i) is the asymptotic form, gated loosely through the fit
    residual.  Condition (ii), the exponential-type bound, is tested in
    x-space: the even/odd remainder combinations are synthesized on [0, pi]
    and the relative squared mass past each support edge (plus a small
    ringing guard band) must stay below 1e-3.  Parity of the combinations
    and the spurious-constant residuals are reported alongside.
    """
    raw = estimate_parameters(s0, s1, cfg)
    if N is None:
        N = min(s0.N, s1.N)
    est = refine_parameters(s0, s1, raw, N, cfg)
    d0, d1 = _tail_extended_products(s0, s1, est, N, cfg)
    t0 = compute_theta_samples(d0, est, N, cfg)
    t1 = compute_theta_samples(d1, est, N, cfg)
    _, diag = fourier_invert_w(t0, t1, cfg, return_diagnostics=True)

    type_ok, tails, bounds = {}, {}, {}
    for key, frac in diag["tail_mass"].items():
        tails[key] = frac
        type_ok[key] = frac < _TYPE_THRESHOLD
        bounds[key] = _support_bound(diag["full_profiles"][key],
                                     _TYPE_THRESHOLD * diag["overall_mass"])

    symmetry_ok = {}
    for ts, j in ((t0, 0), (t1, 1)):
        ns, vals = ts.arrays()
        scale = max(1.0, float(np.max(np.abs(vals))))
        look = dict(zip((int(n) for n in ns), vals))
        for nu in (0, 1):
            sgn = (-1.0) ** (j + nu)
            worst = 0.0
            for n in range(1, ts.N + 1):
                g_p = look[n] + sgn * look[-n]
                g_m = look[-n] + sgn * look[n]
                worst = max(worst, abs(g_m - sgn * g_p))
            symmetry_ok[(j, nu)] = worst <= 1e-9 * scale

    gammas = _gamma_residuals(d0, d1, est, N, cfg)
    deviations = [abs(PI * n * (s.value(n) - anchor(n, s.j)))
                  for s in (s0, s1) for n in s.indices() if n != 0]
    asym_ok = (est.residual_l2 < _ASYMPTOTIC_RESIDUAL_GATE
               and max(deviations) < 50.0)
    return SolvabilityReport(asym_ok, est.residual_l2, type_ok, bounds,
                             tails, symmetry_ok, gammas, est)


# ---------------------------------------------------------------------------
# conditional recovery for the short-delay regime


def _prefix_eval(f: SampledFunction):
    # running integral from f.lo, saturating outside the domain
    prim = f.antiderivative()
    return lambda s: prim(np.clip(s, f.lo, f.hi))


def recover_q0_conditional(wt: WTable, q0_known: SampledFunction,
                           omega0: complex, cfg: ProblemConfig) -> SampledFunction:
    """Recover q0 for delays below the unconditional threshold.

    Prior data: q0 on (3*a0/2, pi/2 + a0/4) and the integral of q0 over
    (pi/2 + a0/4, pi - a0).  The outer quarters and the locality window come
    from the boundary data alone; the remaining stretch satisfies a linear
    second-kind integral equation solved by trapezoid collocation, after
    which the last unknown piece follows by direct substitution.
    """
    a0 = cfg.a0
    if not (PI / 3.0 - 1e-12 <= a0 < 2.0 * PI / 5.0):
        raise DomainError(
            f"conditional recovery applies for a0 in [pi/3, 2*pi/5); got {a0}")
    lo_known, hi_known = 1.5 * a0, 0.5 * PI + 0.25 * a0
    if q0_known.lo > lo_known + 1e-9 or q0_known.hi < hi_known - 1e-9:
        raise DomainError(
            f"q0_known must cover [{lo_known:.6f}, {hi_known:.6f}]")

    mid = 0.5 * (PI + a0)

    def F(xv):
        xv = np.asarray(xv, dtype=float)
        argl = np.clip(PI + a0 - 2.0 * xv, 0.0, PI - a0)
        argr = np.clip(2.0 * xv - PI - a0, 0.0, PI - a0)
        return np.where(xv <= mid,
                        2.0 * (wt.w00(argl) - wt.w10(argl)),
                        2.0 * (wt.w00(argr) + wt.w10(argr)))

    # outer quarters, straight from the boundary data
    g1 = np.linspace(a0, 1.5 * a0, cfg.samples(a0, 1.5 * a0))
    q_left = SampledFunction(a0, 1.5 * a0, F(g1))
    g4 = np.linspace(PI - 0.5 * a0, PI, cfg.samples(PI - 0.5 * a0, PI))
    q_right = SampledFunction(PI - 0.5 * a0, PI, F(g4))

    # known low piece of q0 on (a0, pi/2 + a0/4]: recovered + prior data
    gk = np.linspace(a0, hi_known, cfg.samples(a0, hi_known))
    low_vals = np.where(gk <= 1.5 * a0 + 1e-12,
                        q_left.eval_zero_extended(np.minimum(gk, 1.5 * a0)),
                        q0_known.eval_zero_extended(gk))
    p1_low = SampledFunction(a0, hi_known, low_vals)
    H = _prefix_eval(p1_low)          # prefix of p1 over the known low piece

    R2 = _tail_prefix(q_right)        # integral of q0 from y to pi, y >= pi-a0/2

    # the known part of the running-sum parameter
    gk2 = np.linspace(lo_known, hi_known, cfg.samples(lo_known, hi_known))
    omega1 = complex(omega0) + complex(
        np.trapezoid(q0_known.eval_zero_extended(gk2), x=gk2))

    # collocation grid on the unknown stretch
    u_lo, u_hi = hi_known, PI - a0
    M = cfg.samples(u_lo, u_hi)
    xs = np.linspace(u_lo, u_hi, M)
    hgrid = xs[1] - xs[0]

    def R1(x, tv):
        return H(np.minimum(x - 0.5 * a0, hi_known)) - H(tv - x + 0.5 * a0)

    def R3_row(x, tv):
        out = np.empty(tv.size, dtype=np.complex128)
        for k, t in enumerate(tv):
            lo = max(x, t) + 0.5 * a0
            hi = PI - 0.5 * a0
            if lo >= hi - 1e-14:
                out[k] = 0.0
                continue
            m = cfg.samples(lo, hi)
            tt = np.linspace(lo, hi, m)
            out[k] = np.trapezoid(R1(x, tt) * R2(tt + 0.5 * a0), x=tt)
        return out

    # F2 on the region feeding the substitution formula
    def F2(xv):
        out = np.empty(xv.size, dtype=np.complex128)
        for k, x in enumerate(xv):
            lo = x + 0.5 * a0
            m = cfg.samples(lo, PI)
            tt = np.linspace(lo, PI, m)
            inner = H(np.full(tt.size, 1.5 * a0)) - H(tt - x + 0.5 * a0)
            vals = q_right.eval_zero_extended(tt) * inner
            out[k] = F(np.asarray([x]))[0] - np.trapezoid(vals, x=tt)
        return out

    def F1(xv):
        out = np.empty(xv.size, dtype=np.complex128)
        r2_edge = R2(np.asarray([PI - 0.5 * a0]))[0]
        for k, x in enumerate(xv):
            lo, hi = PI - x, 1.5 * a0
            m = cfg.samples(min(lo, hi), max(lo, hi))
            tt = np.linspace(lo, hi, m)
            vals = R2(x + tt - 0.5 * a0) * p1_low.eval_zero_extended(tt)
            first = np.trapezoid(vals, x=tt)
            second = r2_edge * (H(np.asarray([PI - x]))[0]
                                - H(np.asarray([x - 0.5 * a0]))[0])
            out[k] = F(np.asarray([x]))[0] + first + second
        return out

    # assemble the collocation system
    f2_grid_lo = 2.0 * a0
    f2_grid = np.linspace(f2_grid_lo, PI - 0.5 * a0,
                          cfg.samples(f2_grid_lo, PI - 0.5 * a0))
    F2_vals = F2(f2_grid)
    F2_fn = SampledFunction(f2_grid_lo, PI - 0.5 * a0, F2_vals)

    F1_vals = F1(xs)
    F3_vals = np.empty(M, dtype=np.complex128)
    R3_diag = np.empty(M, dtype=np.complex128)
    K = np.zeros((M, M), dtype=np.complex128)
    for i, x in enumerate(xs):
        lo = x + 0.5 * a0
        hi = PI - 0.5 * a0
        m = cfg.samples(lo, hi)
        tt = np.linspace(lo, hi, m)
        F3_vals[i] = F1_vals[i] - np.trapezoid(
            R1(x, tt) * F2_fn.eval_zero_extended(tt), x=tt)
        row = R3_row(x, xs)
        R3_diag[i] = row[i]
        # integral from x to the right end with trapezoid weights
        wrow = np.zeros(M)
        if i < M - 1:
            wrow[i:] = hgrid
            wrow[i] = wrow[-1] = 0.5 * hgrid
        K[i, :] = wrow * (R3_diag[i] - row)

    F4_vals = F3_vals + omega1 * R3_diag
    rhs = np.empty(M, dtype=np.complex128)
    for i, x in enumerate(xs):
        lo, hi = 1.5 * a0, PI - x + 0.5 * a0
        m = cfg.samples(lo, max(hi, lo + 1e-9))
        tt = np.linspace(lo, hi, m)
        rhs[i] = F4_vals[i] + np.trapezoid(
            R2(x + tt - 0.5 * a0) * p1_low.eval_zero_extended(tt), x=tt)

    system = np.eye(M, dtype=np.complex128) + K
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficiencyError(
            f"collocation matrix is numerically singular (cond ~ {cond:.3g})")
    p1_solved = np.linalg.solve(system, rhs)
    p1_mid = SampledFunction(u_lo, u_hi, p1_solved)

    # full prefix of p1 over (3a0/2, pi - a0) for the substitution step
    def p1_full(s):
        s = np.asarray(s, dtype=float)
        low = p1_low.eval_zero_extended(np.clip(s, a0, hi_known))
        high = p1_mid.eval_zero_extended(np.clip(s, u_lo, u_hi))
        return np.where(s <= u_lo, low, high)

    gfull = np.linspace(1.5 * a0, u_hi, cfg.samples(1.5 * a0, u_hi))
    Hfull = SampledFunction(1.5 * a0, u_hi, p1_full(gfull)).antiderivative()

    # last unknown piece by direct substitution
    g5 = np.linspace(f2_grid_lo, PI - 0.5 * a0,
                     cfg.samples(f2_grid_lo, PI - 0.5 * a0))
    p2_vals = F2_fn(g5) - R2(g5 + 0.5 * a0) * Hfull.eval_zero_extended(
        np.clip(g5 - 0.5 * a0, 1.5 * a0, u_hi))
    p2_fn = SampledFunction(f2_grid_lo, PI - 0.5 * a0, p2_vals)

    # locality window: direct formula from data already in hand
    g6 = np.linspace(PI - a0, 2.0 * a0, cfg.samples(PI - a0, 2.0 * a0))
    Hq = _prefix_eval(p1_low)
    v6 = np.empty(g6.size, dtype=np.complex128)
    for k, x in enumerate(g6):
        lo = x + 0.5 * a0
        m = cfg.samples(lo, PI)
        tt = np.linspace(lo, PI, m)
        inner = Hq(np.full(tt.size, x - 0.5 * a0)) - Hq(tt - x + 0.5 * a0)
        v6[k] = 0.5 * np.trapezoid(
            q_right.eval_zero_extended(tt) * inner, x=tt)
    q_mid_vals = F(g6) - 2.0 * v6
    q_mid = SampledFunction(PI - a0, 2.0 * a0, q_mid_vals)

    # stitch everything on the canonical grid
    xg = np.linspace(a0, PI, cfg.samples(a0, PI))
    out = np.empty(xg.size, dtype=np.complex128)
    for k, x in enumerate(xg):
        if x <= 1.5 * a0:
            out[k] = q_left(min(x, q_left.hi))
        elif x <= hi_known:
            out[k] = q0_known(x)
        elif x < PI - a0:
            out[k] = p1_mid(x)
        elif x <= 2.0 * a0:
            out[k] = q_mid(x)
        elif x < PI - 0.5 * a0:
            out[k] = p2_fn(x)
        else:
            out[k] = q_right(x)
    return SampledFunction(a0, PI, out)


def _tail_prefix(f: SampledFunction):
    prim = f.antiderivative()
    top = complex(prim.values[-1])

    def tail(y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, f.lo, f.hi)
        vals = top - prim.eval_zero_extended(yc)
        return np.where(y >= f.hi, 0.0, vals)
    return tail


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class InversionResult:
    q0: SampledFunction | None
    q1: SampledFunction
    p: SampledFunction
    wt: WTable
    estimate: ParameterEstimate
    report: SolvabilityReport


def invert_spectra(s0: Spectrum, s1: Spectrum, cfg: ProblemConfig,
                   N: int = None, force: bool = False) -> InversionResult | SolvabilityReport:
    """Run the whole constructive inversion on a spectra pair.

    Returns the reconstruction together with the solvability report.  When
    the report rejects the data and force is not set, only the report is
    returned.
    """
    if N is None:
        N = min(s0.N, s1.N)
    report = check_solvability(s0, s1, cfg, N)
    if not report.accepted and not force:
        return report
    est = report.estimate
    d0, d1 = _tail_extended_products(s0, s1, est, N, cfg)
    t0 = compute_theta_samples(d0, est, N, cfg)
    t1 = compute_theta_samples(d1, est, N, cfg)
    wt = fourier_invert_w(t0, t1, cfg)
    p = recover_p(wt, cfg)
    q1 = assemble_q1(p, est, cfg)
    q0 = recover_q0(wt, cfg) if cfg.full_inversion else None
    return InversionResult(q0, q1, p, wt, est, report)
