"""Shared domain types, configuration validation and quadrature utilities.

Everything downstream (kernel construction, characteristic functions, the
inverse pipeline) works on the complex-valued sampled functions and grids
defined here.  All arithmetic is complex throughout; potentials and
eigenvalues are allowed to be complex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

PI = math.pi

__all__ = [
    "PI",
    "DelayPencilError",
    "ConfigError",
    "DomainError",
    "ConvergenceError",
    "RankDeficiencyError",
    "ProblemConfig",
    "validate_config",
    "SampledFunction",
    "integrate",
    "fourier_integral",
    "PotentialPair",
    "validate_pair",
    "Spectrum",
    "anchor",
    "spectrum_indices",
    "ParameterEstimate",
    "estimate_from_potentials",
]


class DelayPencilError(Exception):
    """Base class for all library errors."""


class ConfigError(DelayPencilError, ValueError):
    """A problem configuration violates the standing delay assumptions."""


class DomainError(DelayPencilError, ValueError):
    """An evaluation or integration range left the function's domain."""


class ConvergenceError(DelayPencilError, RuntimeError):
    """An iterative solve exhausted its budget or lost a root."""


class RankDeficiencyError(DelayPencilError, RuntimeError):
    """A least-squares design matrix is numerically rank deficient."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ProblemConfig:
    """Delays and numerical knobs for one problem instance.

    a0 is the delay of the term free of the spectral parameter, a1 the delay
    of the term linear in it.  grid_size counts samples per unit length;
    tolerance is the convergence / identity-check target.
    """

    a0: float
    a1: float
    grid_size: int = 512
    tolerance: float = 1e-8

    @property
    def full_inversion(self) -> bool:
        """True when the delay a0 is large enough for unconditional recovery."""
        return self.a0 >= 2.0 * PI / 5.0 - 1e-12

    def samples(self, lo: float, hi: float) -> int:
        """Number of grid nodes used on [lo, hi] at this resolution."""
        return max(2, int(round((hi - lo) * self.grid_size)) + 1)


def validate_config(cfg: ProblemConfig) -> ProblemConfig:
    """Check the standing assumptions on the delays and return cfg unchanged.

    Raises ConfigError naming the violated inequality.  Idempotent.
    """
    slack = 1e-12
    if not (PI / 3.0 - slack <= cfg.a0 < PI):
        raise ConfigError(
            f"a0 range violated: need pi/3 <= a0 < pi, got a0={cfg.a0!r}")
    if not (PI / 2.0 - slack <= cfg.a1 < PI):
        raise ConfigError(
            f"a1 range violated: need pi/2 <= a1 < pi, got a1={cfg.a1!r}")
    if cfg.a0 + cfg.a1 < PI - slack:
        raise ConfigError(
            f"a0+a1 < pi: got a0+a1={cfg.a0 + cfg.a1!r}; "
            "this regime requires a separate treatment and is unsupported")
    if cfg.grid_size <= 0:
        raise ConfigError(f"grid_size must be positive, got {cfg.grid_size!r}")
    if cfg.tolerance <= 0:
        raise ConfigError(f"tolerance must be positive, got {cfg.tolerance!r}")
    return cfg


# ---------------------------------------------------------------------------
# sampled functions on uniform grids


@dataclass(frozen=True)
class SampledFunction:
    """Complex samples on a uniform grid over [lo, hi], endpoints included.

    Interpolation between nodes is linear; at a node the stored sample is
    returned exactly.  Instances are immutable and safe to share.
    """

    lo: float
    hi: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 2:
            raise DomainError("SampledFunction needs a 1-D array of >= 2 samples")
        if not self.hi > self.lo:
            raise DomainError(f"empty domain [{self.lo}, {self.hi}]")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @classmethod
    def from_callable(cls, fn, lo: float, hi: float, cfg: ProblemConfig) -> "SampledFunction":
        x = np.linspace(lo, hi, cfg.samples(lo, hi))
        return cls(lo, hi, np.asarray(fn(x), dtype=np.complex128) * np.ones_like(x))

    @classmethod
    def constant(cls, value, lo: float, hi: float, cfg: ProblemConfig) -> "SampledFunction":
        return cls(lo, hi, np.full(cfg.samples(lo, hi), complex(value)))

    def __call__(self, x):
        """Evaluate by linear interpolation; x may be scalar or array."""
        xa = np.asarray(x, dtype=float)
        eps = 1e-9 * (self.hi - self.lo)
        if np.any(xa < self.lo - eps) or np.any(xa > self.hi + eps):
            raise DomainError(
                f"evaluation outside [{self.lo}, {self.hi}]: "
                f"range [{xa.min()}, {xa.max()}]")
        xc = np.clip(xa, self.lo, self.hi)
        out = np.interp(xc, self.grid, self.values)
        return out if xa.ndim else complex(out)

    def eval_zero_extended(self, x):
        """Evaluate, treating the function as zero outside its domain."""
        xa = np.asarray(x, dtype=float)
        xc = np.clip(xa, self.lo, self.hi)
        out = np.interp(xc, self.grid, self.values)
        out = np.where((xa < self.lo) | (xa > self.hi), 0.0, out)
        return out if xa.ndim else complex(out)

    def antiderivative(self) -> "SampledFunction":
        """Cumulative trapezoid prefix from lo (exact for the interpolant)."""
        acc = np.empty(self.n, dtype=np.complex128)
        acc[0] = 0.0
        np.cumsum((self.values[1:] + self.values[:-1]) * (0.5 * self.h), out=acc[1:])
        return SampledFunction(self.lo, self.hi, acc)

    def map(self, fn) -> "SampledFunction":
        return SampledFunction(self.lo, self.hi, fn(self.values))


def _simpson_uniform(vals: np.ndarray, h: float) -> complex:
    """Composite Simpson on uniformly spaced samples (complex safe).

    An odd trailing interval is handled with the three-point end rule so the
    result stays fourth order for smooth data.
    """
    m = vals.size - 1
    if m <= 0:
        return 0.0 + 0.0j
    if m == 1:
        return complex(0.5 * h * (vals[0] + vals[1]))
    total = 0.0 + 0.0j
    pairs = m // 2
    if pairs:
        k = 2 * pairs
        total += (h / 3.0) * (vals[0] + vals[k]
                              + 4.0 * vals[1:k:2].sum()
                              + 2.0 * vals[2:k - 1:2].sum())
    if m % 2:
        # last cell via the quadratic through the final three nodes
        total += (h / 12.0) * (-vals[-3] + 8.0 * vals[-2] + 5.0 * vals[-1])
    return complex(total)


def integrate(f: SampledFunction, lo: float, hi: float):
    """Definite integral of f over [lo, hi] (lo > hi negates).

    Whole grid cells are integrated with composite Simpson; fractional end
    pieces use the trapezoid rule on interpolated endpoint values.
    """
    if lo > hi:
        return -integrate(f, hi, lo)
    eps = 1e-9 * (f.hi - f.lo)
    if lo < f.lo - eps or hi > f.hi + eps:
        raise DomainError(
            f"integration range [{lo}, {hi}] outside domain [{f.lo}, {f.hi}]")
    lo = min(max(lo, f.lo), f.hi)
    hi = min(max(hi, f.lo), f.hi)
    if hi - lo <= 0:
        return 0.0 + 0.0j
    h = f.h
    i0 = int(math.ceil((lo - f.lo) / h - 1e-12))
    i1 = int(math.floor((hi - f.lo) / h + 1e-12))
    x0 = f.lo + i0 * h
    x1 = f.lo + i1 * h
    if i1 < i0:  # both endpoints inside a single cell
        return complex(0.5 * (hi - lo) * (f(lo) + f(hi)))
    total = _simpson_uniform(f.values[i0:i1 + 1], h)
    if x0 - lo > 1e-14:
        total += 0.5 * (x0 - lo) * (f(lo) + f.values[i0])
    if hi - x1 > 1e-14:
        total += 0.5 * (hi - x1) * (f.values[i1] + f(hi))
    return complex(total)


# phi0(z) = (e^z - 1)/z, phi1(z) = (e^z - 1 - z)/z^2, stable near z = 0
_PHI_SWITCH = 0.1


def _phi01(z: np.ndarray):
    z = np.asarray(z, dtype=np.complex128)
    small = np.abs(z) < _PHI_SWITCH
    zs = np.where(small, 0.0, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.exp(z)
        p0 = np.where(small, 0.0, (e - 1.0) / np.where(small, 1.0, zs))
        p1 = np.where(small, 0.0, (e - 1.0 - z) / np.where(small, 1.0, zs * zs))
    if np.any(small):
        t = z[small] if z.ndim else z
        # series through z^6; next term is below 1e-12 at |z| = 0.1
        s0 = 1.0
        s1 = 0.5
        term = np.ones_like(t)
        fact = 1.0
        for k in range(1, 8):
            term = term * t
            fact *= k + 1
            s0 = s0 + term / fact
            s1 = s1 + term / (fact * (k + 2))
        if z.ndim:
            p0[small] = s0
            p1[small] = s1
        else:
            p0 = s0
            p1 = s1
    return p0, p1


def fourier_integral(f: SampledFunction, rho):
    """Integral of f(x) * exp(i*rho*x) over the whole domain of f.

    Exact for the stored piecewise-linear interpolant at any rho (Filon
    trapezoid), so the accuracy does not degrade with oscillation frequency.
    rho may be complex, scalar or array; the result matches its shape.
    """
    ra = np.atleast_1d(np.asarray(rho, dtype=np.complex128))
    h = f.h
    x = f.grid[:-1]
    w0 = f.values[:-1]
    dw = f.values[1:] - f.values[:-1]
    z = 1j * ra * h
    p0, p1 = _phi01(z)
    ph = np.exp(1j * np.outer(ra, x))
    out = h * (p0 * (ph @ w0) + p1 * (ph @ dw))
    return out if np.ndim(rho) else complex(out[0])


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialPair:
    """The two coefficients of the pencil and the derivative of the second.

    q0 lives on [a0, pi] (square integrable), q1 on [a1, pi] with one weak
    derivative p; q1 must integrate to zero over [a1, pi].  Both potentials
    are understood to vanish to the left of their delay.
    """

    q0: SampledFunction
    q1: SampledFunction
    p: SampledFunction

    @classmethod
    def from_callables(cls, cfg: ProblemConfig, q0, q1=None, p=None) -> "PotentialPair":
        """Sample callables on the canonical grids.

        When p is omitted it is recovered from q1 samples by central
        differences (one-sided at the ends), which is enough for the O(h)
        consistency contract between q1 and p.
        """
        sf_q0 = SampledFunction.from_callable(q0, cfg.a0, PI, cfg)
        if q1 is None:
            q1 = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        sf_q1 = SampledFunction.from_callable(q1, cfg.a1, PI, cfg)
        if p is not None:
            sf_p = SampledFunction.from_callable(p, cfg.a1, PI, cfg)
        else:
            sf_p = SampledFunction(cfg.a1, PI, np.gradient(sf_q1.values, sf_q1.h))
        return cls(sf_q0, sf_q1, sf_p)

    @classmethod
    def zero(cls, cfg: ProblemConfig) -> "PotentialPair":
        return cls.from_callables(cfg, lambda x: np.zeros_like(x))


def validate_pair(pp: PotentialPair, cfg: ProblemConfig) -> PotentialPair:
    """Check the mean-zero and antiderivative invariants of a PotentialPair."""
    scale = max(1.0, float(np.max(np.abs(pp.q1.values))) * (PI - cfg.a1))
    mean = integrate(pp.q1, cfg.a1, PI)
    if abs(mean) > 1e4 * cfg.tolerance * scale:
        raise DomainError(
            f"q1 must integrate to zero over [a1, pi]; got {mean!r}")
    prim = pp.p.antiderivative()
    recon = pp.q1.values[0] + prim.values
    err = float(np.max(np.abs(recon - pp.q1.values)))
    if err > 10.0 * max(1.0, float(np.max(np.abs(pp.p.values)))) * pp.q1.h:
        raise DomainError(
            f"q1 and p are inconsistent: max deviation {err:.3e} from the "
            "antiderivative reconstruction")
    return pp


def estimate_from_potentials(pp: PotentialPair, cfg: ProblemConfig) -> "ParameterEstimate":
    """Exact asymptotic parameters of a known pair: the half integral of q0
    and the endpoint values of q1."""
    omega = 0.5 * integrate(pp.q0, cfg.a0, PI)
    alpha = 0.5 * complex(pp.q1.values[0])
    beta = 0.5 * complex(pp.q1.values[-1])
    return ParameterEstimate.from_alpha_beta(omega, alpha, beta, 0.0)


# ---------------------------------------------------------------------------
# spectra


def anchor(n: int, j: int) -> float:
    """Unperturbed eigenvalue n - j/2."""
    return n - 0.5 * j


def spectrum_indices(j: int, N: int) -> list[int]:
    """Index set for the 2N eigenvalues closest to zero.

    For the Dirichlet-at-pi problem (j=0) the indices are +-1..+-N; for the
    Neumann one (j=1) they are 1-N..N, matching the symmetric anchors.
    """
    if j == 0:
        return [n for n in range(-N, N + 1) if n != 0]
    return list(range(1 - N, N + 1))


@dataclass(frozen=True)
class Spectrum:
    """Indexed eigenvalue family of one boundary value problem.

    entries maps the index n to the eigenvalue; admissible n exclude 0 when
    j=0.  Beyond |n| = cutoff each entry must stay within 1/2 of its anchor.
    """

    j: int
    entries: dict
    cutoff: int = 0

    def __post_init__(self):
        if self.j not in (0, 1):
            raise DomainError(f"boundary index j must be 0 or 1, got {self.j}")
        ent = {int(n): complex(v) for n, v in self.entries.items()}
        object.__setattr__(self, "entries", ent)
        for n, v in ent.items():
            if self.j == 0 and n == 0:
                raise DomainError("index 0 is not admissible for j=0")
            if abs(n) > self.cutoff and abs(v - anchor(n, self.j)) >= 0.5:
                raise DomainError(
                    f"eigenvalue {v!r} at index {n} strays from its anchor "
                    f"{anchor(n, self.j)} by >= 1/2")

    @property
    def N(self) -> int:
        return max(abs(n) for n in self.entries)

    def indices(self) -> list[int]:
        return sorted(self.entries)

    def value(self, n: int) -> complex:
        return self.entries[n]

    def truncated(self, N: int) -> "Spectrum":
        keep = {n: v for n, v in self.entries.items()
                if n in set(spectrum_indices(self.j, N))}
        return Spectrum(self.j, keep, self.cutoff)

    @classmethod
    def anchors(cls, j: int, N: int) -> "Spectrum":
        return cls(j, {n: complex(anchor(n, j)) for n in spectrum_indices(j, N)})


# ---------------------------------------------------------------------------
# asymptotic parameters


@dataclass(frozen=True)
class ParameterEstimate:
    """Identified asymptotic parameters (omega, alpha0, alpha1) of a spectra
    pair, with alpha and beta recovered from the boundary combination
    alpha_j = alpha + (-1)^j beta."""

    omega: complex
    alpha0: complex
    alpha1: complex
    alpha: complex
    beta: complex
    residual_l2: float

    @classmethod
    def from_alphas(cls, omega, alpha0, alpha1, residual_l2) -> "ParameterEstimate":
        omega, alpha0, alpha1 = complex(omega), complex(alpha0), complex(alpha1)
        return cls(omega, alpha0, alpha1,
                   0.5 * (alpha0 + alpha1), 0.5 * (alpha0 - alpha1),
                   float(residual_l2))

    @classmethod
    def from_alpha_beta(cls, omega, alpha, beta, residual_l2) -> "ParameterEstimate":
        alpha, beta = complex(alpha), complex(beta)
        return cls(complex(omega), alpha + beta, alpha - beta, alpha, beta,
                   float(residual_l2))
