"""Tannor-Meier Lorentzian baths: spectral densities, correlation functions
and their exponential expansions.

The correlation function convention is

    C(t) = (1/pi) int dw J(w) exp(i w t) / (exp(beta w) - 1)

so that ``C(t) = sum_k alpha_k exp(i gamma_k t)`` with ``Im gamma_k > 0`` and
``C*(t) = sum_k alpha_tilde_k exp(i gamma_k t)``.
"""

from dataclasses import dataclass, field, replace
import csv
import math
import warnings

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, IllConditionedError, NumericalError
from .model import beta_reduced, cm_to_reduced, projector

TUNING = "tuning"
COUPLING = "coupling"

ROOM_TEMPERATURE_K = 300.0
# sqrt(J_S2 / J_S1) with J_S2 = 0.797 J_S1
TUNING_RATIO = 0.89

# Default calibration (reduced units).  Peaks at 1700 and 2300 cm^-1, widths
# giving a ~200 fs decay, strengths tuned so that field-free population
# transfer from |1> is of order 10% over one pulse.
PEAKS_CM = (1700.0, 2300.0)
DEFAULT_WIDTH = 0.35
DEFAULT_TUNING_STRENGTH = 30.0
DEFAULT_COUPLING_STRENGTH = 15.0


@dataclass(frozen=True)
class LorentzianParams:
    """Two-pole Lorentzian terms ``(p, Omega, Gamma)``."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(tuple(float(x) for x in term) for term in self.terms)
        for term in terms:
            if len(term) != 3:
                raise ConfigurationError("each Lorentzian term is (p, Omega, Gamma)")
            if term[1] <= 0 or term[2] <= 0:
                raise ConfigurationError("Lorentzian Omega and Gamma must be positive")
        object.__setattr__(self, "terms", terms)

    def scaled(self, factor):
        return LorentzianParams(tuple((p * factor, om, g) for p, om, g in self.terms))


@dataclass(frozen=True)
class BathSpec:
    params: LorentzianParams
    beta: float
    coupling_op: np.ndarray = field(compare=False)
    label: str = TUNING
    include_matsubara: bool = False
    n_matsubara: int = 0

    def __post_init__(self):
        op = np.asarray(self.coupling_op, dtype=complex)
        if op.shape != (3, 3) or np.max(np.abs(op - op.conj().T)) > 1e-12:
            raise ConfigurationError("coupling operator must be a 3x3 Hermitian matrix")
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        object.__setattr__(self, "coupling_op", op)

    def scaled(self, factor):
        return replace(self, params=self.params.scaled(factor))


def tuning_operator(ratio=TUNING_RATIO):
    return projector(1, 1) + ratio * projector(2, 2)


def coupling_operator():
    return projector(1, 2) + projector(2, 1)


def default_terms(strength, width=DEFAULT_WIDTH):
    # p_l proportional to Omega_l gives peaks of equal height
    omegas = [float(cm_to_reduced(cm)) for cm in PEAKS_CM]
    scale = strength / omegas[0]
    return LorentzianParams(tuple((scale * om, om, width) for om in omegas))


def default_tuning_bath(temperature=ROOM_TEMPERATURE_K):
    return BathSpec(default_terms(DEFAULT_TUNING_STRENGTH), beta_reduced(temperature),
                    tuning_operator(), TUNING)


def default_coupling_bath(temperature=ROOM_TEMPERATURE_K):
    return BathSpec(default_terms(DEFAULT_COUPLING_STRENGTH), beta_reduced(temperature),
                    coupling_operator(), COUPLING)


def default_baths(temperature=ROOM_TEMPERATURE_K):
    return [default_tuning_bath(temperature), default_coupling_bath(temperature)]


def _j_over_omega(omega, params):
    omega = np.asarray(omega, dtype=float)
    out = np.zeros_like(omega)
    for p, om, g in params.terms:
        out = out + p / (((omega + om) ** 2 + g**2) * ((omega - om) ** 2 + g**2))
    return out


def spectral_density(omega, params):
    omega = np.asarray(omega, dtype=float)
    res = omega * _j_over_omega(omega, params)
    return float(res) if res.ndim == 0 else res


def _x_coth_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x**2 / 3.0, safe / np.tanh(safe))


def _thermal_weight(omega, params, beta):
    """J(w) coth(beta w / 2), regular at w = 0."""
    return _j_over_omega(omega, params) * (2.0 / beta) * _x_coth_x(0.5 * beta * np.asarray(omega))


def _quad(f, a, b, rtol, weight=None, wvar=0.0):
    """``int_a^b f(w) weight(wvar w) dw``; warnings become NumericalError."""
    if weight == "sin" and wvar == 0.0:
        return 0.0
    kw = dict(limit=2000, epsabs=0.0, epsrel=rtol)
    if np.isinf(b):
        # algebraic ~1/w^3 tail: QUADPACK needs an absolute tolerance here
        kw["epsabs"] = 1e-15
    if weight is not None and wvar != 0.0:
        kw.update(weight=weight, wvar=wvar)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, **kw)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(
                f"correlation quadrature failed on [{a}, {b}] (weight={weight}, "
                f"t={wvar}): {exc}"
            ) from exc
    return val


def correlation_quadrature(t, spec, rtol=1e-8):
    """C(t) by direct adaptive quadrature of the spectral integral."""
    t = float(t)
    params, beta = spec.params, spec.beta
    if not params.terms:
        return 0.0 + 0.0j
    omegas = sorted(om for _, om, _ in params.terms)
    gmax = max(g for _, _, g in params.terms)
    # break points around each sharp peak, then a semi-infinite tail
    edges = [0.0]
    for om in omegas:
        for d in (-20 * gmax, -3 * gmax, 3 * gmax, 20 * gmax):
            x = om + d
            if x > edges[-1]:
                edges.append(x)
    edges.append(omegas[-1] + 200 * gmax)
    edges = sorted(set(edges))

    def f_re(w):
        return _thermal_weight(w, params, beta)

    def f_im(w):
        return spectral_density(w, params)

    abs_t = abs(t)
    re = im = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        re += _quad(f_re, a, b, rtol, "cos", abs_t)
        im += _quad(f_im, a, b, rtol, "sin", abs_t)
    re += _quad(f_re, edges[-1], np.inf, rtol, "cos", abs_t)
    im += _quad(f_im, edges[-1], np.inf, rtol, "sin", abs_t)
    return complex(re, -math.copysign(1.0, t) * im) / math.pi


@dataclass
class BathExpansion:
    """Exponential modes of one bath.

    ``alpha``/``alpha_tilde``/``gamma`` give C(t) and C*(t); the real/imaginary
    view ``C_R = sum c_r exp(-nu_r t)``, ``C_I = sum c_i exp(-nu_i t)`` is filled
    by :func:`to_real_imag_form`.
    """

    alpha: np.ndarray
    alpha_tilde: np.ndarray
    gamma: np.ndarray
    coupling_op: np.ndarray = None
    label: str = ""
    c_r: np.ndarray = None
    nu_r: np.ndarray = None
    c_i: np.ndarray = None
    nu_i: np.ndarray = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=complex)
        self.alpha_tilde = np.asarray(self.alpha_tilde, dtype=complex)
        self.gamma = np.asarray(self.gamma, dtype=complex)

    @property
    def n_modes(self):
        return len(self.gamma)

    def correlation(self, t):
        t = np.asarray(t, dtype=float)
        res = np.sum(self.alpha * np.exp(1j * np.multiply.outer(t, self.gamma)), axis=-1)
        return complex(res) if res.ndim == 0 else res

    def correlation_conj(self, t):
        t = np.asarray(t, dtype=float)
        res = np.sum(self.alpha_tilde * np.exp(1j * np.multiply.outer(t, self.gamma)), axis=-1)
        return complex(res) if res.ndim == 0 else res

    def real_imag_parts(self, t):
        """(C_R(t), C_I(t)) from the real/imaginary view."""
        if self.c_r is None:
            raise ConfigurationError("real/imaginary view not populated")
        t = np.asarray(t, dtype=float)
        cr = np.sum(self.c_r * np.exp(-np.multiply.outer(t, self.nu_r)), axis=-1)
        ci = np.sum(self.c_i * np.exp(-np.multiply.outer(t, self.nu_i)), axis=-1)
        return cr, ci

    @classmethod
    def from_real_imag(cls, c_r, nu_r, c_i, nu_i, coupling_op=None, label="", tol=1e-12):
        """Merge real/imaginary exponent lists into the alpha form."""
        nus, a, at = [], [], []

        def slot(nu):
            for k, known in enumerate(nus):
                if abs(known - nu) <= tol * max(1.0, abs(nu)):
                    return k
            nus.append(complex(nu))
            a.append(0j)
            at.append(0j)
            return len(nus) - 1

        for c, nu in zip(c_r, nu_r):
            k = slot(nu)
            a[k] += c
            at[k] += c
        for c, nu in zip(c_i, nu_i):
            k = slot(nu)
            a[k] += 1j * c
            at[k] -= 1j * c
        gamma = 1j * np.asarray(nus, dtype=complex)
        exp = cls(np.array(a), np.array(at), gamma, coupling_op=coupling_op, label=label)
        return to_real_imag_form(exp)


def _matsubara_terms(params, beta, n):
    """(alpha_n, gamma_n) for the first ``n`` Matsubara poles."""
    nus = 2.0 * math.pi * np.arange(1, n + 1) / beta
    alpha = np.zeros(n, dtype=complex)
    for p, om, g in params.terms:
        z = 1j * nus
        jz = p * z / (((z + om) ** 2 + g**2) * ((z - om) ** 2 + g**2))
        alpha += (2j / beta) * jz
    return alpha, 1j * nus


def _bose(z, beta):
    return 1.0 / np.expm1(beta * z)


def expand_correlation(spec, include_matsubara=None, n_matsubara=None):
    """Residue expansion of C(t) for a Lorentzian bath."""
    include = spec.include_matsubara if include_matsubara is None else include_matsubara
    n_mats = (spec.n_matsubara if n_matsubara is None else n_matsubara) if include else 0
    terms = spec.params.terms
    for i in range(len(terms)):
        for j in range(i + 1, len(terms)):
            _, oi, gi = terms[i]
            _, oj, gj = terms[j]
            if abs(oi - oj) + abs(gi - gj) < 1e-9:
                raise IllConditionedError(
                    f"Lorentzian terms {i} and {j} have nearly degenerate poles"
                )
    alpha, alpha_t, gamma = [], [], []
    beta = spec.beta
    for p, om, g in terms:
        w_plus = complex(om, g)
        w_minus = complex(-om, g)
        a_plus = p * _bose(w_plus, beta) / (4 * om * g)
        a_minus = -p * _bose(w_minus, beta) / (4 * om * g)
        # C*(t) pairs the mode at w_plus with the conjugate of the w_minus coefficient
        alpha += [a_plus, a_minus]
        alpha_t += [np.conj(a_minus), np.conj(a_plus)]
        gamma += [w_plus, w_minus]
    if n_mats:
        am, gm = _matsubara_terms(spec.params, beta, n_mats)
        alpha += list(am)
        alpha_t += list(np.conj(am))
        gamma += list(gm)
    exp = BathExpansion(np.array(alpha, dtype=complex), np.array(alpha_t, dtype=complex),
                        np.array(gamma, dtype=complex), coupling_op=spec.coupling_op,
                        label=spec.label)
    return exp


def to_real_imag_form(exp):
    """Populate ``c_r, nu_r, c_i, nu_i`` by exact rearrangement of the alpha form."""
    nu = -1j * exp.gamma
    return replace(
        exp,
        c_r=0.5 * (exp.alpha + exp.alpha_tilde),
        nu_r=nu.copy(),
        c_i=(exp.alpha - exp.alpha_tilde) / 2j,
        nu_i=nu.copy(),
    )


def matsubara_remainder(t, spec, n_start=0, n_max=4000):
    """Sum of the Matsubara contributions from index ``n_start + 1`` up to ``n_max``."""
    if not spec.params.terms or n_max <= n_start:
        return np.zeros_like(np.asarray(t, dtype=float), dtype=complex)
    alpha, gamma = _matsubara_terms(spec.params, spec.beta, n_max)
    exp = BathExpansion(alpha[n_start:], np.conj(alpha[n_start:]), gamma[n_start:])
    return exp.correlation(t)


def reconstruction_error(exp, spec, times=None, rtol=1e-8):
    """max_t |C_exp(t) - C_quad(t)| / |C(0)| on ``times`` (default 21 points in [0, 1])."""
    times = np.linspace(0.0, 1.0, 21) if times is None else np.asarray(times)
    quad = np.array([correlation_quadrature(t, spec, rtol) for t in times])
    c0 = abs(correlation_quadrature(0.0, spec, rtol))
    if c0 == 0.0:
        return 0.0, quad
    return float(np.max(np.abs(exp.correlation(times) - quad)) / c0), quad


def bath_peaks(params, omega_max=None, n=200001):
    """Local maxima of J on a dense grid over (0, omega_max]."""
    om_top = max(om for _, om, _ in params.terms)
    omega_max = omega_max or 2.0 * om_top
    w = np.linspace(omega_max / n, omega_max, n)
    j = spectral_density(w, params)
    idx = np.where((j[1:-1] > j[:-2]) & (j[1:-1] >= j[2:]))[0] + 1
    return w[idx]


EXPANSION_HEADER = ("bath", "mode", "re_alpha", "im_alpha", "re_alpha_tilde", "im_alpha_tilde",
                    "re_gamma", "im_gamma")


def expansion_rows(expansions):
    rows = []
    for e in expansions:
        for k, (a, at, g) in enumerate(zip(e.alpha, e.alpha_tilde, e.gamma)):
            rows.append((e.label, k, a.real, a.imag, at.real, at.imag, g.real, g.imag))
    return rows


def write_expansion_csv(expansions, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EXPANSION_HEADER)
        w.writerows(expansion_rows(expansions))
