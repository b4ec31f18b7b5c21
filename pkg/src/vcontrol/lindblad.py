"""Lindblad dynamics with constant or time-dependent rates, and the
decoherence matrix / canonical rates of a reference dynamical map.

Decoherence matrices are stored in the orthonormal basis F_i = G_i / sqrt(2)
(F_0 = I / sqrt(n)), where the dissipator reads

    D[rho] = sum_ij d_ij (F_i rho F_j^dag - 1/2 {F_j^dag F_i, rho})

and d_ij = sum_{m=0}^{n^2-1} Tr[F_m F_i L(F_m) F_j] recovers d exactly.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy.optimize import curve_fit

from . import model
from .errors import (
    ConfigurationError,
    DataError,
    IntegrationError,
    NumericalError,
    ResolutionError,
)
from .integrate import rk4_step, substeps_for

DEFAULT_RATES = (1.0, 0.8, 0.36, 0.16)
CONSTANT = "constant"
POLYNOMIAL = "polynomial"
SINE_EXP = "sine-exp"
TABULATED = "tabulated"
RATE_KINDS = (CONSTANT, POLYNOMIAL, SINE_EXP, TABULATED)

# Gell-Mann indices (0-based into the 8 generators) used for rate shapes:
# lambda_6 couples |1> and |2> (sigma_x analog), lambda_3 is a gap generator.
TRANSFER_GENERATOR = 5
GAP_GENERATOR = 2


class FitQualityWarning(UserWarning):
    """A rate fit left a residual above the accepted fraction of the RMS."""


def gell_mann_basis(n=3):
    """G0 = I/sqrt(n) followed by the n^2-1 generators with Tr(G_i G_j) = 2 delta_ij."""
    if n == 2:
        gens = [
            np.array([[0, 1], [1, 0]], dtype=complex),
            np.array([[0, -1j], [1j, 0]], dtype=complex),
            np.array([[1, 0], [0, -1]], dtype=complex),
        ]
    elif n == 3:
        gens = []
        for j, k in ((0, 1), (0, 2), (1, 2)):
            sym = np.zeros((3, 3), dtype=complex)
            sym[j, k] = sym[k, j] = 1.0
            asym = np.zeros((3, 3), dtype=complex)
            asym[j, k], asym[k, j] = -1j, 1j
            gens.append((j, k, sym, asym))
        s01, a01 = gens[0][2:]
        s02, a02 = gens[1][2:]
        s12, a12 = gens[2][2:]
        l3 = np.diag([1.0, -1.0, 0.0]).astype(complex)
        l8 = np.diag([1.0, 1.0, -2.0]).astype(complex) / math.sqrt(3.0)
        gens = [s01, a01, l3, s02, a02, s12, a12, l8]
    else:
        raise ConfigurationError(f"Gell-Mann basis only for n in (2, 3), got {n}")
    return [np.eye(n, dtype=complex) / math.sqrt(n)] + gens


def orthonormal_basis(n=3):
    g = gell_mann_basis(n)
    return [g[0]] + [x / math.sqrt(2.0) for x in g[1:]]


# rate functions ----------------------------------------------------------

@dataclass
class RateFunction:
    """Scalar rate Gamma(t) in reduced units."""

    kind: str = CONSTANT
    params: tuple = (0.0,)
    times: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ConfigurationError(f"unknown rate kind {self.kind!r}")
        self.params = tuple(float(p) for p in self.params)
        if self.kind == SINE_EXP and len(self.params) != 4:
            raise ConfigurationError("sine-exp rates need (a, b, c, d)")
        if self.kind == CONSTANT and len(self.params) != 1:
            raise ConfigurationError("constant rates need one value")
        if self.kind == TABULATED:
            if self.times is None or len(self.times) != len(self.params):
                raise ConfigurationError("tabulated rates need matching times and values")
            self.times = np.asarray(self.times, dtype=float)

    def __call__(self, t):
        p = self.params
        if self.kind == CONSTANT:
            return p[0] + 0.0 * np.asarray(t, dtype=float)
        if self.kind == POLYNOMIAL:
            return np.polyval(p, t)
        if self.kind == SINE_EXP:
            a, b, c, d = p
            return a * np.sin(b * np.asarray(t) + c) * np.exp(-d * np.asarray(t))
        return np.interp(t, self.times, p)

    def scaled(self, factor):
        if self.kind == SINE_EXP:
            a, b, c, d = self.params
            return RateFunction(SINE_EXP, (a * factor, b, c, d))
        return RateFunction(self.kind, tuple(factor * x for x in self.params), self.times)

    def time_average(self, n=2001):
        t = np.linspace(0.0, 1.0, n)
        return float(np.trapezoid(self(t), t))

    def is_constant(self):
        return self.kind == CONSTANT

    def to_dict(self):
        out = {"kind": self.kind, "params": list(self.params)}
        if self.times is not None:
            out["times"] = self.times.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"kind", "params", "times"}
        if unknown:
            raise ConfigurationError(f"unknown rate keys: {sorted(unknown)}")
        return cls(data.get("kind", CONSTANT), tuple(data.get("params", (0.0,))), data.get("times"))

    @classmethod
    def constant(cls, value):
        return cls(CONSTANT, (value,))


@dataclass
class CollapseChannel:
    op: np.ndarray
    rate: RateFunction
    label: str = ""

    def __post_init__(self):
        self.op = np.asarray(self.op, dtype=complex)
        if not isinstance(self.rate, RateFunction):
            self.rate = RateFunction.constant(float(self.rate))


CHANNEL_OPS = (
    model.projector(1, 1),
    model.projector(2, 2),
    model.projector(1, 2),
    model.projector(2, 1),
)
CHANNEL_LABELS = ("L1", "L2", "L3", "L4")


def default_channels(rates=DEFAULT_RATES):
    """|1><1|, |2><2|, |1><2|, |2><1| with the given (constant or function) rates."""
    return [CollapseChannel(op.copy(), r if isinstance(r, RateFunction) else RateFunction.constant(r), lab)
            for op, r, lab in zip(CHANNEL_OPS, rates, CHANNEL_LABELS)]


# dynamics ----------------------------------------------------------------

def dissipator(rho, op, rate):
    ld = op.conj().T
    ldl = ld @ op
    return rate * (op @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl))


def lindblad_rhs(rho, t, h, channels, strict=False):
    """-i[H, rho] + sum_k Gamma_k(t) (L rho L^dag - 1/2 {L^dag L, rho})."""
    out = -1j * (h @ rho - rho @ h)
    for ch in channels:
        g = float(ch.rate(t))
        if strict and g < 0.0:
            raise NumericalError(f"negative rate {g:.3e} for channel {ch.label or '?'} at t={t:.4g}")
        if g != 0.0:
            out = out + dissipator(rho, ch.op, g)
    return out


def _rate_bound(channels, n=201):
    t = np.linspace(0.0, 1.0, n)
    return sum(float(np.max(np.abs(ch.rate(t)))) * float(np.linalg.norm(ch.op, 2)) ** 2
               for ch in channels)


def propagate_lindblad(rho0, field, channels, spec=None, step_limit=0.1, trace_tol=1e-6,
                       strict=False, positivity_log=None):
    """RK4 trajectory on the field grid.

    ``positivity_log`` (a list) collects (t, min eigenvalue) whenever rho
    dips below -1e-8, which can happen with transiently negative rates.
    """
    spec = spec or model.SystemSpec()
    h = model.hamiltonian_provider(field, spec)
    rate = model.hamiltonian_norm_bound(field, spec) + _rate_bound(channels)
    nsub = substeps_for(rate, field.dt, step_limit)
    rho = np.array(rho0, dtype=complex)
    states = np.empty((len(field.grid), 3, 3), dtype=complex)
    states[0] = rho
    tr0 = np.trace(rho)
    for i in range(field.n_intervals):
        t0 = field.grid[i]
        hs = field.dt / nsub

        def rhs(t, y, i=i):
            return lindblad_rhs(y, t, h(t, i), channels, strict)

        for j in range(nsub):
            rho = rk4_step(rhs, t0 + j * hs, rho, hs)
        states[i + 1] = rho
        if positivity_log is not None:
            lo = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
            if lo < -1e-8:
                positivity_log.append((float(field.grid[i + 1]), lo))
    drift = abs(np.trace(rho) - tr0)
    if not drift <= trace_tol:
        raise IntegrationError(f"trace drifted by {drift:.3e}; reduce the step size")
    return model.Trajectory(field.grid.copy(), states)


def lindblad_superoperator(h, channels, t=0.0):
    """Matrix of the generator on row-major vec(rho)."""
    eye = np.eye(h.shape[0])
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for ch in channels:
        g = float(ch.rate(t))
        op = ch.op
        ldl = op.conj().T @ op
        sup = sup + g * (np.kron(op, op.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
    return sup


# decoherence matrix --------------------------------------------------------

@dataclass
class DecoherenceMatrix:
    times: np.ndarray
    D: np.ndarray
    canonical_rates: np.ndarray = field(default=None)
    rate_sum: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.canonical_rates is None:
            self.canonical_rates, self.rate_sum = canonical_rates(self)

    def element(self, i, j):
        return self.D[:, i, j]


def basis_map_lindblad(channels, times, h=None):
    """Lambda_t[F_m] for all orthonormal basis elements under a static generator."""
    from scipy.linalg import expm

    basis = orthonormal_basis(3)
    h = np.zeros((3, 3), dtype=complex) if h is None else h
    out = np.empty((len(times), len(basis), 3, 3), dtype=complex)
    for k, t in enumerate(times):
        if any(not ch.rate.is_constant() for ch in channels):
            raise ConfigurationError("basis_map_lindblad needs constant rates")
        prop = expm(lindblad_superoperator(h, channels) * t)
        for m, f in enumerate(basis):
            out[k, m] = (prop @ f.reshape(-1)).reshape(3, 3)
    return out


def _map_matrix(maps):
    """(nt, 9, 3, 3) images of the basis -> (nt, 9, 9) matrices M_km = Tr(F_k^dag L[F_m])."""
    basis = np.array(orthonormal_basis(3))
    return np.einsum("kab,tmab->tkm", basis.conj(), maps)


def _derivative(y, times):
    """Second-order finite differences along axis 0 (central inside)."""
    return np.gradient(y, times, axis=0, edge_order=2)


def generator_from_map(maps, times, h0=None, resolution_tol=0.05):
    """Time-local generator matrices L_t = dM/dt M^-1 in the orthonormal basis.

    When ``h0`` is given the map is differentiated in the frame rotating with
    H0, where it is slow, and the free part is added back analytically.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 5:
        raise ResolutionError("at least five samples are needed to differentiate the map")
    m = _map_matrix(maps)
    basis = np.array(orthonormal_basis(3))
    if h0 is not None:
        e = np.real(np.diag(h0))
        ls = -1j * (np.kron(h0, np.eye(3)) - np.kron(np.eye(3), h0.T))
        to_b = basis.reshape(9, 9).conj()  # rows: vec(F_k)^dag
        lfree = to_b @ ls @ to_b.conj().T
        frames = []
        for t in times:
            u = np.exp(-1j * np.subtract.outer(e, e) * t).reshape(-1)
            frames.append(to_b @ np.diag(u) @ to_b.conj().T)
        frames = np.array(frames)
        slow = np.einsum("tjk,tkm->tjm", np.transpose(frames.conj(), (0, 2, 1)), m)
    else:
        frames, slow = None, m
    dslow = _derivative(slow, times)
    # coarse-grid cross-check: the same derivative from every other sample
    coarse = _derivative(slow[::2], times[::2])
    scale = np.max(np.abs(dslow)) + 1e-300
    mismatch = np.max(np.abs(coarse - dslow[::2])) / scale
    if mismatch > resolution_tol:
        raise ResolutionError(
            f"map derivative changes by {mismatch:.2%} when the grid is halved; "
            "sample the reference map more finely"
        )
    gens = np.empty_like(m)
    for k in range(len(times)):
        try:
            gk = dslow[k] @ np.linalg.inv(slow[k])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"dynamical map is singular at t={times[k]:.4g}") from exc
        if frames is not None:
            gk = lfree + frames[k] @ gk @ frames[k].conj().T
        gens[k] = gk
    return gens


def _apply(gen, op, basis):
    coeffs = np.einsum("kab,ab->k", basis.conj(), op)
    return np.einsum("k,kab->ab", gen @ coeffs, basis)


def kossakowski(gen):
    """d_ij = sum_m Tr[F_m F_i L(F_m) F_j] for one generator matrix (9x9)."""
    basis = np.array(orthonormal_basis(3))
    images = np.array([_apply(gen, f, basis) for f in basis])
    # T_m,i,j = Tr[F_m F_i X_m F_j]
    return np.einsum("mab,ibc,mcd,jda->ij", basis, basis[1:], images, basis[1:])


def decoherence_matrix(maps, times, h0=None, resolution_tol=0.05):
    """Decoherence matrix series from the images of the basis (nt, 9, 3, 3)."""
    gens = generator_from_map(maps, times, h0, resolution_tol)
    d = np.array([kossakowski(g) for g in gens])
    return DecoherenceMatrix(np.asarray(times, dtype=float), d)


def d_from_channels(channels, t=0.0):
    """Direct channel decomposition: d_ij = sum_k Gamma_k c_ki conj(c_kj)."""
    basis = orthonormal_basis(3)[1:]
    d = np.zeros((8, 8), dtype=complex)
    for ch in channels:
        c = np.array([np.trace(f.conj().T @ ch.op) for f in basis])
        d += float(ch.rate(t)) * np.outer(c, c.conj())
    return d


def dissipator_from_d(d, rho):
    basis = orthonormal_basis(3)[1:]
    out = np.zeros((3, 3), dtype=complex)
    for i, fi in enumerate(basis):
        for j, fj in enumerate(basis):
            if d[i, j] != 0:
                fjd = fj.conj().T
                out += d[i, j] * (fi @ rho @ fjd - 0.5 * (fjd @ fi @ rho + rho @ fjd @ fi))
    return out


def canonical_rates(dm, herm_tol=1e-8):
    """Descending eigenvalues of D(t) per sample and their sum."""
    d = dm.D if isinstance(dm, DecoherenceMatrix) else np.asarray(dm)
    asym = np.max(np.abs(d - np.conj(np.transpose(d, (0, 2, 1)))))
    scale = max(1.0, float(np.max(np.abs(d))))
    if asym > herm_tol * scale:
        raise DataError(f"decoherence matrix is not Hermitian (deviation {asym:.3e})")
    herm = 0.5 * (d + np.conj(np.transpose(d, (0, 2, 1))))
    ev = np.linalg.eigvalsh(herm)[:, ::-1]
    return ev, np.real(np.trace(herm, axis1=1, axis2=2))


# rate fits ---------------------------------------------------------------

def _sine_exp(t, a, b, c, d):
    return a * np.sin(b * t + c) * np.exp(-d * t)


def _fit_sine_exp(times, y):
    best = None
    amp = float(np.max(np.abs(y))) or 1.0
    span = times[-1] - times[0]
    for b0 in np.linspace(0.5, 60.0, 60) / max(span, 1e-12):
        for c0 in (0.0, math.pi / 2, math.pi, -math.pi / 2):
            try:
                p, _ = curve_fit(_sine_exp, times, y, p0=(amp, b0, c0, 0.5), maxfev=4000)
            except (RuntimeError, ValueError):
                continue
            res = float(np.sqrt(np.mean((_sine_exp(times, *p) - y) ** 2)))
            if np.all(np.isfinite(p)) and (best is None or res < best[1]):
                best = (p, res)
    return best


def fit_rate_function(times, values, max_degree=5, quality=0.2):
    """Best of a*sin(bt+c)*exp(-dt) and polynomials up to ``max_degree``."""
    times = np.asarray(times, dtype=float)
    y = np.real(np.asarray(values))
    rms = float(np.sqrt(np.mean(y**2)))
    if np.ptp(y) <= 1e-12 * max(1.0, abs(y).max()):
        return RateFunction.constant(float(y.mean())), 0.0
    cands = []
    for deg in range(0, max_degree + 1):
        p = np.polyfit(times, y, deg)
        res = float(np.sqrt(np.mean((np.polyval(p, times) - y) ** 2)))
        cands.append((res, RateFunction(POLYNOMIAL, tuple(p))))
    sf = _fit_sine_exp(times, y)
    if sf is not None:
        cands.append((sf[1], RateFunction(SINE_EXP, tuple(sf[0]))))
    res, best = min(cands, key=lambda c: c[0])
    if res > quality * rms:
        warnings.warn(f"rate fit residual {res:.3g} exceeds {quality:.0%} of the RMS; "
                      "falling back to the tabulated series", FitQualityWarning)
        return RateFunction(TABULATED, tuple(y), times), res
    return best, res


def fit_rate_functions(dm, transfer=TRANSFER_GENERATOR, gap=GAP_GENERATOR,
                       targets=DEFAULT_RATES):
    """Rate functions for the four default channels from two D elements.

    The gap-generator element shapes the dephasing channels L1, L2; the 1-2
    transition element shapes L3, L4.  Each shape is rescaled so its time
    average equals the matching constant calibration rate.
    """
    fits = {}
    out = []
    for idx in (gap, transfer):
        fits[idx] = fit_rate_function(dm.times, np.real(dm.D[:, idx, idx]))[0]
    for k, target in enumerate(targets):
        shape = fits[gap] if k < 2 else fits[transfer]
        avg = shape.time_average()
        if abs(avg) < 1e-12:
            raise NumericalError("fitted rate shape has zero time average; cannot rescale")
        out.append(CollapseChannel(CHANNEL_OPS[k].copy(), shape.scaled(target / avg),
                                   CHANNEL_LABELS[k]))
    return out, fits


def golden_rule_channels(baths, spec=None):
    """Markovian reference channels from the bath spectral densities.

    Each bath contributes through its coupling operator S.  A diagonal S gives
    pure dephasing with rate 2 lim_{w->0} J(w) n(w); an off-diagonal S between
    |1> and |2> gives downhill/uphill transfer with rates 2 J(D)(n(D)+1) and
    2 J(D) n(D), D the level spacing.
    """
    from .bath import spectral_density

    spec = spec or model.SystemSpec()
    gap = abs(spec.e2 - spec.e1)
    lo, hi = (1, 2) if spec.e2 >= spec.e1 else (2, 1)
    chans = []
    for b in baths:
        s = np.asarray(b.coupling_op, dtype=complex)
        diag = np.diag(np.diag(s))
        off = s - diag
        if np.any(np.abs(diag) > 0):
            w = 1e-6
            rate0 = 2.0 * spectral_density(w, b.params) / w / b.beta
            chans.append(CollapseChannel(diag, RateFunction.constant(rate0), f"{b.label}-dephasing"))
        if np.any(np.abs(off) > 0):
            j = spectral_density(gap, b.params)
            n = 1.0 / np.expm1(b.beta * gap)
            amp = off[lo, hi]
            chans.append(CollapseChannel(amp * model.projector(lo, hi),
                                         RateFunction.constant(2.0 * j * (n + 1.0)), f"{b.label}-down"))
            chans.append(CollapseChannel(np.conj(amp) * model.projector(hi, lo),
                                         RateFunction.constant(2.0 * j * n), f"{b.label}-up"))
    return chans
