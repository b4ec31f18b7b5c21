"""V-type three-level system: Hamiltonians, control fields and isolated dynamics.

All quantities are in reduced units: time is t/T, energies and frequencies are
multiplied by the pulse duration T (hbar = 1).  ``T_AU`` is the pulse duration
expressed in atomic time units and converts reduced values back to physical ones.
"""

from dataclasses import asdict, dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, IntegrationError
from .integrate import rk4_step, substeps_for

T_AU = 840.0
AU_TIME_FS = 0.02418884326585747
HARTREE_EV = 27.211386245988
HARTREE_CM = 219474.6313632
KB_HARTREE_PER_K = 3.166811563e-6

PI_OVER_SQRT2 = math.pi / math.sqrt(2.0)

RWA = "rwa"
SCHRODINGER = "schrodinger"
PICTURES = (RWA, SCHRODINGER)


def reduced_time_to_fs(t):
    return np.asarray(t) * T_AU * AU_TIME_FS


def cm_to_reduced(wavenumber):
    """Angular frequency in cm^-1 -> reduced units (omega * T)."""
    return np.asarray(wavenumber) / HARTREE_CM * T_AU


def reduced_to_cm(omega):
    return np.asarray(omega) / T_AU * HARTREE_CM


def beta_reduced(temperature_k):
    """Inverse temperature 1/(k_B T_temp) in reduced units."""
    return 1.0 / (KB_HARTREE_PER_K * temperature_k * T_AU)


def projector(i, j, n=3):
    op = np.zeros((n, n), dtype=complex)
    op[i, j] = 1.0
    return op


# channel coupling operators |0><j| + |j><0|
COUPLING_Y = projector(0, 1) + projector(1, 0)
COUPLING_Z = projector(0, 2) + projector(2, 0)


@dataclass(frozen=True)
class SystemSpec:
    """Energies, dipoles and carriers of the V system (reduced units)."""

    e1: float = 0.16277 * T_AU
    e2: float = 0.16439 * T_AU
    mu_y: float = 3.96
    mu_z: float = -1.83
    omega_y: float | None = None
    omega_z: float | None = None
    detuning_y: float = 0.0
    detuning_z: float = 0.0

    def __post_init__(self):
        if self.omega_y is None:
            object.__setattr__(self, "omega_y", float(self.e1))
        if self.omega_z is None:
            object.__setattr__(self, "omega_z", float(self.e2))
        if self.e1 < 0 or self.e2 < 0:
            raise ConfigurationError("excited-state energies must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown system keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ControlField:
    """Two-channel envelope samples on a uniform grid over [0, 1].

    ``interpolation`` is ``"previous"`` (piecewise constant: the value on
    ``[t_i, t_{i+1})`` is sample ``i``) or ``"linear"``.  In the Schrodinger
    picture the envelopes are multiplied by ``cos(omega t)``; zero carrier
    frequencies turn the envelopes into raw field amplitudes.
    """

    grid: np.ndarray
    env_y: np.ndarray
    env_z: np.ndarray
    picture: str = RWA
    omega_y: float = 0.0
    omega_z: float = 0.0
    interpolation: str = "previous"
    check_sampling: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.env_y = np.asarray(self.env_y, dtype=float)
        self.env_z = np.asarray(self.env_z, dtype=float)
        if self.picture not in PICTURES:
            raise ConfigurationError(f"unknown picture {self.picture!r}")
        if self.interpolation not in ("previous", "linear"):
            raise ConfigurationError(f"unknown interpolation {self.interpolation!r}")
        if self.grid.ndim != 1 or len(self.grid) < 2:
            raise ConfigurationError("field grid needs at least two points")
        if self.env_y.shape != self.grid.shape or self.env_z.shape != self.grid.shape:
            raise ConfigurationError("envelope arrays must match the grid length")
        steps = np.diff(self.grid)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, steps.mean()):
            raise ConfigurationError("field grid must be uniform and increasing")
        if self.picture == SCHRODINGER and self.check_sampling:
            wmax = max(abs(self.omega_y), abs(self.omega_z))
            if wmax > 0 and self.dt > math.pi / wmax * (1 + 1e-12):
                raise ConfigurationError(
                    f"grid step {self.dt:.4g} violates the two-samples-per-period rule "
                    f"for carrier {wmax:.4g}"
                )

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def n_intervals(self):
        return len(self.grid) - 1

    def envelopes(self, t, interval):
        """Envelope pair at time ``t`` inside grid interval ``interval``."""
        if self.interpolation == "previous":
            return self.env_y[interval], self.env_z[interval]
        t0 = self.grid[interval]
        w = (t - t0) / self.dt
        ey = (1 - w) * self.env_y[interval] + w * self.env_y[interval + 1]
        ez = (1 - w) * self.env_z[interval] + w * self.env_z[interval + 1]
        return ey, ez

    def amplitudes(self, t, interval):
        """Coefficients multiplying the two coupling operators."""
        ey, ez = self.envelopes(t, interval)
        if self.picture == SCHRODINGER:
            return ey * math.cos(self.omega_y * t), ez * math.cos(self.omega_z * t)
        return ey, ez

    def areas(self):
        """Integrated envelopes, exact for the chosen interpolation."""
        if self.interpolation == "previous":
            return (
                float(np.sum(self.env_y[:-1]) * self.dt),
                float(np.sum(self.env_z[:-1]) * self.dt),
            )
        return pulse_area(self.env_y, self.grid), pulse_area(self.env_z, self.grid)

    def max_amplitude(self):
        return float(max(np.max(np.abs(self.env_y)), np.max(np.abs(self.env_z))))

    @classmethod
    def constant(cls, area_y, area_z=None, n_steps=50, picture=RWA, spec=None, **kw):
        area_z = area_y if area_z is None else area_z
        grid = np.linspace(0.0, 1.0, n_steps + 1)
        return cls._make(grid, np.full_like(grid, area_y), np.full_like(grid, area_z),
                         picture, spec, kw)

    @classmethod
    def sine_squared(cls, area_y, area_z=None, n_steps=100, picture=SCHRODINGER,
                     spec=None, **kw):
        """sin^2(pi t) envelopes; peak is twice the requested area."""
        area_z = area_y if area_z is None else area_z
        grid = np.linspace(0.0, 1.0, n_steps + 1)
        shape = np.sin(np.pi * grid) ** 2
        kw.setdefault("interpolation", "linear")
        return cls._make(grid, 2 * area_y * shape, 2 * area_z * shape, picture, spec, kw)

    @classmethod
    def zeros(cls, n_steps=50, picture=RWA, spec=None, **kw):
        return cls.constant(0.0, 0.0, n_steps=n_steps, picture=picture, spec=spec, **kw)

    @classmethod
    def _make(cls, grid, ey, ez, picture, spec, kw):
        if picture == SCHRODINGER:
            spec = spec or SystemSpec()
            kw.setdefault("omega_y", spec.omega_y)
            kw.setdefault("omega_z", spec.omega_z)
        return cls(grid, ey, ez, picture=picture, **kw)

    def with_envelopes(self, env_y, env_z):
        return ControlField(self.grid, env_y, env_z, picture=self.picture,
                            omega_y=self.omega_y, omega_z=self.omega_z,
                            interpolation=self.interpolation,
                            check_sampling=self.check_sampling)


def build_h0(spec):
    return np.diag([0.0, spec.e1, spec.e2]).astype(complex)


def _h_rwa(om_y, om_z, spec):
    return -0.5 * np.array(
        [
            [0.0, om_y, om_z],
            [om_y, -2.0 * spec.detuning_y, 0.0],
            [om_z, 0.0, -2.0 * spec.detuning_z],
        ],
        dtype=complex,
    )


def _interval_of(field, t):
    i = int(np.searchsorted(field.grid, t, side="right")) - 1
    return min(max(i, 0), field.n_intervals - 1)


def build_h_rwa(field, t, spec, interval=None):
    if field.picture != RWA:
        raise ConfigurationError("build_h_rwa needs an RWA-picture field")
    i = _interval_of(field, t) if interval is None else interval
    return _h_rwa(*field.envelopes(t, i), spec)


def build_h_schrodinger(field, t, spec, interval=None):
    if field.picture != SCHRODINGER:
        raise ConfigurationError("build_h_schrodinger needs a Schrodinger-picture field")
    i = _interval_of(field, t) if interval is None else interval
    fy, fz = field.amplitudes(t, i)
    return build_h0(spec) - fy * COUPLING_Y - fz * COUPLING_Z


def hamiltonian_provider(field, spec):
    """Return ``h(t, interval) -> 3x3`` for the field's picture."""
    if field.picture == RWA:
        return lambda t, i: _h_rwa(*field.envelopes(t, i), spec)
    h0 = build_h0(spec)

    def h(t, i):
        fy, fz = field.amplitudes(t, i)
        return h0 - fy * COUPLING_Y - fz * COUPLING_Z

    return h


def hamiltonian_norm_bound(field, spec):
    """Upper bound on the spectral norm of H(t) over the whole field."""
    ay = float(np.max(np.abs(field.env_y)))
    az = float(np.max(np.abs(field.env_z)))
    if field.picture == RWA:
        return float(np.linalg.norm(_h_rwa(ay, az, spec), 2))
    return max(abs(spec.e1), abs(spec.e2)) + ay + az


def ground_state():
    return projector(0, 0)


def target_state():
    """Equal-weight superposition (|1> + |2>)/sqrt(2) as a density matrix."""
    psi = np.array([0.0, 1.0, 1.0]) / math.sqrt(2.0)
    return np.outer(psi, psi).astype(complex)


def carrier_frame_target(target=None, spec=None, t=1.0):
    """Target carried to time ``t`` by the frame rotating with the carriers.

    Schrodinger-picture runs compare against this operator so that the
    resonant area rule scores the same as in the RWA picture.
    """
    spec = spec or SystemSpec()
    target = target_state() if target is None else np.asarray(target, dtype=complex)
    u = np.exp(-1j * np.array([0.0, spec.omega_y, spec.omega_z]) * t)
    return u[:, None] * target * u.conj()[None, :]


def fidelity(rho, target):
    return float(np.real(np.trace(np.conj(target).T @ rho)))


def pulse_area(envelope, grid):
    return float(np.trapezoid(np.asarray(envelope, dtype=float), np.asarray(grid, dtype=float)))


def is_hermitian(rho, tol=1e-10):
    return float(np.max(np.abs(rho - rho.conj().T))) < tol


def purity(rho):
    return float(np.real(np.trace(rho @ rho)))


@dataclass
class Trajectory:
    """Density matrices sampled on a time grid."""

    times: np.ndarray
    states: np.ndarray

    @property
    def final(self):
        return self.states[-1]

    def populations(self):
        return np.real(np.einsum("tii->ti", self.states))

    def coherence(self):
        return self.states[:, 1, 2]


def liouville_commutator(h, rho):
    return -1j * (h @ rho - rho @ h)


def propagate_isolated(rho0, field, spec=None, step_limit=0.02, trace_tol=1e-6):
    """Unitary RK4 propagation of ``rho0`` under ``field`` on the field's grid."""
    spec = spec or SystemSpec()
    h = hamiltonian_provider(field, spec)
    nsub = substeps_for(hamiltonian_norm_bound(field, spec), field.dt, step_limit)
    rho = np.array(rho0, dtype=complex)
    states = np.empty((len(field.grid), 3, 3), dtype=complex)
    states[0] = rho
    tr0 = np.trace(rho)
    for i in range(field.n_intervals):
        t0 = field.grid[i]
        hstep = field.dt / nsub

        def rhs(t, y, i=i):
            return liouville_commutator(h(t, i), y)

        for j in range(nsub):
            rho = rk4_step(rhs, t0 + j * hstep, rho, hstep)
        states[i + 1] = rho
    drift = abs(np.trace(rho) - tr0)
    if not drift <= trace_tol:  # also catches overflow to nan
        raise IntegrationError(f"trace drifted by {drift:.3e}; reduce the step size")
    return Trajectory(field.grid.copy(), states)
