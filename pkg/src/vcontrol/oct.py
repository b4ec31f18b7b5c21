"""Monotonically convergent optimal control over HEOM (or isolated) dynamics.

Fields are real amplitudes ``eps_p(t)`` coupling through ``H = H0 - sum_p
eps_p X_p`` with no rotating-wave approximation; they are piecewise constant
on a fine grid.  Each iteration propagates the costate chi backward from
chi(T) = target under the adjoint hierarchy generator, then sweeps forward
updating the field immediately from the new state:

    eps_j <- eps_j + (dt / alpha) g_j,   g_j = -Im <chi(t_j), [X_p, rho(t_j)]>

With the inner product summed over the whole hierarchy the objective
increases by sum_j dt g_j^2 / alpha at every iteration.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from . import heom, model
from .errors import ConfigurationError, NumericalError

FULL = "full"
TOP = "top"


@dataclass
class OctConfig:
    alpha: float = 2e-4
    iterations: int = 15
    heom_config: heom.HeomConfig | None = None
    gradient: str = FULL
    rho0: np.ndarray | None = None
    target: np.ndarray | None = None
    max_chi_growth: float = 1e3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.iterations < 0:
            raise ConfigurationError("iteration count must be non-negative")
        if self.gradient not in (FULL, TOP):
            raise ConfigurationError(f"unknown gradient mode {self.gradient!r}")
        if self.heom_config is None:
            self.heom_config = isolated_config()
        if self.rho0 is None:
            self.rho0 = model.ground_state()
        if self.target is None:
            self.target = model.carrier_frame_target(spec=self.heom_config.spec)


def isolated_config(spec=None, **kw):
    """A hierarchy without bath modes: plain unitary dynamics on the same kernel."""
    return heom.HeomConfig(depth=0, baths=[], expansions=[], spec=spec or model.SystemSpec(), **kw)


def raw_field(env_y, env_z, grid, spec=None, check_sampling=True):
    """Wrap real field samples as a carrier-free Schrodinger-picture field."""
    spec = spec or model.SystemSpec()
    f = model.ControlField(grid, env_y, env_z, picture=model.SCHRODINGER, omega_y=0.0,
                           omega_z=0.0, interpolation="previous")
    if check_sampling:
        wmax = max(abs(spec.omega_y), abs(spec.omega_z))
        if f.dt > math.pi / wmax:
            raise ConfigurationError(
                f"OCT grid step {f.dt:.4g} cannot resolve the carrier {wmax:.4g}")
    return f


def sine_squared_guess(area_y=model.PI_OVER_SQRT2, area_z=None, n_steps=400, spec=None):
    """2A sin^2(pi t) cos(omega t), sampled at interval midpoints."""
    spec = spec or model.SystemSpec()
    area_z = area_y if area_z is None else area_z
    grid = np.linspace(0.0, 1.0, n_steps + 1)
    tm = grid + 0.5 / n_steps
    shape = 2.0 * np.sin(np.pi * tm) ** 2
    ey = area_y * shape * np.cos(spec.omega_y * tm)
    ez = area_z * shape * np.cos(spec.omega_z * tm)
    ey[-1], ez[-1] = ey[-2], ez[-2]
    return raw_field(ey, ez, grid, spec)


def envelope_areas(fld, spec=None):
    """Envelope-equivalent areas 2 int eps(t) cos(omega t) dt."""
    spec = spec or model.SystemSpec()
    t = fld.grid[:-1]
    dt = fld.dt
    # exact integral of cos over each piecewise-constant interval
    def proj(eps, w):
        return 2.0 * np.sum(eps[:-1] * (np.sin(w * (t + dt)) - np.sin(w * t)) / w)
    return float(proj(fld.env_y, spec.omega_y)), float(proj(fld.env_z, spec.omega_z))


def field_increment(rho, chi, op, alpha, dt=1.0):
    """(dt / alpha) * (-Im Tr(chi^dag [X, rho])) for 3x3 (or stacked) operators."""
    comm = op @ rho - rho @ op
    return -dt / alpha * float(np.imag(np.vdot(chi, comm)))


@dataclass
class OctResult:
    fidelities: list
    fields: list
    areas: list
    final_rho: np.ndarray

    @property
    def field(self):
        return self.fields[-1]

    def rows(self):
        return [(k, f, a[0], a[1]) for k, (f, a) in enumerate(zip(self.fidelities, self.areas))]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "fidelity", "area_y", "area_z"))
            w.writerows(self.rows())


class _Sweeper:
    """Forward/backward propagation on one hierarchy for a fixed fine grid."""

    def __init__(self, cfg, fld):
        self.cfg = cfg
        self.hier = heom.build_hierarchy(cfg.heom_config)
        self.spec = cfg.heom_config.spec
        hc = cfg.heom_config
        # bound the field generously so the substep count stays fixed across iterations
        amp = 4.0 * max(fld.max_amplitude(), 1.0)
        self.nsub = hc.substeps or heom.substeps_for(self.hier.rate_bound(2 * amp), fld.dt,
                                                    hc.step_limit)
        self._cy = heom._comm(model.COUPLING_Y)
        self._cz = heom._comm(model.COUPLING_Z)
        self.target_vec = np.zeros(self.hier.n_ados * 9, dtype=complex)
        self.target_vec[:9] = np.asarray(cfg.target, dtype=complex).reshape(-1)

    def forward(self, fld):
        res = heom.propagate_heom(self.cfg.rho0, fld, self.cfg.heom_config,
                                  substeps=self.nsub, hierarchy=self.hier)
        return model.fidelity(res.state.rho, self.cfg.target)

    def backward(self, fld):
        top = self.cfg.gradient == TOP
        chi = heom.propagate_adjoint(self.cfg.target, fld, self.cfg.heom_config,
                                     substeps=self.nsub, hierarchy=self.hier, top_only=top)
        n0 = np.linalg.norm(chi[-1])
        growth = float(np.max(np.linalg.norm(chi.reshape(len(chi), -1), axis=1)) / n0)
        if not np.isfinite(growth) or growth > self.cfg.max_chi_growth:
            raise NumericalError(f"costate norm grew by {growth:.3g} during backward propagation")
        return chi.reshape(len(chi), -1)

    def gradient(self, chi_j, x):
        if self.cfg.gradient == TOP:
            c, r = chi_j[:9].reshape(1, 9), x[:9].reshape(1, 9)
        else:
            c, r = chi_j.reshape(-1, 9), x.reshape(-1, 9)
        # [X, .] acts on each ADO separately
        gy = -np.imag(np.vdot(c, r @ self._cy.T))
        gz = -np.imag(np.vdot(c, r @ self._cz.T))
        return float(gy), float(gz)

    def forward_update(self, fld, chi):
        """Immediate-update forward sweep; returns (new field, fidelity, rho(T))."""
        ey, ez = fld.env_y.copy(), fld.env_z.copy()
        new = fld.with_envelopes(ey, ez)
        ey, ez = new.env_y, new.env_z
        x = np.zeros(self.hier.n_ados * 9, dtype=complex)
        x[:9] = np.asarray(self.cfg.rho0, dtype=complex).reshape(-1)
        scale = fld.dt / self.cfg.alpha
        for j in range(fld.n_intervals):
            gy, gz = self.gradient(chi[j], x)
            ey[j] += scale * gy
            ez[j] += scale * gz
            if j == fld.n_intervals - 1:
                ey[j + 1], ez[j + 1] = ey[j], ez[j]
            x = heom._rk4_intervals(self.hier, x, new, j, j + 1, self.nsub)
        rho = x[:9].reshape(3, 3)
        return new, model.fidelity(rho, self.cfg.target), rho


def oct_iterate(fld, cfg, sweeper=None):
    """One backward sweep with ``fld`` then one forward sweep with immediate updates."""
    sw = sweeper or _Sweeper(cfg, fld)
    chi = sw.backward(fld)
    new, fid, rho = sw.forward_update(fld, chi)
    if not (np.all(np.isfinite(new.env_y)) and np.all(np.isfinite(new.env_z))):
        raise NumericalError("field update produced non-finite values")
    return new, fid, rho


def run_oct(guess, cfg, progress=None):
    """Iterate from ``guess``; entry 0 of every history is the guess itself."""
    if guess.picture != model.SCHRODINGER or guess.omega_y or guess.omega_z:
        raise ConfigurationError("OCT fields are raw Schrodinger-picture amplitudes (zero carriers)")
    spec = cfg.heom_config.spec
    sw = _Sweeper(cfg, guess)
    fids = [sw.forward(guess)]
    fields = [guess]
    areas = [envelope_areas(guess, spec)]
    fld, rho = guess, None
    for k in range(cfg.iterations):
        fld, fid, rho = oct_iterate(fld, cfg, sw)
        fids.append(fid)
        fields.append(fld)
        areas.append(envelope_areas(fld, spec))
        if progress is not None:
            progress(k, fid)
    if rho is None:
        rho = heom.propagate_heom(cfg.rho0, guess, cfg.heom_config, substeps=sw.nsub,
                                  hierarchy=sw.hier).state.rho
    return OctResult(fids, fields, areas, rho)
