"""Hierarchical equations of motion for the driven V system.

Every auxiliary density operator (ADO) ``rho_n`` obeys

    d rho_n/dt = L_S(t) rho_n + i sum_k n_k gamma_k rho_n
                 - i [S_k, sum_k rho_{n+e_k}]
                 - i sum_k n_k (alpha_k S_k rho_{n-e_k} - alpha~_k rho_{n-e_k} S_k)

with the modes of all baths concatenated; each mode carries the coupling
operator of its bath.  The hierarchy is truncated at total depth ``L`` by
dropping couplings to deeper indices.

The generator is stored as a sparse matrix acting on the stacked, row-major
vectorised ADOs; the field enters through two dense 9x9 commutator blocks
applied to every ADO.
"""

from dataclasses import dataclass, field
import hashlib
import math
import struct

import numpy as np
from scipy import sparse

from . import model
from .bath import default_baths, expand_correlation
from .errors import (
    CapacityError,
    ConfigurationError,
    CorruptCheckpointError,
    IncompatibleStateError,
    IntegrationError,
)
from .integrate import rk4_step, substeps_for

DEFAULT_ADO_CAP = 500_000
CHECKPOINT_MAGIC = b"VHEOMCK1"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI32sIId")


@dataclass
class AdoTable:
    """Enumerated multi-indices with neighbour offsets (-1 marks truncation)."""

    indices: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    lookup: dict

    @property
    def n_ados(self):
        return len(self.indices)

    @property
    def n_modes(self):
        return self.indices.shape[1]

    def offset(self, index):
        return self.lookup[tuple(index)]


def count_ados(n_modes, depth):
    return math.comb(n_modes + depth, depth)


def _compositions(n_modes, total):
    """All n_modes-tuples of non-negative ints summing to ``total``, lex-descending."""
    if n_modes == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(n_modes - 1, total - first):
            yield (first,) + rest


def enumerate_ados(n_modes, depth, cap=DEFAULT_ADO_CAP):
    """Graded ordering: by depth, then lexicographically descending."""
    if n_modes < 0 or depth < 0:
        raise ConfigurationError("mode count and depth must be non-negative")
    n = count_ados(n_modes, depth) if n_modes else 1
    if n > cap:
        raise CapacityError(f"{n} ADOs for K={n_modes}, L={depth} exceed the cap {cap}")
    if n_modes == 0:
        return AdoTable(np.zeros((1, 0), dtype=np.int64), np.zeros((1, 0), dtype=np.int64),
                        np.zeros((1, 0), dtype=np.int64), {(): 0})
    indices = [idx for d in range(depth + 1) for idx in _compositions(n_modes, d)]
    lookup = {idx: i for i, idx in enumerate(indices)}
    plus = np.full((n, n_modes), -1, dtype=np.int64)
    minus = np.full((n, n_modes), -1, dtype=np.int64)
    for i, idx in enumerate(indices):
        for k in range(n_modes):
            up = idx[:k] + (idx[k] + 1,) + idx[k + 1:]
            plus[i, k] = lookup.get(up, -1)
            if idx[k] > 0:
                minus[i, k] = lookup[idx[:k] + (idx[k] - 1,) + idx[k + 1:]]
    return AdoTable(np.array(indices, dtype=np.int64), plus, minus, lookup)


# superoperators on row-major vec(rho): vec(A X B) = kron(A, B^T) vec(X)
_I3 = np.eye(3, dtype=complex)


def _left(a):
    return np.kron(a, _I3)


def _right(b):
    return np.kron(_I3, b.T)


def _comm(a):
    return _left(a) - _right(a)


@dataclass
class HeomConfig:
    """Hierarchy depth, baths and integrator settings."""

    depth: int = 6
    baths: list = None
    spec: model.SystemSpec = field(default_factory=model.SystemSpec)
    picture: str = model.SCHRODINGER
    step_limit: float = 0.05
    substeps: int | None = None
    expansions: list = None
    ado_cap: int = DEFAULT_ADO_CAP
    trace_tol: float = 1e-5

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigurationError("hierarchy depth must be non-negative")
        if self.picture != model.SCHRODINGER:
            raise ConfigurationError("HEOM runs are only supported in the Schrodinger picture")
        if self.baths is None and self.expansions is None:
            self.baths = default_baths()
        if self.expansions is None:
            self.expansions = [expand_correlation(b) for b in self.baths]


class Hierarchy:
    """Assembled HEOM generator for one configuration."""

    def __init__(self, config):
        self.config = config
        exps = [e for e in config.expansions if e.n_modes]
        self.alpha = np.concatenate([e.alpha for e in exps]) if exps else np.zeros(0, complex)
        self.alpha_tilde = (np.concatenate([e.alpha_tilde for e in exps])
                            if exps else np.zeros(0, complex))
        self.gamma = np.concatenate([e.gamma for e in exps]) if exps else np.zeros(0, complex)
        self.mode_ops = [np.asarray(e.coupling_op, dtype=complex) for e in exps
                         for _ in range(e.n_modes)]
        self.n_modes = len(self.gamma)
        self.depth = config.depth if self.n_modes else 0
        self.table = enumerate_ados(self.n_modes, self.depth, config.ado_cap)
        self.n_ados = self.table.n_ados
        self.h0 = model.build_h0(config.spec)
        eye = sparse.identity(self.n_ados, format="csr")
        self.drive_y = sparse.kron(eye, sparse.csr_matrix(_comm(model.COUPLING_Y))).tocsr()
        self.drive_z = sparse.kron(eye, sparse.csr_matrix(_comm(model.COUPLING_Z))).tocsr()
        self._idrive_y = (1j * self.drive_y).tocsr()
        self._idrive_z = (1j * self.drive_z).tocsr()
        self._ivy = 1j * _comm(model.COUPLING_Y)
        self._ivz = 1j * _comm(model.COUPLING_Z)
        self.decay = 1j * (self.table.indices @ self.gamma) if self.n_modes else np.zeros(1, complex)
        self.static = self._assemble_static()
        self.static_adjoint = self.static.conj().T.tocsr()
        self.config_hash = self._fingerprint()

    def _assemble_static(self):
        n, tab = self.n_ados, self.table
        blocks = [sparse.kron(sparse.identity(n, format="csr"), sparse.csr_matrix(-1j * _comm(self.h0)))]
        blocks.append(sparse.kron(sparse.diags(self.decay), sparse.identity(9)))
        rows_all = np.arange(n)
        for k in range(self.n_modes):
            s = self.mode_ops[k]
            up = tab.plus[:, k]
            has_up = up >= 0
            if np.any(has_up):
                adj = sparse.csr_matrix((np.ones(has_up.sum()), (rows_all[has_up], up[has_up])),
                                        shape=(n, n))
                blocks.append(sparse.kron(adj, sparse.csr_matrix(-1j * _comm(s))))
            down = tab.minus[:, k]
            has_down = down >= 0
            if np.any(has_down):
                nk = tab.indices[has_down, k].astype(float)
                adj_a = sparse.csr_matrix((nk, (rows_all[has_down], down[has_down])), shape=(n, n))
                block = -1j * (self.alpha[k] * _left(s) - self.alpha_tilde[k] * _right(s))
                blocks.append(sparse.kron(adj_a, sparse.csr_matrix(block)))
        total = blocks[0]
        for b in blocks[1:]:
            total = total + b
        total = total.tocsr()
        total.eliminate_zeros()
        return total

    def _fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.alpha, self.alpha_tilde, self.gamma):
            h.update(np.ascontiguousarray(arr, dtype=np.complex128).tobytes())
        for op in self.mode_ops:
            h.update(np.ascontiguousarray(op, dtype=np.complex128).tobytes())
        spec = self.config.spec
        h.update(struct.pack("<i", self.depth))
        h.update(np.array([spec.e1, spec.e2, spec.omega_y, spec.omega_z], dtype=float).tobytes())
        return h.digest()

    # state helpers -------------------------------------------------------
    def cold_start(self, rho0, t=0.0):
        ados = np.zeros((self.n_ados, 3, 3), dtype=complex)
        ados[0] = rho0
        return HierarchyState(ados, float(t), self.config_hash, self.n_modes, self.depth)

    def check(self, state):
        if state.config_hash != self.config_hash or state.ados.shape[0] != self.n_ados:
            raise IncompatibleStateError("hierarchy state was produced by a different configuration")

    # dynamics ------------------------------------------------------------
    def rhs(self, x, fy, fz, adjoint=False):
        """Generator (or its adjoint) applied to the vectorised hierarchy ``x``.

        ``fy`` and ``fz`` are the real field amplitudes.  The drive enters as
        ``+i f [X, rho]`` for ``H = H0 - f X``; the drive superoperator is
        Hermitian, so the adjoint only flips its sign.
        """
        w = fy * self._ivy + fz * self._ivz
        if adjoint:
            out = self.static_adjoint @ x
            w = -w
        else:
            out = self.static @ x
        # the drive acts identically on every ADO: one dense 9x9 product
        out += (x.reshape(-1, 9) @ w.T).reshape(-1)
        return out

    def dense_generator(self, fy=0.0, fz=0.0):
        """Explicit generator matrix; only sensible for small hierarchies."""
        return (self.static + fy * self._idrive_y + fz * self._idrive_z).toarray()

    def rate_bound(self, field_amp=0.0):
        """max(|gamma_k|, ||H||) used to pick the RK4 substep."""
        g = float(np.max(np.abs(self.gamma))) if self.n_modes else 0.0
        hnorm = max(abs(self.config.spec.e1), abs(self.config.spec.e2)) + field_amp
        return max(g, hnorm)


@dataclass
class HierarchyState:
    ados: np.ndarray
    t: float
    config_hash: bytes
    n_modes: int = 0
    depth: int = 0

    @property
    def rho(self):
        return self.ados[0]

    def copy(self):
        return HierarchyState(self.ados.copy(), self.t, self.config_hash, self.n_modes, self.depth)


_HIERARCHY_CACHE = {}


def build_hierarchy(config):
    key = id(config)
    hit = _HIERARCHY_CACHE.get(key)
    if hit is not None and hit.config is config:
        return hit
    hier = Hierarchy(config)
    if len(_HIERARCHY_CACHE) > 8:
        _HIERARCHY_CACHE.clear()
    _HIERARCHY_CACHE[key] = hier
    return hier


@dataclass
class HeomResult:
    state: HierarchyState
    times: np.ndarray
    rho: np.ndarray

    @property
    def trajectory(self):
        return model.Trajectory(self.times, self.rho)


def _initial_vector(hier, item, t0):
    x = np.zeros(hier.n_ados * 9, dtype=complex)
    if isinstance(item, HierarchyState):
        hier.check(item)
        if abs(item.t - t0) > 1e-12:
            raise IncompatibleStateError(f"state time {item.t} does not match start {t0}")
        x[:] = item.ados.reshape(-1)
    else:
        rho = np.asarray(item, dtype=complex)
        if rho.shape != (3, 3):
            raise ConfigurationError("density matrices must be 3x3")
        x[:9] = rho.reshape(-1)
    return x


def substeps_for_field(hier, fields, step_limit):
    amp = max(float(np.max(np.abs(f.env_y)) + np.max(np.abs(f.env_z))) for f in fields)
    return substeps_for(hier.rate_bound(amp), fields[0].dt, step_limit)


def _rk4_intervals(hier, x, field, i0, i1, nsub, adjoint=False, store=None):
    """Fixed-step RK4 over grid intervals; backward in time when ``adjoint``.

    Forward: dx/dt = A(t) x over intervals i0..i1-1.  Adjoint: d chi/dt =
    -A(t)^dagger chi from grid[i1] down to grid[i0].  ``store(k, x)`` is called
    at every grid point reached.
    """
    h = field.dt / nsub
    order = range(i1 - 1, i0 - 1, -1) if adjoint else range(i0, i1)
    for i in order:
        if adjoint:
            t0, step = field.grid[i + 1], -h

            def g(t, y, i=i):
                fy, fz = field.amplitudes(t, i)
                return -hier.rhs(y, fy, fz, adjoint=True)
        else:
            t0, step = field.grid[i], h

            def g(t, y, i=i):
                fy, fz = field.amplitudes(t, i)
                return hier.rhs(y, fy, fz)
        for j in range(nsub):
            x = rk4_step(g, t0 + j * step, x, step)
        if not np.all(np.isfinite(x[:9])):
            raise IntegrationError(f"non-finite hierarchy state near t={field.grid[i]:.4g}")
        if store is not None:
            store(i if adjoint else i + 1, x)
    return x


def propagate_heom(initial, field, config, interval=None, substeps=None, hierarchy=None):
    """Propagate one trajectory over grid intervals ``interval`` = (i0, i1).

    A bare density matrix is a cold start (all auxiliary ADOs zero); a
    HierarchyState is a warm start and must sit at ``grid[i0]``.
    """
    hier = hierarchy or build_hierarchy(config)
    if field.picture != model.SCHRODINGER:
        raise ConfigurationError("HEOM propagation needs a Schrodinger-picture field")
    i0, i1 = (0, field.n_intervals) if interval is None else interval
    if not 0 <= i0 <= i1 <= field.n_intervals:
        raise ConfigurationError(f"bad interval {interval}")
    x = _initial_vector(hier, initial, field.grid[i0])
    nsub = substeps or config.substeps or substeps_for_field(hier, [field], config.step_limit)
    rho = np.empty((i1 - i0 + 1, 3, 3), dtype=complex)
    rho[0] = x[:9].reshape(3, 3)

    def store(k, y):
        rho[k - i0] = y[:9].reshape(3, 3)

    x = _rk4_intervals(hier, x, field, i0, i1, nsub, store=store)
    drift = abs(np.trace(rho[-1]) - np.trace(rho[0]))
    if not drift <= config.trace_tol:
        raise IntegrationError(
            f"trace drifted by {drift:.3e}; raise the depth or shrink the step "
            f"(depth={config.depth}, substeps={nsub})"
        )
    st = HierarchyState(x.reshape(hier.n_ados, 3, 3), float(field.grid[i1]),
                        hier.config_hash, hier.n_modes, hier.depth)
    return HeomResult(st, field.grid[i0:i1 + 1].copy(), rho)


def propagate_batch(initial, fields, config, interval=None, substeps=None, hierarchy=None):
    """Propagate several trajectories with one shared substep count.

    ``initial`` is one density matrix shared by all, or a list of matrices or
    HierarchyStates.  Trajectories are independent; they run one after another.
    """
    fields = list(fields)
    hier = hierarchy or build_hierarchy(config)
    if isinstance(initial, (HierarchyState, np.ndarray)) and not (
            isinstance(initial, np.ndarray) and initial.ndim == 3):
        initial = [initial] * len(fields)
    if len(initial) != len(fields):
        raise ConfigurationError(f"{len(initial)} initial states for {len(fields)} fields")
    nsub = substeps or config.substeps or substeps_for_field(hier, fields, config.step_limit)
    return [propagate_heom(s, f, config, interval, nsub, hier) for s, f in zip(initial, fields)]


def propagate_adjoint(chi_final, field, config, substeps=None, hierarchy=None, top_only=True):
    """Integrate d chi/dt = -A(t)^dagger chi backward from t=1 to t=0.

    ``chi_final`` is a 3x3 operator placed on the top ADO (or a full
    HierarchyState).  Returns chi on the grid, ordered forward in time: the
    top-level operator only, or every ADO when ``top_only`` is false.
    """
    hier = hierarchy or build_hierarchy(config)
    x = np.zeros(hier.n_ados * 9, dtype=complex)
    if isinstance(chi_final, HierarchyState):
        x[:] = chi_final.ados.reshape(-1)
    else:
        x[:9] = np.asarray(chi_final, dtype=complex).reshape(-1)
    nsub = substeps or config.substeps or substeps_for_field(hier, [field], config.step_limit)
    n = field.n_intervals
    shape = (n + 1, 3, 3) if top_only else (n + 1, hier.n_ados, 3, 3)
    out = np.empty(shape, dtype=complex)

    def store(k, y):
        out[k] = y[:9].reshape(3, 3) if top_only else y.reshape(hier.n_ados, 3, 3)

    store(n, x)
    _rk4_intervals(hier, x, field, 0, n, nsub, adjoint=True, store=store)
    return out


def checkpoint(state):
    """Serialise a HierarchyState: fixed header then little-endian doubles."""
    head = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, state.config_hash,
                        state.n_modes, state.depth, float(state.t))
    body = np.stack([state.ados.real, state.ados.imag], axis=1).astype("<f8")
    return head + body.tobytes()


def restore(blob, config, hierarchy=None):
    hier = hierarchy or build_hierarchy(config)
    if len(blob) < _HEADER.size:
        raise CorruptCheckpointError("checkpoint shorter than its header")
    magic, version, digest, k, depth, t = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("bad checkpoint magic")
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    n = count_ados(k, depth) if k else 1
    if len(blob) != _HEADER.size + n * 18 * 8:
        raise CorruptCheckpointError("checkpoint payload has the wrong length")
    if digest != hier.config_hash or k != hier.n_modes or depth != hier.depth:
        raise IncompatibleStateError("checkpoint belongs to a different hierarchy configuration")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(n, 2, 3, 3)
    ados = body[:, 0] + 1j * body[:, 1]
    return HierarchyState(ados, float(t), digest, k, depth)


def trajectory_rows(times, rho):
    """CSV rows (t, P0, P1, P2, Re rho12, Im rho12, |rho12|, trace)."""
    rows = []
    for t, r in zip(times, rho):
        p = np.real(np.diag(r))
        c = r[1, 2]
        rows.append((float(t), *map(float, p), float(c.real), float(c.imag), float(abs(c)),
                     float(np.real(np.trace(r)))))
    return rows


TRAJECTORY_HEADER = ("t", "P0", "P1", "P2", "re_rho12", "im_rho12", "abs_rho12", "trace")


def basis_map(config, n_steps=100, basis=None, hierarchy=None, substeps=None):
    """Field-free images Lambda_t[F_m] of operator basis elements.

    Each element starts on the top ADO with all auxiliary ADOs zero.
    Returns (times, maps) with maps of shape (n_steps+1, n_basis, 3, 3).
    """
    from .lindblad import orthonormal_basis

    hier = hierarchy or build_hierarchy(config)
    basis = orthonormal_basis(3) if basis is None else basis
    zero = model.ControlField.zeros(n_steps, picture=model.SCHRODINGER, spec=config.spec)
    maps = np.empty((n_steps + 1, len(basis), 3, 3), dtype=complex)
    for m, op in enumerate(basis):
        maps[:, m] = propagate_heom(op, zero, config, substeps=substeps, hierarchy=hier).rho
    return zero.grid.copy(), maps
