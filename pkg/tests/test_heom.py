import math

import numpy as np
import pytest
from scipy.linalg import expm

from vcontrol import bath, heom, lindblad, model
from vcontrol.errors import (
    CapacityError,
    ConfigurationError,
    CorruptCheckpointError,
    IncompatibleStateError,
)
from vcontrol.model import ControlField


def sch_zero(n=100, spec=None):
    return ControlField.zeros(n, picture=model.SCHRODINGER, spec=spec or model.SystemSpec())


def guess(n=100):
    return ControlField.sine_squared(model.PI_OVER_SQRT2, n_steps=n)


def zero_baths():
    return [b.scaled(0.0) for b in bath.default_baths()]


def random_operator(rng):
    return rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))


def random_density(rng):
    a = random_operator(rng)
    r = a @ a.conj().T
    return r / np.trace(r)


# enumeration -----------------------------------------------------------------

def test_small_enumeration():
    t = heom.enumerate_ados(1, 2)
    assert t.n_ados == 3
    assert [tuple(x) for x in t.indices] == [(0,), (1,), (2,)]


def test_default_count():
    assert heom.enumerate_ados(8, 6).n_ados == 3003 == math.comb(14, 6)


def test_graded_order():
    t = heom.enumerate_ados(3, 3)
    depths = t.indices.sum(axis=1)
    assert np.all(np.diff(depths) >= 0)
    assert len(set(map(tuple, t.indices))) == t.n_ados


def test_neighbour_involution():
    t = heom.enumerate_ados(4, 3)
    for i in range(t.n_ados):
        for k in range(t.n_modes):
            up = t.plus[i, k]
            if up >= 0:
                assert t.minus[up, k] == i
                diff = t.indices[up] - t.indices[i]
                assert diff[k] == 1 and np.count_nonzero(diff) == 1
            else:
                assert t.indices[i].sum() == 3
            if t.indices[i, k] == 0:
                assert t.minus[i, k] == -1


def test_capacity_guard():
    with pytest.raises(CapacityError):
        heom.enumerate_ados(8, 6, cap=3002)


# generator -----------------------------------------------------------------

def test_top_row_trace_free(rng):
    hier = heom.build_hierarchy(heom.HeomConfig(depth=2))
    for _ in range(20):
        x = np.zeros(hier.n_ados * 9, dtype=complex)
        x[:9] = random_density(rng).reshape(-1)
        x[9:] = 0.1 * (rng.normal(size=x.size - 9) + 1j * rng.normal(size=x.size - 9))
        d = hier.rhs(x, *rng.uniform(-3, 3, 2))
        assert abs(np.trace(d[:9].reshape(3, 3))) < 1e-12


def test_adjoint_matches_dense_generator(rng):
    # depth-2, K=2 miniature: one underdamped Lorentzian without Matsubara terms
    b = bath.BathSpec(bath.LorentzianParams(((2.0, 3.0, 0.5),)), 1.0, bath.coupling_operator())
    cfg = heom.HeomConfig(depth=2, baths=[b], step_limit=0.005)
    hier = heom.build_hierarchy(cfg)
    assert hier.n_modes == 2 and hier.n_ados == 6
    for fy, fz in ((0.0, 0.0), (1.3, -0.4)):
        a = hier.dense_generator(fy, fz)
        x = rng.normal(size=54) + 1j * rng.normal(size=54)
        assert np.allclose(hier.rhs(x, fy, fz), a @ x, atol=1e-10)
        assert np.allclose(hier.rhs(x, fy, fz, adjoint=True), a.conj().T @ x, atol=1e-10)
    # field-free backward propagation equals the adjoint of the exact propagator
    f = sch_zero(50, cfg.spec)
    chi = random_operator(rng)
    out = heom.propagate_adjoint(chi, f, cfg, top_only=False)
    x1 = np.zeros(54, dtype=complex)
    x1[:9] = chi.reshape(-1)
    ref = expm(hier.dense_generator()).conj().T @ x1
    assert np.max(np.abs(out[0].reshape(-1) - ref)) < 1e-8


# propagation -----------------------------------------------------------------

def test_zero_coupling_equals_isolated(rng):
    cfg = heom.HeomConfig(depth=3, baths=zero_baths(), step_limit=0.05)
    f = guess()
    r = heom.propagate_heom(model.ground_state(), f, cfg)
    iso = model.propagate_isolated(model.ground_state(), f, cfg.spec,
                                   step_limit=cfg.step_limit)
    assert np.max(np.abs(r.rho - iso.states)) < 1e-9
    assert np.max(np.abs(r.state.ados[1:])) == 0.0


def test_weak_coupling_perturbation_theory():
    # second-order oracle for population leaking |2> -> |1> through sigma_x coupling:
    # P1(t) = 2 Re int_0^t (t - s) exp(i D s) C(s) ds, with C from direct quadrature.
    # The relative remainder is fourth order, i.e. proportional to p (3.3% here).
    spec = model.SystemSpec()
    gap = spec.e2 - spec.e1
    b = bath.BathSpec(bath.LorentzianParams(((0.005, 1.5, 0.5),)), 0.05, bath.coupling_operator())
    e = bath.expand_correlation(b, include_matsubara=True, n_matsubara=10)
    cfg = heom.HeomConfig(depth=2, expansions=[e], step_limit=0.05)
    f = sch_zero(100, spec)
    p1 = heom.propagate_heom(model.projector(2, 2), f, cfg).rho[:, 1, 1].real
    s = np.linspace(0, 1, 501)
    c = np.array([bath.correlation_quadrature(x, b) for x in s])
    oracle = np.zeros_like(p1)
    for k, t in enumerate(f.grid[1:], 1):
        m = s <= t + 1e-12
        oracle[k] = 2 * np.real(np.trapezoid((t - s[m]) * np.exp(1j * gap * s[m]) * c[m], s[m]))
    assert np.max(np.abs(p1 - oracle)) / np.max(oracle) < 0.05


def test_ground_state_stationary():
    r = heom.propagate_heom(model.ground_state(), sch_zero(), heom.HeomConfig(step_limit=0.2))
    assert np.max(np.abs(r.rho - model.ground_state())) < 1e-10


def test_oscillatory_relaxation():
    r = heom.propagate_heom(model.projector(1, 1), sch_zero(), heom.HeomConfig(step_limit=0.2))
    p1 = r.rho[:, 1, 1].real
    turns = np.count_nonzero(np.diff(np.sign(np.diff(p1))))
    assert turns >= 2
    assert p1.min() < 0.95


def test_hermiticity_and_trace():
    cfg = heom.HeomConfig(depth=4, step_limit=0.2)
    r = heom.propagate_heom(model.ground_state(), guess(), cfg)
    assert np.max(np.abs(r.rho - np.conj(np.transpose(r.rho, (0, 2, 1))))) < 1e-8
    assert np.max(np.abs(np.trace(r.rho, axis1=1, axis2=2) - 1)) < 1e-7


def test_linearity(rng):
    cfg = heom.HeomConfig(depth=3, step_limit=0.2)
    f = guess(50)
    a, b = random_operator(rng), random_operator(rng)
    ra = heom.propagate_heom(a, f, cfg).rho
    rb = heom.propagate_heom(b, f, cfg).rho
    rab = heom.propagate_heom(0.7 * a - 1.9j * b, f, cfg).rho
    assert np.max(np.abs(rab - (0.7 * ra - 1.9j * rb))) < 1e-9


def test_warm_start_chain():
    cfg = heom.HeomConfig(depth=3, step_limit=0.2)
    f = guess(100)
    nsub = heom.substeps_for_field(heom.build_hierarchy(cfg), [f], cfg.step_limit)
    whole = heom.propagate_heom(model.ground_state(), f, cfg, substeps=nsub)
    state = model.ground_state()
    for i in range(50):
        part = heom.propagate_heom(state, f, cfg, interval=(2 * i, 2 * i + 2), substeps=nsub)
        # round trip through bytes as an RL step would
        state = heom.restore(heom.checkpoint(part.state), cfg)
    assert np.max(np.abs(state.ados - whole.state.ados)) < 1e-9


def test_warm_start_time_mismatch():
    cfg = heom.HeomConfig(depth=2, step_limit=0.2)
    f = guess(100)
    st = heom.propagate_heom(model.ground_state(), f, cfg, interval=(0, 3)).state
    with pytest.raises(IncompatibleStateError):
        heom.propagate_heom(st, f, cfg, interval=(4, 6))


def test_rwa_field_rejected():
    with pytest.raises(ConfigurationError):
        heom.propagate_heom(model.ground_state(), ControlField.zeros(10), heom.HeomConfig(depth=1))
    with pytest.raises(ConfigurationError):
        heom.HeomConfig(picture=model.RWA)


def test_weak_coupling_scaling():
    # HEOM minus golden-rule Lindblad shrinks linearly in the squared coupling scale
    spec = model.SystemSpec()
    f = ControlField.sine_squared(model.PI_OVER_SQRT2, n_steps=200, spec=spec)
    errs = []
    for eps2 in (0.01, 0.02, 0.04):
        baths = [b.scaled(eps2) for b in bath.default_baths()]
        h = heom.propagate_heom(model.ground_state(), f,
                                heom.HeomConfig(depth=2, baths=baths, step_limit=0.05)).rho
        chans = lindblad.golden_rule_channels(baths, spec)
        lin = lindblad.propagate_lindblad(model.ground_state(), f, chans, spec,
                                          step_limit=0.05).states
        errs.append(np.max(np.abs(np.diagonal(h, axis1=1, axis2=2)
                                  - np.diagonal(lin, axis1=1, axis2=2))))
    slopes = np.diff(np.log(errs)) / math.log(2)
    assert np.all(np.abs(slopes - 1) < 0.1)


# checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(rng):
    cfg = heom.HeomConfig()
    hier = heom.build_hierarchy(cfg)
    ados = rng.normal(size=(hier.n_ados, 3, 3)) + 1j * rng.normal(size=(hier.n_ados, 3, 3))
    st = heom.HierarchyState(ados, 0.37, hier.config_hash, hier.n_modes, hier.depth)
    blob = heom.checkpoint(st)
    assert len(blob) == heom._HEADER.size + 3003 * 9 * 2 * 8
    back = heom.restore(blob, cfg)
    assert np.array_equal(back.ados, st.ados) and back.t == st.t
    assert back.config_hash == st.config_hash


def test_checkpoint_guards():
    cfg = heom.HeomConfig(depth=2)
    st = heom.build_hierarchy(cfg).cold_start(model.ground_state())
    blob = heom.checkpoint(st)
    with pytest.raises(IncompatibleStateError):
        heom.restore(blob, heom.HeomConfig(depth=3))
    with pytest.raises(CorruptCheckpointError):
        heom.restore(b"XXXXXXXX" + blob[8:], cfg)
    with pytest.raises(CorruptCheckpointError):
        heom.restore(blob[:-8], cfg)
    with pytest.raises(CorruptCheckpointError):
        heom.restore(blob[:10], cfg)


def test_trajectory_rows():
    rows = heom.trajectory_rows([0.0], [model.target_state()])
    assert len(rows[0]) == len(heom.TRAJECTORY_HEADER)
    assert np.allclose(rows[0], (0, 0, 0.5, 0.5, 0.5, 0, 0.5, 1))
