import math

import numpy as np
import pytest

from vcontrol import model
from vcontrol.errors import ConfigurationError, IntegrationError
from vcontrol.model import PI_OVER_SQRT2, ControlField, SystemSpec


def test_default_h0():
    h0 = model.build_h0(SystemSpec())
    assert np.allclose(np.diag(h0).real, [0.0, 136.7268, 138.0876])
    assert np.count_nonzero(h0 - np.diag(np.diag(h0))) == 0


def test_h0_degenerate_and_simple():
    assert np.allclose(model.build_h0(SystemSpec(e1=0.0, e2=0.0)), 0)
    assert np.allclose(model.build_h0(SystemSpec(e1=1.0, e2=2.0)), np.diag([0, 1, 2]))


def test_carriers_default_to_energies():
    s = SystemSpec()
    assert s.omega_y == s.e1 and s.omega_z == s.e2
    with pytest.raises(ConfigurationError):
        SystemSpec(e1=-1.0)


def test_h_rwa_examples():
    spec = SystemSpec()
    zero = ControlField.zeros(10)
    assert np.allclose(model.build_h_rwa(zero, 0.3, spec), 0)
    c = ControlField.constant(2.22, 2.22, n_steps=10)
    h = model.build_h_rwa(c, 0.5, spec)
    assert np.isclose(h[0, 1], -1.11) and np.isclose(h[0, 2], -1.11)
    assert np.isclose(h[1, 0], -1.11) and np.isclose(h[2, 0], -1.11)
    # -1/2 [[0, W, 0], [W, -2D, 0], [0, 0, 0]] with W = 1, D = 0.5
    h = model.build_h_rwa(ControlField.constant(1.0, 0.0, n_steps=4), 0.1,
                          SystemSpec(detuning_y=0.5))
    assert np.allclose(h, [[0, -0.5, 0], [-0.5, 0.5, 0], [0, 0, 0]])


def test_picture_mismatch():
    spec = SystemSpec()
    with pytest.raises(ConfigurationError):
        model.build_h_rwa(ControlField.zeros(200, picture=model.SCHRODINGER, spec=spec), 0.0, spec)
    with pytest.raises(ConfigurationError):
        model.build_h_schrodinger(ControlField.zeros(10), 0.0, spec)


def test_h_schrodinger():
    spec = SystemSpec()
    z = ControlField.zeros(200, picture=model.SCHRODINGER, spec=spec)
    assert np.allclose(model.build_h_schrodinger(z, 0.37, spec), model.build_h0(spec))
    f = ControlField(np.linspace(0, 1, 201), np.ones(201), np.zeros(201),
                     picture=model.SCHRODINGER, omega_y=spec.omega_y, omega_z=spec.omega_z)
    t = 2 * math.pi / spec.omega_y  # cos(omega_y t) = 1
    h = model.build_h_schrodinger(f, t, spec)
    assert np.allclose(h, model.build_h0(spec) - model.COUPLING_Y)


def test_sampling_rule():
    spec = SystemSpec()
    with pytest.raises(ConfigurationError):
        ControlField.zeros(20, picture=model.SCHRODINGER, spec=spec)
    ControlField.zeros(50, picture=model.SCHRODINGER, spec=spec)


def test_envelope_shape_checks():
    with pytest.raises(ConfigurationError):
        ControlField(np.linspace(0, 1, 5), np.zeros(4), np.zeros(5))
    with pytest.raises(ConfigurationError):
        ControlField(np.array([0, 0.2, 1.0]), np.zeros(3), np.zeros(3))


def test_target_state():
    t = model.target_state()
    expect = np.zeros((3, 3))
    expect[1:, 1:] = 0.5
    assert np.allclose(t, expect)
    assert np.isclose(np.trace(t), 1) and np.isclose(model.purity(t), 1)


def test_fidelity_examples():
    t = model.target_state()
    assert np.isclose(model.fidelity(t, t), 1)
    assert np.isclose(model.fidelity(model.ground_state(), t), 0)
    assert np.isclose(model.fidelity(np.diag([0, 0.5, 0.5]), t), 0.5)


def test_pulse_area():
    g = np.linspace(0, 1, 1001)
    assert np.isclose(model.pulse_area(np.full_like(g, 2.2214), g), 2.2214)
    assert model.pulse_area(np.zeros_like(g), g) == 0
    assert np.isclose(model.pulse_area(3.0 * np.sin(np.pi * g) ** 2, g), 1.5, atol=1e-6)


def test_isolated_zero_field():
    rho0 = np.diag([0.2, 0.5, 0.3]).astype(complex)
    tr = model.propagate_isolated(rho0, ControlField.zeros(50))
    assert np.allclose(tr.populations(), [0.2, 0.5, 0.3])


def test_area_rule_rwa():
    tr = model.propagate_isolated(model.ground_state(), ControlField.constant(PI_OVER_SQRT2))
    p = tr.populations()[-1]
    assert p[0] < 1e-3 and abs(p[1] - 0.5) < 1e-3 and abs(p[2] - 0.5) < 1e-3
    assert abs(abs(tr.final[1, 2]) - 0.5) < 1e-3


def test_three_pi_branch():
    a = model.propagate_isolated(model.ground_state(), ControlField.constant(PI_OVER_SQRT2)).final
    b = model.propagate_isolated(model.ground_state(), ControlField.constant(3 * PI_OVER_SQRT2)).final
    assert np.max(np.abs(a - b)) < 1e-2


@pytest.mark.parametrize("m", [0, 1, 2])
def test_odd_multiples_reach_target(m):
    f = ControlField.constant((2 * m + 1) * PI_OVER_SQRT2)
    rho = model.propagate_isolated(model.ground_state(), f).final
    assert model.fidelity(rho, model.target_state()) > 0.999


def test_area_scan_argmax():
    areas = np.linspace(0, 3, 301)
    fids = [model.fidelity(model.propagate_isolated(model.ground_state(),
                                                    ControlField.constant(a, n_steps=10)).final,
                           model.target_state()) for a in areas]
    assert abs(areas[int(np.argmax(fids))] - PI_OVER_SQRT2) < 0.02


def test_trajectory_invariants(rng):
    f = ControlField(np.linspace(0, 1, 51), rng.uniform(0, 3, 51), rng.uniform(0, 3, 51))
    tr = model.propagate_isolated(model.ground_state(), f)
    for r in tr.states:
        assert model.is_hermitian(r, 1e-10)
        assert abs(np.trace(r) - 1) < 1e-8
        assert abs(model.purity(r) - 1) < 1e-8


def test_rwa_vs_schrodinger():
    spec = SystemSpec()
    area = PI_OVER_SQRT2
    rwa = model.propagate_isolated(model.ground_state(), ControlField.sine_squared(
        area, n_steps=200, picture=model.RWA), spec).final
    sch = model.propagate_isolated(model.ground_state(), ControlField.sine_squared(
        area, n_steps=400, picture=model.SCHRODINGER, spec=spec), spec).final
    assert np.max(np.abs(np.diag(rwa).real - np.diag(sch).real)) < 2e-2
    # the carrier-frame target scores the Schrodinger run like the RWA run
    assert abs(model.fidelity(sch, model.carrier_frame_target(spec=spec))
               - model.fidelity(rwa, model.target_state())) < 2e-2


def test_trace_drift_detected():
    # an absurd step limit forces one RK4 step per interval far outside stability
    f = ControlField.constant(1e3, n_steps=200)
    with np.errstate(all="ignore"), pytest.raises(IntegrationError):
        model.propagate_isolated(model.ground_state(), f, step_limit=1e9)
