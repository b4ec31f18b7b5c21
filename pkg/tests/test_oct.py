import numpy as np
import pytest

from vcontrol import heom, model, oct
from vcontrol.errors import ConfigurationError, NumericalError
from vcontrol.model import PI_OVER_SQRT2


def random_hermitian(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    return a + a.conj().T


def test_increment_antisymmetric(rng):
    for op in (model.COUPLING_Y, model.COUPLING_Z):
        for _ in range(20):
            r, c = random_hermitian(rng), random_hermitian(rng)
            a = oct.field_increment(r, c, op, 2e-4)
            b = oct.field_increment(c, r, op, 2e-4)
            assert abs(a + b) < 1e-9 * max(1.0, abs(a))


def test_increment_scales_with_inverse_alpha(rng):
    r, c = random_hermitian(rng), random_hermitian(rng)
    a1 = oct.field_increment(r, c, model.COUPLING_Y, 2e-4, dt=0.01)
    a2 = oct.field_increment(r, c, model.COUPLING_Y, 4e-4, dt=0.01)
    assert a2 == pytest.approx(a1 / 2, rel=1e-14)


def test_frozen_optimum_has_no_increment():
    t = model.target_state()
    for op in (model.COUPLING_Y, model.COUPLING_Z):
        assert oct.field_increment(t, t, op, 2e-4) == 0.0


def test_guess_shape_and_sampling():
    g = oct.sine_squared_guess()
    assert g.n_intervals == 400 and np.all(np.isreal(g.env_y))
    ay, az = oct.envelope_areas(g)
    # holding each midpoint sample over its interval attenuates the carrier by sinc(w dt / 2)
    spec = model.SystemSpec()
    for a, w in ((ay, spec.omega_y), (az, spec.omega_z)):
        x = w * g.dt / 2
        assert a == pytest.approx(PI_OVER_SQRT2 * np.sin(x) / x, rel=1e-4)
    with pytest.raises(ConfigurationError):
        oct.sine_squared_guess(n_steps=40)


def test_carrier_fields_rejected():
    f = model.ControlField.sine_squared(PI_OVER_SQRT2, n_steps=200)
    with pytest.raises(ConfigurationError):
        oct.run_oct(f, oct.OctConfig(iterations=1))
    with pytest.raises(ConfigurationError):
        oct.OctConfig(alpha=0.0)


def test_zero_guess_gives_zero_update():
    g = np.linspace(0, 1, 401)
    zero = oct.raw_field(np.zeros_like(g), np.zeros_like(g), g)
    res = oct.run_oct(zero, oct.OctConfig(iterations=1))
    assert np.all(res.field.env_y == 0) and np.all(res.field.env_z == 0)
    assert res.fidelities == [0.0, 0.0]


def test_isolated_matches_isolated_propagator():
    # the depth-0 kernel is the plain unitary propagator
    g = oct.sine_squared_guess()
    cfg = oct.OctConfig(iterations=0)
    res = oct.run_oct(g, cfg)
    iso = model.propagate_isolated(model.ground_state(), g, step_limit=0.05)
    assert np.max(np.abs(res.final_rho - iso.final)) < 1e-6


def test_one_iteration_does_not_decrease():
    res = oct.run_oct(oct.sine_squared_guess(), oct.OctConfig(iterations=1))
    assert res.fidelities[1] >= res.fidelities[0]
    assert np.all(np.isreal(res.field.env_y)) and np.all(np.isreal(res.field.env_z))


@pytest.mark.parametrize("area, branch", [(1.9, 1), (2.6, 1), (6.2, 3)])
def test_converged_areas_near_odd_multiples(area, branch):
    res = oct.run_oct(oct.sine_squared_guess(area), oct.OctConfig(iterations=15))
    assert np.all(np.diff(res.fidelities) >= -1e-6)
    assert res.fidelities[-1] > 0.99
    for a in res.areas[-1]:
        assert abs(a - branch * PI_OVER_SQRT2) / (branch * PI_OVER_SQRT2) < 0.02


def test_top_only_gradient_runs():
    cfg = oct.OctConfig(iterations=1, gradient=oct.TOP,
                        heom_config=heom.HeomConfig(depth=1, step_limit=0.2))
    res = oct.run_oct(oct.sine_squared_guess(n_steps=400), cfg)
    assert len(res.fidelities) == 2 and np.isfinite(res.fidelities[-1])


def test_costate_growth_guard():
    cfg = oct.OctConfig(iterations=1, max_chi_growth=0.5)
    with pytest.raises(NumericalError):
        oct.run_oct(oct.sine_squared_guess(), cfg)


def test_result_csv(tmp_path):
    res = oct.run_oct(oct.sine_squared_guess(), oct.OctConfig(iterations=1))
    p = tmp_path / "it.csv"
    res.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iteration,fidelity,area_y,area_z" and len(lines) == 3
