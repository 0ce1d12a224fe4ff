import numpy as np
import pytest

from phasedecoder.decoder import DecoderConfig, DecoderWeights, decoder_forward_array, init_decoder
from phasedecoder.field import ComplexField, FocusStack, RealImage
from phasedecoder.forward import MeasurementModel, forward_stack
from phasedecoder.grad import (GradTape, LossReport, dpd_forward, dpd_loss_and_grad,
                               wf_forward, wf_loss_and_grad, zernike_pupils)
from phasedecoder.zernike import make_zernike_basis, synthesize_pupil

CFG = DecoderConfig(channels=4, seed_side=8, output_side=32, layers=3, rng_seed=11)


def rel_err(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def dpd_problem(geo32, rng):
    basis = make_zernike_basis(geo32, 3)
    seed, w = init_decoder(CFG)
    zw = rng.normal(0, 0.5, size=(2, 3))
    amps = rng.uniform(0.3, 1.5, size=(2, 32, 32))
    return FocusStack.from_array(geo32.grid, amps), seed, w, zw, basis


def test_loss_report_total(dpd_problem):
    stack, seed, w, zw, basis = dpd_problem
    rep, _, _ = dpd_loss_and_grad(stack, seed, w, zw, basis, CFG)
    assert rep.total == pytest.approx(rep.per_measurement.sum(), rel=1e-12)
    assert np.all(rep.per_measurement >= 0)


def test_dpd_matched_weights_zero_loss(dpd_problem):
    _, seed, w, zw, basis = dpd_problem
    geo = basis.geometry
    phi = decoder_forward_array(seed, w, CFG)
    model = MeasurementModel(geo, [synthesize_pupil(basis, c) for c in zw])
    stack = forward_stack(RealImage(geo.grid, phi), model)
    rep, gw, gz = dpd_loss_and_grad(stack, seed, w, zw, basis, CFG)
    assert rep.total < 1e-24
    assert max(np.max(np.abs(g)) for g in gw.arrays()) < 1e-10
    assert np.max(np.abs(gz)) < 1e-10


def test_dpd_gradient_finite_differences(dpd_problem, rng):
    stack, seed, w, zw, basis = dpd_problem
    _, gw, gz = dpd_loss_and_grad(stack, seed, w, zw, basis, CFG)
    h = 1e-5
    scale = max(np.max(np.abs(g)) for g in gw.arrays() + [gz])
    arrays = w.arrays()
    for ai, (a, g) in enumerate(zip(arrays, gw.arrays())):
        for _ in range(3):
            idx = tuple(rng.integers(0, s) for s in a.shape)
            vals = []
            for sgn in (1, -1):
                pert = [x.copy() for x in arrays]
                pert[ai][idx] += sgn * h
                vals.append(dpd_forward(stack, seed, DecoderWeights.from_arrays(pert, 3),
                                        zw, basis, CFG).total)
            fd = (vals[0] - vals[1]) / (2 * h)
            assert rel_err(fd, g[idx], 1e-6 * scale) < 1e-4
    for idx in np.ndindex(*zw.shape):
        vals = []
        for sgn in (1, -1):
            z2 = zw.copy()
            z2[idx] += sgn * h
            vals.append(dpd_forward(stack, seed, w, z2, basis, CFG).total)
        fd = (vals[0] - vals[1]) / (2 * h)
        assert rel_err(fd, gz[idx], 1e-6 * scale) < 1e-4


def test_zero_generator_consistency(geo32, rng):
    """loss(Y, 0) = ||Y||^2: a pupil blocking everything produces zero output."""
    basis = make_zernike_basis(geo32, 3)
    amps = rng.uniform(0, 2, size=(2, 32, 32))
    stack = FocusStack.from_array(geo32.grid, amps)
    obj = ComplexField(geo32.grid, np.zeros((32, 32)))
    model = MeasurementModel(geo32, [synthesize_pupil(basis, np.zeros(3))] * 2)
    rep = wf_forward(stack, obj, model)
    assert rep.total == pytest.approx(np.sum(amps ** 2), rel=1e-12)


def test_tape_records_and_replays(dpd_problem):
    stack, seed, w, zw, basis = dpd_problem
    tape = GradTape()
    rep, _, _ = dpd_loss_and_grad(stack, seed, w, zw, basis, CFG, tape=tape)
    assert tape.names == ["decoder", "transmission", "spectrum", "pupils", "modulus"]
    assert tape.replay().total == rep.total
    assert tape.loss is rep


@pytest.fixture
def wf_problem(geo32, rng):
    g = geo32.grid
    basis = make_zernike_basis(geo32, 5)
    model = MeasurementModel(geo32, [synthesize_pupil(basis, rng.normal(0, 1, 5))
                                     for _ in range(2)])
    truth = RealImage(g, rng.normal(0, 1, g.shape))
    return forward_stack(truth, model), model, truth


def test_wf_truth_is_stationary(wf_problem):
    stack, model, truth = wf_problem
    o = ComplexField(truth.grid, np.exp(1j * truth.values))
    rep, grad = wf_loss_and_grad(stack, o, model)
    assert rep.total < 1e-24
    assert np.max(np.abs(grad)) < 1e-10


def test_wf_gradient_finite_differences(geo32, rng):
    g = geo32.grid
    basis = make_zernike_basis(geo32, 5)
    model = MeasurementModel(geo32, [synthesize_pupil(basis, rng.normal(0, 1, 5))
                                     for _ in range(2)])
    stack = FocusStack.from_array(g, rng.uniform(0.2, 1.5, size=(2, 32, 32)))
    o = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    _, grad = wf_loss_and_grad(stack, ComplexField(g, o), model)
    h = 1e-5
    scale = np.max(np.abs(grad))
    for _ in range(20):
        idx = tuple(rng.integers(0, 32, size=2))
        for unit, part in ((1.0, np.real), (1j, np.imag)):
            vals = []
            for sgn in (1, -1):
                o2 = o.copy()
                o2[idx] += sgn * h * unit
                vals.append(wf_forward(stack, ComplexField(g, o2), model).total)
            fd = (vals[0] - vals[1]) / (2 * h)
            assert rel_err(fd, part(grad[idx]), 1e-6 * scale) < 1e-4


def test_wf_global_phase_direction(geo32, rng):
    g = geo32.grid
    basis = make_zernike_basis(geo32, 5)
    model = MeasurementModel(geo32, [synthesize_pupil(basis, rng.normal(0, 1, 5))
                                     for _ in range(2)])
    stack = FocusStack.from_array(g, rng.uniform(0.2, 1.5, size=(2, 32, 32)))
    o = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    _, grad = wf_loss_and_grad(stack, ComplexField(g, o), model)
    directional = np.real(np.vdot(grad, 1j * o))
    assert abs(directional) < 1e-8 * np.linalg.norm(grad) * np.linalg.norm(o)


def test_zero_amplitude_pixels_do_not_produce_nan(geo32):
    g = geo32.grid
    basis = make_zernike_basis(geo32, 3)
    model = MeasurementModel(geo32, [synthesize_pupil(basis, np.zeros(3))])
    stack = FocusStack.from_array(g, np.ones((1, 32, 32)))
    rep, grad = wf_loss_and_grad(stack, ComplexField(g, np.zeros(g.shape)), model)
    assert np.all(np.isfinite(grad)) and np.isfinite(rep.total)


def test_zernike_pupils_match_synthesis(geo32, rng):
    basis = make_zernike_basis(geo32, 4)
    zw = rng.normal(size=(3, 4))
    p = zernike_pupils(basis, zw)
    for n in range(3):
        np.testing.assert_allclose(p[n], synthesize_pupil(basis, zw[n]).values, atol=1e-14)
