"""Randomized invariants (hypothesis)."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from wavecastr import esn, qdyn as Q
from wavecastr import spectral as S
from wavecastr.qdyn import Trajectory

from oracles import ridge_gradient_descent, ridge_objective, stationary_trajectory

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)


def _cnormal(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# -- propagation -------------------------------------------------------------

@FAST
@given(x0=st.floats(-2, 2), p0=st.floats(-3, 3), w=st.floats(0.6, 1.5),
       dt=st.floats(1e-3, 2e-2), n=st.integers(1, 400))
def test_unitarity_and_energy(x0, p0, w, dt, n):
    g = Q.build_grid([(-12, 12, 256)])
    pot = Q.Harmonic1D(1.0, 0.0)
    psi = Q.initial_wavepacket(Q.WavepacketSpec((x0,), p0, (w,)), g)
    tr = Q.propagate(psi, pot, Q.TrajectorySpec(dt, n))
    end = Q.Wavefunction(g, tr.frames[-1])
    assert abs(end.norm() - 1) <= 1e-10
    # Strang splitting conserves a shadow Hamiltonian; the drift is O(dt^2)
    e0, e1 = Q.mean_energy(psi, pot), Q.mean_energy(end, pot)
    assert abs(e1 - e0) <= dt**2 * e0 + 1e-9


# -- spectral ----------------------------------------------------------------

@FAST
@given(seed=seeds, dv=st.floats(0.01, 1.0), n=st.integers(2, 64))
def test_phase_fix_idempotent(seed, dv, n):
    rng = np.random.default_rng(seed)
    v = _cnormal(rng, n)
    once = S.phase_fix(v, dv)
    twice = S.phase_fix(once, dv)
    np.testing.assert_array_equal(once, twice)
    assert np.sum(np.abs(once) ** 2) * dv == pytest.approx(1.0, abs=1e-12)
    k = int(np.argmax(np.abs(once)))
    assert once[k].imag == 0.0 and once[k].real > 0


@FAST
@given(seed=seeds, theta=st.floats(0, 2 * np.pi), phi=st.floats(0, 2 * np.pi))
def test_overlap_phase_invariant(seed, theta, phi):
    g = Q.build_grid([(-4, 4, 32)])
    rng = np.random.default_rng(seed)
    a, b = _cnormal(rng, 32), _cnormal(rng, 32)
    base = S.overlap(Q.Wavefunction(g, a), Q.Wavefunction(g, b))
    rot = S.overlap(Q.Wavefunction(g, np.exp(1j * theta) * a), Q.Wavefunction(g, np.exp(1j * phi) * b))
    assert abs(rot - base) <= 1e-12
    assert 0.0 <= base <= 1.0


@FAST
@given(energy=st.floats(-20, 20), n=st.integers(64, 600), dt=st.floats(0.005, 0.05))
def test_autocorrelation_bounds(energy, n, dt):
    g = Q.build_grid([(-10, 10, 64)])
    phi = S.reference_eigenfunction("ho1d", 1, g)
    tr = Trajectory(g, dt, stationary_trajectory(phi.vector, energy, dt, n))
    a = S.autocorrelation(tr).values
    assert abs(a[0] - 1) <= 1e-9
    assert np.all(np.abs(a) <= 1 + 1e-9)
    assert np.all(np.abs(np.abs(a) - 1) <= 1e-8)


@FAST
@given(energy=st.floats(-5, 5), n=st.integers(256, 2048), pad=st.sampled_from([4, 8, 16]))
def test_window_invariance(energy, n, pad):
    dt = 0.01
    a = S.CorrelationSeries(dt, np.exp(-1j * energy * dt * np.arange(n)))
    found = []
    for w in S.WINDOWS:
        spec = S.energy_spectrum(a, w, pad)
        found.append(S.find_peaks(spec, 1.0)[0].energy)
    assert abs(found[0] - found[1]) < spec.delta_e / 2
    assert abs(found[1] - energy) < spec.delta_e


@FAST
@given(energy=st.floats(-5, 5), n=st.integers(64, 1024), k=st.integers(2, 4))
def test_parseval_linear_scaling(energy, n, k):
    # zero padding to a common length keeps the spectral grid fixed
    dt = 0.01
    long_n = k * n
    vals = np.exp(-1j * energy * dt * np.arange(long_n))
    s_short = S.energy_spectrum(S.CorrelationSeries(dt, vals[:n]), "rectangular", 8 * k)
    s_long = S.energy_spectrum(S.CorrelationSeries(dt, vals), "rectangular", 8)
    ratio = np.sum(s_long.intensities ** 2) / np.sum(s_short.intensities ** 2)
    assert ratio == pytest.approx(k, rel=1e-9)


# -- ridge -------------------------------------------------------------------

ridge_shapes = st.tuples(st.integers(5, 60), st.integers(1, 12), st.integers(1, 4))


@settings(max_examples=10, deadline=None)
@given(seed=seeds, shape=ridge_shapes, gamma=st.floats(1e-2, 10.0))
def test_ridge_optimal(seed, shape, gamma):
    T, N, L = shape
    rng = np.random.default_rng(seed)
    X, Y = _cnormal(rng, (T, N)), _cnormal(rng, (T, L))
    W = esn.fit_ridge_complex(X, Y, gamma).W_out
    W_gd = ridge_gradient_descent(X, Y, gamma)
    assert ridge_objective(X, Y, W, gamma) <= ridge_objective(X, Y, W_gd, gamma) + 1e-9
    # nudging the solution never lowers the objective
    base = ridge_objective(X, Y, W, gamma)
    assert ridge_objective(X, Y, W + 1e-4 * _cnormal(rng, W.shape), gamma) >= base


@FAST
@given(seed=seeds, shape=ridge_shapes, g1=st.floats(1e-4, 10.0), factor=st.floats(1.0, 100.0))
def test_ridge_monotone(seed, shape, g1, factor):
    T, N, L = shape
    rng = np.random.default_rng(seed)
    X, Y = _cnormal(rng, (T, N)), _cnormal(rng, (T, L))
    n1 = np.linalg.norm(esn.fit_ridge_complex(X, Y, g1).W_out)
    n2 = np.linalg.norm(esn.fit_ridge_complex(X, Y, g1 * factor).W_out)
    assert n2 <= n1 * (1 + 1e-12)


@FAST
@given(seed=seeds, shape=ridge_shapes, gamma=st.floats(1e-3, 10.0))
def test_ridge_real_restriction(seed, shape, gamma):
    T, N, L = shape
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(T, N)), rng.normal(size=(T, L))
    W = esn.fit_ridge_complex(X, Y, gamma).W_out
    real = np.linalg.solve(X.T @ X + gamma * np.eye(N), X.T @ Y).T
    assert np.max(np.abs(W.imag)) == 0.0
    np.testing.assert_allclose(W.real, real, atol=1e-10, rtol=0)


# -- reservoir ---------------------------------------------------------------

@FAST
@given(seed=seeds, alpha=st.floats(0.01, 1.0))
def test_real_teacher_stays_real(seed, alpha):
    cfg = esn.ReservoirConfig(n_internal=30, output_dim=3, w_density=0.2, leak_rate=alpha,
                              spectral_radius=0.8, t_min=5, ridge=1e-3, seed=seed % 1000)
    m = esn.init_matrices(cfg)
    teacher = np.sin(0.1 * np.arange(60)[:, None] * (1 + np.arange(3)))
    readout, rec = esn.train_multistep(m, cfg, teacher, y0=np.zeros(3))
    assert np.max(np.abs(readout.W_out.imag)) <= 1e-14
    preds, _, states = esn.free_run(m, cfg, readout, rec.final_state, teacher[-1], 20, return_states=True)
    assert np.max(np.abs(preds.imag)) <= 1e-14 and np.max(np.abs(states.imag)) <= 1e-14


@FAST
@given(seed=st.integers(0, 10_000))
def test_split_activation_bounds(seed):
    cfg = esn.ReservoirConfig(n_internal=40, output_dim=4, w_density=0.3, spectral_radius=1.5, seed=seed)
    m = esn.init_matrices(cfg)
    rng = np.random.default_rng(seed)
    teacher = 5 * _cnormal(rng, (30, 4))
    X = esn.collect_states(m, cfg, teacher)
    assert np.all(np.abs(X.real) <= 1) and np.all(np.abs(X.imag) <= 1)
