import math

import numpy as np
import pytest
from scipy import stats

from nmmonitor.hilbert import CompositeSpace, StateVector, reduced_from_vector
from nmmonitor.kernel import CouplingKernel
from nmmonitor.lattice import (
    CollisionModel,
    JointState,
    LatticeConfig,
    SystemSpec,
    collide,
    convolve_drift,
    evolve_nonselective,
)
from nmmonitor.monitor import (
    HeterodyneRecord,
    InsufficientRecordError,
    InvalidStateError,
    advance,
    bargmann_project,
    conditional_mixed,
    gaussian_quadrature,
    girsanov_colored,
    heterodyne_sample,
    innovations,
    mc_retrodicted_average,
    predicted_signal_mean,
    quadrature_retrodicted_average,
    radial_angular_grid,
    read_conditional_states,
    read_record,
    replay,
    retrodict,
    retrodict_path,
    run_ensemble,
    run_trajectory,
    sample_outcome,
    signal_predictions,
    write_conditional_states,
    write_record,
)
from oracles import MarkovHeterodyneOracle


def random_joint(rng, dims):
    space = CompositeSpace(dims)
    v = rng.standard_normal(space.total_dim) + 1j * rng.standard_normal(space.total_dim)
    return JointState(space, StateVector(v / np.linalg.norm(v)))


def draws(rows, n, seed):
    rng = np.random.default_rng(seed)
    return np.array([sample_outcome(np.asarray(rows, dtype=complex), rng) for _ in range(n)])


# sampling ----------------------------------------------------------------

def test_vacuum_outcomes_exponential_radius_uniform_phase():
    xi = draws([[1], [0], [0]], 4000, 1)
    assert stats.kstest(np.abs(xi) ** 2, stats.expon.cdf).pvalue > 1e-3
    assert stats.kstest((np.angle(xi) + np.pi) / (2 * np.pi), "uniform").pvalue > 1e-3


def test_one_photon_outcomes_gamma_two():
    xi = draws([[0], [1], [0]], 4000, 2)
    assert stats.kstest(np.abs(xi) ** 2, stats.gamma(2).cdf).pvalue > 1e-3


def test_coherent_outcomes_shifted_gaussian():
    beta = 0.6 - 0.3j
    cut = 10
    amps = np.array([beta ** n / math.sqrt(math.factorial(n)) for n in range(cut + 1)])
    amps /= np.linalg.norm(amps)
    xi = draws(amps[:, None], 4000, 3)
    gauss = stats.norm(scale=math.sqrt(0.5)).cdf
    assert stats.kstest(xi.real - beta.real, gauss).pvalue > 1e-3
    assert stats.kstest(xi.imag - beta.imag, gauss).pvalue > 1e-3


def test_heterodyne_sample_zero_state_rejected():
    space = CompositeSpace((2, 3))
    with pytest.raises(InvalidStateError):
        heterodyne_sample(JointState(space, StateVector(np.zeros(6, dtype=complex))),
                          np.random.default_rng(0))


# projection ----------------------------------------------------------------

def test_bargmann_project_weight_is_outcome_density(rng):
    joint = random_joint(rng, (2, 3, 3))
    xi = 0.4 + 0.7j
    out = bargmann_project(joint, 1, xi)
    t = joint.psi.reshape(2, 3, 3)
    c = np.array([np.conj(xi) ** n / math.sqrt(math.factorial(n)) for n in range(3)])
    v = np.einsum("anb,n->ab", t, c)
    dens = math.exp(-abs(xi) ** 2) / math.pi * np.vdot(v, v).real
    assert abs(out.weight - dens) <= 1e-14
    assert abs(np.linalg.norm(out.psi) - 1) <= 1e-12
    assert out.space.factor_dims == (2, 3)


@pytest.mark.parametrize("n_max", [1, 2, 3])
def test_outcome_density_normalized(rng, n_max):
    joint = random_joint(rng, (2, n_max + 1, n_max + 1))
    nodes, area = radial_angular_grid(n_max + 2, 2 * n_max + 3)
    total = sum(a * bargmann_project(joint, 1, z).weight for z, a in zip(nodes, area))
    assert abs(total - 1) <= 1e-10


@pytest.mark.parametrize("n_max,bin_", [(1, 1), (2, 1), (2, 2), (3, 1)])
def test_bargmann_average_is_partial_trace(rng, n_max, bin_):
    joint = random_joint(rng, (2, n_max + 1, n_max + 1))
    nodes, w = gaussian_quadrature(n_max + 1)
    avg = 0
    for z, wq in zip(nodes[:, 0], w):
        p = bargmann_project(joint, bin_, z)
        avg = avg + wq * p.weight * math.pi * math.exp(abs(z) ** 2) * np.outer(p.psi, p.psi.conj())
    keep = [i for i in range(3) if i != bin_]
    traced = reduced_from_vector(joint.psi, joint.space, keep)
    assert np.max(np.abs(avg - traced)) <= 1e-12


def test_bargmann_zero_norm_and_bad_index():
    space = CompositeSpace((1, 2))
    one_photon = JointState(space, StateVector(np.array([0, 1], dtype=complex)))
    with pytest.raises(InvalidStateError):
        bargmann_project(one_photon, 1, 0.0)
    with pytest.raises(IndexError):
        bargmann_project(one_photon, 0, 0.1)


# trajectories ---------------------------------------------------------------

def test_trajectory_deterministic(exp_model, plus_state):
    a = run_trajectory(exp_model, 25, 99, plus_state)
    b = run_trajectory(exp_model, 25, 99, plus_state)
    assert np.array_equal(a.record.bins, b.record.bins)
    assert all(np.array_equal(x.rho, y.rho) and x.log_weight == y.log_weight
               for x, y in zip(a.states, b.states))
    c = run_trajectory(exp_model, 25, 100, plus_state)
    assert not np.array_equal(a.record.bins, c.record.bins)


def test_replay_reproduces_trajectory(exp_model, plus_state):
    traj = run_trajectory(exp_model, 20, 5, plus_state)
    for st, joint in zip(traj.states, replay(traj.record, exp_model, plus_state)):
        assert np.array_equal(st.rho, joint.reduced_system())
        assert st.log_weight == joint.log_weight
    cm = conditional_mixed(traj.record, exp_model, 13, plus_state)
    assert np.array_equal(cm.rho, traj.states[13].rho)
    with pytest.raises(InsufficientRecordError):
        conditional_mixed(traj.record, exp_model, 21, plus_state)


def test_log_weight_accumulates_densities(exp_model, plus_state):
    traj = run_trajectory(exp_model, 6, 8, plus_state)
    state = exp_model.initial(plus_state)
    total = 0.0
    for xi in traj.record.bins:
        collided = collide(state, exp_model.unitary)
        p = bargmann_project(collided, 1, xi)
        total += math.log(p.weight / collided.weight)
        state = advance(state, exp_model, xi)
    assert abs(total - traj.states[-1].log_weight) <= 1e-10


def test_uncoupled_record_is_vacuum_noise(qubit, plus_state):
    dt = 0.1
    model = CollisionModel(qubit, CouplingKernel.zero(dt, 2), LatticeConfig(dt, 2, 2))
    n = 3000
    traj = run_trajectory(model, n, 4, plus_state)
    xi = traj.record.bins
    assert abs(xi.mean()) <= 5 / math.sqrt(n)
    assert abs(np.mean(np.abs(xi) ** 2) - 1) <= 5 / math.sqrt(n)
    w, v = np.linalg.eigh(qubit.hamiltonian)
    for st in traj.states[::500]:
        psi = (v * np.exp(-1j * w * st.step * dt)) @ v.conj().T @ plus_state
        assert np.max(np.abs(st.rho - np.outer(psi, psi.conj()))) <= 1e-12
    r = retrodict(traj.record, model, 7, plus_state)
    psi7 = (v * np.exp(-1j * w * 0.7)) @ v.conj().T @ plus_state
    assert abs(abs(np.vdot(r.psi, psi7)) - 1) <= 1e-12


def test_conditional_states_are_valid_densities(exp_model, plus_state):
    traj = run_trajectory(exp_model, 40, 3, plus_state)
    for st in traj.states:
        assert abs(np.trace(st.rho) - 1) <= 1e-10
        assert np.linalg.eigvalsh(st.rho).min() >= -1e-10
        assert np.max(np.abs(st.rho - st.rho.conj().T)) <= 1e-12


# retrodiction --------------------------------------------------------------

def test_markov_retrodiction_matches_kraus_oracle():
    sys = SystemSpec.qubit_decay(0.4, 1.3)
    dt, gamma = 0.02, 1.0
    model = CollisionModel(sys, CouplingKernel.markov(gamma, dt), LatticeConfig(dt, 1, 2))
    psi0 = np.array([0.6, 0.8j])
    traj = run_trajectory(model, 80, 17, psi0)
    oracle = MarkovHeterodyneOracle(sys.hamiltonian, sys.coupling, gamma, dt, 2).states(
        traj.record.bins, psi0)
    for r in retrodict_path(traj.record, model, psi0):
        assert 1 - abs(np.vdot(oracle[r.step], r.psi)) ** 2 <= 1e-12


def test_retrodiction_needs_future_record(exp_model, plus_state):
    traj = run_trajectory(exp_model, 10, 2, plus_state)
    n = exp_model.n_bins
    r = retrodict(traj.record, exp_model, 10 - n + 1, plus_state)
    assert r.horizon == 10
    with pytest.raises(InsufficientRecordError) as exc:
        retrodict(traj.record, exp_model, 10 - n + 2, plus_state)
    assert exc.value.required == 11 and exc.value.available == 10


def test_retrodict_path_matches_single_calls(exp_model, plus_state):
    traj = run_trajectory(exp_model, 12, 21, plus_state)
    path = retrodict_path(traj.record, exp_model, plus_state)
    assert len(path) == 12 - exp_model.n_bins + 2
    for p in (0, 4, len(path) - 1):
        single = retrodict(traj.record, exp_model, p, plus_state)
        assert np.array_equal(single.psi, path[p].psi)


@pytest.mark.parametrize("steps", [0, 1, 5, 12])
def test_quadrature_of_retrodicted_is_conditional_mixed(exp_model, plus_state, steps):
    traj = run_trajectory(exp_model, 12, 31, plus_state)
    *_, state = replay(traj.record, exp_model, plus_state, steps)
    avg = quadrature_retrodicted_average(state, exp_model.config.n_max + 1)
    assert np.max(np.abs(avg - state.reduced_system())) <= 1e-12


def test_mc_retrodicted_average_converges(exp_model, plus_state):
    traj = run_trajectory(exp_model, 10, 6, plus_state)
    *_, state = replay(traj.record, exp_model, plus_state)
    rng = np.random.default_rng(1)
    err = np.max(np.abs(mc_retrodicted_average(state, 20000, rng) - state.reduced_system()))
    assert err <= 0.02


# signal prediction -----------------------------------------------------------

def test_markov_signal_mean_matches_oracle():
    sys = SystemSpec.qubit_decay(0.0, 1.0)
    dt = 0.05
    model = CollisionModel(sys, CouplingKernel.markov(1.0, dt), LatticeConfig(dt, 1, 2))
    psi0 = np.array([1, 1]) / math.sqrt(2)
    traj = run_trajectory(model, 30, 12, psi0)
    oracle = MarkovHeterodyneOracle(sys.hamiltonian, sys.coupling, 1.0, dt, 2)
    states = oracle.states(traj.record.bins, psi0)
    pred, _ = signal_predictions(traj.record, model, psi0)
    for m in (1, 7, 30):
        mean, used = predicted_signal_mean(traj.record, model, m, psi0)
        assert used == [m - 1]
        assert abs(mean - oracle.signal_mean(states[m - 1])) <= 1e-12
        assert abs(pred[m - 1] - mean) <= 1e-14


def test_signal_predictions_consistent_with_single(exp_model, plus_state):
    traj = run_trajectory(exp_model, 10, 14, plus_state)
    for expectation in ("retrodicted", "mixed"):
        pred, _ = signal_predictions(traj.record, exp_model, plus_state, expectation)
        for m in (1, 3, pred.shape[0]):
            mean, _ = predicted_signal_mean(traj.record, exp_model, m, plus_state, expectation)
            assert abs(mean - pred[m - 1]) <= 1e-14
    n = exp_model.n_bins
    with pytest.raises(InsufficientRecordError):
        predicted_signal_mean(traj.record, exp_model, 10 - n + 3, plus_state)
    with pytest.raises(ValueError):
        signal_predictions(traj.record, exp_model, plus_state, "smoothed")


def test_uncoupled_signal_mean_zero(qubit, plus_state):
    model = CollisionModel(qubit, CouplingKernel.zero(0.1, 2), LatticeConfig(0.1, 2, 1))
    traj = run_trajectory(model, 5, 1, plus_state)
    assert np.all(signal_predictions(traj.record, model, plus_state)[0] == 0)


def test_innovations_lag_one_uncorrelated():
    sys = SystemSpec.qubit_decay(0.0, 2.0)
    dt = 0.05
    model = CollisionModel(sys, CouplingKernel.markov(1.0, dt), LatticeConfig(dt, 1, 2))
    psi0 = np.array([1, 0])
    prods = []
    for i in range(150):
        traj = run_trajectory(model, 40, 1000 + i, psi0)
        r = innovations(traj.record, model, psi0)
        prods.append(r[1:] * np.conj(r[:-1]))
    prods = np.concatenate(prods)
    se = math.sqrt((prods.real.var() + prods.imag.var()) / prods.shape[0])
    assert abs(prods.mean()) <= 5 * se


# Girsanov --------------------------------------------------------------------

def test_girsanov_no_drift_is_identity(exp_model, rng):
    n = 30
    bins = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rec = HeterodyneRecord(exp_model.config.dt, bins)
    g = girsanov_colored(rec, exp_model.kernel, np.zeros(n))
    assert np.array_equal(g.a, g.a_tilde)
    assert g.residual <= 1e-14


def test_girsanov_markov_drift_is_gamma_s(rng):
    dt, gamma = 0.01, 0.8
    kappa = CouplingKernel.markov(gamma, dt)
    n = 50
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rec = HeterodyneRecord(dt, rng.standard_normal(n) + 0j)
    g = girsanov_colored(rec, kappa, s)
    assert np.max(np.abs(g.a_tilde - g.a - gamma * s)) <= 1e-12


def test_girsanov_by_construction(exp_model, rng):
    n = 40
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    white = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rec = HeterodyneRecord(exp_model.config.dt, white + convolve_drift(exp_model.theta, s))
    g = girsanov_colored(rec, exp_model.kernel, s, innovations=white)
    assert g.residual <= 1e-12
    with pytest.raises(ValueError):
        girsanov_colored(rec, exp_model.kernel, s[:-1])


# ensembles ---------------------------------------------------------------------

def test_ensemble_matches_nonselective_small(markov_model):
    psi0 = np.array([1, 1]) / math.sqrt(2)
    steps = 60
    ens = run_ensemble(markov_model, steps, 300, 42, psi0)
    ns = evolve_nonselective(markov_model.system, markov_model.kernel, markov_model.config, steps,
                             psi0, model=markov_model)
    se = ens.trace_distance_stderr()
    for mean, ref, s in zip(ens.mean, ns, se):
        assert 0.5 * np.sum(np.abs(np.linalg.eigvalsh(mean - ref))) <= 5 * s + 1e-12


def test_ensemble_worker_count_invariant(exp_model, plus_state):
    a = run_ensemble(exp_model, 8, 6, 3, plus_state, workers=1)
    b = run_ensemble(exp_model, 8, 6, 3, plus_state, workers=2)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)


# IO -----------------------------------------------------------------------------

def test_record_round_trip(tmp_path, exp_model, plus_state):
    traj = run_trajectory(exp_model, 15, 77, plus_state)
    write_record(tmp_path / "r.txt", traj.record)
    back = read_record(tmp_path / "r.txt")
    assert np.array_equal(back.bins, traj.record.bins)
    assert (back.dt, back.seed, back.n_bins, back.n_max) == (traj.record.dt, 77, 3, 2)
    assert back.kernel_fingerprint == traj.record.kernel_fingerprint
    assert back.system_fingerprint == exp_model.system.fingerprint
    write_conditional_states(tmp_path / "c.txt", traj.states)
    states = read_conditional_states(tmp_path / "c.txt")
    for a, b in zip(states, traj.states):
        assert a.step == b.step and np.array_equal(a.rho, b.rho)
        assert abs(a.weight - b.weight) <= 1e-12 * max(1.0, b.weight)


def test_record_rejects_gap(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("# dt: 0.1\n# N: 1\n# n_max: 1\n1, 0.0, 0.0\n3, 0.0, 0.0\n")
    with pytest.raises(ValueError):
        read_record(p)
