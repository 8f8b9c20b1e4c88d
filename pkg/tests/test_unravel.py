import math

import numpy as np
import pytest
from scipy.linalg import expm

from qjumps import qstate
from qjumps.ensemble import exponential_ks
from qjumps.exceptions import DecompositionError, ModeUnsupportedError, NumericalConsistencyError
from qjumps.lindblad import LindbladGenerator, dissipation_rate
from qjumps.qstate import Branch, Projector, SpectralDecomposition
from qjumps.rng import CounterStream, derive_keys
from qjumps.unravel import (JumpEvent, make_root_path, SpectralStep, Terminal, WaitingTime, jump_spectrum,
                            no_jump_evolve, no_jump_survival, one_step_ensemble,
                            parse_record_text, run_trajectory, run_trajectory_spectral,
                            run_trajectory_waiting, select_branch)

from conftest import KET0, KET1, LOWER, SIGMA_X, SIGMA_Z

P0 = Projector.from_vector(KET0)
P1 = Projector.from_vector(KET1)


# ---- one step and branch selection ----

def test_one_step_trivial_generator_leaves_state_unchanged():
    gen = LindbladGenerator(np.zeros((2, 2)), 0.0, [])
    plus = Projector.from_vector(np.array([1, 1]) / math.sqrt(2))
    assert np.allclose(one_step_ensemble(gen, plus, 0.1), plus.matrix())


def test_one_step_damping_by_hand(damping):
    assert np.allclose(one_step_ensemble(damping, P0, 0.01), np.diag([0.99, 0.01]), atol=1e-15)
    assert np.array_equal(one_step_ensemble(damping, P1, 0.01), P1.matrix())


def test_select_branch_single_branch_is_deterministic():
    decomp = SpectralDecomposition((Branch(1.0, P0),))
    for u in (1e-9, 0.5, 1 - 1e-9):
        idx, proj, prob = select_branch(decomp, P0, u)
        assert idx == 0 and proj is P0 and prob == 1.0


def test_select_branch_two_level_frequency(damping):
    decomp = qstate.spectral_decompose(one_step_ensemble(damping, P0, 0.01))
    stream = CounterStream(77)
    hits = 0
    n = 100_000
    for u in stream.uniforms(n):
        idx, proj, prob = select_branch(decomp, P0, float(u))
        if idx == 1:
            hits += 1
            assert proj.overlap(P1) == pytest.approx(1.0)
            assert prob == pytest.approx(0.01)
    assert abs(hits / n - 0.01) <= 3e-3


def test_no_jump_branch_is_chosen_by_continuity_not_weight():
    # the branch with the larger weight is not the one overlapping the pre-step state
    decomp = SpectralDecomposition((Branch(0.7, P1), Branch(0.3, P0)))
    idx, proj, _ = select_branch(decomp, P0, 0.9)
    assert idx == 0 and proj is P0
    idx, proj, _ = select_branch(decomp, P0, 0.1)
    assert idx == 1 and proj is P1


def test_degenerate_branch_frequency_is_weight_times_rank():
    e = np.eye(3)
    rank2 = Projector.from_basis(e[:, 1:])
    decomp = SpectralDecomposition((Branch(0.4, Projector.from_vector(e[:, 0])), Branch(0.3, rank2)))
    u = CounterStream(5).uniforms(50_000)
    picks = [select_branch(decomp, Projector.from_vector(e[:, 0]), float(x)) for x in u]
    freq = np.mean([p[0] == 1 for p in picks])
    assert abs(freq - 0.6) <= 4 * math.sqrt(0.24 / len(u))
    chosen = next(p for p in picks if p[0] == 1)[1]
    assert chosen.rank == 2
    assert np.trace(chosen.density()).real == pytest.approx(1.0)


def test_select_branch_rejects_unnormalized_decomposition():
    decomp = SpectralDecomposition((Branch(0.5, P0), Branch(0.4, P1)))
    with pytest.raises(DecompositionError):
        select_branch(decomp, P0, 0.5)


# ---- no-jump flow, survival and jump spectrum ----

def test_no_jump_flow_closed_system_is_unitary():
    gen = LindbladGenerator(SIGMA_X + 0.3 * SIGMA_Z, 0.0, [LOWER])
    path = no_jump_evolve(gen, P0, 1e-3, 2.0, snapshot_every=100)
    for t, proj in path:
        psi = expm(-1j * (SIGMA_X + 0.3 * SIGMA_Z) * t) @ KET0
        assert qstate.projector_distance(proj, Projector.from_vector(psi)) <= 1e-8
    assert no_jump_survival(gen, path) == 1.0


def test_no_jump_flow_damping_does_not_rotate(damping):
    path = no_jump_evolve(damping, P0, 1e-2, 3.0, snapshot_every=10)
    assert all(qstate.projector_distance(p, P0) <= 1e-14 for _, p in path)
    assert no_jump_survival(damping, path) == pytest.approx(math.exp(-3.0), abs=1e-6)


def test_survival_of_empty_interval_and_fixed_point(damping):
    assert no_jump_survival(damping, [(0.0, P0)]) == 1.0
    path = no_jump_evolve(damping, P1, 0.1, 1.0)
    assert all(np.array_equal(p.matrix(), P1.matrix()) for _, p in path)
    assert no_jump_survival(damping, path) == 1.0


def test_jump_spectrum_examples(damping):
    assert jump_spectrum(LindbladGenerator(SIGMA_Z, 0.0, [LOWER]), P0) == []
    ((rate, target),) = jump_spectrum(damping, P0)
    assert rate == pytest.approx(1.0)
    assert target.overlap(P1) == pytest.approx(1.0)


def test_jump_spectrum_matches_dense_eigendecomposition(rng):
    dim = 5
    gen = LindbladGenerator(qstate.random_hermitian(dim, rng), 0.6,
                            [rng.normal(size=(dim, dim)) for _ in range(3)])
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    proj = Projector.from_vector(psi)
    p = proj.matrix()
    q = np.eye(dim) - p
    dense = sum(gen.alpha * q @ t @ p @ t.conj().T @ q for t in gen.jump_ops)
    ref = np.sort(np.linalg.eigvalsh(dense))[::-1][:3]
    rates = [lam for lam, _ in jump_spectrum(gen, proj)]
    assert np.allclose(rates, ref, atol=1e-12)
    assert sum(rates) + dissipation_rate(gen, proj) == pytest.approx(0.0, abs=1e-9)


def test_jump_spectrum_in_cavity_hits_single_pixels(small_cavity, small_packet):
    m = small_cavity
    proj = Projector.from_vector(small_packet)
    branches = jump_spectrum(m.generator, proj)
    expected = m.generator.alpha * np.abs(m.kernels @ small_packet[:m.n_grid]) ** 2
    got = []
    for rate, target in branches:
        # a symmetric packet hits mirror pixels at equal rates: those come as one rank-2 branch
        weight = np.sum(np.abs(target.basis) ** 2, axis=1)
        assert np.sum(weight[:m.n_grid]) <= 1e-20
        assert np.sort(weight[m.n_grid:])[-target.rank:] == pytest.approx(np.ones(target.rank))
        got += [rate] * target.rank
    ref = np.sort(expected[expected > 1e-14 * expected.max()])[::-1]
    assert np.allclose(got, ref, rtol=1e-9)


# ---- trajectories ----

def _unitary_error(rec, h):
    err = 0.0
    for t, proj in rec.snapshots:
        psi = expm(-1j * h * t) @ KET0
        err = max(err, qstate.projector_distance(proj, Projector.from_vector(psi)))
    return err


@pytest.mark.parametrize("mode", [SpectralStep(0.01), WaitingTime(0.01)])
def test_closed_system_has_no_jumps(mode):
    gen = LindbladGenerator(SIGMA_X, 0.0, [LOWER])
    rec = run_trajectory(gen, KET0, mode, 5.0, CounterStream(3), snapshot_times=(1.0, 5.0))
    assert rec.events == [] and rec.terminal is Terminal.SURVIVED_TO_HORIZON
    if isinstance(mode, WaitingTime):
        assert _unitary_error(rec, SIGMA_X) <= 1e-8


def test_spectral_no_jump_branch_is_first_order_accurate():
    # the no-jump branch of the first-order step tracks the unitary flow with O(dt^2) error
    gen = LindbladGenerator(SIGMA_X, 0.0, [LOWER])
    errs = [_unitary_error(run_trajectory_spectral(gen, KET0, dt, 1.0, 1, snapshot_times=(1.0,)),
                           SIGMA_X) for dt in (0.02, 0.01, 0.005)]
    assert errs[0] < 1e-3
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


@pytest.mark.parametrize("mode", [SpectralStep(0.05), WaitingTime(0.05)])
def test_bound_state_never_jumps(small_cavity, mode):
    rec = run_trajectory(small_cavity.generator, small_cavity.bound_state(2), mode, 3.0, 11)
    assert rec.events == []


@pytest.mark.parametrize("mode", [SpectralStep(1e-3), WaitingTime(1e-2)])
def test_two_level_jump_times_are_exponential(damping, mode):
    keys = derive_keys(2024, np.arange(2000))
    root = make_root_path(damping, KET0, mode, 10.0)
    times = []
    for k in keys:
        rec = run_trajectory(damping, KET0, mode, 10.0, CounterStream(int(k)), root=root)
        times.append(rec.jump_time() if rec.events else np.inf)
        if rec.events:
            assert rec.terminal is Terminal.JUMPED_TO and rec.terminal_label == 1
    # 1.63/sqrt(n) is the 1% critical value; the spectral step adds an O(dt) shift
    assert exponential_ks(times, 1.0) < 1.63 / math.sqrt(2000)


def test_waiting_sampler_survives_when_draw_exceeds_survival(damping):
    # survival at t=0.01 is ~0.99; a stream whose first draw is below that jumps, above survives
    stream = CounterStream(9)
    u = CounterStream(9).uniform()
    rec = run_trajectory_waiting(damping, KET0, WaitingTime(1e-3), 0.01, stream)
    assert (rec.events == []) == (u < math.exp(-0.01))
    if rec.events:
        assert rec.jump_time() == pytest.approx(-math.log(u), abs=1e-8)


def test_waiting_jump_time_solves_survival_equation(damping):
    for key in range(20):
        u = CounterStream(key).uniform()
        rec = run_trajectory_waiting(damping, KET0, WaitingTime(1e-2, 1e-11), 50.0, key)
        if -math.log(u) < 50.0:
            assert rec.jump_time() == pytest.approx(-math.log(u), abs=1e-8)


def test_waiting_sampler_rejects_feedback_generators():
    gen = LindbladGenerator(np.zeros((2, 2)), 1.0, [np.array([[1, 1], [0, 0]], dtype=complex)])
    plus = np.array([1, 1]) / math.sqrt(2)
    with pytest.raises(ModeUnsupportedError, match="spectral"):
        run_trajectory_waiting(gen, plus, WaitingTime(0.01), 1.0, 1)
    # the spectral sampler handles it
    run_trajectory_spectral(gen, plus, 0.01, 1.0, 1)


@pytest.mark.parametrize("mode", [SpectralStep(0.02), WaitingTime(0.02)])
def test_records_are_deterministic_and_well_formed(small_cavity, small_packet, mode):
    gen = small_cavity.generator
    a = run_trajectory(gen, small_packet, mode, 20.0, CounterStream(123))
    b = run_trajectory(gen, small_packet, mode, 20.0, CounterStream(123))
    assert a.to_text() == b.to_text()
    header, events = parse_record_text(a.to_text())
    assert header["seed"] == "123" and header["mode"] == mode.name
    times = [e[0] for e in events]
    assert all(0 < t <= 20.0 for t in times)
    assert all(x < y for x, y in zip(times, times[1:]))
    for e in a.events:
        assert e.branch_index >= 1 and 0 < e.weight <= 1


def test_jump_event_invariants():
    with pytest.raises(Exception):
        JumpEvent(1.0, 0, P1, 0.5, 1)
    with pytest.raises(Exception):
        JumpEvent(1.0, 1, P1, 0.0, 1)


def test_samplers_agree_on_pixel_frequencies(small_cavity, small_packet):
    gen = small_cavity.generator
    n = 1500
    keys = derive_keys(99, np.arange(n))
    counts = {}
    for name, mode in (("s", SpectralStep(0.02)), ("w", WaitingTime(0.02))):
        c = np.zeros(small_cavity.n_pixels + 1)
        root = make_root_path(gen, small_packet, mode, 30.0)
        for k in keys:
            rec = run_trajectory(gen, small_packet, mode, 30.0, CounterStream(int(k)), root=root)
            c[rec.terminal_label - small_cavity.n_grid if rec.events else -1] += 1
        counts[name] = c / n
    se = np.sqrt((counts["s"] * (1 - counts["s"]) + counts["w"] * (1 - counts["w"])) / n)
    assert np.all(np.abs(counts["s"] - counts["w"]) <= 4 * se + 1e-12)


def test_negative_survival_sign_error_is_caught():
    # a "survival" path that grows must be reported
    gen = LindbladGenerator(np.zeros((2, 2)), 1.0, [LOWER])
    with pytest.raises(NumericalConsistencyError):
        no_jump_survival(gen, [(0.0, P0), (-1.0, P0)])
