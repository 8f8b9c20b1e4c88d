"""Stochastic quantum-jump trajectories of individual systems.

Two samplers produce :class:`TrajectoryRecord` objects:

``SpectralStep(dt)``
    Each step forms the ensemble state ``Pi + L[Pi] dt`` one step ahead,
    splits it into spectral branches and selects one branch with frequency
    ``weight * rank``.  The branch that best overlaps the current state is the
    "no jump" branch (index 0); any other selection is a jump.

``WaitingTime(ode_dt, bisection_tol)``
    Draws ``u`` once, integrates the unnormalized no-jump vector field
    ``(-iH - alpha/2 sum T*T) psi`` until its squared norm falls to ``u`` and
    picks the jump target from the jump spectrum at that instant.

Given the starting state and step size, the no-jump path is deterministic, so
both samplers cache it in a path object; an ensemble shares one path between
all trajectories started from the same state.  Results are identical to
independent runs because every random draw comes from the trajectory's own
counter-based stream.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import qstate
from .exceptions import (DecompositionError, ModeUnsupportedError,
                         NumericalConsistencyError, StepSizeError, StructuralError)
from .lindblad import LindbladGenerator, apply_generator, dissipation_rate, n_steps
from .qstate import Branch, Projector, SpectralDecomposition
from .rng import CounterStream, as_stream, uniforms_at

log = logging.getLogger(__name__)

# ||L[Pi]|| below this marks a stationary state
STATIONARY_TOL = 1e-13
# checkpointed path states are capped at roughly this many bytes
CHECKPOINT_BYTES = 64 * 2 ** 20


@dataclass(frozen=True)
class SpectralStep:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("SpectralStep.dt must be positive")

    name = "spectral"

    @property
    def step(self) -> float:
        return self.dt


@dataclass(frozen=True)
class WaitingTime:
    ode_dt: float
    bisection_tol: float = 1e-9

    def __post_init__(self):
        if not self.ode_dt > 0:
            raise ValueError("WaitingTime.ode_dt must be positive")
        if not self.bisection_tol > 0:
            raise ValueError("WaitingTime.bisection_tol must be positive")

    name = "waiting"

    @property
    def step(self) -> float:
        return self.ode_dt


class Terminal(enum.Enum):
    JUMPED_TO = "JUMPED_TO"
    SURVIVED_TO_HORIZON = "SURVIVED_TO_HORIZON"


@dataclass(frozen=True)
class JumpEvent:
    time: float
    branch_index: int
    target: Projector
    weight: float
    label: int

    def __post_init__(self):
        if self.branch_index < 1:
            raise StructuralError("branch index 0 is reserved for 'no jump'")
        if not 0.0 < self.weight <= 1.0 + 1e-9:
            raise StructuralError(f"jump weight {self.weight} outside (0, 1]")


@dataclass
class TrajectoryRecord:
    """History of one individual system."""

    seed: int
    mode: str
    dt: float
    horizon: float
    events: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    terminal: Terminal = Terminal.SURVIVED_TO_HORIZON
    terminal_label: int | None = None

    def state_at(self, t: float, tol: float = 1e-9) -> Projector:
        for ts, proj in self.snapshots:
            if abs(ts - t) <= tol:
                return proj
        raise KeyError(f"no snapshot at t={t}")

    def jump_time(self):
        return self.events[0].time if self.events else None

    def to_text(self) -> str:
        """Line-oriented form: ``key=value`` header, then one CSV line per event."""
        term = self.terminal.value
        if self.terminal is Terminal.JUMPED_TO:
            term += f":{self.terminal_label}"
        lines = [
            "# qjumps trajectory record v1",
            f"seed={self.seed}",
            f"mode={self.mode}",
            f"dt={self.dt:.17g}",
            f"horizon={self.horizon:.17g}",
            f"terminal={term}",
            "time,branchIndex,weight,targetLabel",
        ]
        lines += [f"{e.time:.17g},{e.branch_index},{e.weight:.17g},{e.label}" for e in self.events]
        return "\n".join(lines) + "\n"


def parse_record_text(text: str):
    """Inverse of :meth:`TrajectoryRecord.to_text` (projectors are not serialized).

    Returns ``(header: dict, events: list of (time, branch, weight, label))``.
    """
    header, events = {}, []
    body = False
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        if line == "time,branchIndex,weight,targetLabel":
            body = True
            continue
        if body:
            t, b, w, lab = line.split(",")
            events.append((float(t), int(b), float(w), int(lab)))
        else:
            key, value = line.split("=", 1)
            header[key] = value
    return header, events


def target_label(proj: Projector) -> int:
    """Computational-basis index carrying most of the projector's weight."""
    return int(np.argmax(np.sum(np.abs(proj.basis) ** 2, axis=1)))


def _as_projector(state, dim) -> Projector:
    if isinstance(state, Projector):
        proj = state
    else:
        proj = Projector.from_vector(qstate.as_pure_state(state))
    if proj.dim != dim:
        raise StructuralError(f"state dim {proj.dim} does not match generator dim {dim}")
    return proj


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + (0.5 * h) * k1)
    k3 = f(y + (0.5 * h) * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --------------------------------------------------------------------------
# one step of the ensemble state and branch selection
# --------------------------------------------------------------------------

def one_step_ensemble(gen: LindbladGenerator, proj: Projector, dt: float) -> np.ndarray:
    """Dense ``Pi/r + L[Pi/r] dt``, validated as a density matrix.

    Positivity is only required up to the O(dt^2) allowance
    ``10 dt^2 ||L[Pi]||^2``; a larger violation raises :class:`StepSizeError`.
    For rank ``r > 1`` the same formula is applied to ``Pi / r``.
    """
    proj = _as_projector(proj, gen.dim)
    rho = proj.density()
    lp = apply_generator(gen, rho)
    out = rho + dt * lp
    out = 0.5 * (out + out.conj().T)
    qstate.as_density_matrix(out, positivity_tol=None)
    lnorm = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (lp + lp.conj().T)))))
    low = float(np.linalg.eigvalsh(out)[0])
    if low < -10.0 * dt * dt * lnorm * lnorm - 1e-15:
        raise StepSizeError(f"one-step state has eigenvalue {low:.3e}; reduce dt")
    return out


def _step_factored(gen: LindbladGenerator, proj: Projector, dt: float):
    """Spectral decomposition of ``Pi/r + L[Pi/r] dt`` without dense matrices.

    Returns ``(decomposition, ||L[Pi/r]||)``.
    """
    b = proj.basis
    r = b.shape[1]
    ab = gen.effective_apply(b)
    cols = [b, ab]
    if gen.alpha and gen.n_jump_ops:
        sa = math.sqrt(gen.alpha)
        for w in gen.jump_apply(b):
            if np.any(w):
                cols.append(sa * w.reshape(gen.dim, -1))
    v = np.hstack(cols)
    m = v.shape[1]
    eye = np.eye(r)
    c = np.zeros((m, m))
    c[:r, :r] = eye / r
    c[:r, r:2 * r] = c[r:2 * r, :r] = dt * eye / r
    if m > 2 * r:
        c[2 * r:, 2 * r:] = dt * np.eye(m - 2 * r) / r
    q, rr = np.linalg.qr(v)
    gen_part = c.copy()
    gen_part[:r, :r] = 0.0
    lsmall = rr @ gen_part @ rr.conj().T / dt
    lnorm = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (lsmall + lsmall.conj().T)))))
    small = rr @ c @ rr.conj().T
    small = 0.5 * (small + small.conj().T)
    w, vecs = np.linalg.eigh(small)
    if w[0] < -10.0 * dt * dt * lnorm * lnorm - 1e-15:
        raise StepSizeError(f"one-step state has eigenvalue {w[0]:.3e}; reduce dt")
    groups = [(lam, q @ vv) for lam, vv in qstate._group_spectrum(w, vecs, qstate.DEGENERACY_TOL)]
    branches = tuple(Branch(lam, Projector(vv)) for lam, vv in groups
                     if lam >= qstate.EIGENVALUE_FLOOR)
    tr = float(np.trace(small).real)
    decomp = SpectralDecomposition(branches)
    return SpectralDecomposition(branches, residual=tr - decomp.total_weight()), lnorm


def no_jump_index(decomp: SpectralDecomposition, continuity_ref: Projector) -> int:
    """Position of the branch that best overlaps the pre-step state."""
    return int(np.argmax([b.projector.overlap(continuity_ref) for b in decomp.branches]))


def _cdf(decomp: SpectralDecomposition):
    # The first-order step carries O(dt^2) negative eigenvalues (bounded by the
    # step-size check); their weight sits in ``residual``, so normalization is
    # checked on the full spectrum and the retained branches are renormalized.
    probs = decomp.probabilities
    total = probs.sum()
    if abs(total + decomp.residual - 1.0) > 1e-6 or not total > 0:
        raise DecompositionError(f"branch probabilities sum to {total!r} "
                                 f"(dropped weight {decomp.residual:.3e})")
    return np.cumsum(probs) / total


def select_branch(decomp: SpectralDecomposition, continuity_ref: Projector, rng):
    """Pick a branch with frequency ``weight * rank`` using one uniform draw.

    ``rng`` is a :class:`~qjumps.rng.CounterStream` (or integer key) or a
    float already drawn from (0, 1).

    Returns
    -------
    (branch_index, projector, probability)
        ``branch_index`` is 0 for the no-jump branch and 1, 2, ... for the
        remaining branches in order of decreasing weight.
    """
    u = float(rng) if isinstance(rng, float) else as_stream(rng).uniform()
    pos, _ = _select(decomp, u)
    nj = no_jump_index(decomp, continuity_ref)
    return _branch_number(pos, nj), decomp[pos].projector, decomp[pos].probability


def _select(decomp, u):
    cdf = _cdf(decomp)
    pos = min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)
    lo = cdf[pos - 1] if pos else 0.0
    width = cdf[pos] - lo
    rel = (u - lo) / width if width > 0 else 0.5
    return pos, min(max(rel, 0.0), np.nextafter(1.0, 0.0))


def _branch_number(pos, nj):
    if pos == nj:
        return 0
    return pos + 1 if pos < nj else pos


def _refine(gen: LindbladGenerator, pre: Projector, target: Projector, rel: float):
    """Split a degenerate jump branch into single jump channels.

    With mutually orthogonal jump ranges, the branch ``target`` is the span of
    channel images ``P T_s psi``; choosing channel ``s`` with probability
    proportional to ``||P T_s psi||^2`` leaves every ensemble average
    unchanged.  ``rel`` is the position of the branch draw inside the branch's
    interval, reused as the channel draw.
    """
    if target.rank == 1 or not gen.orthogonal_channels:
        return target, 1.0
    images = [target.apply(w.reshape(gen.dim, -1)) for w in gen.jump_apply(pre.basis)]
    weights = np.array([np.sum(np.abs(im) ** 2) for im in images])
    if weights.sum() <= 0:
        return target, 1.0
    outside = sum(np.sum(np.abs(w.reshape(gen.dim, -1) - im) ** 2)
                  for w, im, wt in zip(gen.jump_apply(pre.basis), images, weights) if wt > 0)
    if outside > 1e-16 * weights.sum():
        return target, 1.0
    cdf = np.cumsum(weights) / weights.sum()
    k = min(int(np.searchsorted(cdf, rel, side="right")), len(cdf) - 1)
    return Projector.from_basis(images[k]), float(weights[k] / weights.sum())


# --------------------------------------------------------------------------
# deterministic no-jump paths
# --------------------------------------------------------------------------

def _checkpoint_stride(n, dim, rank):
    per = 16 * dim * rank
    return max(1, math.ceil(n * per / CHECKPOINT_BYTES))


class _SpectralPath:
    """No-jump branch sequence of the spectral sampler from a fixed start.

    For each step ``k`` it stores the interval ``[lo_k, hi_k)`` of the
    no-jump branch inside the branch CDF; states are checkpointed and rebuilt
    on demand to resolve jumps.
    """

    def __init__(self, gen, start: Projector, t0: float, h: float, n: int):
        self.gen, self.t0, self.h, self.n = gen, t0, h, n
        self.stride = _checkpoint_stride(n, gen.dim, start.rank)
        self._ckpt = {0: start}
        self._decomp = {}
        self.lo = []
        self.hi = []
        self._lo_arr = self._hi_arr = None
        self.stationary_from = None
        self._state = start

    def _advance(self):
        k = len(self.lo)
        if self.stationary_from is not None:
            self.lo.append(0.0)
            self.hi.append(1.0)
        else:
            decomp, lnorm = _step_factored(self.gen, self._state, self.h)
            if lnorm <= STATIONARY_TOL:
                self.stationary_from = k
                self.lo.append(0.0)
                self.hi.append(1.0)
            else:
                if self.stride == 1:
                    self._decomp[k] = (self._state, decomp)
                cdf = _cdf(decomp)
                nj = no_jump_index(decomp, self._state)
                self.lo.append(cdf[nj - 1] if nj else 0.0)
                self.hi.append(cdf[nj] if nj < len(cdf) - 1 else 1.0)
                self._state = decomp[nj].projector
        if (k + 1) % self.stride == 0:
            self._ckpt[k + 1] = self._state

    def extend(self, upto):
        while len(self.lo) < min(upto, self.n):
            self._advance()
        if len(self.lo) == self.n and self._lo_arr is None:
            self._lo_arr = np.asarray(self.lo)
            self._hi_arr = np.asarray(self.hi)

    def _interval(self, k, stop):
        if self._lo_arr is not None:
            return self._lo_arr[k:stop], self._hi_arr[k:stop]
        return np.asarray(self.lo[k:stop]), np.asarray(self.hi[k:stop])

    def state(self, k: int) -> Projector:
        """No-jump state after ``k`` steps."""
        self.extend(k)
        base = (k // self.stride) * self.stride
        proj = self._ckpt[base]
        for _ in range(base, k):
            if self.stationary_from is not None and _ >= self.stationary_from:
                break
            decomp, _n = _step_factored(self.gen, proj, self.h)
            proj = decomp[no_jump_index(decomp, proj)].projector
        return proj

    def decomposition(self, k: int):
        """Decomposition used at step ``k`` (from state ``k`` to ``k+1``)."""
        if k in self._decomp:
            return self._decomp[k]
        pre = self.state(k)
        decomp, _ = _step_factored(self.gen, pre, self.h)
        return pre, decomp

    def first_exit(self, key: int, counter0: int, start: int = 0):
        """First step whose draw leaves the no-jump interval, or ``None``."""
        block = 512
        k = start
        while k < self.n:
            stop = min(self.n, k + block)
            self.extend(stop)
            u = uniforms_at(np.full(stop - k, key, dtype=np.uint64),
                            np.arange(counter0 + k, counter0 + stop, dtype=np.uint64))
            lo, hi = self._interval(k, stop)
            out = np.nonzero((u < lo) | (u >= hi))[0]
            if out.size:
                j = k + int(out[0])
                return j, float(u[out[0]])
            k = stop
        return None


class _WaitingPath:
    """Unnormalized no-jump frame ``phi_k`` and survival ``||phi_k||^2 / r``."""

    def __init__(self, gen, start: Projector, t0: float, h: float, horizon: float):
        self.gen, self.t0, self.h = gen, t0, h
        self.rank = start.rank
        span = horizon - t0
        self.n = max(0, int(math.floor(span / h + 1e-9)))
        self.tail = span - self.n * h
        if self.tail <= 1e-12 * max(1.0, span):
            self.tail = 0.0
        self.stride = _checkpoint_stride(self.n + 1, gen.dim, self.rank)
        self._ckpt = {0: start.basis.copy()}
        self._surv_arr = None
        self.survival = [1.0]
        self._frame = start.basis.copy()
        self._check(self._frame)

    def _check(self, frame):
        q = frame / np.sqrt(np.sum(np.abs(frame) ** 2) / self.rank)
        if not self.gen.alpha or not self.gen.n_jump_ops:
            return
        fb = np.zeros_like(q)
        scale = 0.0
        for w in self.gen.jump_apply(q):
            w = w.reshape(self.gen.dim, -1)
            fb += w @ (w.conj().T @ q)
            scale += np.sum(np.abs(w) ** 2)
        qq, _ = np.linalg.qr(q)
        fb -= qq @ (qq.conj().T @ fb)
        res = float(np.linalg.norm(fb))
        if res > 1e-12 * max(1.0, scale):
            raise ModeUnsupportedError(
                f"jump terms feed back into the no-jump state (residual {res:.2e}); "
                "use the spectral-step sampler for this generator")

    def _step(self, frame, h):
        return _rk4(self.gen.effective_apply, frame, h)

    @property
    def steps_total(self):
        return self.n + (1 if self.tail else 0)

    def step_size(self, k):
        return self.h if k < self.n else self.tail

    def time(self, k):
        return self.t0 + (k * self.h if k <= self.n else self.n * self.h + self.tail)

    def extend(self, upto):
        upto = min(upto, self.steps_total)
        while len(self.survival) <= upto:
            k = len(self.survival) - 1
            self._frame = self._step(self._frame, self.step_size(k))
            self._check(self._frame)
            self.survival.append(float(np.sum(np.abs(self._frame) ** 2).real) / self.rank)
            if (k + 1) % self.stride == 0:
                self._ckpt[k + 1] = self._frame.copy()

    def frame(self, k):
        self.extend(k)
        base = (k // self.stride) * self.stride
        f = self._ckpt[base]
        for j in range(base, k):
            f = self._step(f, self.step_size(j))
        return f

    def survival_array(self) -> np.ndarray:
        self.extend(self.steps_total)
        if self._surv_arr is None or len(self._surv_arr) != len(self.survival):
            self._surv_arr = np.asarray(self.survival)
        return self._surv_arr

    def crossing(self, u: float, tol: float):
        """Time and frame where the survival first drops to ``u``; ``None`` if never.

        Survival is non-increasing, so the grid step containing the crossing is
        located by binary search and refined by bisection on the partial step.
        A partial RK4 step of a linear field is the degree-4 Taylor polynomial,
        evaluated here from precomputed powers ``A^j phi``.
        """
        s = self.survival_array()
        i = int(np.searchsorted(-s, -u, side="left"))
        if i >= len(s):
            return None
        k = i - 1
        f0 = self.frame(k)
        terms = [f0]
        for j in range(1, 5):
            terms.append(self.gen.effective_apply(terms[-1]) / j)

        def partial(tau):
            return (((terms[4] * tau + terms[3]) * tau + terms[2]) * tau + terms[1]) * tau + terms[0]

        lo, hi = 0.0, self.step_size(k)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            fm = partial(mid)
            if np.vdot(fm, fm).real / self.rank > u:
                lo = mid
            else:
                hi = mid
        return self.time(k) + hi, partial(hi)

    def state_at(self, t: float) -> Projector:
        k = min(int(math.floor((t - self.t0) / self.h + 1e-9)), self.steps_total)
        f = self.frame(k)
        dt = t - self.time(k)
        if dt > 1e-12:
            f = self._step(f, dt)
        return Projector.from_basis(f)


# --------------------------------------------------------------------------
# no-jump evolution, survival and jump spectrum
# --------------------------------------------------------------------------

def _cubic_field(gen):
    """Vector lift of ``dPi/dt = Pi' L[Pi] Pi + Pi L[Pi] Pi'`` with ``Pi = psi psi*``."""
    sa = gen.alpha

    def f(psi):
        apsi = gen.effective_apply(psi)
        n2 = np.vdot(psi, psi).real
        x = apsi * n2 + psi * np.vdot(apsi, psi)
        if sa and gen.n_jump_ops:
            for w in gen.jump_apply(psi):
                x = x + sa * w * np.vdot(w, psi)
        return x - psi * np.vdot(psi, x)
    return f


def no_jump_evolve(gen: LindbladGenerator, proj0, dt: float, total: float,
                   snapshot_every: int = 1):
    """Integrate the cubic projector equation for the no-jump state.

    The rank-1 projector ``Pi = psi psi*`` is propagated through the vector
    field ``(1 - Pi) L[Pi] psi``, which reproduces the projector equation
    exactly; RK4 with step ``total / round(total / dt)``.

    Returns
    -------
    list of (time, Projector)
    """
    proj0 = _as_projector(proj0, gen.dim)
    if proj0.rank != 1:
        raise StructuralError("no_jump_evolve needs a rank-1 projector")
    n = n_steps(dt, total)
    h = total / n
    f = _cubic_field(gen)
    psi = proj0.vector.copy()
    out = [(0.0, proj0)]
    for k in range(1, n + 1):
        psi = _rk4(f, psi, h)
        n2 = np.vdot(psi, psi).real
        resid = abs(n2 * n2 - n2)
        if resid > 1e-6:
            raise StepSizeError(f"idempotency residual {resid:.3e} at step {k}; reduce dt")
        if resid > 1e-10:
            log.debug("re-projecting no-jump state at step %d (residual %.3e)", k, resid)
            psi = psi / math.sqrt(n2)
        if k % snapshot_every == 0 or k == n:
            out.append((k * h, Projector.from_vector(psi)))
    return out


def no_jump_survival(gen: LindbladGenerator, path) -> float:
    """``exp(int Tr(Pi_t L[Pi_t]) dt)`` along ``path`` (trapezoidal rule)."""
    if len(path) < 2:
        return 1.0
    times = np.array([t for t, _ in path])
    rates = np.array([dissipation_rate(gen, p) for _, p in path])
    val = math.exp(float(np.sum(0.5 * (rates[1:] + rates[:-1]) * np.diff(times))))
    if val > 1.0 + 1e-9:
        raise NumericalConsistencyError(f"survival probability {val} exceeds 1")
    return min(val, 1.0)


def jump_spectrum(gen: LindbladGenerator, proj: Projector):
    """Jump rates and targets: eigenpairs of ``Pi' L[Pi] Pi'``.

    Computed from the Gram matrix of the vectors ``sqrt(alpha) Pi' T_s psi``,
    so the cost is linear in the dimension.  For a rank-``r`` state the
    normalized density ``Pi / r`` is used.

    Returns
    -------
    list of (rate, Projector), rates descending and strictly positive
    """
    proj = _as_projector(proj, gen.dim)
    if not gen.alpha or not gen.n_jump_ops:
        return []
    b = proj.basis
    r = b.shape[1]
    cols = []
    for w in gen.jump_apply(b):
        w = w.reshape(gen.dim, -1)
        w = w - b @ (b.conj().T @ w)
        cols.append(w)
    wmat = np.hstack(cols) * math.sqrt(gen.alpha / r)
    gram = wmat.conj().T @ wmat
    out = []
    for lam, p in qstate.eigendecompose(gram):
        if lam < -1e-10:
            raise NumericalConsistencyError(f"negative jump rate {lam:.3e}")
        if lam <= qstate.EIGENVALUE_FLOOR * max(1.0, abs(np.trace(gram))):
            continue
        out.append((lam, Projector(wmat @ p.basis / math.sqrt(lam))))
    return out


# --------------------------------------------------------------------------
# trajectory runners
# --------------------------------------------------------------------------

def _is_stationary(gen, proj) -> bool:
    key = proj.basis.tobytes()
    hit = gen._stationary.get(key)
    if hit is None:
        _, lnorm = _step_factored(gen, proj, 1.0)
        hit = gen._stationary[key] = lnorm <= STATIONARY_TOL
    return hit


def _snapshot_grid(snapshot_times, h, horizon):
    steps = []
    for t in snapshot_times:
        if t < -1e-12 or t > horizon + 1e-9:
            raise ValueError(f"snapshot time {t} outside [0, {horizon}]")
        k = int(round(t / h))
        if abs(k * h - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"snapshot time {t} is not a multiple of the step {h}")
        steps.append(k)
    return steps


def _run_spectral(gen, start, dt, horizon, stream, snapshot_times, refine, root=None):
    n = n_steps(dt, horizon)
    h = horizon / n
    snap_steps = _snapshot_grid(snapshot_times, h, horizon)
    rec = TrajectoryRecord(seed=stream.key, mode="spectral", dt=h, horizon=horizon)
    counter0 = stream.counter
    # (first step, end step exclusive, path or None for a frozen state)
    segments = []
    s0 = 0
    path = root if root is not None else _SpectralPath(gen, start, 0.0, h, n)
    current = start
    absorbed = False
    while True:
        exit_ = path.first_exit(stream.key, counter0 + s0)
        if exit_ is None:
            segments.append((s0, n + 1, path))
            consumed = n
            break
        j, u = exit_
        pre, decomp = path.decomposition(j)
        pos, rel = _select(decomp, u)
        target = decomp[pos].projector
        prob = decomp[pos].probability
        if refine:
            target, frac = _refine(gen, pre, target, rel)
            prob *= frac
        step = s0 + j
        rec.events.append(JumpEvent(time=(step + 1) * h,
                                    branch_index=_branch_number(pos, no_jump_index(decomp, pre)),
                                    target=target, weight=min(prob, 1.0),
                                    label=target_label(target)))
        segments.append((s0, step + 1, path))
        current = target
        s0 = consumed = step + 1
        if _is_stationary(gen, current):
            absorbed = True
            segments.append((s0, n + 1, None))
            break
        path = _SpectralPath(gen, current, s0 * h, h, n - s0)
    stream.counter = counter0 + consumed
    for ks in snap_steps:
        for a, b, p in segments:
            if a <= ks < b:
                rec.snapshots.append((ks * h, current if p is None else p.state(ks - a)))
                break
    if absorbed:
        rec.terminal = Terminal.JUMPED_TO
        rec.terminal_label = target_label(current)
    return rec


def _run_waiting(gen, start, mode, horizon, stream, snapshot_times, refine, root=None):
    rec = TrajectoryRecord(seed=stream.key, mode="waiting", dt=mode.ode_dt, horizon=horizon)
    for t in snapshot_times:
        if t < -1e-12 or t > horizon + 1e-9:
            raise ValueError(f"snapshot time {t} outside [0, {horizon}]")
    pending = sorted(snapshot_times)
    current, t0 = start, 0.0
    path = root if root is not None else _WaitingPath(gen, start, 0.0, mode.ode_dt, horizon)
    absorbed = False
    while True:
        u = stream.uniform()
        hit = path.crossing(u, mode.bisection_tol)
        t_end = hit[0] if hit else horizon
        while pending and pending[0] <= t_end + 1e-12 and (hit is None or pending[0] < t_end):
            rec.snapshots.append((pending[0], path.state_at(pending[0])))
            pending.pop(0)
        if hit is None:
            break
        t_jump, frame = hit
        pre = Projector.from_basis(frame)
        spectrum = jump_spectrum(gen, pre)
        if not spectrum:
            raise NumericalConsistencyError("survival decreased but the jump spectrum is empty")
        rates = np.array([lam for lam, _ in spectrum])
        cdf = np.cumsum(rates) / rates.sum()
        v = stream.uniform()
        j = min(int(np.searchsorted(cdf, v, side="right")), len(cdf) - 1)
        target = spectrum[j][1]
        prob = rates[j] / rates.sum()
        if refine:
            lo = cdf[j - 1] if j else 0.0
            rel = min(max((v - lo) / (cdf[j] - lo), 0.0), np.nextafter(1.0, 0.0))
            target, frac = _refine(gen, pre, target, rel)
            prob *= frac
        rec.events.append(JumpEvent(time=t_jump, branch_index=j + 1, target=target,
                                    weight=float(min(prob, 1.0)), label=target_label(target)))
        current, t0 = target, t_jump
        if _is_stationary(gen, current):
            absorbed = True
            break
        path = _WaitingPath(gen, current, t0, mode.ode_dt, horizon)
    for t in pending:
        rec.snapshots.append((t, current))
    rec.snapshots.sort(key=lambda x: x[0])
    if absorbed:
        rec.terminal = Terminal.JUMPED_TO
        rec.terminal_label = target_label(current)
    return rec


def run_trajectory_spectral(gen: LindbladGenerator, psi0, dt: float, horizon: float, rng,
                            snapshot_times=(), refine: bool = True) -> TrajectoryRecord:
    """One trajectory of the spectral-step sampler.

    ``rng`` is a :class:`CounterStream` (advanced in place) or an integer key;
    exactly one uniform is consumed per step.  Snapshot times must lie on the
    step grid ``k * horizon / round(horizon / dt)``.
    """
    start = _as_projector(psi0, gen.dim)
    return _run_spectral(gen, start, dt, horizon, as_stream(rng), snapshot_times, refine)


def run_trajectory_waiting(gen: LindbladGenerator, psi0, mode: WaitingTime, horizon: float,
                           rng, snapshot_times=(), refine: bool = True) -> TrajectoryRecord:
    """One trajectory of the waiting-time sampler.

    Raises :class:`ModeUnsupportedError` when the jump terms feed back into
    the no-jump state, i.e. ``(1-Pi) sum_s T_s Pi T_s* Pi != 0`` somewhere on
    the path.
    """
    start = _as_projector(psi0, gen.dim)
    return _run_waiting(gen, start, mode, horizon, as_stream(rng), snapshot_times, refine)


def make_root_path(gen: LindbladGenerator, psi0, mode, horizon: float):
    """Shared no-jump path for many trajectories started from ``psi0``."""
    start = _as_projector(psi0, gen.dim)
    if isinstance(mode, SpectralStep):
        n = n_steps(mode.dt, horizon)
        path = _SpectralPath(gen, start, 0.0, horizon / n, n)
        path.extend(n)
    else:
        path = _WaitingPath(gen, start, 0.0, mode.ode_dt, horizon)
        path.extend(path.steps_total)
    return path


def run_trajectory(gen: LindbladGenerator, psi0, mode, horizon: float, rng,
                   snapshot_times=(), refine: bool = True, root=None) -> TrajectoryRecord:
    """Dispatch on ``mode``; ``root`` optionally supplies a shared no-jump path."""
    start = _as_projector(psi0, gen.dim)
    stream = as_stream(rng)
    if isinstance(mode, SpectralStep):
        return _run_spectral(gen, start, mode.dt, horizon, stream, snapshot_times, refine, root)
    if isinstance(mode, WaitingTime):
        return _run_waiting(gen, start, mode, horizon, stream, snapshot_times, refine, root)
    raise TypeError(f"unknown sampler mode {mode!r}")


__all__ = [
    "JumpEvent", "SpectralStep", "Terminal", "TrajectoryRecord", "WaitingTime",
    "jump_spectrum", "make_root_path", "no_jump_evolve", "no_jump_index",
    "no_jump_survival", "one_step_ensemble", "parse_record_text", "run_trajectory",
    "run_trajectory_spectral", "run_trajectory_waiting", "select_branch", "target_label",
]
