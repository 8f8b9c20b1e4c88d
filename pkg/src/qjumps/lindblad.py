"""Lindblad generators and a fixed-step RK4 master-equation integrator.

Units: hbar = 1, so the Hamiltonian is an angular frequency and ``alpha`` a
rate.  The generator acts as

    L[rho] = -i [H, rho] + alpha * sum_s (T_s rho T_s* - 1/2 {rho, T_s* T_s}).

Jump operators are stored factored, ``T_s = A_s B_s*`` with thin ``A_s, B_s``,
so that ``sum_s T_s rho T_s*`` costs O(dim^2 * rank) instead of O(dim^3).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import qstate
from .exceptions import (ConfigurationError, IntegrationError,
                         NumericalConsistencyError, StructuralError)
from .qstate import Projector

log = logging.getLogger(__name__)

# dense density-matrix integration is restricted to this dimension
DENSE_LIMIT = 600


def _factor(op, dim):
    """Thin factors ``(A, B)`` with ``op = A @ B.conj().T``."""
    if sp.issparse(op):
        op = op.tocsr()
        rows = np.unique(op.nonzero()[0])
        if len(rows) <= dim // 4 or len(rows) <= 8:
            a = np.zeros((dim, max(len(rows), 1)), dtype=complex)
            a[rows, np.arange(len(rows))] = 1.0
            b = np.zeros((dim, max(len(rows), 1)), dtype=complex)
            if len(rows):
                b[:, :len(rows)] = op[rows, :].toarray().conj().T
            return a, b
        op = op.toarray()
    op = np.asarray(op, dtype=complex)
    u, s, vh = np.linalg.svd(op)
    keep = s > 1e-14 * max(s[0], 1e-300) if s.size else s > 0
    if keep.sum() <= dim // 4:
        return u[:, keep] * s[keep], vh[keep].conj().T
    return op, np.eye(dim, dtype=complex)


class LindbladGenerator:
    """The triple (H, alpha, {T_s}) together with precomputed helpers.

    Instances are treated as immutable after construction.

    Parameters
    ----------
    hamiltonian : (dim, dim) array or sparse matrix, Hermitian
    alpha : float >= 0
    jump_ops : sequence of (dim, dim) arrays or sparse matrices
    """

    def __init__(self, hamiltonian, alpha, jump_ops=()):
        h = qstate.as_hermitian(hamiltonian)
        if alpha < 0:
            raise StructuralError(f"coupling alpha must be >= 0, got {alpha}")
        dim = h.shape[0]
        ops = []
        for t in jump_ops:
            if t.shape != (dim, dim):
                raise StructuralError(f"jump operator shape {t.shape} does not match dim {dim}")
            ops.append(t.tocsr() if sp.issparse(t) else np.asarray(t, dtype=complex))
        self.hamiltonian = h.tocsr().astype(complex) if sp.issparse(h) else h
        self.alpha = float(alpha)
        self.jump_ops = tuple(ops)
        self.dim = dim

        factors = [_factor(t, dim) for t in self.jump_ops]
        widths = [a.shape[1] for a, _ in factors]
        self._slices = []
        start = 0
        for w in widths:
            self._slices.append(slice(start, start + w))
            start += w
        if factors:
            self._a = np.hstack([a for a, _ in factors])
            self._b = np.hstack([b for _, b in factors])
        else:
            self._a = np.zeros((dim, 0), dtype=complex)
            self._b = np.zeros((dim, 0), dtype=complex)
        # block-diagonal mask and Gram blocks A_s* A_s
        n = self._a.shape[1]
        self._mask = np.zeros((n, n), dtype=bool)
        self._gram = np.zeros((n, n), dtype=complex)
        for s in self._slices:
            self._mask[s, s] = True
            self._gram[s, s] = self._a[:, s].conj().T @ self._a[:, s]

        self._eff = None
        if dim <= DENSE_LIMIT:
            decay = self.decay_matrix()
            low = np.linalg.eigvalsh(0.5 * (decay + decay.conj().T))[0]
            if low < -1e-10:
                raise StructuralError(f"sum of T*T is not positive semidefinite ({low:.3e})")
            self._eff = -1j * qstate.to_dense(self.hamiltonian) - 0.5 * self.alpha * decay
        self._stationary = {}

    def __repr__(self):
        return (f"LindbladGenerator(dim={self.dim}, alpha={self.alpha}, "
                f"n_jump_ops={len(self.jump_ops)})")

    @property
    def n_jump_ops(self) -> int:
        return len(self.jump_ops)

    # ---- operator actions on vectors / thin matrices ----

    def hamiltonian_apply(self, x):
        return self.hamiltonian @ x

    def decay_apply(self, x):
        """``sum_s T_s* T_s x``."""
        if self._a.shape[1] == 0:
            return np.zeros_like(x)
        return self._b @ (self._gram @ (self._b.conj().T @ x))

    def effective_apply(self, x):
        """``(-i H - alpha/2 sum_s T_s* T_s) x``, the no-jump vector field."""
        if self._eff is not None:
            return self._eff @ x
        out = -1j * (self.hamiltonian @ x)
        if self.alpha:
            out = out - 0.5 * self.alpha * self.decay_apply(x)
        return out

    def jump_apply(self, x):
        """List of ``T_s x`` for every jump operator."""
        c = self._b.conj().T @ x
        return [self._a[:, s] @ c[s] for s in self._slices]

    def jump_amplitudes(self, x):
        """Squared norms ``||T_s x||^2`` (columns of ``x`` summed)."""
        c = self._b.conj().T @ x
        out = np.empty(len(self._slices))
        for i, s in enumerate(self._slices):
            cs = c[s]
            out[i] = np.real(np.sum(cs.conj() * (self._gram[s, s] @ cs)))
        return out

    def decay_matrix(self) -> np.ndarray:
        """Dense ``sum_s T_s* T_s``."""
        return self._b @ self._gram @ self._b.conj().T

    @cached_property
    def orthogonal_channels(self) -> bool:
        """True when the ranges of the jump operators are mutually orthogonal."""
        for i, si in enumerate(self._slices):
            for sj in self._slices[i + 1:]:
                cross = self._a[:, si].conj().T @ self._a[:, sj]
                if np.max(np.abs(cross), initial=0.0) > 1e-12:
                    return False
        return True

    def _apply(self, rho):
        # rho is Hermitian, so rho H = (H rho)* and rho K = (K rho)*
        hr = self.hamiltonian @ rho
        out = -1j * hr
        out += out.conj().T
        if self.alpha and self._a.shape[1]:
            b, a = self._b, self._a
            y = b.conj().T @ rho                      # B* rho
            x = np.where(self._mask, y @ b, 0.0)      # blocks B_s* rho B_s
            kr = b @ (self._gram @ y)
            kr += kr.conj().T
            out += self.alpha * (a @ x @ a.conj().T - 0.5 * kr)
        return out


def apply_generator(gen: LindbladGenerator, rho) -> np.ndarray:
    """Evaluate ``L[rho]`` for a Hermitian (or density) matrix ``rho``.

    The result is checked to be traceless and Hermitian.
    """
    rho = np.asarray(qstate.to_dense(rho))
    if rho.shape != (gen.dim, gen.dim):
        raise StructuralError(f"state shape {rho.shape} does not match generator dim {gen.dim}")
    rho = np.asarray(qstate.as_hermitian(rho), dtype=complex)
    out = gen._apply(rho)
    scale = max(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)))), 1.0)
    if abs(np.trace(out)) > 1e-10 * scale:
        raise NumericalConsistencyError(f"generator output has trace {np.trace(out):.3e}")
    return out


@dataclass
class MasterTrajectory:
    """Snapshots of an integrated master equation."""

    times: np.ndarray
    states: list
    trace_drift: float = 0.0
    min_eigenvalue: float = 0.0
    step_trace_jumps: float = 0.0
    meta: dict = field(default_factory=dict)

    def state_at(self, t: float, tol: float = 1e-9) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"no snapshot at t={t}")
        return self.states[i]


def _rk4_matrix(f, rho, dt):
    k1 = f(rho)
    k2 = f(rho + 0.5 * dt * k1)
    k3 = f(rho + 0.5 * dt * k2)
    k4 = f(rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def n_steps(dt: float, total: float) -> int:
    """Number of fixed steps covering ``[0, total]``; the step is ``total / n``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if total < dt * (1 - 1e-12):
        raise ValueError(f"horizon {total} shorter than the step {dt}")
    return max(1, int(round(total / dt)))


def integrate_master(gen: LindbladGenerator, rho0, dt: float, total: float,
                     snapshot_every: int = 1) -> MasterTrajectory:
    """Classical RK4 for ``d rho/dt = L[rho]`` on ``[0, total]``.

    The step actually used is ``total / round(total / dt)``.  No trace
    renormalization is applied; every snapshot is re-validated and an
    :class:`IntegrationError` names the step where the trace drifts by more
    than 1e-6 or an eigenvalue drops below -1e-6.
    """
    if gen.dim > DENSE_LIMIT:
        raise ConfigurationError(
            f"dense master integration is limited to dim <= {DENSE_LIMIT} (got {gen.dim}); "
            "use the trajectory sampler for larger systems")
    if snapshot_every < 1:
        raise ValueError("snapshot_every must be a positive integer")
    rho = qstate.as_density_matrix(rho0).copy()
    n = n_steps(dt, total)
    h = total / n
    times, states = [0.0], [rho.copy()]
    drift = 0.0
    step_jump = 0.0
    min_eig = float(np.linalg.eigvalsh(rho)[0])
    tr_prev = np.trace(rho).real
    for k in range(1, n + 1):
        rho = _rk4_matrix(gen._apply, rho, h)
        tr = np.trace(rho).real
        step_jump = max(step_jump, abs(tr - tr_prev))
        tr_prev = tr
        drift = max(drift, abs(tr - 1.0))
        if drift > 1e-6:
            raise IntegrationError(f"trace drift {drift:.3e} at step {k} (t={k * h:g})")
        if k % snapshot_every == 0 or k == n:
            rho = 0.5 * (rho + rho.conj().T)
            low = float(np.linalg.eigvalsh(rho)[0])
            min_eig = min(min_eig, low)
            if low < -1e-6:
                raise IntegrationError(f"negative eigenvalue {low:.3e} at step {k} (t={k * h:g})")
            times.append(k * h)
            states.append(rho.copy())
    return MasterTrajectory(np.array(times), states, trace_drift=drift,
                            min_eigenvalue=min_eig, step_trace_jumps=step_jump,
                            meta={"dt": h, "steps": n})


def dissipation_rate(gen: LindbladGenerator, proj: Projector) -> float:
    """``Tr(P L[P])`` for a rank-1 projector ``P = |psi><psi|``.

    Equals ``-alpha * sum_s ||(1 - P) T_s psi||^2``, computed on the vector.
    """
    if proj.rank != 1:
        raise StructuralError("dissipation_rate needs a rank-1 projector")
    if proj.dim != gen.dim:
        raise StructuralError("dimension mismatch")
    if gen.alpha == 0 or gen.n_jump_ops == 0:
        return 0.0
    psi = proj.vector
    total = 0.0
    for w in gen.jump_apply(psi):
        total += np.vdot(w, w).real - abs(np.vdot(psi, w)) ** 2
    rate = -gen.alpha * total
    if rate > 1e-12:
        raise NumericalConsistencyError(f"positive dissipation rate {rate:.3e}")
    return float(min(rate, 0.0))
