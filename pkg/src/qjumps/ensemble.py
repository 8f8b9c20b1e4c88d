"""Monte Carlo ensembles of trajectories and their comparison with the master equation.

Trajectory ``i`` draws from the counter-based stream derived from
``(master_seed, i)``, and results are aggregated in index order, so the output
does not depend on the number of workers or on scheduling.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import qstate
from .exceptions import ConfigurationError, EnsembleError, StructuralError
from .lindblad import DENSE_LIMIT, LindbladGenerator, MasterTrajectory
from .rng import CounterStream, derive_keys
from .unravel import SpectralStep, Terminal, WaitingTime, make_root_path, run_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleConfig:
    n_trajectories: int
    master_seed: int
    mode: SpectralStep | WaitingTime
    horizon: float
    snapshot_times: tuple = ()
    workers: int = 1
    keep_records: bool = False
    chunk_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if self.n_trajectories < 1:
            raise ConfigurationError("an ensemble needs at least one trajectory")
        if self.workers < 1:
            raise ConfigurationError("worker count must be positive")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if not isinstance(self.mode, (SpectralStep, WaitingTime)):
            raise ConfigurationError(f"unknown sampler mode {self.mode!r}")
        for t in self.snapshot_times:
            if not -1e-12 <= t <= self.horizon + 1e-9:
                raise ConfigurationError(f"snapshot time {t} outside [0, {self.horizon}]")


@dataclass
class HitHistogram:
    """Terminal jump counts per bin plus the number of survivors.

    ``labels`` are the basis indices of the absorbing states counted in each
    bin; ``rows`` are display positions (screen rows for the cavity model).
    """

    labels: tuple
    counts: np.ndarray
    survived: int
    rows: tuple = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.rows:
            self.rows = tuple(self.labels)
        if int(self.counts.sum()) + self.survived != self.total:
            raise StructuralError("histogram counts do not add up")

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + int(self.survived)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def stderr(self) -> np.ndarray:
        f = self.frequencies
        return np.sqrt(f * (1.0 - f) / self.total)

    @property
    def survived_fraction(self) -> float:
        return self.survived / self.total

    def to_csv(self) -> str:
        lines = ["pixel_index,pixel_row,count,frequency,stderr"]
        for i, (row, c, f, e) in enumerate(zip(self.rows, self.counts, self.frequencies, self.stderr)):
            lines.append(f"{i},{row},{c},{f:.17g},{e:.17g}")
        fs = self.survived_fraction
        es = math.sqrt(fs * (1.0 - fs) / self.total)
        lines.append(f"survived,,{self.survived},{fs:.17g},{es:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "HitHistogram":
        rows, counts, survived = [], [], 0
        for line in text.strip().splitlines()[1:]:
            idx, row, count, _f, _e = line.split(",")
            if idx == "survived":
                survived = int(count)
            else:
                rows.append(int(row))
                counts.append(int(count))
        return cls(tuple(range(len(counts))), np.array(counts), survived, tuple(rows))


@dataclass
class EnsembleResult:
    histogram: HitHistogram
    snapshots: list                      # (t, averaged density matrix); empty above DENSE_LIMIT
    populations: list                    # (t, averaged diagonal populations)
    jump_times: np.ndarray               # first-jump times, inf for trajectories that never jumped
    records: list | None = field(default=None, repr=False)

    def bin_populations(self) -> list:
        """``(t, populations of the histogram bins)`` at each snapshot time."""
        labels = list(self.histogram.labels)
        return [(t, pop[labels]) for t, pop in self.populations]

    def observables_csv(self) -> str:
        lines = ["time,observable,value"]
        labels = list(self.histogram.labels)
        for t, pop in self.populations:
            for i, lab in enumerate(labels):
                lines.append(f"{t:.17g},population_{i},{pop[lab]:.17g}")
            lines.append(f"{t:.17g},unabsorbed,{1.0 - float(np.sum(pop[labels])):.17g}")
        return "\n".join(lines) + "\n"


def _run_chunk(gen, start, cfg, keys, indices, root):
    out = []
    for i in indices:
        stream = CounterStream(int(keys[i]))
        out.append((i, run_trajectory(gen, start, cfg.mode, cfg.horizon, stream,
                                      snapshot_times=cfg.snapshot_times, root=root)))
    return out


def _chunks(n, size):
    return [range(a, min(n, a + size)) for a in range(0, n, size)]


def run_ensemble(gen: LindbladGenerator, psi0, cfg: EnsembleConfig, bins=None,
                 rows=None) -> EnsembleResult:
    """Run ``cfg.n_trajectories`` independent trajectories and aggregate them.

    Parameters
    ----------
    bins : sequence of int, optional
        Basis labels of absorbing states counted in the histogram.  By
        default every label reached by some trajectory becomes a bin.
    rows : sequence, optional
        Display positions written to the histogram CSV.
    """
    start = qstate.Projector.from_vector(qstate.as_pure_state(psi0))
    m = cfg.n_trajectories
    keys = derive_keys(cfg.master_seed, np.arange(m))
    root = make_root_path(gen, start, cfg.mode, cfg.horizon)
    chunks = _chunks(m, max(1, cfg.chunk_size))
    results = [None] * m
    completed = []
    errors = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_run_chunk, gen, start, cfg, keys, c, root) for c in chunks]
        for fut, c in zip(futures, chunks):
            try:
                for i, rec in fut.result():
                    results[i] = rec
                    completed.append(i)
            except Exception as exc:                      # noqa: BLE001 - re-raised below
                errors.append((c.start, exc))
    if errors:
        first, exc = errors[0]
        raise EnsembleError(f"trajectory chunk starting at {first} failed: {exc}",
                            completed=sorted(completed)) from exc

    terminal = [r.terminal_label if r.terminal is Terminal.JUMPED_TO else None for r in results]
    if bins is None:
        bins = sorted({lab for lab in terminal if lab is not None})
    bins = [int(b) for b in bins]
    pos = {lab: k for k, lab in enumerate(bins)}
    counts = np.zeros(len(bins), dtype=np.int64)
    survived = 0
    for i, lab in enumerate(terminal):
        if lab is None:
            survived += 1
        elif lab in pos:
            counts[pos[lab]] += 1
        else:
            raise EnsembleError(f"trajectory {i} ended in state {lab}, which is not a histogram bin",
                                completed=range(m))
    hist = HitHistogram(tuple(bins), counts, survived, tuple(rows) if rows is not None else ())

    snapshots, populations = _average_snapshots(gen.dim, results, cfg.snapshot_times)
    jt = np.array([r.jump_time() if r.events else np.inf for r in results])
    return EnsembleResult(hist, snapshots, populations, jt,
                          records=results if cfg.keep_records else None)


def _average_snapshots(dim, records, times):
    """Average ``P / rank`` over trajectories, grouping shared projector objects."""
    snapshots, populations = [], []
    dense = dim <= DENSE_LIMIT
    m = len(records)
    for k, t in enumerate(times):
        groups = OrderedDict()
        for rec in records:
            ts, proj = rec.snapshots[k]
            if abs(ts - t) > 1e-9:
                raise StructuralError(f"trajectory snapshot at {ts} does not match {t}")
            key = id(proj)
            if key in groups:
                groups[key][1] += 1
            else:
                groups[key] = [proj, 1]
        pop = np.zeros(dim)
        rho = np.zeros((dim, dim), dtype=complex) if dense else None
        for proj, count in groups.values():
            b = proj.basis
            w = count / (m * b.shape[1])
            pop += w * np.sum(np.abs(b) ** 2, axis=1)
            if dense:
                rho += w * (b @ b.conj().T)
        if dense:
            snapshots.append((t, 0.5 * (rho + rho.conj().T)))
        populations.append((t, pop))
    return snapshots, populations


def compare_to_master(avg_states, master: MasterTrajectory, tol: float = 1e-9):
    """Trace distance between averaged trajectory states and master snapshots.

    Returns a list of ``(time, distance)``.  Every averaged time must appear
    in the master trajectory.
    """
    out = []
    for t, rho in avg_states:
        try:
            ref = master.state_at(t, tol)
        except KeyError as exc:
            raise ConfigurationError(f"master trajectory has no snapshot at t={t}") from exc
        if ref.shape != rho.shape:
            raise StructuralError("dimension mismatch between ensemble and master states")
        out.append((float(t), qstate.trace_distance(rho, ref)))
    return out


def ks_statistic(sorted_samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF of the samples and ``cdf``.

    Infinite samples are allowed; they stand for events beyond any finite time.
    """
    x = np.asarray(sorted_samples, dtype=float)
    if x.size == 0:
        raise ValueError("KS statistic of an empty sample")
    if np.any(x[1:] < x[:-1]):
        raise ValueError("samples must be sorted ascending")
    return float(stats.kstest(x, cdf).statistic)


def exponential_ks(jump_times, rate: float = 1.0) -> float:
    """KS distance of first-jump times (``inf`` for survivors) from ``Exp(rate)``."""
    x = np.sort(np.asarray(jump_times, dtype=float))
    return ks_statistic(x, lambda t: -np.expm1(-rate * np.asarray(t)))
