"""Birth-death transition matrices and their stationary distributions.

Each subdomain type gets one tridiagonal row-stochastic matrix over states
0..n_states.  Row j holds the probabilities of leaving state j: the
superdiagonal entry is P(j -> j+1) and the subdiagonal P(j -> j-1).

Since the occupancy counters tag transitions by the state arrived at, the
default assembly re-indexes them into from-state estimates:

    P(j -> j+1) = (steps arriving at j+1 by gain) / (steps spent in j)
    P(j -> j-1) = (steps arriving at j-1 by loss) / (steps spent in j)

With this convention the stationary distribution automatically tracks the
empirical state histogram (up-crossings and down-crossings of an edge
alternate, so the arrival counts on both sides of an edge agree to +-1 per
realization).  The ``literal`` convention instead places the arrival-tagged
probabilities directly into the rows; it is kept for sensitivity analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from diskmc.domain import SubdomainKind
from diskmc.fitstats import FitError, TruncNormFit, fit_trunc_normal
from diskmc.occupancy import OccupancyCounters, PooledProbabilities, pool, truncate

CONVENTION_ARRIVAL = "arrival"
CONVENTION_LITERAL = "literal"

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10


class ChainAssemblyError(ValueError):
    """Counter data produced an invalid (negative) transition probability."""


class ReducibleChainError(ValueError):
    """The chain splits into disconnected state ranges."""

    def __init__(self, ranges):
        self.ranges = ranges
        pretty = ", ".join(f"{lo}..{hi}" for lo, hi in ranges)
        super().__init__(f"chain is reducible; disconnected state ranges: {pretty}")


class OracleInapplicableError(ValueError):
    """Detailed balance needs strictly positive off-diagonals on the support."""


@dataclass
class TransitionMatrix:
    """Tridiagonal row-stochastic matrix for one subdomain type."""

    kind: SubdomainKind
    matrix: np.ndarray  # (n_states+1, n_states+1)
    observed: np.ndarray  # bool per state
    stay_adjustment: np.ndarray  # probability absorbed into stay per row
    convention: str
    overflow_total: int = 0  # samples above the cap (unquantified upper leak)

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0] - 1

    def validate(self) -> None:
        m = self.matrix
        size = m.shape[0]
        if m.shape != (size, size):
            raise AssertionError("matrix must be square")
        if np.any(m < 0.0):
            raise AssertionError("negative transition probability")
        sums = m.sum(axis=1)
        if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
            raise AssertionError("rows must sum to 1")
        off = np.abs(np.triu(m, 2)).max() if size > 2 else 0.0
        off = max(off, np.abs(np.tril(m, -2)).max() if size > 2 else 0.0)
        if off != 0.0:
            raise AssertionError("matrix must be tridiagonal")

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "convention": self.convention,
            "matrix": self.matrix.tolist(),
            "observed": [bool(x) for x in self.observed],
            "stay_adjustment": self.stay_adjustment.tolist(),
            "overflow_total": self.overflow_total,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TransitionMatrix":
        return cls(
            kind=SubdomainKind(doc["kind"]),
            matrix=np.array(doc["matrix"], dtype=float),
            observed=np.array(doc["observed"], dtype=bool),
            stay_adjustment=np.array(doc["stay_adjustment"], dtype=float),
            convention=doc["convention"],
            overflow_total=int(doc.get("overflow_total", 0)),
        )


@dataclass
class StationaryDistribution:
    """Probability vector pi with pi = pi P."""

    pi: np.ndarray
    kind: SubdomainKind | None = None
    residual: float = 0.0

    def mean(self) -> float:
        return float(self.pi @ np.arange(len(self.pi)))


def assemble(pooled: PooledProbabilities, kind: SubdomainKind,
             convention: str = CONVENTION_ARRIVAL) -> TransitionMatrix:
    """Build the transition matrix for one subdomain type.

    Unobserved states become inert (stay probability 1, flagged).  Boundary
    rows have no outward entry; whatever probability the estimator cannot
    place there is absorbed into the stay entry and recorded in
    ``stay_adjustment``.  A negative stay probability (possible for the
    arrival convention on very small samples) aborts assembly.
    """
    if convention not in (CONVENTION_ARRIVAL, CONVENTION_LITERAL):
        raise ValueError(f"unknown convention {convention!r}")
    pk = pooled[kind]
    size = pooled.n_states + 1
    m = np.zeros((size, size))
    adjustment = np.zeros(size)
    g = pk.state_total

    for j in range(size):
        if g[j] == 0:
            m[j, j] = 1.0
            continue
        if convention == CONVENTION_ARRIVAL:
            up = pk.gain_total[j + 1] / g[j] if j + 1 < size else 0.0
            down = pk.loss_total[j - 1] / g[j] if j > 0 else 0.0
        else:
            up = pk.gain_prob[j] if j + 1 < size else 0.0
            down = pk.loss_prob[j] if j > 0 else 0.0
            if j == 0:
                adjustment[j] += pk.loss_prob[j]
            if j + 1 == size:
                adjustment[j] += pk.gain_prob[j]
        stay = 1.0 - up - down
        if stay < 0.0:
            raise ChainAssemblyError(
                f"{kind.value} row {j}: leave probability {up + down} exceeds 1 "
                f"(residence count {g[j]})"
            )
        if j + 1 < size:
            m[j, j + 1] = up
        if j > 0:
            m[j, j - 1] = down
        m[j, j] = stay

    return TransitionMatrix(
        kind=kind,
        matrix=m,
        observed=pk.observed.copy(),
        stay_adjustment=adjustment,
        convention=convention,
        overflow_total=pk.overflow_total,
    )


def _components(matrix: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous state ranges with no flux at all across their boundaries."""
    size = matrix.shape[0]
    ranges = []
    lo = 0
    for j in range(size - 1):
        if matrix[j, j + 1] == 0.0 and matrix[j + 1, j] == 0.0:
            ranges.append((lo, j))
            lo = j + 1
    ranges.append((lo, size - 1))
    return ranges


def _support_range(P) -> tuple[np.ndarray, int, int]:
    """Matrix plus the state range the stationary solve is restricted to."""
    if isinstance(P, TransitionMatrix):
        m = P.matrix
        obs = np.flatnonzero(P.observed)
        if len(obs) == 0:
            raise ReducibleChainError([(0, m.shape[0] - 1)])
        lo, hi = int(obs[0]), int(obs[-1])
        if not P.observed[lo:hi + 1].all():
            gaps = [(int(a), int(b)) for a, b in _components(m)
                    if not P.observed[a:b + 1].any()]
            raise ReducibleChainError(gaps or [(lo, hi)])
        inner = _components(m[lo:hi + 1, lo:hi + 1])
        if len(inner) > 1:
            raise ReducibleChainError([(a + lo, b + lo) for a, b in inner])
        return m, lo, hi
    m = np.asarray(P, dtype=float)
    comps = _components(m)
    if len(comps) > 1:
        raise ReducibleChainError(comps)
    return m, 0, m.shape[0] - 1


def stationary_distribution(P) -> StationaryDistribution:
    """Solve pi = pi P, sum(pi) = 1 by a direct dense linear solve.

    Accepts a TransitionMatrix (solved on its observed state range, zero
    elsewhere) or a plain row-stochastic ndarray.  Reducible chains are
    rejected with the disconnected ranges named.
    """
    m, lo, hi = _support_range(P)
    sums = m.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise ValueError("matrix is not row-stochastic")
    block = m[lo:hi + 1, lo:hi + 1]
    size = block.shape[0]
    a = block.T - np.eye(size)
    a[-1, :] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ReducibleChainError([(lo, hi)]) from exc
    if sol.min() < -1e-9:
        raise ReducibleChainError([(lo, hi)])
    sol = np.clip(sol, 0.0, None)
    sol /= sol.sum()
    pi = np.zeros(m.shape[0])
    pi[lo:hi + 1] = sol
    residual = float(np.abs(pi @ m - pi).max())
    if residual > RESIDUAL_TOL:
        raise ValueError(f"stationary solve residual {residual} exceeds {RESIDUAL_TOL}")
    kind = P.kind if isinstance(P, TransitionMatrix) else None
    return StationaryDistribution(pi=pi, kind=kind, residual=residual)


def detailed_balance_oracle(P) -> StationaryDistribution:
    """Closed-form stationary vector from the birth-death flux balance.

    pi_{j+1} / pi_j = P(j -> j+1) / P(j+1 -> j) on the supported range; used
    as an independent oracle for :func:`stationary_distribution`.
    """
    m, lo, hi = _support_range(P)
    up = np.diag(m, 1)[lo:hi]
    down = np.diag(m, -1)[lo:hi]
    if np.any(up <= 0.0) or np.any(down <= 0.0):
        raise OracleInapplicableError(
            "zero up/down probability inside the supported range"
        )
    log_pi = np.concatenate([[0.0], np.cumsum(np.log(up) - np.log(down))])
    log_pi -= log_pi.max()
    block = np.exp(log_pi)
    pi = np.zeros(m.shape[0])
    pi[lo:hi + 1] = block / block.sum()
    kind = P.kind if isinstance(P, TransitionMatrix) else None
    return StationaryDistribution(pi=pi, kind=kind,
                                  residual=float(np.abs(pi @ m - pi).max()))


def power_iteration(P, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Left fixed vector by repeated multiplication from a uniform start."""
    m, lo, hi = _support_range(P)
    pi = np.zeros(m.shape[0])
    pi[lo:hi + 1] = 1.0 / (hi - lo + 1)
    for _ in range(max_iter):
        nxt = pi @ m
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt
        pi = nxt
    return pi


@dataclass
class CalibrationRow:
    n_states: int
    mu: float
    sigma: float
    sse: float
    error: str | None = None


@dataclass
class CalibrationResult:
    """State-cap sweep: fit parameters per candidate and the chosen cap."""

    kind: SubdomainKind
    chosen: int
    stabilized: bool
    rows: list[CalibrationRow] = field(default_factory=list)


def calibrate_n_states(counters: OccupancyCounters, kind: SubdomainKind,
                       candidates, convention: str = CONVENTION_ARRIVAL,
                       tol: float = 1e-3) -> CalibrationResult:
    """Choose the smallest state cap whose fit has stopped moving.

    For each candidate cap the pipeline (truncate, pool, assemble, solve,
    fit) runs end to end; the chosen cap is the smallest candidate whose
    (mu, sigma) change by less than ``tol`` when the cap grows by one.  If
    none stabilizes the largest candidate is returned with a warning flag.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("need at least one candidate state cap")
    if candidates[0] < 1 or candidates[-1] > counters.n_states:
        raise ValueError("candidates must lie within the accumulated state cap")

    needed = sorted(set(candidates) | {
        c + 1 for c in candidates if c + 1 <= counters.n_states
    })
    fits: dict[int, TruncNormFit | None] = {}
    rows = []
    for n in needed:
        try:
            pooled = pool(truncate(counters, n))
            pi = stationary_distribution(assemble(pooled, kind, convention))
            fit = fit_trunc_normal(pi.pi, n)
            fits[n] = fit
            rows.append(CalibrationRow(n, fit.mu, fit.sigma, fit.sse))
        except (FitError, ChainAssemblyError, ReducibleChainError, ValueError) as exc:
            fits[n] = None
            rows.append(CalibrationRow(n, float("nan"), float("nan"),
                                       float("nan"), error=str(exc)))

    chosen = None
    for c in candidates:
        cur, nxt = fits.get(c), fits.get(c + 1)
        if cur is None or nxt is None:
            continue
        if abs(cur.mu - nxt.mu) < tol and abs(cur.sigma - nxt.sigma) < tol:
            chosen = c
            break
    stabilized = chosen is not None
    if chosen is None:
        chosen = candidates[-1]
    keep = set(candidates)
    return CalibrationResult(kind=kind, chosen=chosen, stabilized=stabilized,
                             rows=[r for r in rows if r.n_states in keep])
