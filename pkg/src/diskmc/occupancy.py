"""Occupancy statistics: per-state residence and gain/loss counters.

From an occupancy series the step-change series c_i(t_k) = eta_i(t_k) -
eta_i(t_{k-1}) is formed; steps where a subdomain changes by more than one
particle are rare events and are excluded from that subdomain's counters
(and counted, so the diagnostic surfaces).  Counters tag gains and losses
by the state *arrived at*: a step with c = +1 and eta(t_k) = j increments
``gain_counts[i][j]``.  Transition-matrix assembly converts these
arrival-tagged counts into from-state probabilities (see diskmc.chain).

Counters over different realizations merge by plain summation, which makes
the cross-realization reduction associative, commutative, and exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from diskmc.domain import KIND_TO_INDICES, SubdomainKind

N_SUBDOMAINS = 9


@dataclass
class OccupancyCounters:
    """Residence and arrival-tagged transition tallies, per subdomain.

    ``state_counts[i][j]`` is the number of counted steps with subdomain i+1
    holding j particles; ``gain_counts`` / ``loss_counts`` the subset of those
    steps reached by gaining / losing one particle.  ``rare_steps`` and
    ``overflow_steps`` count the excluded samples (|c| > 1 and state > cap).
    """

    n_states: int
    total_steps: int
    state_counts: np.ndarray  # (9, n_states+1) int64
    gain_counts: np.ndarray
    loss_counts: np.ndarray
    rare_steps: np.ndarray = field(default=None)  # (9,) int64
    overflow_steps: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (N_SUBDOMAINS, self.n_states + 1)
        for name in ("state_counts", "gain_counts", "loss_counts"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        for name in ("rare_steps", "overflow_steps"):
            arr = getattr(self, name)
            arr = np.zeros(N_SUBDOMAINS, np.int64) if arr is None else np.asarray(arr, np.int64)
            if arr.shape != (N_SUBDOMAINS,):
                raise ValueError(f"{name} must have shape (9,)")
            setattr(self, name, arr)

    @property
    def rare_events(self) -> int:
        return int(self.rare_steps.sum())

    @property
    def rare_event_rate(self) -> float:
        """Excluded |c|>1 samples per subdomain-step."""
        denom = N_SUBDOMAINS * self.total_steps
        return self.rare_events / denom if denom else 0.0

    def check_accounting(self) -> None:
        """Every sampled step is counted or excluded, per subdomain."""
        counted = self.state_counts.sum(axis=1)
        total = counted + self.rare_steps + self.overflow_steps
        if not np.all(total == self.total_steps):
            raise AssertionError("counter accounting does not add up to total_steps")
        if np.any(self.gain_counts > self.state_counts) or np.any(
            self.loss_counts > self.state_counts
        ):
            raise AssertionError("gain/loss counts exceed residence counts")
        if np.any(self.gain_counts[:, 0] != 0):
            raise AssertionError("state 0 cannot be reached by gaining a particle")

    def to_json_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "total_steps": self.total_steps,
            "state_counts": self.state_counts.tolist(),
            "gain_counts": self.gain_counts.tolist(),
            "loss_counts": self.loss_counts.tolist(),
            "rare_steps": self.rare_steps.tolist(),
            "overflow_steps": self.overflow_steps.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "OccupancyCounters":
        return cls(
            n_states=int(doc["n_states"]),
            total_steps=int(doc["total_steps"]),
            state_counts=np.array(doc["state_counts"], np.int64),
            gain_counts=np.array(doc["gain_counts"], np.int64),
            loss_counts=np.array(doc["loss_counts"], np.int64),
            rare_steps=np.array(doc["rare_steps"], np.int64),
            overflow_steps=np.array(doc["overflow_steps"], np.int64),
        )


def zero_counters(n_states: int) -> OccupancyCounters:
    shape = (N_SUBDOMAINS, n_states + 1)
    return OccupancyCounters(
        n_states=n_states,
        total_steps=0,
        state_counts=np.zeros(shape, np.int64),
        gain_counts=np.zeros(shape, np.int64),
        loss_counts=np.zeros(shape, np.int64),
    )


def delta_series(occupancy: np.ndarray) -> np.ndarray:
    """Step changes c_i(t_k) = eta_i(t_k) - eta_i(t_{k-1}).

    Accepts a single subdomain's series (1-D) or a stacked (N+1, 9) series;
    the change series is one sample shorter.  Values outside {-1, 0, +1} are
    preserved (flagged downstream as rare events), never clamped.
    """
    occ = np.asarray(occupancy)
    if occ.ndim not in (1, 2) or occ.shape[0] < 2:
        raise ValueError("occupancy series needs at least two samples")
    return np.diff(occ.astype(np.int64), axis=0)


def accumulate(occupancy: np.ndarray, n_states: int,
               burn_in: int = 0) -> OccupancyCounters:
    """Tally one realization's series into counters capped at ``n_states``.

    For each k >= 1 (after ``burn_in`` discarded leading steps) and each
    subdomain: the sample is excluded if |c| > 1 (rare event) or if the
    occupancy exceeds the cap; otherwise state_counts[i][eta(t_k)] is
    incremented, and gain_counts / loss_counts too when c is +1 / -1.
    The t_0 sample defines c_1 but is itself never tallied.
    """
    occ = np.asarray(occupancy, dtype=np.int64)
    if occ.ndim != 2 or occ.shape[1] != N_SUBDOMAINS:
        raise ValueError("accumulate expects an (N+1, 9) occupancy series")
    changes = delta_series(occ)
    if burn_in:
        if burn_in >= changes.shape[0]:
            raise ValueError("burn_in leaves no samples to accumulate")
        occ_tail = occ[1 + burn_in:]
        changes = changes[burn_in:]
    else:
        occ_tail = occ[1:]

    n_samples = occ_tail.shape[0]
    rare = np.abs(changes) > 1
    over = (occ_tail > n_states) & ~rare
    valid = ~rare & ~over

    width = n_states + 1
    sub = np.broadcast_to(np.arange(N_SUBDOMAINS), occ_tail.shape)
    flat = sub * width + occ_tail
    minlength = N_SUBDOMAINS * width

    def tally(mask):
        return np.bincount(flat[mask], minlength=minlength).reshape(
            N_SUBDOMAINS, width
        )

    return OccupancyCounters(
        n_states=n_states,
        total_steps=n_samples,
        state_counts=tally(valid),
        gain_counts=tally(valid & (changes == 1)),
        loss_counts=tally(valid & (changes == -1)),
        rare_steps=rare.sum(axis=0).astype(np.int64),
        overflow_steps=over.sum(axis=0).astype(np.int64),
    )


def merge(a: OccupancyCounters, b: OccupancyCounters) -> OccupancyCounters:
    """Elementwise sum of two counter sets (associative and commutative)."""
    if a.n_states != b.n_states:
        raise ValueError("cannot merge counters with different state caps")
    return OccupancyCounters(
        n_states=a.n_states,
        total_steps=a.total_steps + b.total_steps,
        state_counts=a.state_counts + b.state_counts,
        gain_counts=a.gain_counts + b.gain_counts,
        loss_counts=a.loss_counts + b.loss_counts,
        rare_steps=a.rare_steps + b.rare_steps,
        overflow_steps=a.overflow_steps + b.overflow_steps,
    )


def truncate(counters: OccupancyCounters, n_states: int) -> OccupancyCounters:
    """Re-cap counters at a smaller ``n_states``.

    Identical to re-accumulating the raw series with the smaller cap: samples
    in states above the new cap move into ``overflow_steps``.
    """
    if n_states > counters.n_states:
        raise ValueError("can only truncate to a smaller state cap")
    if n_states == counters.n_states:
        return counters
    cut = n_states + 1
    dropped = counters.state_counts[:, cut:].sum(axis=1)
    return OccupancyCounters(
        n_states=n_states,
        total_steps=counters.total_steps,
        state_counts=counters.state_counts[:, :cut].copy(),
        gain_counts=counters.gain_counts[:, :cut].copy(),
        loss_counts=counters.loss_counts[:, :cut].copy(),
        rare_steps=counters.rare_steps.copy(),
        overflow_steps=counters.overflow_steps + dropped,
    )


@dataclass
class PooledKind:
    """Counters and per-state probabilities pooled over one subdomain type."""

    kind: SubdomainKind
    state_total: np.ndarray  # (n_states+1,) int64
    gain_total: np.ndarray
    loss_total: np.ndarray
    gain_prob: np.ndarray  # (n_states+1,) float64
    loss_prob: np.ndarray
    stay_prob: np.ndarray
    observed: np.ndarray  # bool, state_total > 0
    overflow_total: int

    def empirical_pmf(self) -> np.ndarray:
        """Observed state distribution (residence counts, renormalized)."""
        total = self.state_total.sum()
        if total == 0:
            raise ValueError(f"no observed samples for kind {self.kind}")
        return self.state_total / total

    def empirical_mean(self) -> float:
        pmf = self.empirical_pmf()
        return float(pmf @ np.arange(len(pmf)))


@dataclass
class PooledProbabilities:
    """Per-type gain/loss/stay probabilities (arrival-tagged, like Eqs 8-10)."""

    n_states: int
    kinds: dict[SubdomainKind, PooledKind]

    def __getitem__(self, kind: SubdomainKind) -> PooledKind:
        return self.kinds[kind]


def pool(counters: OccupancyCounters) -> PooledProbabilities:
    """Pool counters over subdomain types and form per-state probabilities.

    Pooling sums numerators and denominators over the type's subdomains
    before dividing (a ratio of sums, not a mean of ratios).  States never
    observed for a type get stay probability 1 and an ``observed = False``
    flag; no transitions are invented for them.
    """
    kinds = {}
    for kind, indices in KIND_TO_INDICES.items():
        rows = [i - 1 for i in indices]
        g = counters.state_counts[rows].sum(axis=0)
        dp = counters.gain_counts[rows].sum(axis=0)
        dm = counters.loss_counts[rows].sum(axis=0)
        observed = g > 0
        gain = np.zeros_like(g, dtype=float)
        loss = np.zeros_like(g, dtype=float)
        np.divide(dp, g, out=gain, where=observed)
        np.divide(dm, g, out=loss, where=observed)
        stay = 1.0 - gain - loss
        kinds[kind] = PooledKind(
            kind=kind,
            state_total=g,
            gain_total=dp,
            loss_total=dm,
            gain_prob=gain,
            loss_prob=loss,
            stay_prob=stay,
            observed=observed,
            overflow_total=int(counters.overflow_steps[rows].sum()),
        )
    return PooledProbabilities(n_states=counters.n_states, kinds=kinds)
