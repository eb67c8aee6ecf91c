"""Ensemble verification diagnostics: bias, RMSE, relative L2 error,
spread, rank histograms, and time-averaged summary tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleRun
from .errors import FieldError

VARIABLES = ("eta", "u", "v")


@dataclass(frozen=True)
class PointSeries:
    """Per-member and truth values of one variable at one grid point."""

    variable: str
    location: tuple
    times: np.ndarray
    members: np.ndarray   # (N_p, T)
    truth: np.ndarray     # (T,)

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise FieldError(f"unknown variable {self.variable!r}")
        if self.members.ndim != 2 or self.members.shape[1] != self.truth.shape[0]:
            raise FieldError("member and truth shapes are inconsistent")
        if self.times.shape[0] != self.truth.shape[0]:
            raise FieldError("time axis does not match the values")
        if np.any(np.diff(self.times) <= 0.0):
            raise FieldError("times must be strictly increasing")


@dataclass(frozen=True)
class RankHistogram:
    counts: np.ndarray
    n_samples: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.n_samples:
            raise FieldError("histogram counts do not sum to the sample count")


def point_series(run: EnsembleRun, variable: str, location) -> PointSeries:
    """Extract the (N_p, T) member matrix and truth vector at one point."""
    if run.truth is None:
        raise FieldError("ensemble run carries no truth trajectory")
    i, j = location
    members = np.array(
        [[getattr(s, variable).values[i, j] for s in traj] for traj in run.members]
    )
    truth = np.array([getattr(s, variable).values[i, j] for s in run.truth])
    return PointSeries(
        variable=variable,
        location=(int(i), int(j)),
        times=run.times,
        members=members,
        truth=truth,
    )


def central_point(grid_shape) -> tuple:
    """Desk-scale analogue of the central monitoring point."""
    return (grid_shape[0] // 2, grid_shape[1] // 2)


def bias(members: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Ensemble mean minus truth, per time."""
    members = np.asarray(members, dtype=np.float64)
    if members.size == 0 or members.shape[0] == 0:
        raise FieldError("bias of an empty ensemble is undefined")
    return members.mean(axis=0) - np.asarray(truth, dtype=np.float64)


def rmse(members: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Root mean square member error about the truth, per time."""
    members = np.asarray(members, dtype=np.float64)
    if members.size == 0 or members.shape[0] == 0:
        raise FieldError("rmse of an empty ensemble is undefined")
    err = members - np.asarray(truth, dtype=np.float64)[None, :]
    return np.sqrt((err**2).mean(axis=0))


def relative_l2(member_field: np.ndarray, truth_field: np.ndarray) -> float:
    """Whole-field error norm relative to the truth norm."""
    t = np.asarray(truth_field, dtype=np.float64)
    denom = float((t**2).sum())
    if denom == 0.0:
        raise FieldError("relative error undefined: truth field has zero norm")
    diff = np.asarray(member_field, dtype=np.float64) - t
    return float(np.sqrt((diff**2).sum() / denom))


def ensemble_mean_relative_l2(run: EnsembleRun, variable: str) -> np.ndarray:
    """Relative L2 error against the truth, averaged over members, per time."""
    if run.truth is None:
        raise FieldError("ensemble run carries no truth trajectory")
    out = np.zeros(len(run.truth))
    for t, truth_state in enumerate(run.truth):
        tv = getattr(truth_state, variable).values
        out[t] = np.mean(
            [relative_l2(getattr(traj[t], variable).values, tv) for traj in run.members]
        )
    return out


def ensemble_spread(members: np.ndarray) -> np.ndarray:
    """Sample standard deviation across members (N_p - 1 divisor), per time."""
    members = np.asarray(members, dtype=np.float64)
    if members.shape[0] < 2:
        raise FieldError("spread needs at least two members")
    return members.std(axis=0, ddof=1)


def rank_histogram(members: np.ndarray, truth: np.ndarray, rng=None) -> RankHistogram:
    """Rank of the truth among the members, accumulated over time.

    The rank is the number of members strictly below the truth; ties are
    broken uniformly at random among the tied positions.
    """
    members = np.asarray(members, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if members.shape[0] < 1:
        raise FieldError("rank histogram needs at least one member")
    if rng is None:
        rng = np.random.default_rng(0)
    n_p, n_t = members.shape
    counts = np.zeros(n_p + 1, dtype=int)
    below = (members < truth[None, :]).sum(axis=0)
    ties = (members == truth[None, :]).sum(axis=0)
    for t in range(n_t):
        rank = below[t] + (rng.integers(0, ties[t] + 1) if ties[t] else 0)
        counts[rank] += 1
    return RankHistogram(counts=counts, n_samples=n_t)


def rank_histogram_from_run(
    run: EnsembleRun, location, variable: str, n_steps: int, rng=None
) -> RankHistogram:
    """Histogram over the first n_steps forecast times (the shared initial
    state is excluded)."""
    series = point_series(run, variable, location)
    avail = series.truth.shape[0] - 1
    n = min(n_steps, avail)
    if n < 1:
        raise FieldError("rank histogram needs at least one forecast step")
    return rank_histogram(series.members[:, 1:n + 1], series.truth[1:n + 1], rng)


def time_average_table(runs: dict, location=None) -> list[dict]:
    """Time means of bias and RMSE per variable for each labelled run.

    Rows are dictionaries with keys scenario, variable, mean_bias,
    mean_rmse, matching the summary CSV layout.
    """
    rows = []
    for scenario, run in runs.items():
        loc = location
        if loc is None:
            loc = central_point(run.members[0][0].grid.shape)
        for var in VARIABLES:
            series = point_series(run, var, loc)
            rows.append(
                {
                    "scenario": scenario,
                    "variable": var,
                    "mean_bias": float(np.mean(bias(series.members, series.truth))),
                    "mean_rmse": float(np.mean(rmse(series.members, series.truth))),
                }
            )
    return rows
