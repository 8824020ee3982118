"""Per-DIV neurite morphometric statistics used to drive growth.

A profile is a table of rows keyed by days in vitro: turning-angle
Gaussian parameters, tortuosity and segment-length quartiles, tip-count
quartiles and the total-length threshold that separates DIVs. The rat
hippocampal dataset ships with the package; users may load their own file
with the same columns to model other neuron types.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

__all__ = ["ProfileRow", "MorphometricProfile", "DivResult", "determine_div"]


@dataclass(frozen=True)
class ProfileRow:
    div: float
    theta_mu: float      # turning angle mean, degrees
    theta_sigma: float   # turning angle std, degrees
    tau_q1: float
    tau_q3: float
    ne_q1: float
    ne_q3: float
    lseg_q1: float       # segment length quartiles, um
    lseg_q3: float
    l_total: float       # total neurite length threshold, um


class MorphometricProfile:
    """Ordered per-DIV rows with monotone total-length thresholds."""

    def __init__(self, rows: list[ProfileRow]):
        if not rows:
            raise ValueError("profile needs at least one row")
        divs = [r.div for r in rows]
        if any(b <= a for a, b in zip(divs, divs[1:])):
            raise ValueError("DIVs must be strictly increasing")
        totals = [r.l_total for r in rows]
        if any(b <= a for a, b in zip(totals, totals[1:])):
            raise ValueError("l_total thresholds must be strictly increasing")
        for r in rows:
            for lo, hi in ((r.tau_q1, r.tau_q3), (r.ne_q1, r.ne_q3), (r.lseg_q1, r.lseg_q3)):
                if lo > hi:
                    raise ValueError(f"Q1 > Q3 in row div={r.div}")
        self.rows = list(rows)
        self._by_div = {r.div: r for r in rows}

    @property
    def divs(self) -> list[float]:
        return [r.div for r in self.rows]

    @property
    def terminal_div(self) -> float:
        return self.rows[-1].div

    def row(self, div: float) -> ProfileRow:
        try:
            return self._by_div[div]
        except KeyError:
            raise KeyError(f"no profile row for DIV {div}") from None

    @classmethod
    def load(cls, path) -> "MorphometricProfile":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(r for r in fh if not r.lstrip().startswith("#"))
            for rec in reader:
                rows.append(ProfileRow(
                    div=float(rec["div"]),
                    theta_mu=float(rec["theta_mu"]),
                    theta_sigma=float(rec["theta_sigma"]),
                    tau_q1=float(rec["tau_q1"]),
                    tau_q3=float(rec["tau_q3"]),
                    ne_q1=float(rec["ne_q1"]),
                    ne_q3=float(rec["ne_q3"]),
                    lseg_q1=float(rec["lseg_q1"]),
                    lseg_q3=float(rec["lseg_q3"]),
                    l_total=float(rec["ltotal"]),
                ))
        return cls(rows)

    @classmethod
    def default(cls) -> "MorphometricProfile":
        """The packaged rat hippocampal profile."""
        ref = resources.files("neurogrowth.data") / "rat_hippocampal_profile.csv"
        with resources.as_file(ref) as path:
            return cls.load(Path(path))


class DivResult(NamedTuple):
    div: float
    terminal: bool


def determine_div(l_total: float, profile: MorphometricProfile) -> DivResult:
    """Map a total neurite length (um) to the growth stage it falls in.

    Returns the smallest DIV whose length threshold is not yet exceeded;
    lengths beyond the last threshold report the terminal DIV with the
    stop flag set.
    """
    if l_total < 0:
        raise ValueError("l_total must be nonnegative")
    for row in profile.rows:
        if l_total <= row.l_total:
            return DivResult(row.div, False)
    return DivResult(profile.terminal_div, True)
