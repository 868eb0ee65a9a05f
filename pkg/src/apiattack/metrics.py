"""Disagreement between two classifiers, split by the reference classifier's labels."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import ValidationError

REPORT_FIELDS = ("n1", "n2", "m1", "m2", "d1", "d2", "d", "d_max")


class PartialReportError(ValidationError):
    """The reference labelled no test sample with one of the classes."""

    def __init__(self, empty_label: int):
        super().__init__(f"reference assigns no test sample to label {empty_label}; "
                         f"d{empty_label} is undefined")
        self.empty_label = empty_label


@dataclass(frozen=True)
class DivergenceReport:
    n1: int
    n2: int
    m1: int
    m2: int

    def __post_init__(self):
        if self.n1 <= 0:
            raise PartialReportError(1)
        if self.n2 <= 0:
            raise PartialReportError(2)
        if not (0 <= self.m1 <= self.n1 and 0 <= self.m2 <= self.n2):
            raise ValidationError("disagreement counts must lie within the class counts")

    @property
    def d1(self) -> float:
        return self.m1 / self.n1

    @property
    def d2(self) -> float:
        return self.m2 / self.n2

    @property
    def d(self) -> float:
        return (self.m1 + self.m2) / (self.n1 + self.n2)

    @property
    def d_max(self) -> float:
        return max(self.d1, self.d2)

    def exact(self, name: str) -> Fraction:
        return {
            "d1": Fraction(self.m1, self.n1),
            "d2": Fraction(self.m2, self.n2),
            "d": Fraction(self.m1 + self.m2, self.n1 + self.n2),
            "d_max": max(Fraction(self.m1, self.n1), Fraction(self.m2, self.n2)),
        }[name]

    def to_text(self) -> str:
        return "".join(f"{k}={getattr(self, k)!r}\n" for k in REPORT_FIELDS)

    @classmethod
    def from_text(cls, text: str) -> "DivergenceReport":
        fields = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        try:
            return cls(*(int(fields[k]) for k in ("n1", "n2", "m1", "m2")))
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"malformed divergence report: {exc}") from exc


def divergence_from_labels(reference_labels, candidate_labels) -> DivergenceReport:
    ref = np.asarray(reference_labels).reshape(-1)
    cand = np.asarray(candidate_labels).reshape(-1)
    if ref.shape != cand.shape:
        raise ValidationError(f"{len(ref)} reference labels vs {len(cand)} candidate labels")
    in1, in2 = ref == 1, ref == 2
    return DivergenceReport(
        n1=int(in1.sum()), n2=int(in2.sum()),
        m1=int((in1 & (cand != 1)).sum()), m2=int((in2 & (cand != 2)).sum()),
    )


def divergence(reference: Callable, candidate: Callable, features) -> DivergenceReport:
    """Compare two classifiers (callables mapping a feature matrix to labels)."""
    X = np.atleast_2d(np.asarray(features))
    return divergence_from_labels(reference(X), candidate(X))


def percent(value: Fraction | float) -> str:
    """Percentage with two decimals, halves rounded up."""
    q = Fraction(value) * 10000
    cents = int(q.numerator * 2 + q.denominator) // (2 * q.denominator)
    return f"{cents // 100}.{cents % 100:02d}%"


SWEEP_HEADER = "total | N_r | N_s | d1 | d2 | d"


def render_sweep_row(n_real: int, n_synth: int, report: DivergenceReport) -> str:
    return " | ".join([str(n_real + n_synth), str(n_real), str(n_synth),
                       percent(report.exact("d1")), percent(report.exact("d2")),
                       percent(report.exact("d"))])


def render_sweep_table(rows: list[tuple[int, int, DivergenceReport]]) -> str:
    return SWEEP_HEADER + "\n" + "".join(render_sweep_row(*r) + "\n" for r in rows)


def render_sweep_csv(rows: list[tuple[int, int, DivergenceReport]]) -> str:
    lines = ["total,n_real,n_synth,n1,n2,m1,m2,d1,d2,d"]
    for n_r, n_s, rep in rows:
        lines.append(f"{n_r + n_s},{n_r},{n_s},{rep.n1},{rep.n2},{rep.m1},{rep.m2},"
                     f"{rep.d1!r},{rep.d2!r},{rep.d!r}")
    return "\n".join(lines) + "\n"
