"""Continual-learning scores: accuracy, lwlrap, per-step averages and
forgetting, collected into a lower-triangular report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

ACCURACY = "accuracy"
LWLRAP = "lwlrap"


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"accuracy: {predictions.shape} predictions vs {labels.shape} labels")
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float((predictions == labels).mean())


def lwlrap(scores, labels) -> float:
    """Label-weighted label-ranking average precision.

    For every positive (sample, label) pair, the precision is the share of
    positives among the labels ranked at or above it; the result averages
    these over all positive pairs. Tied scores rank the lower class index
    first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(labels).astype(bool)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ValueError(f"lwlrap: scores {scores.shape} vs labels {truth.shape}")
    n_pos = truth.sum()
    if n_pos == 0:
        raise DataError("lwlrap needs at least one positive label")
    order = np.argsort(-scores, axis=1, kind="stable")
    ranked = np.take_along_axis(truth, order, axis=1)
    hits = np.cumsum(ranked, axis=1)
    ranks = np.arange(1, scores.shape[1] + 1)
    return float((hits / ranks)[ranked].sum() / n_pos)


def _exact(x) -> Decimal:
    return Decimal(repr(float(x)))


def average_over_domains(row: Sequence[float]) -> float:
    """Mean of the scores in one report row, computed on their decimal values."""
    if len(row) == 0:
        raise ValueError("cannot average an empty row")
    return float(sum(_exact(v) for v in row) / len(row))


def forgetting(matrix: Mapping[tuple[int, int], float], step: int) -> float:
    """Mean drop on earlier domains at ``step`` (1-based).

    ``matrix[(t, i)]`` is the score on domain i after learning domain t. The
    drop for domain i compares ``matrix[(i, i)]`` with ``matrix[(step, i)]``.
    Arithmetic is done on the decimal values of the scores, so table-style
    inputs give table-style outputs (49.7 - 34.1 is 15.6, not 15.600000000000001).
    """
    if step < 2:
        raise ValueError("forgetting is undefined before the second step")
    drops = [_exact(matrix[(i, i)]) - _exact(matrix[(step, i)]) for i in range(1, step)]
    return float(sum(drops) / (step - 1))


@dataclass
class MetricsReport:
    domains: list[str]
    metric: str = ACCURACY
    matrix: dict[tuple[int, int], float] = field(default_factory=dict)
    averages: dict[int, float] = field(default_factory=dict)
    forgetting: dict[int, float] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.domains)

    def row(self, step: int) -> list[float]:
        return [self.matrix[(step, i)] for i in range(1, step + 1)]

    def to_dict(self) -> dict:
        steps = []
        for t in range(1, self.n_steps + 1):
            steps.append(
                {
                    "step": t,
                    "domain": self.domains[t - 1],
                    "scores": {self.domains[i - 1]: self.matrix[(t, i)] for i in range(1, t + 1)},
                    "average": self.averages[t],
                    "forgetting": self.forgetting.get(t),
                }
            )
        return {"metric": self.metric, "domains": list(self.domains), "steps": steps, "extras": self.extras}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        domains = list(d["domains"])
        report = cls(domains, d["metric"], extras=d.get("extras", {}))
        for entry in d["steps"]:
            t = entry["step"]
            for i, name in enumerate(domains[:t], start=1):
                report.matrix[(t, i)] = entry["scores"][name]
            report.averages[t] = entry["average"]
            if entry.get("forgetting") is not None:
                report.forgetting[t] = entry["forgetting"]
        return report

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """One row per (step, domain) cell."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "step_domain", "eval_index", "eval_domain", "score", "average", "forgetting"])
        for (t, i), score in sorted(self.matrix.items()):
            fr = self.forgetting.get(t)
            writer.writerow(
                [t, self.domains[t - 1], i, self.domains[i - 1], repr(score), repr(self.averages[t]),
                 "" if fr is None else repr(fr)]
            )
        return buf.getvalue()

    def current_domain_table(self) -> str:
        """Per step: score on the domain just learned and the average forgetting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "domain", "current_score", "forgetting"])
        for t in range(1, self.n_steps + 1):
            fr = self.forgetting.get(t)
            writer.writerow([t, self.domains[t - 1], repr(self.matrix[(t, t)]), "" if fr is None else repr(fr)])
        return buf.getvalue()

    def summary(self) -> str:
        """Human-readable table in percent with one decimal."""
        width = max(8, *(len(d) for d in self.domains))
        lines = [f"{'step':<{width}} " + " ".join(f"{d:>{width}}" for d in self.domains) + f" {'avg':>7} {'Fr':>7}"]
        for t in range(1, self.n_steps + 1):
            cells = [f"{self.matrix[(t, i)]:>{width}.1f}" for i in range(1, t + 1)]
            cells += [" " * width] * (self.n_steps - t)
            fr = self.forgetting.get(t)
            lines.append(
                f"{self.domains[t - 1]:<{width}} " + " ".join(cells)
                + f" {self.averages[t]:>7.1f} " + ("      -" if fr is None else f"{fr:>7.1f}")
            )
        return "\n".join(lines)


def build_report(
    evaluations: Mapping[tuple[int, int], float],
    domains: Sequence[str],
    metric: str = ACCURACY,
) -> MetricsReport:
    """Assemble a report from scores keyed by (step, domain), both 1-based."""
    report = MetricsReport(list(domains), metric)
    for t in range(1, len(domains) + 1):
        for i in range(1, t + 1):
            if (t, i) not in evaluations:
                raise DataError(f"missing evaluation for step {t}, domain {i}")
            report.matrix[(t, i)] = float(evaluations[(t, i)])
        report.averages[t] = average_over_domains(report.row(t))
        if t >= 2:
            report.forgetting[t] = forgetting(report.matrix, t)
    return report


def method_comparison_table(reports: Mapping[str, MetricsReport]) -> str:
    """Per method, the score on each domain right after it was learned."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "step", "domain", "current_score", "average"])
    for method, report in reports.items():
        for t in range(1, report.n_steps + 1):
            writer.writerow([method, t, report.domains[t - 1], repr(report.matrix[(t, t)]), repr(report.averages[t])])
    return buf.getvalue()
