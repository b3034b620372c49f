"""Classification metrics and threshold sweeps.

Illicit (label 1) is the positive class everywhere. Divisions that come out
0/0 return 0.0 and the affected metric names are listed in the report's
``degenerate_metrics`` so a zero score is never mistaken for a real one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cae import fit_threshold, classify_contract
from .gbdt import log_loss
from .ingest import Label

__all__ = [
    "MetricsReport",
    "compute_metrics",
    "ContractScores",
    "VariantScores",
    "SweepRow",
    "threshold_sweep",
    "sweep_to_markdown",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision_illicit: float
    recall_illicit: float
    f1_illicit: float
    precision_reputable: float
    recall_reputable: float
    f1_reputable: float
    log_loss: float | None = None
    degenerate_metrics: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        d = {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "precision_illicit": self.precision_illicit,
            "recall_illicit": self.recall_illicit,
            "f1_illicit": self.f1_illicit,
            "precision_reputable": self.precision_reputable,
            "recall_reputable": self.recall_reputable,
            "f1_reputable": self.f1_reputable,
            "degenerate_metrics": list(self.degenerate_metrics),
        }
        if self.log_loss is not None:
            d["log_loss"] = self.log_loss
        return d


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def compute_metrics(y_true, y_pred, y_prob=None) -> MetricsReport:
    """Confusion-matrix metrics with illicit = 1 as the positive class."""
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred lengths differ")
    if t.size == 0:
        raise ValueError("cannot compute metrics on zero samples")
    bad = set(np.unique(np.concatenate([t, p]))) - {0, 1}
    if bad:
        raise ValueError(f"labels must be 0/1, found {sorted(bad)}")

    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    tn = int(np.sum((t == 0) & (p == 0)))
    fn = int(np.sum((t == 1) & (p == 0)))

    flags: list[str] = []
    prec_i = _ratio(tp, tp + fp, "precision_illicit", flags)
    rec_i = _ratio(tp, tp + fn, "recall_illicit", flags)
    f1_i = _ratio(2 * prec_i * rec_i, prec_i + rec_i, "f1_illicit", flags)
    prec_r = _ratio(tn, tn + fn, "precision_reputable", flags)
    rec_r = _ratio(tn, tn + fp, "recall_reputable", flags)
    f1_r = _ratio(2 * prec_r * rec_r, prec_r + rec_r, "f1_reputable", flags)

    ll = None
    if y_prob is not None:
        ll = log_loss(t, y_prob)

    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=(tp + tn) / t.size,
        precision_illicit=prec_i,
        recall_illicit=rec_i,
        f1_illicit=f1_i,
        precision_reputable=prec_r,
        recall_reputable=rec_r,
        f1_reputable=f1_r,
        log_loss=ll,
        degenerate_metrics=tuple(flags),
    )


@dataclass
class ContractScores:
    address: str
    label: str
    errors: np.ndarray


@dataclass
class VariantScores:
    variant: str
    train_errors: np.ndarray
    contracts: list[ContractScores] = field(default_factory=list)


@dataclass(frozen=True)
class SweepRow:
    variant: str
    percentile: float
    accuracy: float
    recall_illicit: float
    f1_illicit: float
    f1_reputable: float
    n_contracts: int
    n_flagged: int


def _labels_to_binary(labels: list[str]) -> np.ndarray:
    return np.array([1 if lab == Label.ILLICIT.value else 0 for lab in labels], dtype=np.int64)


def threshold_sweep(
    variants: list[VariantScores],
    percentiles=(75.0, 80.0, 85.0, 90.0),
    ratio_cutoff: float = 0.30,
) -> list[SweepRow]:
    """Contract-level metrics for every (variant, percentile) combination.

    For each cell the threshold is re-fitted on that variant's training
    errors, contracts are classified by the strict 30% anomaly-ratio rule,
    and metrics compare verdicts against the known labels. Rows come back
    sorted by (variant, percentile).
    """
    rows: list[SweepRow] = []
    for scores in sorted(variants, key=lambda v: v.variant):
        for p in sorted(percentiles):
            threshold = fit_threshold(scores.train_errors, p, variant=scores.variant)
            verdicts = []
            labels = []
            for contract in scores.contracts:
                report = classify_contract(
                    contract.address,
                    contract.errors,
                    threshold,
                    ratio_cutoff=ratio_cutoff,
                    variant=scores.variant,
                )
                verdicts.append(1 if report.verdict == Label.ILLICIT.value else 0)
                labels.append(contract.label)
            y_true = _labels_to_binary(labels)
            y_pred = np.asarray(verdicts, dtype=np.int64)
            m = compute_metrics(y_true, y_pred)
            rows.append(
                SweepRow(
                    variant=scores.variant,
                    percentile=float(p),
                    accuracy=m.accuracy,
                    recall_illicit=m.recall_illicit,
                    f1_illicit=m.f1_illicit,
                    f1_reputable=m.f1_reputable,
                    n_contracts=len(scores.contracts),
                    n_flagged=int(y_pred.sum()),
                )
            )
    return rows


_SWEEP_COLUMNS = (
    "variant",
    "percentile",
    "accuracy",
    "recall_illicit",
    "f1_illicit",
    "f1_reputable",
    "n_contracts",
    "n_flagged",
)


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SWEEP_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.variant,
                    repr(r.percentile),
                    repr(r.accuracy),
                    repr(r.recall_illicit),
                    repr(r.f1_illicit),
                    repr(r.f1_reputable),
                    r.n_contracts,
                    r.n_flagged,
                ]
            )


def sweep_to_markdown(rows: list[SweepRow]) -> str:
    """A fixed-format markdown table (stable across runs for identical rows)."""
    lines = [
        "| variant | percentile | accuracy | recall (illicit) | F1 (illicit) | F1 (reputable) | flagged |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {r.variant} | {r.percentile:g} | {r.accuracy:.4f} | "
            f"{r.recall_illicit:.4f} | {r.f1_illicit:.4f} | {r.f1_reputable:.4f} | "
            f"{r.n_flagged}/{r.n_contracts} |"
        )
    return "\n".join(lines) + "\n"
