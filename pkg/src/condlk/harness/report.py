"""Convergence reports and their CSV / JSON forms."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

CSV_HEADER = ["method", "test_sigma", "freq", "n_trials"]


def fmt(x) -> str:
    """17 significant digits, '.' decimal separator."""
    return format(float(x), ".17g")


@dataclass
class ConvergenceReport:
    methods: list
    test_sigma: list
    n_trials: int
    counts: dict = field(default_factory=dict)      # (method, sigma) -> converged count
    records: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)      # (method, sigma) -> (n_trials, T+1)
    converged: dict = field(default_factory=dict)   # (method, sigma) -> bool mask
    rates: dict = field(default_factory=dict)       # sigma -> {method: mean curve}
    errors: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def add(self, method, sigma, converged, trace, iters, failed, oob):
        key = (method, float(sigma))
        self.counts[key] = int(np.count_nonzero(converged))
        self.traces[key] = trace
        self.converged[key] = converged
        for t in range(len(converged)):
            self.records.append({
                "method": method, "test_sigma": float(sigma), "trial": t,
                "converged": bool(converged[t]), "final_rmse": float(trace[t, -1]),
                "iterations": int(iters[t]), "failed": bool(failed[t]), "out_of_bounds": bool(oob[t]),
                "rmse_trace": [float(v) for v in trace[t]],
            })

    def add_failed_method(self, method, sigma):
        self.counts[(method, float(sigma))] = 0

    def frequency(self, method, sigma) -> Fraction:
        return Fraction(self.counts[(method, float(sigma))], self.n_trials)

    def freq(self, method, sigma) -> float:
        return float(self.frequency(method, sigma))

    def compute_rates(self, methods=None):
        """Mean RMSE per regressor application over trials where all methods converged."""
        methods = [m for m in (methods or self.methods) if (m, float(self.test_sigma[0])) in self.traces]
        self.rates = {}
        for sigma in self.test_sigma:
            s = float(sigma)
            if not methods:
                continue
            both = np.logical_and.reduce([self.converged[(m, s)] for m in methods])
            if not both.any():
                self.rates[s] = {}
                continue
            curves = {m: self.traces[(m, s)][both].mean(axis=0) for m in methods}
            for m, c in curves.items():
                if np.any(np.diff(c) > 1e-12):
                    self.warnings.append(f"mean RMSE curve of {m} at sigma={fmt(s)} is not monotone")
            self.rates[s] = curves
        return self.rates

    # -- serialization --------------------------------------------------

    def rows(self):
        for m in self.methods:
            for s in self.test_sigma:
                key = (m, float(s))
                if key in self.counts:
                    yield m, float(s), self.frequency(m, s), self.n_trials

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m, s, f, n in self.rows():
            w.writerow([m, fmt(s), fmt(f), n])
        return buf.getvalue()

    def rate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "test_sigma", "iteration", "mean_rmse"])
        for s, curves in self.rates.items():
            for m, c in curves.items():
                for i, v in enumerate(c):
                    w.writerow([m, fmt(s), i, fmt(v)])
        return buf.getvalue()

    @staticmethod
    def parse_csv(text: str) -> list:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [(m, float(s), float(f), int(n)) for m, s, f, n in reader]

    def to_json(self) -> str:
        doc = {
            "header": self.header,
            "methods": self.methods,
            "test_sigma": [float(s) for s in self.test_sigma],
            "n_trials": self.n_trials,
            "frequencies": [{"method": m, "test_sigma": s, "converged": self.counts[(m, s)],
                             "freq": float(f), "n_trials": n} for m, s, f, n in self.rows()],
            "rates": {fmt(s): {m: [float(v) for v in c] for m, c in curves.items()} for s, curves in self.rates.items()},
            "errors": self.errors,
            "warnings": self.warnings,
            "records": self.records,
        }
        return json.dumps(doc, sort_keys=True)

    def write(self, out_csv):
        """Write ``<out>.csv`` and the full-record ``<out>.json`` next to it."""
        from pathlib import Path

        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())
        with open(path.with_suffix(".json"), "w") as f:
            f.write(self.to_json())
        if self.rates:
            with open(path.with_name(path.stem + "_rate.csv"), "w", newline="") as f:
                f.write(self.rate_csv())
