"""Correlation-curve container and on-disk format.

Curves are written as a plain CSV (``tau_s,value,stderr``) with a JSON
sidecar ``<name>.meta.json`` carrying the context a bare table cannot:
curve kind, detector phase, visibility/ratio/prefactor where applicable,
model fingerprint and seeds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["CorrelationCurve", "write_curve", "read_curve", "sidecar_path"]

_KINDS = ("g2", "g15", "gtotal")


@dataclass
class CorrelationCurve:
    """A sampled correlation function of the delay tau.

    ``stderr`` is zero for theory curves and the Poisson standard error for
    measured ones.  ``phi`` is the detector phase for phase-sensitive kinds
    (``g15``, ``gtotal``) and ``None`` for ``g2``.
    """

    tau: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    kind: str
    phi: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.values)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.tau.shape == self.values.shape == self.stderr.shape):
            raise ValueError("tau, values and stderr must have matching shapes")
        if self.tau.ndim != 1 or self.tau.size == 0:
            raise ValueError("curves must be non-empty 1-d arrays")
        if np.any(np.diff(self.tau) <= 0) or self.tau[0] < 0:
            raise ValueError("tau must be non-negative and strictly increasing")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be non-negative")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if self.kind == "g2" and np.any(self.values < -1e-9):
            raise ValueError("g2 values must be non-negative (beyond roundoff)")

    def __len__(self) -> int:
        return self.tau.size

    def same_grid(self, other: "CorrelationCurve", tol: float = 1e-12) -> bool:
        return self.tau.shape == other.tau.shape and np.allclose(
            self.tau, other.tau, rtol=0.0, atol=tol * max(1.0, float(self.tau[-1]))
        )


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(Path(path).suffix + ".meta.json")


def write_curve(curve: CorrelationCurve, path: str | Path) -> None:
    """Write the CSV table plus its JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_s", "value", "stderr"])
        for t, v, s in zip(curve.tau, curve.values, curve.stderr):
            writer.writerow([f"{t:.12g}", f"{v:.12g}", f"{s:.12g}"])
    meta = {"kind": curve.kind, "phi": curve.phi}
    meta.update(curve.meta)
    with sidecar_path(path).open("w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def read_curve(path: str | Path) -> CorrelationCurve:
    """Read a curve written by :func:`write_curve` (sidecar optional)."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["tau_s", "value"]:
            raise ValueError(f"{path}: not a correlation-curve CSV")
        for row in reader:
            rows.append([float(x) for x in row[:3]])
    data = np.asarray(rows, dtype=float)
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    kind = meta.pop("kind", "gtotal")
    phi = meta.pop("phi", None)
    return CorrelationCurve(data[:, 0], data[:, 1], data[:, 2], kind=kind, phi=phi, meta=meta)
