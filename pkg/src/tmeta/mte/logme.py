"""Log marginal evidence of a Bayesian linear model on target features."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core import DataError, DegenerateWarning, LabeledFeatureSet
from .config import MetricConfig


@dataclass
class EvidenceFit:
    alpha: float
    beta: float
    evidence: float          # per-sample log evidence at (alpha, beta)
    converged: bool
    trace: list[float] = field(default_factory=list)


class _Spectrum:
    """SVD of a feature matrix, reused across target columns."""

    def __init__(self, F: np.ndarray):
        self.n, self.d = F.shape
        U, sv, _ = np.linalg.svd(F, full_matrices=False)
        self.U = U
        self.sv = sv
        s2 = np.zeros(self.d)
        s2[:sv.size] = sv * sv
        self.s2 = s2

    def project(self, y):
        z = self.U.T @ y
        perp = max(float(y @ y - z @ z), 0.0)
        return z, perp

    def terms(self, alpha, beta, z, perp):
        """Posterior mean norm, residual and effective parameter count."""
        s2 = self.s2[:z.size]
        m = beta * self.sv * z / (alpha + beta * s2)
        m2 = float(m @ m)
        res = float(np.sum((z - self.sv * m) ** 2)) + perp
        gamma = float(np.sum(beta * self.s2 / (alpha + beta * self.s2)))
        return m2, res, gamma

    def evidence(self, alpha, beta, z, perp) -> float:
        m2, res, _ = self.terms(alpha, beta, z, perp)
        n, d = self.n, self.d
        total = (0.5 * d * math.log(alpha) + 0.5 * n * math.log(beta) - 0.5 * n * math.log(2 * math.pi)
                 - 0.5 * beta * res - 0.5 * alpha * m2
                 - 0.5 * float(np.sum(np.log(alpha + beta * self.s2))))
        return total / n


def _fixed_point(spec: _Spectrum, y: np.ndarray, tol: float, max_iters: int) -> EvidenceFit:
    if np.ptp(y) == 0.0:
        raise DataError("LogME: target column has zero variance")
    z, perp = spec.project(y)
    alpha, beta = 1.0, 1.0
    ev = spec.evidence(alpha, beta, z, perp)
    trace = [ev]
    converged = False
    for _ in range(max_iters):
        m2, res, gamma = spec.terms(alpha, beta, z, perp)
        if m2 <= 0.0 or res <= 0.0:
            break
        a_new = gamma / m2
        b_new = (spec.n - gamma) / res
        if not (a_new > 0 and b_new > 0 and math.isfinite(a_new) and math.isfinite(b_new)):
            break
        ev_new = spec.evidence(a_new, b_new, z, perp)
        if ev_new < ev:
            # an update that lowers the evidence is rejected; the last accepted point stands
            break
        alpha, beta = a_new, b_new
        trace.append(ev_new)
        done = ev_new - ev < tol
        ev = ev_new
        if done:
            converged = True
            break
    return EvidenceFit(alpha, beta, ev, converged, trace)


def evidence_fit(F, y, cfg: MetricConfig = MetricConfig()) -> EvidenceFit:
    """Maximise the evidence of ``y`` given features ``F`` over (alpha, beta)."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return _fixed_point(_Spectrum(F), y, cfg.logme_tol, cfg.logme_max_iters)


def evidence_at(F, y, alpha: float, beta: float) -> float:
    """Per-sample log evidence at fixed hyperparameters."""
    spec = _Spectrum(np.asarray(F, dtype=np.float64))
    z, perp = spec.project(np.asarray(y, dtype=np.float64))
    return spec.evidence(alpha, beta, z, perp)


def logme(fs: LabeledFeatureSet, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean over classes of the maximised per-sample evidence of the one-vs-rest indicator."""
    spec = _Spectrum(fs.features)
    classes = np.unique(fs.labels)
    if classes.size < 2:
        raise DataError("LogME: one-vs-rest targets need at least 2 classes")
    values = []
    for c in classes:
        fit = _fixed_point(spec, (fs.labels == c).astype(np.float64), cfg.logme_tol, cfg.logme_max_iters)
        if not fit.converged:
            warnings.warn(f"LogME: class {int(c)} did not converge in {cfg.logme_max_iters} iterations",
                          DegenerateWarning, stacklevel=2)
        values.append(fit.evidence)
    return float(np.mean(values))
