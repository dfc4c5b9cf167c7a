from __future__ import annotations

from dataclasses import asdict, dataclass

from ..core import DataError


@dataclass(frozen=True)
class MetricConfig:
    nleep_pca_variance: float = 0.8
    nleep_components: int | str = "auto"
    gmm_reg: float = 1e-6
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-8
    logme_tol: float = 1e-3
    logme_max_iters: int = 100
    gbc_cov: str = "diagonal"
    pinv_rcond: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.nleep_pca_variance <= 1.0:
            raise DataError("nleep_pca_variance must be in (0, 1]")
        if self.gmm_reg < 0:
            raise DataError("gmm_reg must be >= 0")
        if min(self.logme_tol, self.pinv_rcond, self.gmm_tol) <= 0:
            raise DataError("tolerances must be positive")
        if self.gbc_cov != "diagonal":
            raise DataError(f"unsupported gbc_cov {self.gbc_cov!r}")
        comps = self.nleep_components
        if comps != "auto" and (not isinstance(comps, int) or comps < 1):
            raise DataError("nleep_components must be a positive integer or 'auto'")

    def to_dict(self):
        return asdict(self)
