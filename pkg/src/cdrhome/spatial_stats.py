"""Getis-Ord Gi* hot/cold spots over tower-level values with distance-band weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .cdr_core import TowerNetwork
from .errors import ConfigError, DegenerateFieldError
from .metrics import PopulationVector

# two-sided critical values
Z_CRIT = {0.90: 1.645, 0.95: 1.960, 0.99: 2.576}
DEFAULT_BAND_M = 10_000.0

HOT, COLD, NEUTRAL = "hot", "cold", "neutral"


def z_critical(confidence: float) -> float:
    for c, z in Z_CRIT.items():
        if abs(confidence - c) < 1e-9:
            return z
    raise ConfigError(f"confidence must be one of {sorted(Z_CRIT)}, got {confidence}")


def classify(z: np.ndarray, z_crit: float) -> tuple[str, ...]:
    return tuple(HOT if v >= z_crit else COLD if v <= -z_crit else NEUTRAL for v in z)


@dataclass(frozen=True)
class GiStarResult:
    towers: tuple[str, ...]
    values: np.ndarray
    z: np.ndarray
    confidence: float = 0.90

    @property
    def classification(self) -> tuple[str, ...]:
        return classify(self.z, z_critical(self.confidence))

    def at(self, confidence: float) -> "GiStarResult":
        return GiStarResult(self.towers, self.values, self.z, confidence)

    def by_tower(self) -> dict[str, tuple[float, str]]:
        return dict(zip(self.towers, zip(self.z.tolist(), self.classification)))


def band_weights(network: TowerNetwork, band_m: float) -> sparse.csr_matrix:
    """Binary weights w_ij = 1 iff d(i, j) <= band_m, diagonal included."""
    indptr, indices = network.neighbors(band_m)
    n = len(network)
    return sparse.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))


def gi_star_z(values: np.ndarray, weights) -> np.ndarray:
    """Standardized Gi* for binary (or general) weights.

    z_i = (sum_j w_ij x_j - xbar W_i) / (S sqrt((n S1_i - W_i^2) / (n - 1)))
    with W_i = sum_j w_ij, S1_i = sum_j w_ij^2 and S the population std of x.
    Rows whose neighborhood spans the whole network have no variance and get z = 0.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        raise DegenerateFieldError("Gi* needs at least two towers")
    if not np.isfinite(x).all():
        raise ValueError("values must be finite")
    if np.ptp(x) == 0:
        raise DegenerateFieldError("all values are equal; Gi* is undefined")
    xbar = x.mean()
    s = x.std()
    w = sparse.csr_matrix(weights)
    wi = np.asarray(w.sum(axis=1)).ravel()
    s1 = np.asarray(w.multiply(w).sum(axis=1)).ravel()
    lag = w @ (x - xbar)
    spread = (n * s1 - wi * wi) / (n - 1)
    z = np.zeros(n)
    ok = spread > 1e-12 * np.maximum(wi * wi, 1.0)
    z[ok] = lag[ok] / (s * np.sqrt(spread[ok]))
    return z


def gi_star(values: PopulationVector, network: TowerNetwork, band_m: float = DEFAULT_BAND_M,
            confidence: float = 0.90) -> GiStarResult:
    if not band_m > 0:
        raise ConfigError("band_m must be positive")
    z_critical(confidence)
    net = network if network.ids == values.towers else network.subset(values.towers)
    if net.ids != values.towers:
        raise ValueError("value vector towers must be sorted tower ids")
    z = gi_star_z(values.counts, band_weights(net, band_m))
    return GiStarResult(values.towers, values.counts, z, confidence)
