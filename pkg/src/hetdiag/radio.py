"""Path loss, link budget, and SINR primitives.

Macro (outdoor) links use the COST231-Hata urban model with the +3 dB
metropolitan correction; femto (short range) links use the ITU indoor
power-law form.  All functions accept scalars or numpy arrays and return
values in dB / dBm.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_TAG_SHADOW = 23

LN10_OVER_10 = np.log(10.0) / 10.0


def _require(cond, name: str, message: str) -> None:
    if not np.all(cond):
        raise ValidationError(f"{name}: {message}")


def cost231_coefficients(freq_mhz: float, h_base_m: float, h_mobile_m: float) -> tuple[float, float]:
    """(intercept, slope) such that PL = intercept + slope * log10(d_km).

    Exposing the affine form lets vectorized callers reuse a precomputed
    log-distance matrix.
    """
    _require((1500.0 <= freq_mhz) & (freq_mhz <= 2000.0), "freq_mhz", "outside [1500, 2000] MHz")
    _require((30.0 <= h_base_m) & (h_base_m <= 200.0), "h_base_m", "outside [30, 200] m")
    _require((1.0 <= h_mobile_m) & (h_mobile_m <= 10.0), "h_mobile_m", "outside [1, 10] m")
    lf = np.log10(freq_mhz)
    a_hm = (1.1 * lf - 0.7) * h_mobile_m - (1.56 * lf - 0.8)
    intercept = 46.3 + 33.9 * lf - 13.82 * np.log10(h_base_m) - a_hm + 3.0
    slope = 44.9 - 6.55 * np.log10(h_base_m)
    return float(intercept), float(slope)


def path_loss_cost231(distance_m, freq_mhz: float, h_base_m: float, h_mobile_m: float):
    """COST231-Hata urban path loss in dB; monotone non-decreasing in distance."""
    distance_m = np.asarray(distance_m, dtype=float)
    _require(distance_m >= 1.0, "distance_m", "must be >= 1 m")
    intercept, slope = cost231_coefficients(freq_mhz, h_base_m, h_mobile_m)
    pl = intercept + slope * np.log10(distance_m / 1000.0)
    return pl if pl.ndim else float(pl)


def itu_indoor_offset(freq_mhz: float, floors: int = 0) -> float:
    """Constant part of the ITU indoor model: PL = offset + 30 * log10(d_m)."""
    _require(freq_mhz > 0, "freq_mhz", "must be > 0")
    _require(floors >= 0, "floors", "must be >= 0")
    floor_loss = 15.0 + 4.0 * (floors - 1) if floors >= 1 else 0.0
    return float(20.0 * np.log10(freq_mhz) + floor_loss - 28.0)


def path_loss_itu_indoor(distance_m, freq_mhz: float, floors: int = 0):
    """ITU indoor path loss in dB with a 30 dB/decade distance slope."""
    distance_m = np.asarray(distance_m, dtype=float)
    _require(distance_m >= 1.0, "distance_m", "must be >= 1 m")
    pl = itu_indoor_offset(freq_mhz, floors) + 30.0 * np.log10(distance_m)
    return pl if pl.ndim else float(pl)


def received_power(tx_dbm, path_loss_db, wall_db=0.0, shadow_db=0.0):
    """Link-budget identity: rx = tx - path_loss - wall + shadow (all dB)."""
    return tx_dbm - path_loss_db - wall_db + shadow_db


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(mw)


def sinr(serving_rx_dbm: float, interferer_rx_dbm=(), noise_dbm: float = -104.0) -> float:
    """SINR in dB from per-link received powers in dBm.

    With no interferers this reduces to serving_rx - noise.
    """
    s = dbm_to_mw(serving_rx_dbm)
    interferers = np.atleast_1d(np.asarray(interferer_rx_dbm, dtype=float))
    interference = float(np.sum(dbm_to_mw(interferers))) if interferers.size else 0.0
    return float(mw_to_dbm(s / (interference + dbm_to_mw(noise_dbm))))


def shadowing_matrix(seed: int, epoch_id: int, n_users: int, sigma_db_per_cell) -> np.ndarray:
    """Seeded log-normal shadowing samples, one per (user, cell) link.

    The sample is a pure function of (seed, epoch_id, link), so within an
    epoch every link keeps a fixed shadowing value and a new epoch redraws
    the whole field.
    """
    sigma = np.asarray(sigma_db_per_cell, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TAG_SHADOW, int(epoch_id)]))
    return rng.standard_normal((n_users, sigma.size)) * sigma[None, :]
