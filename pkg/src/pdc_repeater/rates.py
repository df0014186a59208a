"""Secret-key rates and the repeaterless (TGW) bound."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .devices import fiber_transmissivity


def h2(x: float) -> float:
    """Binary entropy in bits."""
    if math.isnan(x) or not 0.0 <= x <= 1.0:
        raise ValueError(f"h2 argument {x!r} outside [0, 1]")
    if x in (0.0, 1.0):
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def secret_fraction(q: float) -> float:
    """max(0, 1/2 - h2(q)): sifting (1/2) and error correction plus privacy amplification."""
    return max(0.0, 0.5 - h2(q))


def mean_qber(q_z: float | None, q_x: float | None) -> float | None:
    if q_z is None or q_x is None:
        return None
    return 0.5 * (q_z + q_x)


def key_rate_bps(e2e, rep_rate_hz: float) -> float:
    """rep * prod(p_link) * prod(p_swap) * p_ab * SF(q), accumulated in log space."""
    q = mean_qber(e2e.q_z, e2e.q_x)
    if q is None:
        return 0.0
    sf = secret_fraction(q)
    factors = list(e2e.p_link) + list(e2e.p_swap) + [e2e.p_ab, sf]
    if any(f <= 0 for f in factors):
        return 0.0
    return rep_rate_hz * math.exp(sum(math.log(f) for f in factors))


def tgw_per_mode(eta: float) -> float:
    """log2((1 + eta) / (1 - eta)) secret bits per channel use."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if eta == 1.0:
        return math.inf
    # log1p keeps precision when eta is far below machine epsilon
    return (math.log1p(eta) - math.log1p(-eta)) / math.log(2)


def tgw_bps(distance_km: float, alpha_db_per_km: float, rep_rate_hz: float, modes: int) -> float:
    return rep_rate_hz * modes * tgw_per_mode(fiber_transmissivity(distance_km, alpha_db_per_km))


def direct_qber(eta_total: float, eta_det: float, p_dark: float) -> float:
    """Error rate of direct transmission when dark clicks give random bits."""
    y_sig = eta_total * eta_det**2
    y_dark = 2 * p_dark
    if y_sig + y_dark == 0:
        return 0.5
    return 0.5 * y_dark / (y_sig + y_dark)


def direct_bps(distance_km: float, cfg) -> float:
    """Point-to-point baseline: rep * M * eta * eta_d^2 * 1/2 * SF(q_dark)."""
    eta = fiber_transmissivity(distance_km, cfg.alpha_db_per_km)
    det = cfg.endpoint_detectors
    sf = secret_fraction(direct_qber(eta, det.eta, det.p_dark))
    return cfg.rep_rate_hz * cfg.modes * eta * det.eta**2 * 0.5 * sf


COLUMNS = (
    "distance_km", "n_links", "n_s", "p_s0", "p_link", "p_swap_product", "p_ab",
    "q_z", "q_x", "secret_fraction", "key_rate_bps", "tgw_bps", "direct_bps",
)


@dataclass(frozen=True)
class RateRow:
    """One grid point. ``p_link`` is the per-link multiplexed success probability."""

    distance_km: float
    n_links: int
    n_s: float
    p_s0: float
    p_link: float
    p_swap_product: float
    p_ab: float
    q_z: float
    q_x: float
    secret_fraction: float
    key_rate_bps: float
    tgw_bps: float
    direct_bps: float
    error: str | None = None

    def __post_init__(self):
        if self.error is None:
            if not self.key_rate_bps >= 0:
                raise ValueError("key_rate_bps must be >= 0")
            if not 0.0 <= self.secret_fraction <= 0.5:
                raise ValueError("secret_fraction must lie in [0, 0.5]")

    def as_dict(self) -> dict:
        return asdict(self)


def make_row(cfg, e2e) -> RateRow:
    nan = float("nan")
    q = mean_qber(e2e.q_z, e2e.q_x)
    return RateRow(
        distance_km=cfg.total_distance_km,
        n_links=cfg.num_links,
        n_s=cfg.source.n_s,
        p_s0=e2e.p_s0,
        p_link=e2e.p_link[0],
        p_swap_product=math.prod(e2e.p_swap, start=1.0),
        p_ab=e2e.p_ab,
        q_z=nan if e2e.q_z is None else e2e.q_z,
        q_x=nan if e2e.q_x is None else e2e.q_x,
        secret_fraction=0.0 if q is None else secret_fraction(q),
        key_rate_bps=key_rate_bps(e2e, cfg.rep_rate_hz),
        tgw_bps=tgw_bps(cfg.total_distance_km, cfg.alpha_db_per_km, cfg.rep_rate_hz, cfg.modes),
        direct_bps=direct_bps(cfg.total_distance_km, cfg),
    )


def error_row(cfg, message: str) -> RateRow:
    nan = float("nan")
    return RateRow(
        cfg.total_distance_km, cfg.num_links, cfg.source.n_s, nan, nan, nan, nan, nan, nan, nan, nan,
        tgw_bps(cfg.total_distance_km, cfg.alpha_db_per_km, cfg.rep_rate_hz, cfg.modes),
        direct_bps(cfg.total_distance_km, cfg),
        error=message,
    )
