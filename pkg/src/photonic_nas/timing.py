"""Per-image execution-time model for a thermally tuned photonic processor.

``T = T_prep + T_prop + T_det + T_lat``, with Monte Carlo noise on the
reconfiguration, detection and control-latency terms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def linear_depth(modes, slope=8, offset=-7):
    """Circuit depth in reconfiguration columns; defaults fit (9, 65) and (17, 129)."""
    if modes < 2:
        raise ValueError(f"need at least 2 modes, got {modes}")
    return slope * modes + offset


@dataclass
class HardwareConstants:
    layer_time_ms: float = 1.0
    n_soi: float = 3.44
    eta: float = 0.45
    p_success_floor: float = 1e-10
    k_det_ms: float = 0.0125
    latency_ms: float = 0.8
    path_length_m: float = 0.03
    sigma_prep: float = 0.02
    sigma_det: float = 0.10
    sigma_lat: float = 0.05
    mc_iterations: int = 1000
    depth_slope: int = 8
    depth_offset: int = -7

    def __post_init__(self):
        for name in ("layer_time_ms", "k_det_ms", "latency_ms", "path_length_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.p_success_floor <= 0:
            raise ValueError("p_success floor must be positive")
        if self.mc_iterations < 2:
            raise ValueError("need at least two Monte Carlo iterations")

    def depth(self, modes):
        return linear_depth(modes, self.depth_slope, self.depth_offset)


@dataclass
class McStats:
    mean: float
    std: float
    ci_low: float
    ci_high: float

    @classmethod
    def of(cls, samples):
        mean = float(np.mean(samples))
        std = float(np.std(samples, ddof=1))
        return cls(mean, std, mean - 1.96 * std, mean + 1.96 * std)


@dataclass
class TimingEstimate:
    modes: int
    photons: int
    depth: int
    p_success: float
    t_prep_ms: float
    t_prop_ms: float
    t_det_ms: float
    t_lat_ms: float
    quantum: McStats
    total: McStats | None = None
    classical_ms: float | None = None
    constants: HardwareConstants = field(default_factory=HardwareConstants)
    samples: np.ndarray = field(default=None, repr=False)

    @property
    def deterministic_subtotal_ms(self):
        return self.t_prep_ms + self.t_prop_ms + self.t_det_ms + self.t_lat_ms

    def to_dict(self):
        out = asdict(self)
        out.pop("samples")
        out["deterministic_subtotal_ms"] = self.deterministic_subtotal_ms
        return out


def estimate(modes, photons, constants=None, rng=None, depth=None):
    """Deterministic components plus Monte Carlo statistics of the quantum subtotal."""
    c = constants or HardwareConstants()
    if photons < 0:
        raise ValueError(f"photon count must be non-negative, got {photons}")
    depth = c.depth(modes) if depth is None else depth
    rng = np.random.default_rng(0) if rng is None else rng
    t_prep = depth * c.layer_time_ms
    t_prop = c.path_length_m / (SPEED_OF_LIGHT / c.n_soi) * 1e3
    p_success = max(c.eta**photons, c.p_success_floor)
    t_det = c.k_det_ms / p_success
    t_lat = c.latency_ms

    n = c.mc_iterations
    mult = np.clip(
        rng.normal(1.0, [c.sigma_prep, c.sigma_det, c.sigma_lat], size=(n, 3)), 0.0, None
    )
    samples = mult[:, 0] * t_prep + t_prop + mult[:, 1] * t_det + mult[:, 2] * t_lat
    return TimingEstimate(
        modes=modes,
        photons=photons,
        depth=depth,
        p_success=p_success,
        t_prep_ms=t_prep,
        t_prop_ms=t_prop,
        t_det_ms=t_det,
        t_lat_ms=t_lat,
        quantum=McStats.of(samples),
        constants=c,
        samples=samples,
    )


def estimate_total(timing, classical_ms, classical_std_ms=0.0, rng=None):
    """Add a host-side classical time (optionally noisy) to the quantum samples."""
    rng = np.random.default_rng(1) if rng is None else rng
    classical = np.full(len(timing.samples), float(classical_ms))
    if classical_std_ms:
        classical = classical + rng.normal(0.0, classical_std_ms, size=len(classical))
    timing.total = McStats.of(timing.samples + classical)
    timing.classical_ms = float(classical_ms)
    return timing
