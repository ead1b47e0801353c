"""Named three-domain synthetic scenarios.

Each scenario pairs domain specs with the training settings it was tuned
for. Domain A is always the plain base domain.

``gated``
    Every later domain adds its own strong stationary background and a mild
    change of class patterns. A nearest-centroid classifier fit on A drops
    to at most 0.80 on B and C, while each domain stays separable on its own.
``plasticity``
    Later domains pass through a different frequency response (a linear
    tilt, rising for B and falling for C) and change part of each class
    pattern. Recomputing BN statistics cannot undo either without labels,
    which separates the adaptation strategies.
``separated``
    Each domain carries its signal in its own third of the frequency axis,
    so domains are easy to tell apart from the input alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDomainSpec, generate_synthetic_domain, DomainDataset
from .errors import ConfigError
from .model import ArchConfig, DomainSpec, Strategy
from .train import ProtocolConfig, TrainConfig

CLASSES = tuple(f"c{k}" for k in range(5))


@dataclass
class Scenario:
    name: str
    domains: list[SyntheticDomainSpec]
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def data(self, seed: int) -> dict[str, DomainDataset]:
        return {d.name: generate_synthetic_domain(d, seed) for d in self.domains}

    def protocol(self, strategy, seed: int, agnostic: bool = False) -> ProtocolConfig:
        specs = [DomainSpec(t, d.name, d.classes, d.task_kind) for t, d in enumerate(self.domains)]
        return ProtocolConfig(specs, Strategy.parse(strategy), self.arch, self.train, seed=seed, agnostic=agnostic)


def default_shifted_domains(classes=CLASSES, n_freq: int = 16, n_frames: int = 16) -> list[SyntheticDomainSpec]:
    """The gated scenario's domains: A plain, B and C with their own backgrounds."""
    dims = dict(n_freq=n_freq, n_frames=n_frames)
    return [
        SyntheticDomainSpec("A", classes, **dims),
        SyntheticDomainSpec(
            "B", classes, offset=-2.0, background=3.0, background_seed=1, variant_weight=0.3, variant_seed=1, **dims
        ),
        SyntheticDomainSpec(
            "C", classes, offset=2.0, background=3.0, background_seed=2, variant_weight=0.3, variant_seed=2, **dims
        ),
    ]


def gated() -> Scenario:
    return Scenario("gated", default_shifted_domains(), TrainConfig(lr_incremental=1e-2))


def tilt(n_freq: int = 16, low: float = 0.1, high: float = 1.9) -> tuple[float, ...]:
    """Linear per-frequency gain from ``low`` to ``high``, rounded to 2 decimals so configs can spell it."""
    return tuple(round(float(v), 2) for v in np.linspace(low, high, n_freq))


def plasticity() -> Scenario:
    shifted = dict(noise=1.5, variant_weight=0.4)
    up = tilt()
    return Scenario(
        "plasticity",
        [
            SyntheticDomainSpec("A", CLASSES, noise=1.5),
            SyntheticDomainSpec("B", CLASSES, band_emphasis=up, variant_seed=1, **shifted),
            SyntheticDomainSpec("C", CLASSES, band_emphasis=up[::-1], variant_seed=2, **shifted),
        ],
        TrainConfig(lr_incremental=1e-2),
    )


def _band(lo: int, hi: int, n_freq: int = 16, floor: float = 0.1) -> tuple[float, ...]:
    gain = np.full(n_freq, floor)
    gain[lo:hi] = 1.0
    # unit mean power, so every domain has the same overall level
    return tuple(float(v) for v in gain / np.sqrt((gain**2).mean()))


def separated() -> Scenario:
    bands = [_band(0, 6), _band(5, 11), _band(10, 16)]
    return Scenario(
        "separated",
        [SyntheticDomainSpec(name, CLASSES, band_emphasis=b) for name, b in zip("ABC", bands)],
        TrainConfig(lr_incremental=1e-2),
    )


SCENARIOS = {"gated": gated, "plasticity": plasticity, "separated": separated}


def scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
