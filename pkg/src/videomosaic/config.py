"""Pipeline configuration: one JSON file, every tunable, full defaults.

Schema (see README for field meanings):

    frames_dir, output_dir: str
    seed: int            -- root of all randomness (gate draws, vocabulary)
    workers: int         -- concurrent pair registrations
    grid_step: int       -- reference grid step for distances and gating
    mask: {kind: full|circular, center: [x, y]|null, radius: px|null,
           mask_dir: str|null}
    registration: RegistrationConfig fields
    gate: GateConfig fields (rng_seed is derived per pair from `seed`)
    retrieval: {vocab_size, keypoint_step, threshold, budget|null, min_gap}
    bundle: BundleConfig fields
    compositor: {mode: feather|last_write, stride}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bundle import BundleConfig
from .gate import GateConfig
from .geometry import WarpKind
from .register import Objective, RegistrationConfig


@dataclass
class MaskConfig:
    kind: str = "full"  # full | circular
    center: tuple[float, float] | None = None
    radius: float | None = None
    mask_dir: str | None = None


@dataclass
class RetrievalConfig:
    vocab_size: int = 200
    keypoint_step: int = 16
    threshold: float = 0.85
    budget: int | None = None  # None: 3x the number of frames
    min_gap: int = 10


@dataclass
class CompositorConfig:
    mode: str = "feather"  # feather | last_write
    stride: int = 5


@dataclass
class PipelineConfig:
    frames_dir: str = "frames"
    output_dir: str = "out"
    seed: int = 0
    workers: int = 1
    grid_step: int = 3
    mask: MaskConfig = field(default_factory=MaskConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    compositor: CompositorConfig = field(default_factory=CompositorConfig)

    def to_json(self) -> dict:
        out = asdict(self)
        out["registration"]["warp_kind"] = self.registration.warp_kind.value
        out["registration"]["objective"] = self.registration.objective.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        cfg = cls()
        for key in ("frames_dir", "output_dir", "seed", "workers", "grid_step"):
            if key in obj:
                setattr(cfg, key, obj[key])
        if "mask" in obj:
            m = dict(obj["mask"])
            if m.get("center") is not None:
                m["center"] = tuple(m["center"])
            cfg.mask = MaskConfig(**m)
        if "registration" in obj:
            r = dict(obj["registration"])
            if "warp_kind" in r:
                r["warp_kind"] = WarpKind(r["warp_kind"])
            if "objective" in r:
                r["objective"] = Objective(r["objective"])
            cfg.registration = RegistrationConfig(**r)
        if "gate" in obj:
            cfg.gate = GateConfig(**obj["gate"])
        if "retrieval" in obj:
            cfg.retrieval = RetrievalConfig(**obj["retrieval"])
        if "bundle" in obj:
            cfg.bundle = BundleConfig(**obj["bundle"])
        if "compositor" in obj:
            cfg.compositor = CompositorConfig(**obj["compositor"])
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text()))
