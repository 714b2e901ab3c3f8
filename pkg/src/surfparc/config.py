"""Pipeline configuration with a lossless JSON round-trip."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import FormatError, ValidationError

# key order of the serialized form, fixed so output files are stable
_POSITIVE = ("search_cap_mm", "icp_max_iters", "icp_tol", "fill_max_iters",
             "correction_max_rounds", "wilcoxon_exact_max_n")


@dataclass(frozen=True)
class PipelineConfig:
    search_cap_mm: float = 10.0
    icp_max_iters: int = 50
    icp_tol: float = 1e-6
    fill_max_iters: int = 1000
    correction_max_rounds: int = 5
    wilcoxon_exact_max_n: int = 25
    output_dir: str = "."
    per_surface_registration: bool = False

    def __post_init__(self):
        for name in _POSITIVE:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"{name} must be a number", field=name)
            if not math.isfinite(value) or value <= 0:
                raise ValidationError(f"{name} must be positive and finite", field=name)
        for name in ("icp_max_iters", "fill_max_iters", "correction_max_rounds", "wilcoxon_exact_max_n"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValidationError(f"{name} must be an integer", field=name)
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("search_cap_mm", "icp_tol"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not isinstance(self.per_surface_registration, bool):
            raise ValidationError("per_surface_registration must be a boolean")
        object.__setattr__(self, "output_dir", str(self.output_dir))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        # floats serialize via repr, which round-trips exactly
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        if not isinstance(data, dict):
            raise ValidationError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}", keys=unknown)
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> PipelineConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"configuration is not valid JSON: {exc.msg}", offset=exc.pos) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> PipelineConfig:
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
