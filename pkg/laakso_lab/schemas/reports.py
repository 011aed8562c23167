"""
Report Schemas
Pydantic models for run manifests and verification summaries
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class ArtifactEntry(BaseModel):
    path: str
    sha256: str
    rows: int


class RngInfo(BaseModel):
    name: str
    seed: Optional[int] = None


class RunManifest(BaseModel):
    """Everything needed to reproduce and audit a run"""

    experiment: str
    config: Dict[str, Any]
    files: List[ArtifactEntry] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    rng: RngInfo
    wall_time_seconds: float = 0.0
    summary: Dict[str, Any] = Field(default_factory=dict)


class CheckResult(BaseModel):
    number: int
    name: str
    passed: bool
    measured: Dict[str, Any] = Field(default_factory=dict)
    detail: Optional[str] = None


class VerifySummary(BaseModel):
    depth: int
    seed: int
    fault: Optional[str] = None
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(1 for c in self.checks if c.passed)

    @property
    def failed(self) -> int:
        return len(self.checks) - self.passed
