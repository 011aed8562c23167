"""
Artifact Contract
CSV and manifest emission for experiment runs.

CSV contract: a header row, rationals as "p/q", reals as the shortest round-trip
decimal, booleans as true/false, one table per file.
"""

import csv
import hashlib
import io
import json
import logging
import platform
from fractions import Fraction
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from laakso_lab.core.config import settings
from laakso_lab.core.rng import RNG_NAME
from laakso_lab.schemas.reports import ArtifactEntry, RngInfo, RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRACKED_PACKAGES = ("numpy", "scipy", "networkx", "pydantic", "pydantic-settings", "structlog")


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue().encode("utf-8")


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), settings.APP_NAME: settings.APP_VERSION}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class ArtifactWriter:
    """Writes CSV tables into one run directory and records their hashes"""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.entries: List[ArtifactEntry] = []

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        materialized = list(rows)
        payload = render_csv(header, materialized)
        path = self.directory / name
        path.write_bytes(payload)
        self.entries.append(ArtifactEntry(path=name, sha256=hashlib.sha256(payload).hexdigest(), rows=len(materialized)))
        logger.info(f"Wrote {name} ({len(materialized)} rows)")
        return path

    def write_manifest(
        self,
        experiment: str,
        config: Dict[str, Any],
        seed: Optional[int],
        wall_time: float,
        summary: Optional[Dict[str, Any]] = None,
    ) -> Path:
        manifest = RunManifest(
            experiment=experiment,
            config=config,
            files=self.entries,
            versions=package_versions(),
            rng=RngInfo(name=RNG_NAME, seed=seed),
            wall_time_seconds=round(wall_time, 6),
            summary={k: format_cell(v) for k, v in (summary or {}).items()},
        )
        path = self.directory / MANIFEST_NAME
        path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        return path


def verify_manifest(directory: Path) -> List[str]:
    """Files whose content no longer matches the recorded hash."""
    directory = Path(directory)
    manifest = RunManifest.model_validate_json((directory / MANIFEST_NAME).read_text())
    stale = []
    for entry in manifest.files:
        path = directory / entry.path
        if not path.exists() or hashlib.sha256(path.read_bytes()).hexdigest() != entry.sha256:
            stale.append(entry.path)
    return stale
