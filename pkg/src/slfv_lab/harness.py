"""Experiment orchestration: run one configured experiment and write its manifest."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, io
from .config import ExperimentConfig
from .environment import CacheIntegrityError
from .experiments import RUNNERS, Check
from .hamiltonian import EigenSolverError
from .slfv import EventBudgetExceeded

log = logging.getLogger(__name__)

OUTPUT_ENV = "SLFV_LAB_OUT"
MANIFEST = "manifest.json"
PARTIAL = "PARTIAL"

# failures that end an experiment but still produce a manifest
EXPECTED_ERRORS = (CacheIntegrityError, EigenSolverError, EventBudgetExceeded, FloatingPointError)


def output_root(root: str | Path | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(OUTPUT_ENV, "slfv-lab-out"))


@dataclass
class RunManifest:
    name: str
    config_hash: str
    version: str
    seed: int
    wall_clock: float = 0.0
    checks: list[dict] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    partial: bool = False

    @property
    def passed(self) -> bool:
        return not self.partial and all(c["passed"] for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c["name"] for c in self.checks if not c["passed"]]

    def add(self, checks: list[Check]) -> None:
        for c in checks:
            self.checks.append(
                {"name": c.name, "passed": bool(c.passed), "value": _jsonable(c.value), "detail": c.detail}
            )

    def finish(self, out: Path, started: float) -> "RunManifest":
        """Hash every emitted file and write the manifest last."""
        self.wall_clock = time.perf_counter() - started
        self.files = {
            str(p.relative_to(out)): io.sha256_file(p)
            for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != MANIFEST
        }
        doc = asdict(self) | {"passed": self.passed}
        (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return self

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        doc.pop("passed", None)
        return cls(**doc)


def _jsonable(v):
    v = float(v)
    return v if v == v and abs(v) != float("inf") else str(v)


def run(cfg: ExperimentConfig, root: str | Path | None = None) -> RunManifest:
    """Execute one experiment family; the config is validated before anything is written."""
    cfg.validate()
    root = output_root(root)
    out = root / cfg.out_name
    out.mkdir(parents=True, exist_ok=True)
    for stale in (out / MANIFEST, out / PARTIAL):
        stale.unlink(missing_ok=True)
    started = time.perf_counter()
    (out / "config.ini").write_text(cfg.to_text())
    man = RunManifest(cfg.out_name, cfg.digest(), __version__, cfg.seed)
    try:
        checks = RUNNERS[cfg.kind](cfg, out, root)
    except EXPECTED_ERRORS as exc:
        log.error("%s failed: %s", cfg.kind, exc)
        checks = [Check(cfg.kind, False, detail=f"{type(exc).__name__}: {exc}")]
        if isinstance(exc, EventBudgetExceeded):
            man.partial = True
    if any(c.name.startswith("slfv-budget") for c in checks):
        man.partial = True
    if man.partial:
        (out / PARTIAL).write_text("event budget exhausted before T\n")
    man.add(checks)
    return man.finish(out, started)
