"""Dataset manifests with case-level train/val/test separation.

A manifest lists the frames of one split. Frames captured during the same case
(acquisition session) always land in the same split, so no case leaks between
training and evaluation.

```yaml
split: train
notes: synthetic desk-scale set
files:
  - path: case01/frame_000.mos
    case: case01
    pattern: default
```
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from ._utils import atomic_write_bytes
from .errors import ConfigurationError, HsiDemosaicError
from .formats import DEFAULT_WHITE_LEVEL, load_any_mosaic
from .hypercube import MsfaPattern, SnapshotMosaic

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    """One frame: path relative to the data root, its case and pattern name."""

    path: str
    case: str
    pattern: str = "default"


@dataclass(frozen=True)
class DatasetManifest:
    """Frames belonging to one split."""

    split: str
    files: tuple[ManifestEntry, ...] = ()
    notes: str = ""

    def __post_init__(self) -> None:  # noqa: D105
        if self.split not in SPLITS:
            raise ConfigurationError(f"Unknown split {self.split!r}; use {SPLITS}.")
        object.__setattr__(
            self,
            "files",
            tuple(
                entry if isinstance(entry, ManifestEntry) else ManifestEntry(**entry)
                for entry in self.files
            ),
        )

    @property
    def cases(self) -> set[str]:  # noqa: D102
        return {entry.case for entry in self.files}

    def to_yaml(self) -> str:  # noqa: D102
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> DatasetManifest:
        """Parse a manifest document.

        Raises:
            ConfigurationError: If the document is not a manifest.

        """
        data = yaml.safe_load(text)
        if not isinstance(data, dict) or "split" not in data:
            raise ConfigurationError("Manifest must be a mapping with a 'split' key.")
        try:
            return cls(
                data["split"],
                tuple(data.get("files") or ()),
                data.get("notes") or "",
            )
        except TypeError as exc:
            raise ConfigurationError(f"Malformed manifest entry ({exc}).") from exc

    def save(self, path: str | Path) -> Path:  # noqa: D102
        return atomic_write_bytes(path, self.to_yaml().encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:  # noqa: D102
        return cls.from_yaml(Path(path).read_text(encoding="utf-8"))

    def load_mosaics(
        self,
        root: str | Path,
        patterns: Mapping[str, MsfaPattern] | None = None,
        white_level: int = DEFAULT_WHITE_LEVEL,
    ) -> list[SnapshotMosaic]:
        """Read every frame of the split."""
        patterns = patterns or {"default": MsfaPattern.default()}
        return [
            load_any_mosaic(Path(root) / e.path, patterns[e.pattern], white_level)
            for e in self.files
        ]


@dataclass
class SplitFractions:
    """Share of cases per split; must sum to one."""

    train: float = 0.7
    val: float = 0.15
    test: float = 0.15

    def __post_init__(self) -> None:  # noqa: D105
        values = (self.train, self.val, self.test)
        if min(values) < 0 or not np.isclose(sum(values), 1.0):
            raise ConfigurationError(f"Split fractions must sum to 1, got {values}.")


def split_by_case(
    entries: Sequence[ManifestEntry],
    fractions: SplitFractions | None = None,
    seed: int = 0,
    notes: str = "",
) -> dict[str, DatasetManifest]:
    """Assign whole cases to train/val/test.

    Cases are shuffled with ``seed`` and cut by the cumulative fractions; leftover
    cases from rounding go to the largest fractions first.

    Raises:
        ConfigurationError: If ``entries`` is empty.

    """
    if not entries:
        raise ConfigurationError("Cannot split an empty file list.")
    fractions = fractions or SplitFractions()
    cases = sorted({entry.case for entry in entries})
    order = np.random.default_rng(seed).permutation(len(cases))
    shares = np.array([fractions.train, fractions.val, fractions.test])
    counts = np.floor(shares * len(cases)).astype(int)
    for index in np.argsort(-shares):
        if counts.sum() >= len(cases):
            break
        counts[index] += 1
    bounds = np.cumsum(counts)
    assignment = {
        cases[case_index]: SPLITS[int(np.searchsorted(bounds, rank, side="right"))]
        for rank, case_index in enumerate(order)
    }
    manifests = {
        split: DatasetManifest(
            split, tuple(e for e in entries if assignment[e.case] == split), notes
        )
        for split in SPLITS
    }
    logger.info(
        "Split %d cases: %s",
        len(cases),
        {split: len(m.cases) for split, m in manifests.items()},
    )
    return manifests


def validate_manifests(
    manifests: Sequence[DatasetManifest],
    root: str | Path | None = None,
    patterns: Mapping[str, MsfaPattern] | None = None,
    white_level: int = DEFAULT_WHITE_LEVEL,
) -> None:
    """Check split separation and, when ``root`` is given, that every file parses.

    Raises:
        ConfigurationError: On a file or case shared by two splits, a missing file,
            an unknown pattern name or a file that fails to parse.

    """
    seen_files: dict[str, str] = {}
    seen_cases: dict[str, str] = {}
    for manifest in manifests:
        for entry in manifest.files:
            for key, seen in ((entry.path, seen_files), (entry.case, seen_cases)):
                other = seen.setdefault(key, manifest.split)
                if other != manifest.split:
                    raise ConfigurationError(
                        f"{key!r} appears in both {other!r} and {manifest.split!r}."
                    )
    if root is None:
        return
    patterns = patterns or {"default": MsfaPattern.default()}
    for manifest in manifests:
        for entry in manifest.files:
            path = Path(root) / entry.path
            if not path.exists():
                raise ConfigurationError(f"Manifest file {path} does not exist.")
            if entry.pattern not in patterns:
                raise ConfigurationError(
                    f"Unknown pattern {entry.pattern!r} for {path}."
                )
            try:
                load_any_mosaic(path, patterns[entry.pattern], white_level)
            except (HsiDemosaicError, ValueError) as exc:
                raise ConfigurationError(f"{path} does not parse: {exc}") from exc
    logger.info("Validated %d manifests", len(manifests))
