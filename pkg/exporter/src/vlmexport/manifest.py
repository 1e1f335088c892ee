"""Export manifests: what to encode, under which IDs, and where to write."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass
class ExportManifest:
    """One export invocation: a single modality, inputs, IDs, output path."""

    encoder: str
    modality: str  # "image" or "text"
    inputs: list[str]  # image paths, or raw caption strings
    ids: list[str]
    out_path: Path

    def validate(self) -> "ExportManifest":
        if self.modality not in ("image", "text"):
            raise ManifestError(f"modality must be image or text, got {self.modality!r}")
        if not self.inputs:
            raise ManifestError("no inputs to export")
        if len(self.ids) != len(self.inputs):
            raise ManifestError(
                f"{len(self.ids)} ids for {len(self.inputs)} inputs")
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise ManifestError(f"duplicate IDs: {dupes[:5]}")
        return self


def read_lines(path: str) -> list[str]:
    """Non-empty, non-comment lines of a listing file, in order."""
    lines = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def load_manifest(encoder: str, modality: str, inputs_path: str, ids_path: str | None,
                  out_path: str) -> ExportManifest:
    """Build a manifest from an input listing and an optional ID listing.

    Without an ID file, image IDs default to the file stem and caption IDs to
    cap000, cap001, ... in listing order.
    """
    inputs = read_lines(inputs_path)
    if ids_path is not None:
        ids = read_lines(ids_path)
    elif modality == "image":
        ids = [Path(p).stem for p in inputs]
    else:
        ids = [f"cap{i:03d}" for i in range(len(inputs))]
    return ExportManifest(encoder=encoder, modality=modality, inputs=inputs,
                          ids=ids, out_path=Path(out_path)).validate()
