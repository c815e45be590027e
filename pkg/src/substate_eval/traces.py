"""Screenshot trajectories and their ordered manifests.

A trace directory holds the screenshots of one task execution plus a
``manifest.json`` that fixes their order::

    {
      "task_id": "clock-0003",
      "provenance": "agent:mobile-agent-e",
      "screenshots": [
        {"step": 0, "path": "000.png", "sha256": "...", "caption": null},
        ...
      ]
    }

Order comes from the manifest only, never from directory listing.
"""

from __future__ import annotations

import json
import re
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from .gateway import sha256_hex

MANIFEST_NAME = "manifest.json"
_PROVENANCE = re.compile(r"^(human|agent:[^\s]+)$")


class ManifestError(ValueError):
    pass


class DigestMismatch(ManifestError):
    pass


@dataclass(frozen=True, slots=True)
class ScreenshotRef:
    step: int
    path: Path
    sha256: str
    caption: str | None = None

    def read_bytes(self) -> bytes:
        try:
            data = self.path.read_bytes()
        except OSError as exc:
            raise ManifestError(f"cannot read screenshot {self.path}: {exc}") from exc
        actual = sha256_hex(data)
        if actual != self.sha256:
            raise DigestMismatch(
                f"{self.path.name}: digest {actual[:12]} does not match manifest {self.sha256[:12]}"
            )
        return data


@dataclass(frozen=True, slots=True)
class TraceManifest:
    task_id: str
    screenshots: tuple[ScreenshotRef, ...]
    provenance: str = "human"

    def __post_init__(self) -> None:
        if not isinstance(self.screenshots, tuple):
            object.__setattr__(self, "screenshots", tuple(self.screenshots))
        if not _PROVENANCE.match(self.provenance):
            raise ManifestError(f"bad provenance tag {self.provenance!r}")
        steps = [s.step for s in self.screenshots]
        if any(a >= b for a, b in zip(steps, steps[1:])):
            raise ManifestError(f"screenshot steps are not strictly increasing: {steps}")

    def __len__(self) -> int:
        return len(self.screenshots)

    def with_captions(self, captions: dict[str, str]) -> TraceManifest:
        shots = tuple(
            replace(s, caption=captions.get(s.sha256, s.caption)) for s in self.screenshots
        )
        return replace(self, screenshots=shots)


def _manifest_document(manifest: TraceManifest, root: Path) -> dict:
    entries = []
    for shot in manifest.screenshots:
        try:
            rel = shot.path.relative_to(root)
        except ValueError:
            rel = shot.path
        entries.append(
            {"step": shot.step, "path": rel.as_posix(), "sha256": shot.sha256, "caption": shot.caption}
        )
    return {"task_id": manifest.task_id, "provenance": manifest.provenance, "screenshots": entries}


def write_manifest(manifest: TraceManifest, directory: Path | str) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    text = json.dumps(_manifest_document(manifest, root), indent=2, ensure_ascii=False) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def write_trace(
    directory: Path | str,
    task_id: str,
    images: Sequence[bytes],
    *,
    provenance: str = "human",
    suffix: str = ".png",
    captions: Sequence[str | None] | None = None,
) -> TraceManifest:
    """Write ``images`` as an ordered trace under ``directory`` and return its manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    shots = []
    for step, data in enumerate(images):
        path = root / f"{step:03d}{suffix}"
        path.write_bytes(data)
        caption = captions[step] if captions is not None else None
        shots.append(ScreenshotRef(step, path, sha256_hex(data), caption))
    manifest = TraceManifest(task_id, tuple(shots), provenance)
    write_manifest(manifest, root)
    return manifest


def load_trace(directory: Path | str, *, verify: bool = True) -> TraceManifest:
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"{root}: no {MANIFEST_NAME}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        task_id = doc["task_id"]
        entries = doc["screenshots"]
        provenance = doc.get("provenance", "human")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc
    if not entries:
        raise ManifestError(f"trace for task {task_id} lists no screenshots")
    shots = []
    for entry in entries:
        try:
            ref = ScreenshotRef(
                int(entry["step"]), root / entry["path"], str(entry["sha256"]), entry.get("caption")
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: malformed screenshot entry {entry!r}") from exc
        if not ref.path.is_file():
            raise ManifestError(f"task {task_id}: screenshot {entry['path']} is missing")
        if verify:
            ref.read_bytes()
        shots.append(ref)
    return TraceManifest(task_id, tuple(shots), provenance)
