"""Per-frame collections of identified boxes (ground truth, detections or tracker output)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import FrameDims


@dataclass
class TrackFile:
    """Boxes keyed by 1-based frame index, each with an integer identity.

    ``n_frames`` fixes the sequence length when known (frames without boxes
    still count); otherwise the last frame with a box defines it.
    Detections may carry identity -1 and repeat it within a frame.
    """

    dims: FrameDims | None = None
    n_frames: int | None = None
    frames: dict = field(default_factory=dict)  # frame -> list of (id, (4,) array)
    allow_duplicate_ids: bool = False

    def add(self, frame: int, ident: int, box):
        if frame < 1:
            raise ValueError(f"frame indices are 1-based, got {frame}")
        box = np.array(box, dtype=np.float64).reshape(4)  # copy: callers may mutate their arrays
        entries = self.frames.setdefault(int(frame), [])
        if not self.allow_duplicate_ids and any(i == ident for i, _ in entries):
            raise ValueError(f"identity {ident} appears twice in frame {frame}")
        entries.append((int(ident), box))

    @property
    def length(self) -> int:
        last = max(self.frames) if self.frames else 0
        return max(last, self.n_frames or 0)

    def frame(self, t: int):
        """``(ids, boxes)`` of frame ``t`` with boxes as an (n, 4) array."""
        entries = self.frames.get(t, [])
        ids = tuple(i for i, _ in entries)
        boxes = np.array([b for _, b in entries], dtype=np.float64).reshape(-1, 4)
        return ids, boxes

    def identities(self) -> list:
        return sorted({i for entries in self.frames.values() for i, _ in entries})

    def trajectories(self) -> dict:
        """identity -> {frame: box}."""
        out = {}
        for t in sorted(self.frames):
            for i, b in self.frames[t]:
                out.setdefault(i, {})[t] = b
        return out

    def n_boxes(self) -> int:
        return sum(len(v) for v in self.frames.values())

    def rows(self) -> list:
        """Sorted (frame, id, left, top, width, height) tuples."""
        out = []
        for t in sorted(self.frames):
            for i, b in sorted(self.frames[t], key=lambda e: e[0]):
                out.append((t, i, *b.tolist()))
        return out

    def __eq__(self, other):
        if not isinstance(other, TrackFile):
            return NotImplemented
        return self.rows() == other.rows()
