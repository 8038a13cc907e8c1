"""Landmark correspondences between template vertices and target positions."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, MeshIOError, ValidationError

__all__ = ["LandmarkSet", "read_landmarks", "write_landmarks", "LANDMARK_HEADER"]

LANDMARK_HEADER = "morphfit-landmarks v1"


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Pairs ``(template vertex index, target position)``.

    ``labels`` name each landmark for partition specs; they default to the
    0-based record ordinal as a string.
    """

    indices: np.ndarray
    positions: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(pos):
            raise ValidationError("landmark indices and positions differ in length")
        if len(np.unique(idx)) != len(idx):
            raise ValidationError("landmark template indices must be distinct")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("non-finite landmark position")
        labels = self.labels
        if labels is None:
            labels = tuple(str(i) for i in range(len(idx)))
        labels = tuple(str(x) for x in labels)
        if len(labels) != len(idx) or len(set(labels)) != len(labels):
            raise ValidationError("landmark labels must be unique, one per landmark")
        idx.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3)))

    def __len__(self):
        return len(self.indices)

    def check_against(self, n_vertices):
        bad = self.indices[(self.indices < 0) | (self.indices >= n_vertices)]
        if len(bad):
            raise ValidationError(
                f"landmark vertex index {int(bad[0])} out of range for {n_vertices} vertices"
            )

    def vertex_of(self, label) -> int:
        try:
            return int(self.indices[self.labels.index(str(label))])
        except ValueError:
            raise ValidationError(f"unknown landmark label {label!r}") from None

    def subset(self, mask) -> "LandmarkSet":
        mask = np.asarray(mask)
        labels = np.array(self.labels, dtype=object)[mask]
        return LandmarkSet(self.indices[mask], self.positions[mask], tuple(labels))

    def rms_error(self, vertices) -> float:
        """RMS distance between ``vertices[indices]`` and the target positions."""
        if not len(self):
            return 0.0
        d = np.asarray(vertices)[self.indices] - self.positions
        return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def read_landmarks(path) -> LandmarkSet:
    """Parse a landmark file.

    Records are ``template_vertex_index x y z [label]``, one per line, after
    the ``morphfit-landmarks v1`` header; ``#`` starts a comment.
    """
    path = os.fspath(path)
    try:
        with open(path, "r") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MeshIOError(f"no such file: {path}") from None
    if not lines or lines[0].split("#")[0].split() != LANDMARK_HEADER.split():
        got = lines[0].strip() if lines else ""
        if got.startswith("morphfit-landmarks"):
            raise FormatError(f"{path}: unsupported landmarks version {got.split()[-1]!r}")
        raise FormatError(f"{path}: expected header line {LANDMARK_HEADER!r}")
    idx, pos, labels = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) not in (4, 5):
            raise FormatError(f"{path}: malformed landmark at line {lineno}")
        try:
            idx.append(int(tokens[0]))
            pos.append([float(t) for t in tokens[1:4]])
        except ValueError:
            raise FormatError(f"{path}: malformed landmark at line {lineno}") from None
        labels.append(tokens[4] if len(tokens) == 5 else str(len(labels)))
    return LandmarkSet(np.array(idx, dtype=np.int64), np.array(pos).reshape(-1, 3), tuple(labels))


def write_landmarks(path, landmarks: LandmarkSet):
    with open(path, "w", newline="\n") as fh:
        fh.write(LANDMARK_HEADER + "\n")
        fh.write("# template_vertex_index x y z label\n")
        for i, p, lab in zip(landmarks.indices, landmarks.positions, landmarks.labels):
            x, y, z = (float(c) for c in p)
            fh.write(f"{int(i)} {x!r} {y!r} {z!r} {lab}\n")
