"""Track ingestion, derived model inputs, and window sampling.

Tracks arrive as JSON Lines, one pedestrian per line:

    {"ped_id": str, "fps": num, "image_size": [w, h],
     "frames": [{"f": int, "box": [x1,y1,x2,y2], "cross": 0|1,
                 "ego": [s, vx, vz]}, ...]}

From a track we derive normalized boxes, per-step velocities, discrete grid
cells, and sliding observation/prediction windows with the time-to-event
filter applied to crossing tracks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Row-major grid of square cells covering the image plane."""

    rows: int = 18
    cols: int = 32
    cell_px: int = 60
    image_size: tuple[int, int] = (1920, 1080)  # (width, height)

    def __post_init__(self):
        w, h = self.image_size
        if self.rows * self.cell_px < h or self.cols * self.cell_px < w:
            raise DataError(
                f"grid {self.rows}x{self.cols} of {self.cell_px}px cells does not "
                f"cover image {w}x{h}"
            )

    @property
    def n_cells(self):
        return self.rows * self.cols

    def cell_centers(self):
        """(n_cells, 2) pixel centers in row-major cell order."""
        rows = (np.arange(self.rows) + 0.5) * self.cell_px
        cols = (np.arange(self.cols) + 0.5) * self.cell_px
        cx, cy = np.meshgrid(cols, rows)
        return np.stack([cx.reshape(-1), cy.reshape(-1)], axis=1)


@dataclass
class TrackSequence:
    """One pedestrian's annotated frames plus synchronized ego-motion."""

    ped_id: str
    fps: float
    image_size: tuple[int, int]
    frames: np.ndarray    # (n,) int, strictly increasing and contiguous
    boxes: np.ndarray     # (n, 4) pixel x1, y1, x2, y2
    crossing: np.ndarray  # (n,) int {0, 1}
    ego: np.ndarray       # (n, 3) speed, v_x, v_z

    def __len__(self):
        return len(self.frames)

    @property
    def is_crossing(self):
        return bool(self.crossing.any())

    def crossing_event_frame(self):
        """Frame index of the first crossing-labeled frame, or None."""
        hits = np.flatnonzero(self.crossing)
        return int(self.frames[hits[0]]) if hits.size else None

    def validate(self):
        if len(self.frames) == 0:
            raise DataError(f"track {self.ped_id}: empty")
        diffs = np.diff(self.frames)
        if np.any(diffs != 1):
            raise DataError(f"track {self.ped_id}: frame indices not contiguous")
        w, h = self.image_size
        b = self.boxes
        if np.any(b[:, 0] >= b[:, 2]) or np.any(b[:, 1] >= b[:, 3]):
            bad = int(np.flatnonzero((b[:, 0] >= b[:, 2]) | (b[:, 1] >= b[:, 3]))[0])
            raise DataError(
                f"track {self.ped_id}: degenerate box at frame {int(self.frames[bad])}"
            )
        if b.min() < 0 or np.any(b[:, [0, 2]] > w) or np.any(b[:, [1, 3]] > h):
            raise DataError(f"track {self.ped_id}: box outside image bounds")


@dataclass
class Sample:
    """One training/eval instance windowed out of a track."""

    ped_id: str
    anchor_frame: int          # frame index of the last observed step
    obs_boxes: np.ndarray      # (o, 4) normalized
    obs_velocities: np.ndarray  # (o, 4) normalized per-step deltas
    obs_cells: np.ndarray      # (o,) int grid cells
    ego: np.ndarray            # (o + tau, 3) observed AND future ego-motion
    future_boxes: np.ndarray   # (tau, 4) normalized
    crossing_label: int
    final_cell: int
    semantic_map_ref: str      # scene frame id at the anchor step

    @property
    def o(self):
        return len(self.obs_boxes)

    @property
    def tau(self):
        return len(self.future_boxes)


def normalize_box(box, image_size):
    """Scale pixel corners into [0, 1] by image width/height."""
    w, h = image_size
    box = np.asarray(box, dtype=np.float64)
    if box[2] <= box[0] or box[3] <= box[1]:
        raise DataError(f"degenerate box {box.tolist()}")
    out = np.empty(4)
    out[[0, 2]] = np.clip(box[[0, 2]] / w, 0.0, 1.0)
    out[[1, 3]] = np.clip(box[[1, 3]] / h, 0.0, 1.0)
    return out


def denormalize_boxes(boxes, image_size):
    w, h = image_size
    out = np.array(boxes, dtype=np.float64)
    out[..., [0, 2]] *= w
    out[..., [1, 3]] *= h
    return out


def compute_velocity(boxes):
    """Per-step box deltas; the first step gets a zero velocity."""
    boxes = np.asarray(boxes, dtype=np.float64)
    if len(boxes) < 2:
        raise DataError("velocity needs at least 2 frames")
    vel = np.zeros_like(boxes)
    vel[1:] = boxes[1:] - boxes[:-1]
    return vel


def box_center(box):
    box = np.asarray(box, dtype=np.float64)
    return np.array([(box[..., 0] + box[..., 2]) / 2.0, (box[..., 1] + box[..., 3]) / 2.0]).T


def discretize_location(box, grid: GridSpec):
    """Cell whose center is nearest the box center; ties go to the smaller index."""
    cx = float(box[0] + box[2]) / 2.0
    cy = float(box[1] + box[3]) / 2.0
    col = _nearest_band(cx, grid.cell_px, grid.cols)
    row = _nearest_band(cy, grid.cell_px, grid.rows)
    return row * grid.cols + col


def _nearest_band(x, cell_px, n):
    # centers sit at (k + 0.5) * cell_px; a point exactly on a boundary is
    # equidistant from two centers and the tie goes to the smaller band
    k = math.floor(x / cell_px)
    if x == k * cell_px and k > 0:
        k -= 1
    return min(max(k, 0), n - 1)


@dataclass
class WindowStats:
    total: int = 0
    kept: int = 0
    tte_rejected: int = 0
    skipped: list[str] = field(default_factory=list)


def sample_windows(track: TrackSequence, o, tau, stride=None, tte_range=(1.0, 2.0),
                   grid: GridSpec | None = None, stats: WindowStats | None = None):
    """Slide windows of length o + tau over a track.

    Stride defaults to ceil(o / 2) (half the observation length). Windows of
    crossing tracks are kept only when the last observed frame falls
    ``tte_range`` seconds (inclusive, converted to frames) before the first
    crossing-labeled frame.
    """
    grid = grid or GridSpec(image_size=track.image_size)
    stats = stats if stats is not None else WindowStats()
    if stride is None:
        stride = math.ceil(o / 2)
    n = len(track)
    window = o + tau
    if n < window:
        return []
    event = track.crossing_event_frame() if track.is_crossing else None
    tte_lo = track.fps * tte_range[0]
    tte_hi = track.fps * tte_range[1]
    samples = []
    for start in range(0, n - window + 1, stride):
        stats.total += 1
        anchor = int(track.frames[start + o - 1])
        if event is not None:
            tte = event - anchor
            if not (tte_lo <= tte <= tte_hi):
                stats.tte_rejected += 1
                continue
        try:
            sample = _build_sample(track, start, o, tau, grid, event is not None)
        except DataError as err:
            stats.skipped.append(f"track {track.ped_id} @ {anchor}: {err}")
            continue
        samples.append(sample)
        stats.kept += 1
    return samples


def _build_sample(track, start, o, tau, grid, is_crossing):
    obs = slice(start, start + o)
    fut = slice(start + o, start + o + tau)
    obs_boxes_px = track.boxes[obs]
    obs_boxes = np.stack([normalize_box(b, track.image_size) for b in obs_boxes_px])
    future_boxes = np.stack(
        [normalize_box(b, track.image_size) for b in track.boxes[fut]]
    )
    anchor = int(track.frames[start + o - 1])
    return Sample(
        ped_id=track.ped_id,
        anchor_frame=anchor,
        obs_boxes=obs_boxes,
        obs_velocities=compute_velocity(obs_boxes),
        obs_cells=np.array([discretize_location(b, grid) for b in obs_boxes_px]),
        ego=track.ego[start:start + o + tau].copy(),
        future_boxes=future_boxes,
        crossing_label=1 if is_crossing else 0,
        final_cell=discretize_location(track.boxes[start + o + tau - 1], grid),
        semantic_map_ref=map_ref(track.ped_id, anchor),
    )


def map_ref(ped_id, frame):
    return f"{ped_id}:{frame}"


# ---------------------------------------------------------------------------
# JSON Lines track files

_REQUIRED_TOP = ("ped_id", "fps", "image_size", "frames")
_REQUIRED_FRAME = ("f", "box", "cross", "ego")


def load_tracks(path):
    """Parse a JSONL track file.

    Returns (tracks, problems); malformed lines are rejected and reported as
    human-readable diagnostics carrying the 1-based line number.
    """
    tracks, problems = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                tracks.append(_parse_track(json.loads(line)))
            except json.JSONDecodeError as err:
                problems.append(f"line {lineno}: invalid JSON ({err.msg})")
            except DataError as err:
                problems.append(f"line {lineno}: {err}")
    return tracks, problems


def _parse_track(obj):
    for key in _REQUIRED_TOP:
        if key not in obj:
            raise DataError(f"missing required field '{key}'")
    frames = obj["frames"]
    if not frames:
        raise DataError("track has no frames")
    for i, fr in enumerate(frames):
        for key in _REQUIRED_FRAME:
            if key not in fr:
                raise DataError(f"frame entry {i}: missing required field '{key}'")
    w, h = obj["image_size"]
    boxes = np.array([fr["box"] for fr in frames], dtype=np.float64)
    # clamp into the image, then insist on positive area
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, w)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, h)
    track = TrackSequence(
        ped_id=str(obj["ped_id"]),
        fps=float(obj["fps"]),
        image_size=(int(w), int(h)),
        frames=np.array([fr["f"] for fr in frames], dtype=np.int64),
        boxes=boxes,
        crossing=np.array([fr["cross"] for fr in frames], dtype=np.int64),
        ego=np.array([fr["ego"] for fr in frames], dtype=np.float64),
    )
    track.validate()
    return track


def save_tracks(path, tracks):
    with open(path, "w", encoding="utf-8") as f:
        for t in tracks:
            obj = {
                "ped_id": t.ped_id,
                "fps": t.fps,
                "image_size": list(t.image_size),
                "frames": [
                    {
                        "f": int(t.frames[i]),
                        "box": [float(v) for v in t.boxes[i]],
                        "cross": int(t.crossing[i]),
                        "ego": [float(v) for v in t.ego[i]],
                    }
                    for i in range(len(t))
                ],
            }
            f.write(json.dumps(obj) + "\n")
