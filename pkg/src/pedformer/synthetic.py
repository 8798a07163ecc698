"""Deterministic synthetic corpus generator.

Stands in for real dash-cam corpora: pedestrians move with piecewise-constant
image-plane velocity, crossing pedestrians swing laterally toward the image
center starting 1-2 s before their labeled crossing frame, and ego-motion
follows smooth random control-point curves whose forward component inflates
box scale through a fixed depth proxy. Semantic occupancy maps are rendered
for every window-anchor frame.

Determinism contract: track content depends only on (seed, track index), so
generation may be parallelized by partitioning on track index. The
crossing/non-crossing flag assignment is a sequential greedy pass that keeps
the kept-window crossing ratio near the configured target, using only
per-track structural draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import GridSpec, TrackSequence, WindowStats, map_ref, sample_windows
from .semantic import SemanticMap


class ScenarioError(Exception):
    pass


@dataclass
class ScenarioConfig:
    n_tracks: int = 64
    fps: float = 30.0
    obs_len: int = 15
    pred_len: int = 30
    image_size: tuple[int, int] = (1920, 1080)
    map_size: tuple[int, int] = (216, 384)        # (height, width) of rendered maps
    episode_len_range: tuple[int, int] = (80, 110)
    crossing_window_ratio: float = 0.25           # target over kept windows
    tte_range: tuple[float, float] = (1.0, 2.0)   # seconds before crossing event
    ped_height_range: tuple[float, float] = (140.0, 320.0)
    ped_aspect: float = 0.38                      # box width / height
    walk_speed_range: tuple[float, float] = (0.3, 1.5)   # px/frame, non-crossing
    cross_speed_range: tuple[float, float] = (3.0, 7.0)  # px/frame, lateral
    ego_speed_range: tuple[float, float] = (0.0, 14.0)   # m/s forward
    depth_proxy: float = 0.004                    # kappa in the scale recurrence
    ego_dependent_crossing: bool = False
    n_parked_vehicles: int = 2

    def validate(self):
        if self.n_tracks < 0:
            raise ScenarioError("n_tracks must be non-negative")
        if self.episode_len_range[0] < self.obs_len + self.pred_len:
            raise ScenarioError(
                f"episode length {self.episode_len_range[0]} shorter than "
                f"window {self.obs_len + self.pred_len}"
            )
        if not 0.0 <= self.crossing_window_ratio <= 1.0:
            raise ScenarioError("crossing_window_ratio must be in [0, 1]")
        if self.ped_aspect <= 0:
            raise ScenarioError("ped_aspect must be positive")

    @property
    def stride(self):
        return math.ceil(self.obs_len / 2)


def _rng(seed, track_index, lane):
    return np.random.default_rng(np.random.SeedSequence([seed, track_index, lane]))


@dataclass
class _TrackPlan:
    length: int
    event_frame: int | None      # crossing frame if the track crosses
    cross_windows: int           # TTE-kept windows if crossing
    plain_windows: int           # windows if non-crossing
    crossing: bool = False


def _plan_track(cfg: ScenarioConfig, seed, i):
    """Structural draws only: length, candidate crossing event, window counts."""
    rng = _rng(seed, i, 0)
    length = int(rng.integers(cfg.episode_len_range[0], cfg.episode_len_range[1] + 1))
    o, tau, stride = cfg.obs_len, cfg.pred_len, cfg.stride
    anchors = np.arange(o - 1, length - tau, stride)
    tte_lo = int(math.ceil(cfg.fps * cfg.tte_range[0]))
    tte_hi = int(math.floor(cfg.fps * cfg.tte_range[1]))
    lead = int(rng.integers(tte_lo, tte_hi + 1))
    # pick an anchor whose event lands inside the episode
    feasible = anchors[anchors + lead <= length - 1]
    if feasible.size:
        event = int(rng.choice(feasible)) + lead
        kept = int(np.sum((anchors >= event - tte_hi) & (anchors <= event - tte_lo)))
    else:
        event, kept = None, 0
    return _TrackPlan(
        length=length,
        event_frame=event,
        cross_windows=kept,
        plain_windows=int(anchors.size),
    )


def _assign_crossing_flags(plans, target):
    """Greedy pass keeping the running kept-window crossing ratio near target."""
    crossed = total = 0
    for plan in plans:
        if plan.event_frame is None:
            total += plan.plain_windows
            continue
        as_cross = abs((crossed + plan.cross_windows) / max(1, total + plan.cross_windows) - target)
        as_plain = abs(crossed / max(1, total + plan.plain_windows) - target)
        if as_cross <= as_plain:
            plan.crossing = True
            crossed += plan.cross_windows
            total += plan.cross_windows
        else:
            total += plan.plain_windows


def _piecewise_velocity(rng, length, fps, lo, hi):
    """Per-frame speeds, constant over ~1 s chunks, random sign each chunk."""
    out = np.empty(length)
    t = 0
    chunk = max(1, int(fps))
    while t < length:
        n = min(chunk, length - t)
        out[t:t + n] = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
        t += n
    return out


def _smooth_curve(rng, length, fps, lo, hi):
    """Cosine-interpolated control points roughly one per second."""
    n_ctrl = max(2, int(math.ceil(length / max(1.0, fps))) + 1)
    ctrl = rng.uniform(lo, hi, size=n_ctrl)
    pos = np.linspace(0, length - 1, n_ctrl)
    out = np.empty(length)
    for t in range(length):
        j = np.searchsorted(pos, t, side="right") - 1
        j = min(j, n_ctrl - 2)
        span = pos[j + 1] - pos[j]
        u = 0.0 if span == 0 else (t - pos[j]) / span
        w = 0.5 - 0.5 * math.cos(math.pi * u)
        out[t] = ctrl[j] * (1 - w) + ctrl[j + 1] * w
    return out


def _generate_track(cfg: ScenarioConfig, seed, i, plan: _TrackPlan):
    rng = _rng(seed, i, 1)
    W, H = cfg.image_size
    L = plan.length
    dt = 1.0 / cfg.fps

    # ego-motion: smooth forward speed, small lateral component
    v_z = _smooth_curve(rng, L, cfg.fps, *cfg.ego_speed_range)
    v_x = _smooth_curve(rng, L, cfg.fps, -1.0, 1.0)
    if cfg.ego_dependent_crossing:
        if plan.crossing:
            # ego slows toward the crossing event
            ramp_start = max(0, plan.event_frame - int(2 * cfg.fps))
            for t in range(ramp_start, L):
                span = max(1, plan.event_frame - ramp_start)
                u = min(1.0, (t - ramp_start) / span)
                v_z[t] = v_z[t] * (1.0 - u) + 0.3 * u
        else:
            lo = 0.55 * (cfg.ego_speed_range[0] + cfg.ego_speed_range[1])
            v_z = np.maximum(v_z, lo)
    speed = 3.6 * np.sqrt(v_x**2 + v_z**2)  # km/h
    ego = np.stack([speed, v_x, v_z], axis=1)

    # pedestrian box: start position, size, piecewise-constant velocity
    height = rng.uniform(*cfg.ped_height_range)
    half_h = height / 2.0
    half_w = height * cfg.ped_aspect / 2.0
    if plan.crossing:
        side = rng.choice([-1.0, 1.0])
        cx = W / 2 + side * rng.uniform(0.28, 0.42) * W
    else:
        cx = rng.uniform(0.1, 0.9) * W
    cy = rng.uniform(0.5, 0.75) * H

    vx = _piecewise_velocity(rng, L, cfg.fps, *cfg.walk_speed_range)
    vy = _piecewise_velocity(rng, L, cfg.fps, 0.0, 0.3 * cfg.walk_speed_range[1])
    crossing = np.zeros(L, dtype=np.int64)
    if plan.crossing:
        event = plan.event_frame
        onset = max(0, event - int(rng.uniform(cfg.fps, 2 * cfg.fps)))
        toward_center = 1.0 if cx < W / 2 else -1.0
        vx[onset:] = toward_center * rng.uniform(*cfg.cross_speed_range)
        crossing[event:] = 1

    boxes = np.empty((L, 4))
    for t in range(L):
        if t > 0:
            cx += vx[t]
            cy += vy[t]
            grow = 1.0 / (1.0 - v_z[t] * dt * cfg.depth_proxy)
            half_w = min(half_w * grow, W / 2 - 1)
            half_h = min(half_h * grow, H / 2 - 1)
        cx = min(max(cx, half_w + 1), W - half_w - 1)
        cy = min(max(cy, half_h + 1), H - half_h - 1)
        boxes[t] = (cx - half_w, cy - half_h, cx + half_w, cy + half_h)

    track = TrackSequence(
        ped_id=f"ped_{i:04d}",
        fps=cfg.fps,
        image_size=cfg.image_size,
        frames=np.arange(L, dtype=np.int64),
        boxes=boxes,
        crossing=crossing,
        ego=ego,
    )
    track.validate()

    # parked vehicles flanking the road, fixed for the whole episode
    parked = []
    for _ in range(cfg.n_parked_vehicles):
        vw = rng.uniform(0.08, 0.18) * W
        vh = vw * rng.uniform(0.4, 0.6)
        vcx = rng.uniform(0.05, 0.95) * W
        vcy = rng.uniform(0.55, 0.8) * H
        parked.append((vcx - vw / 2, vcy - vh / 2, vcx + vw / 2, vcy + vh / 2))
    return track, parked


def _render_map(cfg: ScenarioConfig, track, parked, frame):
    """Exclusive channels by priority: persons > bikes > vehicles > static."""
    mh, mw = cfg.map_size
    W, H = cfg.image_size
    sx, sy = mw / W, mh / H
    owner = np.zeros((mh, mw), dtype=np.uint8)  # 0 none, 1..4 channel+1

    def fill(box, value):
        x1 = int(np.clip(box[0] * sx, 0, mw))
        x2 = int(np.clip(math.ceil(box[2] * sx), 0, mw))
        y1 = int(np.clip(box[1] * sy, 0, mh))
        y2 = int(np.clip(math.ceil(box[3] * sy), 0, mh))
        owner[y1:y2, x1:x2] = value

    horizon = int(0.45 * mh)
    owner[horizon:, :] = 4  # road/sidewalk; sky stays unlabeled
    for box in parked:
        fill(box, 3)
    fill(track.boxes[frame], 1)

    channels = np.zeros((4, mh, mw), dtype=np.uint8)
    for c in range(4):
        channels[c] = owner == c + 1
    smap = SemanticMap(channels=channels, frame_index=int(frame))
    smap.validate()
    return smap


def generate_synthetic(cfg: ScenarioConfig, seed):
    """Produce (tracks, {map_ref: SemanticMap}) for the configured scenario."""
    cfg.validate()
    plans = [_plan_track(cfg, seed, i) for i in range(cfg.n_tracks)]
    _assign_crossing_flags(plans, cfg.crossing_window_ratio)
    tracks, maps = [], {}
    for i, plan in enumerate(plans):
        track, parked = _generate_track(cfg, seed, i, plan)
        tracks.append(track)
        anchors = np.arange(
            cfg.obs_len - 1, plan.length - cfg.pred_len, cfg.stride
        )
        for anchor in anchors:
            maps[map_ref(track.ped_id, int(anchor))] = _render_map(
                cfg, track, parked, int(anchor)
            )
    return tracks, maps


def corpus_stats(cfg: ScenarioConfig, tracks, grid: GridSpec | None = None):
    """Window-level statistics matching what the training loader will see."""
    grid = grid or GridSpec(image_size=cfg.image_size)
    stats = WindowStats()
    crossing_windows = total_windows = 0
    for track in tracks:
        samples = sample_windows(
            track, cfg.obs_len, cfg.pred_len,
            tte_range=cfg.tte_range, grid=grid, stats=stats,
        )
        total_windows += len(samples)
        crossing_windows += sum(s.crossing_label for s in samples)
    n_cross_tracks = sum(1 for t in tracks if t.is_crossing)
    return {
        "n_tracks": len(tracks),
        "n_crossing_tracks": n_cross_tracks,
        "crossing_track_ratio": n_cross_tracks / len(tracks) if tracks else 0.0,
        "n_windows": total_windows,
        "n_crossing_windows": crossing_windows,
        "crossing_ratio": crossing_windows / total_windows if total_windows else 0.0,
        "tte_rejected_windows": stats.tte_rejected,
        "track_length_min": int(min((len(t) for t in tracks), default=0)),
        "track_length_max": int(max((len(t) for t in tracks), default=0)),
    }


def manifest_for(cfg: ScenarioConfig, seed, tracks, grid: GridSpec | None = None):
    return {
        "format": "pedformer-corpus-v1",
        "seed": seed,
        "scenario": asdict(cfg),
        "sampling": {
            "obs_len": cfg.obs_len,
            "pred_len": cfg.pred_len,
            "stride": cfg.stride,
            "fps": cfg.fps,
            "tte_range": list(cfg.tte_range),
        },
        "stats": corpus_stats(cfg, tracks, grid),
    }
