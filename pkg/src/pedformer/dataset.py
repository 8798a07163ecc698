"""Corpus persistence and window-level dataset assembly.

A corpus directory holds:

    tracks.jsonl    one pedestrian track per line
    manifest.json   scenario echo + sampling parameters + window statistics
    maps/*.smap     semantic occupancy maps, one per window-anchor frame

Datasets are lists of fixed-length windows plus a resolver from each window's
``semantic_map_ref`` to its map file. The train/validation split is by
pedestrian id so the same person never appears on both sides.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, GridSpec, Sample, WindowStats, load_tracks, sample_windows, save_tracks
from .semantic import SemanticMap, read_semmap, resize_nearest, write_semmap


def _ref_filename(ref):
    return ref.replace(":", "_") + ".smap"


def save_corpus(dirpath, tracks, maps, manifest):
    """Write tracks.jsonl, manifest.json and one .smap file per map."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    save_tracks(root / "tracks.jsonl", tracks)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    map_dir = root / "maps"
    map_dir.mkdir(exist_ok=True)
    for ref, smap in maps.items():
        write_semmap(map_dir / _ref_filename(ref), smap)


@dataclass
class Corpus:
    root: Path
    tracks: list
    manifest: dict

    def map_path(self, ref):
        return self.root / "maps" / _ref_filename(ref)


def load_corpus(dirpath):
    root = Path(dirpath)
    tracks_file = root / "tracks.jsonl"
    if not tracks_file.exists():
        raise DataError(f"no tracks.jsonl under {root}")
    tracks, problems = load_tracks(tracks_file)
    if problems:
        raise DataError("corrupt corpus: " + "; ".join(problems[:5]))
    manifest_file = root / "manifest.json"
    manifest = json.loads(manifest_file.read_text()) if manifest_file.exists() else {}
    return Corpus(root=root, tracks=tracks, manifest=manifest)


@dataclass
class Dataset:
    """Window samples plus lazy access to their semantic maps."""

    samples: list
    corpus: Corpus
    map_size: tuple[int, int]              # (height, width) fed to the model
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.samples)

    def map_for(self, sample: Sample) -> np.ndarray:
        """(4, H, W) float64 occupancy for the sample's anchor frame."""
        ref = sample.semantic_map_ref
        if ref not in self._cache:
            path = self.corpus.map_path(ref)
            if not path.exists():
                raise DataError(f"missing semantic map {ref} (expected {path})")
            smap = read_semmap(path)
            if smap.channels.shape[1:] != self.map_size:
                smap = resize_nearest(smap, self.map_size)
            self._cache[ref] = smap.channels.astype(np.float64)
        return self._cache[ref]


def build_dataset(corpus: Corpus, o, tau, tte_range, grid: GridSpec,
                  map_size=(216, 384)):
    stats = WindowStats()
    samples = []
    for track in corpus.tracks:
        samples.extend(
            sample_windows(track, o, tau, tte_range=tte_range, grid=grid, stats=stats)
        )
    return Dataset(samples=samples, corpus=corpus, map_size=tuple(map_size)), stats


def split_by_track(samples, val_fraction=0.15):
    """Deterministic per-pedestrian split: ids ranked by digest, tail is val."""
    ids = sorted({s.ped_id for s in samples})
    if len(ids) < 2 or val_fraction <= 0:
        return list(samples), []
    ranked = sorted(ids, key=lambda p: hashlib.sha1(p.encode()).hexdigest())
    n_val = min(len(ids) - 1, max(1, math.ceil(val_fraction * len(ids))))
    val_ids = set(ranked[-n_val:])
    train = [s for s in samples if s.ped_id not in val_ids]
    val = [s for s in samples if s.ped_id in val_ids]
    return train, val
