"""Four-channel semantic occupancy maps and their on-disk container.

Channels are ordered (persons, bikes, vehicles, static). Files start with the
8-byte magic ``SEMMAP01``, a newline-terminated JSON header
``{"frame": int, "width": int, "height": int, "channels": 4}``, then
height x width x 4 raw bytes in channel-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MAGIC = b"SEMMAP01"
CHANNELS = ("persons", "bikes", "vehicles", "static")


class SemanticMapError(Exception):
    pass


@dataclass
class SemanticMap:
    channels: np.ndarray  # (4, H, W) uint8 binary masks
    frame_index: int = 0

    @property
    def height(self):
        return self.channels.shape[1]

    @property
    def width(self):
        return self.channels.shape[2]

    def validate(self):
        if self.channels.shape[0] != len(CHANNELS):
            raise SemanticMapError(f"expected 4 channels, got {self.channels.shape}")
        if self.channels.dtype != np.uint8:
            raise SemanticMapError(f"expected uint8 masks, got {self.channels.dtype}")
        if np.any(self.channels > 1):
            raise SemanticMapError("masks must be binary")
        if np.any(self.channels.sum(axis=0) > 1):
            raise SemanticMapError("a pixel is set in more than one channel")


# synthetic label ids plus CityScapes-style ids for segmenter output
DEFAULT_CLASS_GROUPING = {
    # synthetic renderer ids
    1: "static",    # road
    2: "static",    # sidewalk
    3: "persons",
    4: "bikes",     # rider
    5: "bikes",     # bicycle
    6: "vehicles",  # car
    # CityScapes ids
    24: "persons",
    25: "bikes",    # rider
    26: "vehicles", 27: "vehicles", 28: "vehicles",  # car, truck, bus
    31: "vehicles",  # train
    32: "bikes",    # motorcycle
    33: "bikes",    # bicycle
}


def load_class_grouping(path):
    """Read a JSON {label id -> channel name} table."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    grouping = {}
    for key, chan in raw.items():
        if chan not in CHANNELS:
            raise SemanticMapError(f"unknown channel '{chan}' for label {key}")
        grouping[int(key)] = chan
    return grouping


def channelize(label_map, grouping=None, frame_index=0):
    """Split an integer label map into the 4 binary channels.

    Labels missing from the grouping land in the static channel; the count of
    such pixels is returned alongside the map.
    """
    grouping = DEFAULT_CLASS_GROUPING if grouping is None else grouping
    label_map = np.asarray(label_map)
    channels = np.zeros((len(CHANNELS),) + label_map.shape, dtype=np.uint8)
    index = {name: i for i, name in enumerate(CHANNELS)}
    known = np.zeros(label_map.shape, dtype=bool)
    unknown = 0
    for label in np.unique(label_map):
        mask = label_map == label
        chan = grouping.get(int(label))
        if chan is None:
            unknown += int(mask.sum())
            continue
        channels[index[chan]][mask] = 1
        known |= mask
    channels[index["static"]][~known] = 1
    smap = SemanticMap(channels=channels, frame_index=frame_index)
    smap.validate()
    return smap, unknown


def resize_nearest(smap: SemanticMap, size):
    """Nearest-neighbor resample to (height, width); masks stay exclusive."""
    h, w = size
    src_r = np.minimum(((np.arange(h) + 0.5) * smap.height / h).astype(int), smap.height - 1)
    src_c = np.minimum(((np.arange(w) + 0.5) * smap.width / w).astype(int), smap.width - 1)
    out = smap.channels[:, src_r[:, None], src_c[None, :]]
    return SemanticMap(channels=np.ascontiguousarray(out), frame_index=smap.frame_index)


def write_semmap(path, smap: SemanticMap):
    smap.validate()
    header = json.dumps(
        {"frame": smap.frame_index, "width": smap.width,
         "height": smap.height, "channels": 4},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header + b"\n")
        f.write(np.ascontiguousarray(smap.channels, dtype=np.uint8).tobytes())


def read_semmap(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise SemanticMapError(f"{path}: bad magic {magic!r}")
        header_bytes = bytearray()
        while True:
            b = f.read(1)
            if not b:
                raise SemanticMapError(f"{path}: unterminated header")
            if b == b"\n":
                break
            header_bytes += b
        header = json.loads(header_bytes.decode("utf-8"))
        h, w = header["height"], header["width"]
        payload = f.read(h * w * 4)
    if len(payload) != h * w * 4:
        raise SemanticMapError(f"{path}: truncated payload")
    channels = np.frombuffer(payload, dtype=np.uint8).reshape(4, h, w).copy()
    return SemanticMap(channels=channels, frame_index=int(header["frame"]))
