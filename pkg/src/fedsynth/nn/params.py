"""Flat parameter vectors with named segment layouts.

A ParamVector is the unit of federated exchange: one contiguous float64
vector plus a layout mapping segment names to (offset, length, shape).
Models read their weights through segment names, never through positions,
so the order in which segments are listed is pure metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class LayoutMismatchError(ValueError):
    """Raised when a parameter vector does not fit a model specification."""


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class Layout:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise ValueError("duplicate segment names in layout")
        ordered = sorted(self.segments, key=lambda s: s.offset)
        cursor = 0
        for seg in ordered:
            if seg.offset != cursor:
                raise ValueError("layout offsets must tile the vector contiguously")
            if seg.length != int(np.prod(seg.shape)):
                raise ValueError(f"segment {seg.name!r} length disagrees with shape")
            cursor += seg.length
        object.__setattr__(self, "_by_name", {s.name: s for s in self.segments})

    @staticmethod
    def build(named_shapes: list[tuple[str, tuple[int, ...]]]) -> "Layout":
        segments = []
        offset = 0
        for name, shape in named_shapes:
            length = int(np.prod(shape))
            segments.append(Segment(name, offset, length, tuple(shape)))
            offset += length
        return Layout(tuple(segments))

    @property
    def total_size(self) -> int:
        return sum(s.length for s in self.segments)

    def segment_names(self) -> list[str]:
        return [s.name for s in self.segments]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def slot(self, name: str) -> Segment:
        try:
            return self._by_name[name]
        except KeyError:
            raise LayoutMismatchError(f"layout has no segment named {name!r}") from None

    def view(self, values: np.ndarray, name: str) -> np.ndarray:
        seg = self.slot(name)
        return values[seg.offset:seg.offset + seg.length].reshape(seg.shape)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter values must be a flat vector")
        if self.values.shape[0] != self.layout.total_size:
            raise LayoutMismatchError(
                f"vector of length {self.values.shape[0]} does not match layout "
                f"size {self.layout.total_size}"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("parameter values must be finite")

    def __len__(self) -> int:
        return self.values.shape[0]

    def segment(self, name: str) -> np.ndarray:
        return self.layout.view(self.values, name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    @staticmethod
    def zeros(layout: Layout) -> "ParamVector":
        return ParamVector(np.zeros(layout.total_size, dtype=np.float64), layout)


def check_layout_compatible(params: ParamVector, layout: Layout) -> None:
    """Raise LayoutMismatchError unless params exposes every required segment."""
    for seg in layout.segments:
        if seg.name not in params.layout:
            raise LayoutMismatchError(f"parameters lack segment {seg.name!r}")
        if params.layout.slot(seg.name).shape != seg.shape:
            raise LayoutMismatchError(
                f"segment {seg.name!r} has shape "
                f"{params.layout.slot(seg.name).shape}, expected {seg.shape}"
            )


def glorot_init(layout: Layout, rng: np.random.Generator) -> ParamVector:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.

    Two-dimensional segments are treated as (fan_in, fan_out) weight
    matrices; one-dimensional segments are biases and start at zero.
    """
    values = np.zeros(layout.total_size, dtype=np.float64)
    for seg in layout.segments:
        if len(seg.shape) == 2:
            fan_in, fan_out = seg.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[seg.offset:seg.offset + seg.length] = rng.uniform(
                -limit, limit, size=seg.length
            )
    return ParamVector(values, layout)


def save_params(params: ParamVector, directory) -> None:
    """Write params.json (layout) and params.bin (float32 little-endian)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "n": len(params),
        "dtype": "f32le",
        "layout": [
            {"name": s.name, "offset": s.offset, "length": s.length, "shape": list(s.shape)}
            for s in params.layout.segments
        ],
    }
    (directory / "params.json").write_text(json.dumps(meta))
    (directory / "params.bin").write_bytes(params.values.astype("<f4").tobytes())


def load_params(directory) -> ParamVector:
    directory = Path(directory)
    meta = json.loads((directory / "params.json").read_text())
    if meta["dtype"] != "f32le":
        raise ValueError(f"unsupported dtype {meta['dtype']!r}")
    raw = (directory / "params.bin").read_bytes()
    if len(raw) != meta["n"] * 4:
        raise ValueError("params.bin length disagrees with params.json")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    layout = Layout(tuple(
        Segment(s["name"], s["offset"], s["length"], tuple(s["shape"]))
        for s in meta["layout"]
    ))
    return ParamVector(values, layout)
