"""Filter-class geometry for the three masked convolution streams.

Each stream (Q, E, D) owns a region of the punctured offset plane around
an output pixel. The three regions are pairwise disjoint and together
cover every offset except (0, 0), which is what keeps every feature-map
pixel independent of the input pixel directly underneath it:

  Q: north halfplane            {dr < 0}
  E: southwest incl. due south  {dr >= 0, dc < 0} u {dr > 0, dc = 0}
  D: southeast incl. due east   {dr >= 0, dc > 0}

Stream taps are closed under region shifts (region + tap is a subset of
the region), so a stream's purity is structural: stacking layers can
never leak information across region boundaries. With the dilation
schedule max(1, layer-1) the combined receptive field after layer L is a
square of side 3 + L*(L-1) centred on, but excluding, the output pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, FrozenSet, Tuple

import numpy as np

Offset = Tuple[int, int]


@dataclass(frozen=True)
class MaskSpec:
    """One filter class: its region predicate and its allowed tap offsets.

    ``stream_taps`` apply when reading the class's own previous feature
    map (layers >= 2); ``input_taps`` apply when reading the raw noisy
    image at layer 1. All offsets are (dr, dc) relative to the output
    pixel, confined to a 3x3 window.
    """

    name: str
    region: Callable[[int, int], bool]
    stream_taps: FrozenSet[Offset]
    input_taps: FrozenSet[Offset]

    def stream_mask(self) -> np.ndarray:
        return _mask_from_offsets(self.stream_taps)

    def input_mask(self) -> np.ndarray:
        return _mask_from_offsets(self.input_taps)

    def mask_for_layer(self, layer: int) -> np.ndarray:
        return self.input_mask() if layer == 1 else self.stream_mask()


def _mask_from_offsets(offsets: FrozenSet[Offset]) -> np.ndarray:
    mask = np.zeros((3, 3), dtype=np.float64)
    for dr, dc in offsets:
        if not (-1 <= dr <= 1 and -1 <= dc <= 1):
            raise ValueError(f"tap offset {(dr, dc)} outside the 3x3 window")
        mask[dr + 1, dc + 1] = 1.0
    return mask


def dilation_for_layer(layer: int) -> int:
    """Dilation schedule: 1 for the first two layers, then layer - 1."""
    if layer < 1:
        raise ValueError(f"layer index must be >= 1, got {layer}")
    return max(1, layer - 1)


def receptive_field_extent(layer: int) -> int:
    """Side of the square context window feeding one pixel after ``layer`` layers."""
    if layer < 1:
        raise ValueError(f"layer index must be >= 1, got {layer}")
    return 3 + layer * (layer - 1)


def cumulative_reach(depth: int) -> int:
    """Chebyshev radius of the combined receptive field after ``depth`` layers."""
    return (receptive_field_extent(depth) - 1) // 2


def canonical_masks() -> Tuple[MaskSpec, MaskSpec, MaskSpec]:
    """The (Q, E, D) filter classes used by every network in this package."""
    q = MaskSpec(
        name="Q",
        region=lambda dr, dc: dr < 0,
        stream_taps=frozenset({(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1)}),
        input_taps=frozenset({(-1, -1), (-1, 0), (-1, 1)}),
    )
    e = MaskSpec(
        name="E",
        region=lambda dr, dc: (dr >= 0 and dc < 0) or (dr > 0 and dc == 0),
        stream_taps=frozenset({(0, -1), (0, 0), (1, -1), (1, 0)}),
        input_taps=frozenset({(0, -1), (1, -1), (1, 0)}),
    )
    d = MaskSpec(
        name="D",
        region=lambda dr, dc: dr >= 0 and dc > 0,
        stream_taps=frozenset({(0, 0), (0, 1), (1, 0), (1, 1)}),
        input_taps=frozenset({(0, 1), (1, 1)}),
    )
    return q, e, d


def center_leak_masks() -> Tuple[MaskSpec, MaskSpec, MaskSpec]:
    """Deliberately broken masks with the centre tap unmasked on Q's input.

    Negative control: a network built from these must fail the
    conditional-independence probe.
    """
    q, e, d = canonical_masks()
    q_bad = replace(q, input_taps=q.input_taps | {(0, 0)})
    return q_bad, e, d


def validate_mask_specs(specs: Tuple[MaskSpec, MaskSpec, MaskSpec],
                        window: int = 25) -> None:
    """Check the structural invariants of a mask triple.

    Raises ValueError on: centre inclusion, region overlap, incomplete
    cover of the punctured window, taps outside their region, or a
    stream tap that breaks shift-closure. ``window`` bounds the
    enumeration of the (infinite) region predicates.
    """
    half = window // 2
    offsets = [(dr, dc) for dr in range(-half, half + 1)
               for dc in range(-half, half + 1) if (dr, dc) != (0, 0)]
    for spec in specs:
        if spec.region(0, 0):
            raise ValueError(f"{spec.name}: region must exclude the centre")
        for tap in spec.input_taps:
            if not spec.region(*tap):
                raise ValueError(f"{spec.name}: input tap {tap} outside its region")
        for dr, dc in offsets:
            if spec.region(dr, dc):
                for tr, tc in spec.stream_taps:
                    if tr == 0 and tc == 0:
                        continue
                    sr, sc = dr + tr, dc + tc
                    if max(abs(sr), abs(sc)) <= half and not spec.region(sr, sc):
                        raise ValueError(
                            f"{spec.name}: shift-closure broken at "
                            f"region offset {(dr, dc)} + tap {(tr, tc)}"
                        )
    for dr, dc in offsets:
        owners = [s.name for s in specs if s.region(dr, dc)]
        if len(owners) == 0:
            raise ValueError(f"offset {(dr, dc)} not covered by any region")
        if len(owners) > 1:
            raise ValueError(f"offset {(dr, dc)} covered by {owners}")
