"""Skeleton format definitions: joint names, limb tables and symmetry maps.

Two formats are bundled: ``body25`` (the 25-joint detector format the
pipeline consumes) and ``shelf15`` (the 15-joint format the network
predicts).  Limb tables and per-joint distance thresholds are shipped as
JSON assets so they can be swapped without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


BODY25_JOINT_NAMES = (
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist",
    "LShoulder", "LElbow", "LWrist", "MidHip", "RHip",
    "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle",
    "REye", "LEye", "REar", "LEar", "LBigToe",
    "LSmallToe", "LHeel", "RBigToe", "RSmallToe", "RHeel",
)

SHELF15_JOINT_NAMES = BODY25_JOINT_NAMES[:15]

# Default correspondence used to derive 15-joint supervision targets from
# 25-joint ground truth.  This is configuration data, not a fixed truth:
# the conversion head itself is learned.
BODY25_TO_SHELF15 = tuple(range(15))

# Left/right counterpart per body25 joint (self-index = unpaired).
_BODY25_LR = {
    2: 5, 3: 6, 4: 7, 9: 12, 10: 13, 11: 14,
    15: 16, 17: 18, 19: 22, 20: 23, 21: 24,
}
BODY25_LR_COUNTERPART = tuple(
    _BODY25_LR.get(i, {v: k for k, v in _BODY25_LR.items()}.get(i, i))
    for i in range(25)
)


class UnknownFormat(KeyError):
    """Raised when a skeleton format name is not registered."""


@dataclass(frozen=True)
class LimbSpec:
    """Limb table for kinematic losses and limb-based metrics.

    ``limbs`` holds joint-index pairs (a, b); ``symmetric_pairs`` holds
    pairs of *limb* indices (right, left) whose lengths are expected to
    match on a human body.
    """

    limbs: tuple[tuple[int, int], ...]
    symmetric_pairs: tuple[tuple[int, int], ...] = ()
    limb_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.limbs)
        for a, b in self.limbs:
            if a == b:
                raise ValueError(f"degenerate limb ({a}, {b})")
        for r, l in self.symmetric_pairs:
            if not (0 <= r < n and 0 <= l < n):
                raise ValueError(f"symmetric pair ({r}, {l}) out of range")

    @property
    def n_limbs(self) -> int:
        return len(self.limbs)


@dataclass(frozen=True)
class SkeletonFormat:
    """A named joint layout plus the tables the pipeline needs for it."""

    name: str
    joint_names: tuple[str, ...]
    limb_spec: LimbSpec
    lr_counterpart: tuple[int, ...]
    midhip_index: int = 8

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)


def _limb_indices(names, pairs):
    return tuple((names.index(a), names.index(b)) for a, b in pairs)


_BODY25_LIMBS = (
    ("Nose", "Neck"), ("Neck", "MidHip"),
    ("RShoulder", "RElbow"), ("RElbow", "RWrist"),
    ("LShoulder", "LElbow"), ("LElbow", "LWrist"),
    ("RHip", "RKnee"), ("RKnee", "RAnkle"),
    ("LHip", "LKnee"), ("LKnee", "LAnkle"),
    ("REye", "REar"), ("LEye", "LEar"),
    ("Nose", "REye"), ("Nose", "LEye"),
)
_BODY25_LIMB_NAMES = (
    "Head", "Torso",
    "RUpperArm", "RLowerArm", "LUpperArm", "LLowerArm",
    "RUpperLeg", "RLowerLeg", "LUpperLeg", "LLowerLeg",
    "REyeEar", "LEyeEar", "RNoseEye", "LNoseEye",
)
# Symmetric limb-index pairs: upper/lower arms, upper/lower legs,
# eye-to-ear and eye-to-nose.
_BODY25_SYM = ((2, 4), (3, 5), (6, 8), (7, 9), (10, 11), (12, 13))

_SHELF15_LIMBS = _BODY25_LIMBS[:10]
_SHELF15_LIMB_NAMES = _BODY25_LIMB_NAMES[:10]
_SHELF15_SYM = ((2, 4), (3, 5), (6, 8), (7, 9))

BODY25 = SkeletonFormat(
    name="body25",
    joint_names=BODY25_JOINT_NAMES,
    limb_spec=LimbSpec(
        limbs=_limb_indices(BODY25_JOINT_NAMES, _BODY25_LIMBS),
        symmetric_pairs=_BODY25_SYM,
        limb_names=_BODY25_LIMB_NAMES,
    ),
    lr_counterpart=BODY25_LR_COUNTERPART,
    midhip_index=8,
)

SHELF15 = SkeletonFormat(
    name="shelf15",
    joint_names=SHELF15_JOINT_NAMES,
    limb_spec=LimbSpec(
        limbs=_limb_indices(SHELF15_JOINT_NAMES, _SHELF15_LIMBS),
        symmetric_pairs=_SHELF15_SYM,
        limb_names=_SHELF15_LIMB_NAMES,
    ),
    lr_counterpart=tuple(
        BODY25_LR_COUNTERPART[i] if BODY25_LR_COUNTERPART[i] < 15 else i
        for i in range(15)
    ),
    midhip_index=8,
)

_FORMATS = {"body25": BODY25, "shelf15": SHELF15}


def get_format(name: str) -> SkeletonFormat:
    try:
        return _FORMATS[name.lower()]
    except KeyError:
        raise UnknownFormat(name) from None


def load_limb_spec(path: str | Path) -> LimbSpec:
    """Load a limb table from a JSON asset.

    Expected keys: ``limbs`` (list of [a, b] joint indices), optional
    ``symmetric_pairs`` (list of [r, l] limb indices) and ``limb_names``.
    """
    with open(path) as fh:
        raw = json.load(fh)
    return LimbSpec(
        limbs=tuple((int(a), int(b)) for a, b in raw["limbs"]),
        symmetric_pairs=tuple(
            (int(r), int(l)) for r, l in raw.get("symmetric_pairs", [])
        ),
        limb_names=tuple(raw.get("limb_names", [])),
    )


def save_limb_spec(spec: LimbSpec, path: str | Path) -> None:
    payload = {
        "limbs": [list(p) for p in spec.limbs],
        "symmetric_pairs": [list(p) for p in spec.symmetric_pairs],
        "limb_names": list(spec.limb_names),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def asset_path(name: str) -> Path:
    """Path of a bundled JSON asset (limb tables, thresholds)."""
    return Path(resources.files("jcmocap").joinpath("assets", name))
