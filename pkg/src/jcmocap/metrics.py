"""Evaluation metrics for reconstructed multi-person motion.

Predicted and ground-truth person sets are matched by minimum total
mean root-joint distance (Hungarian assignment), then limb correctness
(PCP), joint position error (MPJPE, millimeters) and joint-level
precision/recall at a fixed distance threshold are computed.

Conventions: a limb is correct when the summed endpoint errors do not
exceed the true limb length (the exact zero set of the training hinge);
PCP averages over all (frame, limb) cells.  Joints flagged as
unreconstructed count as misses (false negatives), never as false
positives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import SkeletonSequence
from .skeleton import LimbSpec


class ZeroLengthLimb(ValueError):
    """A ground-truth limb has (near-)zero length."""


class ShapeMismatch(ValueError):
    """Prediction and target shapes disagree."""


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


def _frames_of(seq) -> np.ndarray:
    if isinstance(seq, SkeletonSequence):
        return seq.frames
    return np.asarray(seq, dtype=np.float64)


def _flags_of(seq) -> np.ndarray:
    if isinstance(seq, SkeletonSequence):
        return seq.reconstructed
    arr = np.asarray(seq, dtype=np.float64)
    return np.ones(arr.shape[:2], dtype=bool)


def match_persons(preds: list, gts: list, root_index: int = 8) -> MatchResult:
    """Minimum-total-cost one-to-one person assignment.

    Cost is the mean distance between root joints over shared frames;
    surplus entries on either side are reported unmatched.
    """
    if not preds or not gts:
        return MatchResult(
            pairs=(),
            unmatched_pred=tuple(range(len(preds))),
            unmatched_gt=tuple(range(len(gts))),
        )
    cost = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        pf = _frames_of(p)
        for j, g in enumerate(gts):
            gf = _frames_of(g)
            n = min(pf.shape[0], gf.shape[0])
            root = min(root_index, pf.shape[1] - 1, gf.shape[1] - 1)
            cost[i, j] = float(np.mean(np.linalg.norm(
                pf[:n, root] - gf[:n, root], axis=-1
            )))
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple((int(r), int(c)) for r, c in zip(rows, cols))
    return MatchResult(
        pairs=pairs,
        unmatched_pred=tuple(i for i in range(len(preds))
                             if i not in {r for r, _ in pairs}),
        unmatched_gt=tuple(j for j in range(len(gts))
                           if j not in {c for _, c in pairs}),
    )


def pcp(pred, gt, limbs: LimbSpec) -> tuple[np.ndarray, float]:
    """Percentage of correct limbs, per limb and averaged over all cells.

    A limb-frame is correct iff both endpoints are reconstructed and the
    summed endpoint errors are at most the true limb length.
    """
    pf, gf = _frames_of(pred), _frames_of(gt)
    flags = _flags_of(pred)
    if pf.shape != gf.shape:
        raise ShapeMismatch(f"pred {pf.shape} vs gt {gf.shape}")
    a = [p for p, _ in limbs.limbs]
    b = [q for _, q in limbs.limbs]
    lengths = np.linalg.norm(gf[:, a] - gf[:, b], axis=-1)
    if np.any(lengths < 1e-9):
        raise ZeroLengthLimb("ground-truth limb with near-zero length")
    err = (np.linalg.norm(pf[:, a] - gf[:, a], axis=-1)
           + np.linalg.norm(pf[:, b] - gf[:, b], axis=-1))
    correct = (err <= lengths) & flags[:, a] & flags[:, b]
    per_limb = 100.0 * correct.mean(axis=0)
    return per_limb, float(100.0 * correct.mean())


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in millimeters over reconstructed joints."""
    pf, gf = _frames_of(pred), _frames_of(gt)
    flags = _flags_of(pred)
    if pf.shape != gf.shape:
        raise ShapeMismatch(f"pred {pf.shape} vs gt {gf.shape}")
    dist = np.linalg.norm(pf - gf, axis=-1)
    if not flags.any():
        return float("inf")
    return float(1000.0 * dist[flags].mean())


def pck_precision_recall(
    preds: list, gts: list, threshold: float = 0.2,
    match: MatchResult | None = None, root_index: int = 8,
) -> tuple[float, float]:
    """Joint-level precision/recall at a distance threshold in meters.

    A reconstructed predicted joint is a true positive iff it lies
    within the threshold of its matched person's ground-truth joint.
    Joints of unmatched predictions are false positives; all joints of
    unmatched ground-truth persons, unreconstructed joints, and misses
    beyond the threshold are false negatives.
    """
    if match is None:
        match = match_persons(preds, gts, root_index)
    tp = fp = fn = 0
    for pi, gi in match.pairs:
        pf, gf = _frames_of(preds[pi]), _frames_of(gts[gi])
        flags = _flags_of(preds[pi])
        dist = np.linalg.norm(pf - gf, axis=-1)
        hit = (dist <= threshold) & flags
        tp += int(hit.sum())
        fp += int((flags & ~hit).sum())
        fn += int((~hit).sum())
    for pi in match.unmatched_pred:
        fp += int(_flags_of(preds[pi]).sum())
    for gi in match.unmatched_gt:
        fn += int(_frames_of(gts[gi]).shape[0] * _frames_of(gts[gi]).shape[1])
    precision = 100.0 * tp / (tp + fp) if (tp + fp) else 100.0
    recall = 100.0 * tp / (tp + fn) if (tp + fn) else 100.0
    return precision, recall


@dataclass
class EvalReport:
    """Aggregated metrics plus the per-person breakdown."""

    per_limb_pcp: dict[str, float]
    avg_pcp: float
    mpjpe_mm: float
    precision: float
    recall: float
    per_person: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for name, v in [("avg_pcp", self.avg_pcp),
                        ("precision", self.precision), ("recall", self.recall)]:
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} must be a percentage, got {v}")
        if self.mpjpe_mm < 0:
            raise ValueError("MPJPE must be nonnegative")

    def to_json(self) -> str:
        payload = {
            "per_limb_pcp": self.per_limb_pcp,
            "avg_pcp": self.avg_pcp,
            "mpjpe_mm": self.mpjpe_mm,
            "precision": self.precision,
            "recall": self.recall,
            "per_person": self.per_person,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        rows = [("limb", "PCP %")]
        rows += [(name, f"{v:7.2f}") for name, v in self.per_limb_pcp.items()]
        rows += [
            ("average PCP %", f"{self.avg_pcp:7.2f}"),
            ("MPJPE mm", f"{self.mpjpe_mm:7.2f}"),
            ("precision %", f"{self.precision:7.2f}"),
            ("recall %", f"{self.recall:7.2f}"),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {value}" for name, value in rows]
        lines.insert(1, "-" * (width + 9))
        return "\n".join(lines) + "\n"


def evaluate(preds: list, gts: list, limbs: LimbSpec,
             threshold: float = 0.2, root_index: int = 8) -> EvalReport:
    """Match persons and aggregate every metric into one report."""
    match = match_persons(preds, gts, root_index)
    limb_names = (limbs.limb_names if limbs.limb_names
                  else tuple(f"limb_{a}_{b}" for a, b in limbs.limbs))
    limb_correct = np.zeros(limbs.n_limbs)
    limb_cells = 0
    errors = []
    per_person = []
    for pi, gi in match.pairs:
        per_limb, avg = pcp(preds[pi], gts[gi], limbs)
        err = mpjpe(preds[pi], gts[gi])
        n_frames = _frames_of(preds[pi]).shape[0]
        limb_correct += per_limb / 100.0 * n_frames
        limb_cells += n_frames
        errors.append((err, int(_flags_of(preds[pi]).sum())))
        per_person.append({
            "pred": pi, "gt": gi, "avg_pcp": avg, "mpjpe_mm": err,
        })
    for pi in match.unmatched_pred:
        per_person.append({"pred": pi, "gt": None})
    for gi in match.unmatched_gt:
        per_person.append({"pred": None, "gt": gi})
    precision, recall = pck_precision_recall(preds, gts, threshold, match,
                                             root_index)
    if limb_cells:
        per_limb_pct = 100.0 * limb_correct / limb_cells
        avg_pcp_val = float(per_limb_pct.mean())
    else:
        per_limb_pct = np.zeros(limbs.n_limbs)
        avg_pcp_val = 0.0
    total_joints = sum(w for _, w in errors)
    if total_joints:
        mpjpe_val = float(sum(e * w for e, w in errors if np.isfinite(e))
                          / total_joints)
    else:
        mpjpe_val = float("inf") if match.unmatched_gt else 0.0
    return EvalReport(
        per_limb_pcp={limb_names[k]: float(per_limb_pct[k])
                      for k in range(limbs.n_limbs)},
        avg_pcp=avg_pcp_val,
        mpjpe_mm=mpjpe_val if np.isfinite(mpjpe_val) else 1e9,
        precision=precision,
        recall=recall,
        per_person=per_person,
    )
