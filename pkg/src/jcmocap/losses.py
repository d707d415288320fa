"""Training losses: reconstruction, projection, limb hinge, bone priors.

All four terms are plain functions of torch tensors so gradients flow to
whatever produced the prediction.  Norms use a guarded square root whose
gradient is exactly zero at coincident points, matching the subgradient
convention at hinge and absolute-value kinks.

The printed normalizations of the source formulas (1/(N+I) and friends)
are almost certainly typos for products; by default every term is
normalized by the count of summed elements so magnitudes are independent
of window size.  ``literal=True`` switches to the printed constants for
auditability.
"""

from __future__ import annotations

import torch

from .geometry import CameraView, DegenerateDepth
from .skeleton import LimbSpec


class ShapeMismatch(ValueError):
    """Prediction and target shapes disagree."""


def _norm(diff: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last axis; gradient 0 where the norm is 0."""
    sq = (diff * diff).sum(dim=-1)
    return torch.where(
        sq > 0, torch.sqrt(torch.clamp(sq, min=1e-300)), torch.zeros_like(sq)
    )


def _check(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    if pred.shape[-1] != 3:
        raise ShapeMismatch("last axis must hold 3D coordinates")


def project_torch(points: torch.Tensor, cam: CameraView) -> torch.Tensor:
    """Differentiable pinhole projection of (..., 3) points."""
    P = torch.from_numpy(cam.projection.copy()).to(points.dtype)
    uvw = points @ P[:, :3].T + P[:, 3]
    w = uvw[..., 2]
    if torch.any(w.abs() < 1e-12):
        raise DegenerateDepth(f"near-zero depth in view {cam.id}")
    return uvw[..., :2] / w.unsqueeze(-1)


def loss_rec(pred: torch.Tensor, gt: torch.Tensor,
             literal: bool = False) -> torch.Tensor:
    """Mean per-joint Euclidean error between prediction and ground truth."""
    _check(pred, gt)
    norms = _norm(pred - gt)
    if literal:
        n, i = pred.shape[-3], pred.shape[-2]
        batch = norms.numel() // (n * i)
        return norms.sum() / ((n + i) * batch)
    return norms.mean()


def loss_proj(pred: torch.Tensor, gt: torch.Tensor,
              cams: list[CameraView], literal: bool = False) -> torch.Tensor:
    """Per-view mean pixel distance between the two projections, summed
    over views."""
    _check(pred, gt)
    total = pred.new_zeros(())
    for cam in cams:
        norms = _norm(project_torch(pred, cam) - project_torch(gt, cam))
        if literal:
            n, i = pred.shape[-3], pred.shape[-2]
            batch = norms.numel() // (n * i)
            total = total + norms.sum() / ((n + i) * batch)
        else:
            total = total + norms.mean()
    return total


def _limb_hinges(pred: torch.Tensor, gt: torch.Tensor,
                 limbs: LimbSpec) -> torch.Tensor:
    a = [p for p, _ in limbs.limbs]
    b = [q for _, q in limbs.limbs]
    err_a = _norm(pred[..., a, :] - gt[..., a, :])
    err_b = _norm(pred[..., b, :] - gt[..., b, :])
    length = _norm(gt[..., a, :] - gt[..., b, :])
    return torch.relu(err_a + err_b - length)


def loss_pcp(pred: torch.Tensor, gt: torch.Tensor, limbs: LimbSpec,
             literal: bool = False) -> torch.Tensor:
    """Limb-correctness hinge: zero exactly when summed endpoint errors
    stay within the true limb length."""
    _check(pred, gt)
    hinges = _limb_hinges(pred, gt, limbs)
    if literal:
        n, l = pred.shape[-3], limbs.n_limbs
        batch = hinges.numel() // (n * l)
        return hinges.sum() / ((n + l) * batch)
    return hinges.mean()


def loss_pcp_projected(pred: torch.Tensor, gt: torch.Tensor,
                       cams: list[CameraView], limbs: LimbSpec,
                       literal: bool = False) -> torch.Tensor:
    """The limb hinge evaluated on projected 2D coordinates, summed over views."""
    _check(pred, gt)
    total = pred.new_zeros(())
    for cam in cams:
        pred2d = project_torch(pred, cam)
        gt2d = project_torch(gt, cam)
        a = [p for p, _ in limbs.limbs]
        b = [q for _, q in limbs.limbs]
        hinges = torch.relu(
            _norm(pred2d[..., a, :] - gt2d[..., a, :])
            + _norm(pred2d[..., b, :] - gt2d[..., b, :])
            - _norm(gt2d[..., a, :] - gt2d[..., b, :])
        )
        if literal:
            n, l = pred.shape[-3], limbs.n_limbs
            batch = hinges.numel() // (n * l)
            total = total + hinges.sum() / ((n + l) * batch)
        else:
            total = total + hinges.mean()
    return total


def limb_lengths(pred: torch.Tensor, limbs: LimbSpec) -> torch.Tensor:
    a = [p for p, _ in limbs.limbs]
    b = [q for _, q in limbs.limbs]
    return _norm(pred[..., a, :] - pred[..., b, :])


def loss_bone(pred: torch.Tensor, limbs: LimbSpec,
              literal: bool = False) -> torch.Tensor:
    """Bone-length priors on the prediction alone.

    Temporal term: mean |length(n) - length(n-1)| over consecutive
    frames; symmetry term: mean left/right length difference over the
    symmetric limb pairs.  Needs at least two frames.
    """
    if pred.shape[-3] < 2:
        raise ShapeMismatch("temporal bone term needs at least 2 frames")
    lengths = limb_lengths(pred, limbs)             # (..., N, L)
    temporal = (lengths[..., 1:, :] - lengths[..., :-1, :]).abs()
    n, l = pred.shape[-3], limbs.n_limbs
    if literal:
        batch = temporal.numel() // ((n - 1) * l)
        total = temporal.sum() / ((n + l - 1) * batch)
    else:
        total = temporal.mean()
    if limbs.symmetric_pairs:
        r = [p for p, _ in limbs.symmetric_pairs]
        s = [q for _, q in limbs.symmetric_pairs]
        sym = (lengths[..., r] - lengths[..., s]).abs()
        if literal:
            batch = sym.numel() // (n * len(limbs.symmetric_pairs))
            total = total + sym.sum() / ((n + len(limbs.symmetric_pairs)) * batch)
        else:
            total = total + sym.mean()
    return total


def total_loss(pred: torch.Tensor, gt: torch.Tensor, cams: list[CameraView],
               limbs: LimbSpec, literal: bool = False,
               projected_pcp: bool = False) -> torch.Tensor:
    """Unweighted sum of the four terms (plus the optional projected hinge)."""
    total = (
        loss_rec(pred, gt, literal)
        + loss_proj(pred, gt, cams, literal)
        + loss_pcp(pred, gt, limbs, literal)
        + loss_bone(pred, limbs, literal)
    )
    if projected_pcp:
        total = total + loss_pcp_projected(pred, gt, cams, limbs, literal)
    return total
