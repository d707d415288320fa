"""Fourier positional features and the linear token lift.

Candidates enter the encoders as linear projections of their 3D
coordinates plus Fourier features of (coordinate, frame index), of
(coordinate, joint type), or of the view-pair index, depending on the
branch.  The random Gaussian matrices behind the Fourier features are
fixed at model creation and serialized with the checkpoint, together
with the normalization constants, so inference is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch


class DimensionMismatch(ValueError):
    """Input dimension incompatible with the encoding matrix."""


@dataclass
class FourierParams:
    """Random feature map x -> [cos(2 pi B x), sin(2 pi B x)].

    ``matrix`` (B) has shape (d_out, d_in) with entries from N(0, sigma^2);
    the encoded output has length 2 * d_out and every entry in [-1, 1].
    """

    matrix: torch.Tensor
    sigma: float = 1.0

    def __post_init__(self):
        self.matrix = torch.as_tensor(self.matrix, dtype=torch.float64)
        if self.matrix.ndim != 2:
            raise ValueError("encoding matrix must be 2-D")
        if not torch.all(torch.isfinite(self.matrix)):
            raise ValueError("encoding matrix must be finite")

    @property
    def d_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def d_out(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return 2 * self.matrix.shape[0]

    @classmethod
    def random(cls, d_in: int, d_out: int, sigma: float,
               generator: torch.Generator) -> "FourierParams":
        B = torch.empty((d_out, d_in), dtype=torch.float64)
        B.normal_(0.0, sigma, generator=generator)
        return cls(B, sigma)


def fourier_encode(x, fp: FourierParams) -> torch.Tensor:
    """Encode (..., d_in) inputs to (..., 2 * d_out) bounded features."""
    t = torch.as_tensor(x, dtype=torch.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.shape[-1] != fp.d_in:
        raise DimensionMismatch(
            f"input dim {t.shape[-1]} incompatible with matrix d_in {fp.d_in}"
        )
    phase = 2 * math.pi * (t @ fp.matrix.T)
    return torch.cat([torch.cos(phase), torch.sin(phase)], dim=-1)


@dataclass
class FourierSet:
    """The four feature maps plus their input normalization constants.

    Scalar indices are divided by their configured maxima before
    encoding; coordinates are normalized into the recorded scene
    bounding box.  The maxima come from the model configuration, not
    from the input tensor, so padded inputs encode identically.
    """

    coord: FourierParams
    frame: FourierParams
    joint_type: FourierParams
    view_pair: FourierParams
    n_frames: int
    n_joint_types: int
    n_view_pairs: int
    bbox_min: tuple[float, float, float] = (-4.0, -4.0, -4.0)
    bbox_max: tuple[float, float, float] = (4.0, 4.0, 4.0)

    def normalize_coords(self, j: torch.Tensor) -> torch.Tensor:
        lo = torch.as_tensor(self.bbox_min, dtype=torch.float64)
        hi = torch.as_tensor(self.bbox_max, dtype=torch.float64)
        return (j - lo) / (hi - lo)

    def normalize_frame(self, n) -> torch.Tensor:
        den = max(self.n_frames - 1, 1)
        return torch.as_tensor(n, dtype=torch.float64).reshape(-1, 1) / den

    def normalize_joint(self, i) -> torch.Tensor:
        den = max(self.n_joint_types - 1, 1)
        return torch.as_tensor(i, dtype=torch.float64).reshape(-1, 1) / den

    def normalize_pair(self, v) -> torch.Tensor:
        den = max(self.n_view_pairs - 1, 1)
        return torch.as_tensor(v, dtype=torch.float64).reshape(-1, 1) / den

    @classmethod
    def random(cls, width: int, view_width: int, n_frames: int,
               n_joint_types: int, n_view_pairs: int, sigma: float,
               generator: torch.Generator, bbox_min=(-4.0, -4.0, -4.0),
               bbox_max=(4.0, 4.0, 4.0)) -> "FourierSet":
        if width % 2 or view_width % 2:
            raise ValueError("embedding widths must be even")
        return cls(
            coord=FourierParams.random(3, width // 2, sigma, generator),
            frame=FourierParams.random(1, width // 2, sigma, generator),
            joint_type=FourierParams.random(1, width // 2, sigma, generator),
            view_pair=FourierParams.random(1, view_width // 2, sigma, generator),
            n_frames=n_frames,
            n_joint_types=n_joint_types,
            n_view_pairs=n_view_pairs,
            bbox_min=tuple(float(v) for v in bbox_min),
            bbox_max=tuple(float(v) for v in bbox_max),
        )


def compose_positions(j, n, i, pair, fs: FourierSet):
    """Positional features for one candidate.

    Returns (pos_t, pos_s, pos_v): coordinate+frame features for the
    trajectory branch, coordinate+joint-type features for the structure
    branch, and view-pair features for the view branch.
    """
    coords = fs.normalize_coords(torch.as_tensor(j, dtype=torch.float64))
    enc_j = fourier_encode(coords, fs.coord)
    pos_t = enc_j + fourier_encode(fs.normalize_frame(n).squeeze(0), fs.frame)
    pos_s = enc_j + fourier_encode(fs.normalize_joint(i).squeeze(0), fs.joint_type)
    pos_v = fourier_encode(fs.normalize_pair(pair).squeeze(0), fs.view_pair)
    return pos_t, pos_s, pos_v


@dataclass
class TokenTensor:
    """Embedded tokens plus the validity mask over their non-feature axes."""

    values: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        if self.mask.shape != self.values.shape[:-1]:
            raise ValueError(
                f"mask shape {tuple(self.mask.shape)} must match value shape "
                f"{tuple(self.values.shape[:-1])}"
            )


def project_tokens(data, mask, linear: torch.nn.Linear) -> TokenTensor:
    """Lift raw (..., 3) candidates into the embedding space.

    The mask is copied through unchanged; masked candidates' tokens are
    zeroed so padding can never leak into later stages.
    """
    values = torch.as_tensor(data, dtype=torch.float64)
    mask_t = torch.as_tensor(mask, dtype=torch.bool)
    if values.shape[-1] != linear.in_features:
        raise DimensionMismatch(
            f"candidate dim {values.shape[-1]} vs projection input "
            f"{linear.in_features}"
        )
    tokens = linear(values) * mask_t.unsqueeze(-1)
    return TokenTensor(values=tokens, mask=mask_t)
