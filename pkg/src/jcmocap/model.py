"""The candidate-selection network and its inference utilities.

Three encoder branches read the padded candidate tensor: a trajectory
branch that attends over (frame, candidate) tokens per joint type and
view pair, a structure branch that attends over (joint, candidate)
tokens per frame and view pair, and a view branch that attends across
view pairs after the two branch outputs are blended element-wise.  Each
branch ends in optimal-transport pooling along its candidate axis; an
MLP head regresses the pooled view tokens to 3D and a two-layer joint
affine converts the detector joint layout to the output layout.

Also here: training-time random candidate masking, window-level
orientation augmentation, sliding-window inference over a detection
stream, and the binary checkpoint container.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, asdict, field, replace

import numpy as np
import torch
from torch import nn

from .encoding import FourierParams, FourierSet, fourier_encode
from .jointcloud import (
    JointCloud, DetectionSet, ThresholdTable, build_window_clouds,
)
from .geometry import CameraView
from .otap import OtapParams, otap_aggregate
from .skeleton import BODY25_TO_SHELF15, get_format
from .transformer import Encoder, EncoderConfig, init_encoder_weights, trunc_normal_


class ConfigMismatch(ValueError):
    """Input tensor incompatible with the model configuration."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint container."""


class StreamTooShort(ValueError):
    """Detection stream shorter than one inference window."""


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and hyperparameters of the selector network."""

    n_frames: int = 10
    n_view_pairs: int = 10
    n_candidates: int = 4
    n_joint_types: int = 25
    joint_mid: int = 20
    joint_out: int = 15
    width: int = 256
    depth: int = 16
    heads: int = 16
    head_dim: int = 16
    ffn_dim: int = 256
    view_width: int = 32
    view_depth: int = 8
    view_heads: int = 8
    view_head_dim: int = 4
    view_ffn_dim: int = 32
    epsilon: float = 0.1
    sinkhorn_iterations: int = 50
    fourier_sigma: float = 1.0
    dropout: float = 0.0
    bbox_min: tuple[float, float, float] = (-4.0, -4.0, -4.0)
    bbox_max: tuple[float, float, float] = (4.0, 4.0, 4.0)
    out_mapping: tuple[int, ...] = BODY25_TO_SHELF15
    in_format: str = "body25"
    out_format: str = "shelf15"

    def __post_init__(self):
        object.__setattr__(self, "bbox_min", tuple(float(v) for v in self.bbox_min))
        object.__setattr__(self, "bbox_max", tuple(float(v) for v in self.bbox_max))
        object.__setattr__(self, "out_mapping", tuple(int(v) for v in self.out_mapping))
        if len(self.out_mapping) != self.joint_out:
            raise ValueError("out_mapping length must equal joint_out")
        if any(not 0 <= i < self.n_joint_types for i in self.out_mapping):
            raise ValueError("out_mapping indices out of range")
        if self.joint_out > self.n_joint_types:
            raise ValueError("joint_out cannot exceed n_joint_types")

    def branch_encoder(self) -> EncoderConfig:
        return EncoderConfig(self.depth, self.width, self.heads,
                             self.head_dim, self.ffn_dim, self.dropout)

    def view_encoder(self) -> EncoderConfig:
        return EncoderConfig(self.view_depth, self.view_width, self.view_heads,
                             self.view_head_dim, self.view_ffn_dim, self.dropout)

    @classmethod
    def toy(cls, n_frames: int = 4, n_view_pairs: int = 3, n_candidates: int = 2,
            n_joint_types: int = 5, joint_mid: int = 4, joint_out: int = 3,
            width: int = 16, depth: int = 2, **kw) -> "ModelConfig":
        defaults = dict(
            n_frames=n_frames, n_view_pairs=n_view_pairs,
            n_candidates=n_candidates, n_joint_types=n_joint_types,
            joint_mid=joint_mid, joint_out=joint_out,
            width=width, depth=depth, heads=2, head_dim=width // 2,
            ffn_dim=2 * width, view_width=width // 2, view_depth=max(depth // 2, 1),
            view_heads=2, view_head_dim=width // 4, view_ffn_dim=width,
            out_mapping=tuple(range(joint_out)),
        )
        defaults.update(kw)
        return cls(**defaults)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(**raw)


class CandidateSelectionTransformer(nn.Module):
    """Full cascade from a padded candidate tensor to output skeletons."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        kw = {"dtype": torch.float64}
        self.proj_traj = nn.Linear(3, cfg.width, **kw)
        self.proj_struct = nn.Linear(3, cfg.width, **kw)
        self.proj_view = nn.Linear(cfg.width, cfg.view_width, **kw)
        self.traj_encoder = Encoder(cfg.branch_encoder())
        self.struct_encoder = Encoder(cfg.branch_encoder())
        self.view_encoder = Encoder(cfg.view_encoder())
        self.traj_otap = OtapParams(cfg.n_frames, cfg.width,
                                    cfg.epsilon, cfg.sinkhorn_iterations)
        self.struct_otap = OtapParams(cfg.n_joint_types, cfg.width,
                                      cfg.epsilon, cfg.sinkhorn_iterations)
        self.view_otap = OtapParams(1, cfg.view_width,
                                    cfg.epsilon, cfg.sinkhorn_iterations)
        self.head = nn.Sequential(
            nn.Linear(cfg.view_width, cfg.view_width, **kw),
            nn.GELU(),
            nn.Linear(cfg.view_width, 3, **kw),
        )
        self.convert1 = nn.Linear(cfg.n_joint_types, cfg.joint_mid, **kw)
        self.convert2 = nn.Linear(cfg.joint_mid, cfg.joint_out, **kw)
        for name in ("coord", "frame", "joint_type", "view_pair"):
            width = cfg.view_width if name == "view_pair" else cfg.width
            d_in = 3 if name == "coord" else 1
            self.register_buffer(
                f"fourier_{name}",
                torch.zeros((width // 2, d_in), dtype=torch.float64),
            )
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        """Seeded init: truncated-normal encoder blocks, fan-in token lifts.

        The encoder stacks follow the usual ViT recipe (truncated normal,
        std 0.02).  The token lifts, prediction head and joint converter
        use fan-in uniform bounds instead: at 0.02 the candidate
        coordinates would enter the network two orders of magnitude below
        the positional features and the head could not reach the target
        scale within a short training budget.
        """
        g = torch.Generator()
        g.manual_seed(seed)
        init_encoder_weights(self, g)

        def fan_in(linear: nn.Linear) -> None:
            bound = 1.0 / math.sqrt(linear.in_features)
            linear.weight.data.uniform_(-bound, bound, generator=g)
            if linear.bias is not None:
                linear.bias.data.uniform_(-bound, bound, generator=g)

        for lin in (self.proj_traj, self.proj_struct, self.proj_view,
                    self.head[0], self.head[2], self.convert1, self.convert2):
            fan_in(lin)
        for otap in (self.traj_otap, self.struct_otap, self.view_otap):
            otap.references.data.uniform_(-1.0, 1.0, generator=g)
        for name in ("coord", "frame", "joint_type", "view_pair"):
            buf = getattr(self, f"fourier_{name}")
            buf.normal_(0.0, self.cfg.fourier_sigma, generator=g)

    @property
    def fourier(self) -> FourierSet:
        cfg = self.cfg
        return FourierSet(
            coord=FourierParams(self.fourier_coord, cfg.fourier_sigma),
            frame=FourierParams(self.fourier_frame, cfg.fourier_sigma),
            joint_type=FourierParams(self.fourier_joint_type, cfg.fourier_sigma),
            view_pair=FourierParams(self.fourier_view_pair, cfg.fourier_sigma),
            n_frames=cfg.n_frames,
            n_joint_types=cfg.n_joint_types,
            n_view_pairs=cfg.n_view_pairs,
            bbox_min=cfg.bbox_min,
            bbox_max=cfg.bbox_max,
        )

    def _check_input(self, data: torch.Tensor, mask: torch.Tensor) -> None:
        cfg = self.cfg
        if data.ndim != 6 or data.shape[-1] != 3:
            raise ConfigMismatch(
                f"expected (batch, N, VP, MC, I, 3) data, got {tuple(data.shape)}"
            )
        if mask.shape != data.shape[:-1]:
            raise ConfigMismatch("mask shape must match data minus the last axis")
        if data.shape[1] != cfg.n_frames:
            raise ConfigMismatch(
                f"window length {data.shape[1]} != model n_frames {cfg.n_frames}"
            )
        if data.shape[4] != cfg.n_joint_types:
            raise ConfigMismatch(
                f"joint count {data.shape[4]} != model n_joint_types "
                f"{cfg.n_joint_types}"
            )

    def traj_branch(self, tokens: torch.Tensor, mask: torch.Tensor):
        """Encode (..., N, MC, width) tokens jointly, pool candidates per frame."""
        lead = tokens.shape[:-3]
        n, mc, w = tokens.shape[-3:]
        flat = tokens.reshape(-1, n * mc, w)
        flat_mask = mask.reshape(-1, n * mc)
        encoded = self.traj_encoder(flat, flat_mask).reshape(*lead, n, mc, w)
        return otap_aggregate(encoded, self.traj_otap, mask)

    def struct_branch(self, tokens: torch.Tensor, mask: torch.Tensor):
        """Encode (..., I, MC, width) tokens jointly, pool candidates per joint."""
        lead = tokens.shape[:-3]
        i, mc, w = tokens.shape[-3:]
        flat = tokens.reshape(-1, i * mc, w)
        flat_mask = mask.reshape(-1, i * mc)
        encoded = self.struct_encoder(flat, flat_mask).reshape(*lead, i, mc, w)
        return otap_aggregate(encoded, self.struct_otap, mask)

    def view_branch(self, tokens: torch.Tensor, mask: torch.Tensor):
        """Encode (..., VP, view_width) tokens across pairs, pool to one token."""
        lead = tokens.shape[:-2]
        vp, w = tokens.shape[-2:]
        encoded = self.view_encoder(
            tokens.reshape(-1, vp, w), mask.reshape(-1, vp)
        ).reshape(*lead, vp, w)
        pooled, empty = otap_aggregate(
            encoded.unsqueeze(-3), self.view_otap, mask.unsqueeze(-2)
        )
        return pooled.squeeze(-2), empty.squeeze(-1)

    def forward(self, data: torch.Tensor, mask: torch.Tensor):
        """Run the cascade.

        ``data``: (batch, N, VP, MC, I, 3) float64; ``mask``: matching
        bool tensor.  VP and MC may differ from the configured sizes
        (extra slots are admissible as long as they are padding).
        Returns (pred, reconstructed, reconstructed_raw): the (batch, N,
        joint_out, 3) prediction, its per-joint validity, and validity in
        the detector joint layout.  Joints with no candidate in any view
        pair are flagged false and forced to zero, never interpolated.
        """
        self._check_input(data, mask)
        cfg = self.cfg
        fs = self.fourier
        b, n, vp, mc, i, _ = data.shape
        maskf = mask.unsqueeze(-1)

        enc_j = fourier_encode(fs.normalize_coords(data), fs.coord)
        enc_n = fourier_encode(fs.normalize_frame(torch.arange(n)), fs.frame)
        enc_i = fourier_encode(fs.normalize_joint(torch.arange(i)), fs.joint_type)
        enc_v = fourier_encode(fs.normalize_pair(torch.arange(vp)), fs.view_pair)

        pos_t = enc_j + enc_n.reshape(1, n, 1, 1, 1, cfg.width)
        tokens_t = (self.proj_traj(data) + pos_t) * maskf
        tokens_t = tokens_t.permute(0, 4, 2, 1, 3, 5)   # (b, i, vp, n, mc, w)
        mask_t = mask.permute(0, 4, 2, 1, 3)
        zt, _empty_t = self.traj_branch(tokens_t, mask_t)  # (b, i, vp, n, w)

        pos_s = enc_j + enc_i.reshape(1, 1, 1, 1, i, cfg.width)
        tokens_s = (self.proj_struct(data) + pos_s) * maskf
        tokens_s = tokens_s.permute(0, 1, 2, 4, 3, 5)   # (b, n, vp, i, mc, w)
        mask_s = mask.permute(0, 1, 2, 4, 3)
        zs, _empty_s = self.struct_branch(tokens_s, mask_s)  # (b, n, vp, i, w)

        blended = blend_cross_embeddings(zt, zs)        # (b, i, n, vp, w)
        blend_mask = mask.any(dim=3).permute(0, 3, 1, 2)  # (b, i, n, vp)

        tokens_v = self.proj_view(blended) + enc_v.reshape(1, 1, 1, vp, cfg.view_width)
        tokens_v = tokens_v * blend_mask.unsqueeze(-1)
        zv, empty_v = self.view_branch(tokens_v, blend_mask)  # (b, i, n, vw)

        reconstructed_raw = ~empty_v                     # (b, i, n)
        pred_full = self.head(zv) * reconstructed_raw.unsqueeze(-1)
        pred_full = pred_full.permute(0, 2, 1, 3)        # (b, n, i, 3)

        x = pred_full.transpose(-1, -2)                  # (b, n, 3, i)
        x = self.convert2(self.convert1(x))
        pred = x.transpose(-1, -2)                       # (b, n, out, 3)

        raw_by_frame = reconstructed_raw.permute(0, 2, 1)  # (b, n, i)
        mapping = torch.as_tensor(cfg.out_mapping, dtype=torch.long)
        reconstructed = raw_by_frame[..., mapping]       # (b, n, out)
        pred = pred * reconstructed.unsqueeze(-1)
        return pred, reconstructed, raw_by_frame

    def predict(self, cloud: JointCloud) -> "SkeletonSequence":
        """Single-cloud inference returning a skeleton sequence."""
        data = torch.as_tensor(cloud.data, dtype=torch.float64).unsqueeze(0)
        mask = torch.as_tensor(cloud.mask, dtype=torch.bool).unsqueeze(0)
        with torch.no_grad():
            pred, rec, _raw = self.forward(data, mask)
        return SkeletonSequence(
            person_id=cloud.person_id,
            frames=pred[0].numpy(),
            reconstructed=rec[0].numpy(),
            joint_format=self.cfg.out_format,
            start_frame=cloud.start_frame,
        )


def blend_cross_embeddings(zt: torch.Tensor, zs: torch.Tensor) -> torch.Tensor:
    """Element-wise sum of the two branch outputs on the (i, n, vp) grid.

    ``zt`` is (b, i, vp, n, w) from the trajectory branch, ``zs`` is
    (b, n, vp, i, w) from the structure branch.
    """
    return zt.permute(0, 1, 3, 2, 4) + zs.permute(0, 3, 1, 2, 4)


@dataclass
class SkeletonSequence:
    """Per-person predicted joint trajectories plus validity flags."""

    person_id: int
    frames: np.ndarray
    reconstructed: np.ndarray
    joint_format: str = "shelf15"
    start_frame: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be (N, J, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("skeleton coordinates must be finite")
        if self.reconstructed is None:
            self.reconstructed = np.ones(self.frames.shape[:2], dtype=bool)
        self.reconstructed = np.asarray(self.reconstructed, dtype=bool)
        if self.reconstructed.shape != self.frames.shape[:2]:
            raise ValueError("reconstructed flags must be (N, J)")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class MaskingConfig:
    """Training-time random candidate removal."""

    ratio_range: tuple[float, float] = (0.0, 0.5)
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.ratio_range
        if not (0.0 <= lo <= hi < 1.0):
            raise ValueError("ratio_range must satisfy 0 <= lo <= hi < 1")


def apply_random_masking(
    cloud: JointCloud,
    cfg: MaskingConfig,
    rng: np.random.Generator | int | None = None,
) -> JointCloud:
    """Zero a random fraction of real candidates.

    The masked fraction is drawn uniformly from ``ratio_range``; one
    randomly chosen candidate per (frame, joint type) group is always
    retained where any existed, so no joint loses its last evidence.
    """
    rng = np.random.default_rng(rng)
    ratio = float(rng.uniform(*cfg.ratio_range))
    mask = cloud.mask.copy()
    data = cloud.data.copy()
    true_idx = np.argwhere(mask)
    n_true = true_idx.shape[0]
    if not cfg.enabled or ratio <= 0.0 or n_true == 0:
        return replace_cloud(cloud, data, mask)
    groups: dict[tuple[int, int], list[int]] = {}
    for row, (n, _vp, _mc, i) in enumerate(true_idx):
        groups.setdefault((int(n), int(i)), []).append(row)
    protected = set()
    for key in sorted(groups):
        rows = groups[key]
        protected.add(rows[int(rng.integers(len(rows)))])
    droppable = [row for row in range(n_true) if row not in protected]
    k = min(int(math.floor(ratio * n_true)), len(droppable))
    if k > 0:
        chosen = rng.choice(len(droppable), size=k, replace=False)
        for sel in chosen:
            n, vp, mc, i = true_idx[droppable[int(sel)]]
            mask[n, vp, mc, i] = False
            data[n, vp, mc, i] = 0.0
    return replace_cloud(cloud, data, mask)


def replace_cloud(cloud: JointCloud, data: np.ndarray, mask: np.ndarray,
                  center_track: np.ndarray | None = None) -> JointCloud:
    return JointCloud(
        data=data,
        mask=mask,
        person_id=cloud.person_id,
        center_track=cloud.center_track if center_track is None else center_track,
        joint_format=cloud.joint_format,
        start_frame=cloud.start_frame,
    )


def cloud_center(cloud: JointCloud) -> np.ndarray:
    """First-frame reference center for motion normalization.

    Uses the tracked cluster center when present, else the masked mean of
    the first frame's mid-hip candidates, else of all first-frame
    candidates, else the origin.
    """
    c = cloud.center_track[0]
    if np.all(np.isfinite(c)):
        return c.copy()
    fmt = get_format(cloud.joint_format)
    if fmt.midhip_index < cloud.data.shape[3]:
        hip_mask = cloud.mask[0, :, :, fmt.midhip_index]
        if hip_mask.any():
            return cloud.data[0, :, :, fmt.midhip_index][hip_mask].mean(axis=0)
    if cloud.mask[0].any():
        return cloud.data[0][cloud.mask[0]].mean(axis=0)
    return np.zeros(3)


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment_orientation(
    cloud: JointCloud,
    gt_frames: np.ndarray,
    rng: np.random.Generator | int | None = None,
    angle: float | None = None,
) -> tuple[JointCloud, np.ndarray]:
    """Center on the first-frame cluster center, spin about the vertical.

    Applies the same rigid motion to the candidate data (real slots
    only) and the supervision target, so pairwise distances and vertical
    coordinates are preserved.
    """
    rng = np.random.default_rng(rng)
    if angle is None:
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
    center = cloud_center(cloud)
    R = _rot_y(angle)
    data = np.where(cloud.mask[..., None], (cloud.data - center) @ R.T, 0.0)
    track = (cloud.center_track - center) @ R.T
    gt = (np.asarray(gt_frames, dtype=np.float64) - center) @ R.T
    return replace_cloud(cloud, data, cloud.mask.copy(), center_track=track), gt


def center_cloud(cloud: JointCloud) -> tuple[JointCloud, np.ndarray]:
    """Subtract the first-frame center; returns the shifted cloud and center."""
    center = cloud_center(cloud)
    data = np.where(cloud.mask[..., None], cloud.data - center, 0.0)
    track = cloud.center_track - center
    return replace_cloud(cloud, data, cloud.mask.copy(), center_track=track), center


def window_offsets(length: int, window: int, stride: int) -> list[int]:
    """Start offsets of sliding windows; the last window clamps to the end."""
    if length < window:
        raise StreamTooShort(f"stream of {length} frames < window {window}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    offsets = list(range(0, length - window + 1, stride))
    if offsets[-1] != length - window:
        offsets.append(length - window)
    return offsets


def sliding_window_infer(
    frames: list[list[DetectionSet]],
    cams: list[CameraView],
    model: CandidateSelectionTransformer,
    stride: int = 5,
    thresholds: ThresholdTable | None = None,
    seed: int | None = 0,
) -> tuple[list[SkeletonSequence], dict]:
    """Reconstruct every tracked person over a full detection stream.

    Windows of the model's configured length are built at the given
    stride (final window clamped to the stream end), each person cloud is
    centered, predicted and shifted back, and overlapping frame
    predictions are averaged per joint.  Window-level person tracks are
    linked across windows by nearest first-frame centers.
    """
    window = model.cfg.n_frames
    offsets = window_offsets(len(frames), window, stride)
    cap = model.cfg.n_candidates

    track_centers: list[np.ndarray] = []
    sums: list[np.ndarray] = []
    counts: list[np.ndarray] = []
    n_total = len(frames)
    n_out = model.cfg.joint_out
    stats = {"windows": len(offsets), "window_stats": []}

    for offset in offsets:
        clouds, wstats = build_window_clouds(
            frames[offset:offset + window], cams, thresholds=thresholds,
            cap=cap, seed=seed, start_frame=offset,
        )
        stats["window_stats"].append(wstats)
        for cloud in clouds:
            centered, center = center_cloud(cloud)
            seq = model.predict(centered)
            restored = seq.frames + center

            anchor = cloud_center(cloud)
            best, best_d = -1, np.inf
            for t, tc in enumerate(track_centers):
                d = float(np.linalg.norm(tc - anchor))
                if d < best_d:
                    best, best_d = t, d
            if best < 0 or best_d > 1.0:
                track_centers.append(anchor)
                sums.append(np.zeros((n_total, n_out, 3)))
                counts.append(np.zeros((n_total, n_out), dtype=int))
                best = len(track_centers) - 1
            else:
                track_centers[best] = anchor
            sl = slice(offset, offset + window)
            sums[best][sl] += restored * seq.reconstructed[..., None]
            counts[best][sl] += seq.reconstructed.astype(int)

    sequences = []
    for pid, (total, cnt) in enumerate(zip(sums, counts)):
        rec = cnt > 0
        safe = np.maximum(cnt, 1)
        sequences.append(SkeletonSequence(
            person_id=pid,
            frames=total / safe[..., None],
            reconstructed=rec,
            joint_format=model.cfg.out_format,
            start_frame=0,
        ))
    return sequences, stats


# --- skeleton sequence JSON ------------------------------------------------

def save_skeletons(seqs: list[SkeletonSequence], path) -> None:
    payload = {
        "format": seqs[0].joint_format if seqs else "shelf15",
        "persons": [
            {
                "id": s.person_id,
                "start_frame": s.start_frame,
                "frames": [[list(map(float, j)) for j in f] for f in s.frames],
                "reconstructed": [[bool(v) for v in f] for f in s.reconstructed],
            }
            for s in seqs
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_skeletons(path) -> list[SkeletonSequence]:
    with open(path) as fh:
        raw = json.load(fh)
    seqs = []
    for p in raw["persons"]:
        frames = np.asarray(p["frames"], dtype=np.float64)
        rec = p.get("reconstructed")
        seqs.append(SkeletonSequence(
            person_id=int(p["id"]),
            frames=frames,
            reconstructed=None if rec is None else np.asarray(rec, dtype=bool),
            joint_format=raw.get("format", "shelf15"),
            start_frame=int(p.get("start_frame", 0)),
        ))
    return seqs


# --- checkpoint container --------------------------------------------------

_CKPT_MAGIC = b"JCMC"
_CKPT_VERSION = 1


def save_checkpoint(path, model: CandidateSelectionTransformer,
                    seed: int | None = None, extra: dict | None = None) -> None:
    """Binary container: JSON manifest plus named float64 LE parameter blobs."""
    state = model.state_dict()
    names = list(state.keys())
    manifest = {
        "version": _CKPT_VERSION,
        "config": asdict(model.cfg),
        "seed": seed,
        "extra": extra or {},
        "params": [
            {"name": k, "shape": list(state[k].shape)} for k in names
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(np.array([_CKPT_VERSION, len(blob)], dtype="<u8").tobytes())
        fh.write(blob)
        for k in names:
            fh.write(state[k].detach().numpy().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[CandidateSelectionTransformer, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, blob_len = np.frombuffer(fh.read(16), dtype="<u8")
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        manifest = json.loads(fh.read(int(blob_len)).decode("utf-8"))
        cfg = ModelConfig.from_dict(manifest["config"])
        model = CandidateSelectionTransformer(cfg)
        state = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter blob")
            state[entry["name"]] = torch.from_numpy(
                np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            )
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameter mismatch: {exc}") from exc
    return model, manifest
