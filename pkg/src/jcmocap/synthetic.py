"""Dataset-free ground truth: articulated multi-person scenes.

Generates smooth multi-person motion with exactly constant bone lengths
(all animation is pure rotation of fixed bone offsets), a circular camera
rig looking at the scene, and clean detections that are exact projections
of the ground truth.  A corruption pass reproduces the detector failure
taxonomy: pixel noise, left/right joint-type swaps, target-identity swaps
between nearby people, and dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraView, project_points
from .jointcloud import DetectionSet
from .skeleton import get_format


# Body25 kinematic tree: joint -> (parent, rest offset in body frame).
# x = subject's left, y = up, z = facing direction; meters.
_BODY25_TREE = {
    8: (None, (0.0, 0.0, 0.0)),        # MidHip (root)
    1: (8, (0.0, 0.50, 0.0)),          # Neck
    0: (1, (0.0, 0.15, 0.08)),         # Nose
    15: (0, (-0.035, 0.04, 0.01)),     # REye
    16: (0, (0.035, 0.04, 0.01)),      # LEye
    17: (15, (-0.05, -0.01, -0.07)),   # REar
    18: (16, (0.05, -0.01, -0.07)),    # LEar
    2: (1, (-0.18, -0.03, 0.0)),       # RShoulder
    3: (2, (0.0, -0.28, 0.0)),         # RElbow
    4: (3, (0.0, -0.26, 0.0)),         # RWrist
    5: (1, (0.18, -0.03, 0.0)),        # LShoulder
    6: (5, (0.0, -0.28, 0.0)),         # LElbow
    7: (6, (0.0, -0.26, 0.0)),         # LWrist
    9: (8, (-0.09, -0.02, 0.0)),       # RHip
    10: (9, (0.0, -0.38, 0.0)),        # RKnee
    11: (10, (0.0, -0.40, 0.0)),       # RAnkle
    12: (8, (0.09, -0.02, 0.0)),       # LHip
    13: (12, (0.0, -0.38, 0.0)),       # LKnee
    14: (13, (0.0, -0.40, 0.0)),       # LAnkle
    22: (11, (0.0, -0.05, 0.12)),      # RBigToe
    23: (11, (-0.04, -0.05, 0.10)),    # RSmallToe
    24: (11, (0.0, -0.05, -0.05)),     # RHeel
    19: (14, (0.0, -0.05, 0.12)),      # LBigToe
    20: (14, (0.04, -0.05, 0.10)),     # LSmallToe
    21: (14, (0.0, -0.05, -0.05)),     # LHeel
}

_HIP_HEIGHT = 0.93


@dataclass(frozen=True)
class CorruptionConfig:
    """Detector-failure simulation parameters (per joint, per view)."""

    pixel_noise_std: float = 0.0
    id_swap_prob: float = 0.0
    type_swap_prob: float = 0.0
    dropout_prob: float = 0.0

    def __post_init__(self):
        for name in ("id_swap_prob", "type_swap_prob", "dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.pixel_noise_std < 0:
            raise ValueError("pixel_noise_std must be nonnegative")


@dataclass(frozen=True)
class SceneConfig:
    persons: int = 2
    views: int = 3
    frames: int = 40
    joint_format: str = "body25"
    bone_scale: float = 1.0
    motion_amplitude: float = 0.25
    motion_period: float = 24.0
    drift_speed: float = 0.004
    person_spacing: float = 1.8
    rig_radius: float = 3.5
    rig_height: float = 1.6
    focal_px: float = 1150.0
    image_size: tuple[int, int] = (1920, 1080)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.persons < 1 or self.views < 1 or self.frames < 1:
            raise ValueError("persons, views and frames must all be >= 1")


@dataclass
class CorruptionStats:
    """Bernoulli draw/event counts from one corruption pass."""

    type_swap_draws: int = 0
    type_swap_events: int = 0
    id_swap_draws: int = 0
    id_swap_events: int = 0
    dropout_draws: int = 0
    dropout_events: int = 0


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _skeleton_pose(root: np.ndarray, yaw: float, joint_rots: dict[int, np.ndarray],
                   scale: float) -> np.ndarray:
    """Forward kinematics over the Body25 tree.

    ``joint_rots`` maps a joint index to the rotation applied to its
    descendants; bone lengths are exactly preserved because offsets are
    only ever rotated.
    """
    pos = np.zeros((25, 3))
    acc = {8: _rot_y(yaw) @ joint_rots.get(8, np.eye(3))}
    pos[8] = root
    order = [j for j in _BODY25_TREE if j != 8]
    # parents come before children in the table; iterate until resolved
    pending = list(order)
    while pending:
        still = []
        for j in pending:
            parent, offset = _BODY25_TREE[j]
            if parent in acc:
                pos[j] = pos[parent] + acc[parent] @ (scale * np.asarray(offset))
                acc[j] = acc[parent] @ joint_rots.get(j, np.eye(3))
            else:
                still.append(j)
        pending = still
    return pos


def generate_ground_truth(cfg: SceneConfig) -> np.ndarray:
    """Per-person joint trajectories, shape (persons, frames, 25, 3)."""
    rng = np.random.default_rng(cfg.seed)
    phases = rng.uniform(0, 2 * np.pi, size=cfg.persons)
    drift_dirs = rng.uniform(-1, 1, size=(cfg.persons, 2))
    gt = np.zeros((cfg.persons, cfg.frames, 25, 3))
    omega = 2 * np.pi / cfg.motion_period
    amp = cfg.motion_amplitude
    for m in range(cfg.persons):
        base_x = (m - (cfg.persons - 1) / 2) * cfg.person_spacing
        for n in range(cfg.frames):
            t = float(n)
            root = np.array([
                base_x + amp * np.sin(omega * t + phases[m])
                + cfg.drift_speed * t * drift_dirs[m, 0],
                _HIP_HEIGHT * cfg.bone_scale
                + 0.03 * amp * np.sin(2 * omega * t + phases[m]),
                0.4 * amp * np.cos(omega * t + phases[m])
                + cfg.drift_speed * t * drift_dirs[m, 1],
            ])
            yaw = 1.2 * amp * np.sin(0.5 * omega * t + phases[m])
            swing = 0.9 * amp
            leg = swing * np.sin(omega * t + phases[m])
            arm = 1.2 * swing * np.sin(omega * t + phases[m] + np.pi)
            joint_rots = {
                9: _rot_x(leg), 12: _rot_x(-leg),
                10: _rot_x(0.4 * swing * (1 + np.sin(omega * t + phases[m]))),
                13: _rot_x(0.4 * swing * (1 - np.sin(omega * t + phases[m]))),
                2: _rot_x(arm), 5: _rot_x(-arm),
                3: _rot_x(-0.3 * swing), 6: _rot_x(-0.3 * swing),
            }
            gt[m, n] = _skeleton_pose(root, yaw, joint_rots, cfg.bone_scale)
    return gt


def build_camera_rig(cfg: SceneConfig) -> list[CameraView]:
    """Cameras on a circle at rig height, all aimed at the scene center."""
    target = np.array([0.0, 1.0, 0.0])
    w, h = cfg.image_size
    K = np.array([
        [cfg.focal_px, 0.0, w / 2],
        [0.0, cfg.focal_px, h / 2],
        [0.0, 0.0, 1.0],
    ])
    cams = []
    for k in range(cfg.views):
        alpha = 2 * np.pi * k / cfg.views + 0.15
        # stagger heights so rays from non-corresponding people skew hard,
        # scattering cross-identity triangulations away from the subjects
        height = cfg.rig_height + 0.6 * ((k % 3) - 1)
        C = np.array([
            cfg.rig_radius * np.cos(alpha),
            height,
            cfg.rig_radius * np.sin(alpha),
        ])
        fwd = target - C
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        P = K @ np.hstack([R, (-R @ C)[:, None]])
        cams.append(CameraView(id=k + 1, projection=P, image_size=(w, h)))
    return cams


def detect(gt: np.ndarray, cams: list[CameraView],
           joint_format: str = "body25") -> list[DetectionSet]:
    """Exact projections of the ground truth, one DetectionSet per frame/view."""
    n_persons, n_frames = gt.shape[0], gt.shape[1]
    dets = []
    for n in range(n_frames):
        for cam in cams:
            persons = []
            for m in range(n_persons):
                uv = project_points(gt[m, n], cam.projection)
                arr = np.concatenate([uv, np.ones((uv.shape[0], 1))], axis=1)
                persons.append(arr)
            dets.append(DetectionSet(
                frame=n, view=cam.id, persons=persons, joint_format=joint_format,
            ))
    return dets


def generate_scene(cfg: SceneConfig):
    """Ground truth, camera rig and clean detections for one scene.

    Returns (gt (persons, frames, 25, 3), cameras, detections).  The
    output is bit-deterministic given the config.
    """
    gt = generate_ground_truth(cfg)
    cams = build_camera_rig(cfg)
    dets = detect(gt, cams, cfg.joint_format)
    return gt, cams, dets


def corrupt_detections(
    dets: list[DetectionSet],
    cfg: CorruptionConfig,
    seed: int | None = 0,
) -> tuple[list[DetectionSet], CorruptionStats]:
    """Apply detector-failure corruption to clean detections.

    Per view and joint, independently: Gaussian pixel noise truncated at
    six sigma; with ``type_swap_prob`` (drawn once per left/right joint
    pair per person) the pair's detections are exchanged; with
    ``id_swap_prob`` a joint is exchanged with the same joint of the
    person whose projection is nearest in that view; with
    ``dropout_prob`` the detection is removed.  Returns the corrupted
    sets plus draw/event counts.
    """
    rng = np.random.default_rng(seed)
    stats = CorruptionStats()
    out = []
    for det in sorted(dets, key=lambda d: (d.frame, d.view)):
        fmt = get_format(det.joint_format)
        lr = fmt.lr_counterpart
        persons = [p.copy() for p in det.persons]
        n_joints = fmt.n_joints

        if cfg.pixel_noise_std > 0:
            for p in persons:
                noise = rng.normal(0.0, cfg.pixel_noise_std, size=(n_joints, 2))
                np.clip(noise, -6 * cfg.pixel_noise_std, 6 * cfg.pixel_noise_std,
                        out=noise)
                present = np.all(np.isfinite(p[:, :2]), axis=1)
                p[present, :2] += noise[present]

        if cfg.type_swap_prob > 0:
            pairs = [(i, lr[i]) for i in range(n_joints) if lr[i] > i]
            for p in persons:
                for a, b in pairs:
                    stats.type_swap_draws += 1
                    if rng.random() < cfg.type_swap_prob:
                        p[[a, b]] = p[[b, a]]
                        stats.type_swap_events += 1

        if cfg.id_swap_prob > 0 and len(persons) >= 2:
            for joint in range(n_joints):
                for m, p in enumerate(persons):
                    if not np.all(np.isfinite(p[joint, :2])):
                        continue
                    stats.id_swap_draws += 1
                    if rng.random() >= cfg.id_swap_prob:
                        continue
                    best, best_d = -1, np.inf
                    for m2, q in enumerate(persons):
                        if m2 == m or not np.all(np.isfinite(q[joint, :2])):
                            continue
                        d = np.hypot(*(p[joint, :2] - q[joint, :2]))
                        if d < best_d:
                            best, best_d = m2, d
                    if best >= 0:
                        tmp = p[joint].copy()
                        p[joint] = persons[best][joint]
                        persons[best][joint] = tmp
                        stats.id_swap_events += 1

        if cfg.dropout_prob > 0:
            for p in persons:
                for joint in range(n_joints):
                    if not np.all(np.isfinite(p[joint, :2])):
                        continue
                    stats.dropout_draws += 1
                    if rng.random() < cfg.dropout_prob:
                        p[joint] = np.nan
                        stats.dropout_events += 1

        out.append(DetectionSet(
            frame=det.frame, view=det.view, persons=persons,
            joint_format=det.joint_format,
        ))
    return out, stats
