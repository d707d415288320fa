import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(cam_id, position, target=(0.0, 1.0, 0.0), focal=1100.0,
                size=(1920, 1080)):
    """A pinhole camera at `position` aimed at `target` (test helper)."""
    from jcmocap.geometry import CameraView

    C = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - C
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(fwd, up)) > 0.95:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    K = np.array([
        [focal, 0.0, size[0] / 2],
        [0.0, focal, size[1] / 2],
        [0.0, 0.0, 1.0],
    ])
    R = np.stack([right, down, fwd])
    P = K @ np.hstack([R, (-R @ C)[:, None]])
    return CameraView(id=cam_id, projection=P, image_size=size)
