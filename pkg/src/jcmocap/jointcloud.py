"""Redundant 3D candidate construction from multi-view 2D detections.

Every same-typed 2D joint is triangulated between every camera pair,
regardless of its provisional per-view person index.  The resulting
candidate set is clustered on mid-hip position to split it per person,
filtered with per-joint distance thresholds, and arranged into the padded
5-D tensor (frames x view-pairs x candidates x joint-types x 3) that the
selector network consumes.

All construction is deterministic given the input detections and the run
seed; frames are processed independently and merged in frame order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraView
from .skeleton import SkeletonFormat, get_format, asset_path


class TooFewViews(ValueError):
    """Fewer than two camera views available."""


class InsufficientCandidates(ValueError):
    """Fewer candidates than requested clusters (or zero visible persons)."""


@dataclass(frozen=True)
class ViewPairIndex:
    """One unordered camera pair (first < second) with its linear index."""

    first: int
    second: int
    index: int

    def __post_init__(self):
        if self.first == self.second:
            raise ValueError("view pair must use two distinct views")


@dataclass(frozen=True)
class CandidateIndex:
    """One (person-in-first-view, person-in-second-view) combination."""

    first: int
    second: int
    index: int


@dataclass
class DetectionSet:
    """Per-frame, per-view 2D joints.

    ``persons`` holds one (I, 3) float array per detected person with
    columns (u, v, confidence); missing joints are NaN rows.
    """

    frame: int
    view: int
    persons: list[np.ndarray]
    joint_format: str = "body25"

    def __post_init__(self):
        fmt = get_format(self.joint_format)
        cleaned = []
        for p in self.persons:
            arr = np.asarray(p, dtype=np.float64)
            if arr.shape != (fmt.n_joints, 3):
                raise ValueError(
                    f"person array must be ({fmt.n_joints}, 3), got {arr.shape}"
                )
            cleaned.append(arr)
        self.persons = cleaned

    @property
    def person_count(self) -> int:
        return len(self.persons)

    def joint_present(self, person: int, joint: int) -> bool:
        return bool(np.all(np.isfinite(self.persons[person][joint, :2])))


@dataclass(frozen=True)
class ThresholdTable:
    """Per-joint-type distance thresholds in meters."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or np.any(v <= 0):
            raise ValueError("thresholds must be a 1-D array of positive meters")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def default(cls, joint_format: str = "body25") -> "ThresholdTable":
        return cls.from_json(
            asset_path(f"thresholds_{joint_format}.json"), joint_format
        )

    @classmethod
    def from_json(cls, path: str | Path, joint_format: str = "body25") -> "ThresholdTable":
        fmt = get_format(joint_format)
        with open(path) as fh:
            table = json.load(fh)
        return cls(np.array([table[name] for name in fmt.joint_names]))


@dataclass(frozen=True)
class ClusterResult:
    """K-means output: one center per person plus candidate assignments."""

    centers: np.ndarray
    assignments: np.ndarray
    person_count: int
    inertia_trace: np.ndarray

    def __post_init__(self):
        if self.centers.shape[0] != self.person_count:
            raise ValueError("center count must equal requested cluster count")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("cluster centers must be finite")


@dataclass
class JointCloud:
    """Padded candidate tensor for one person over one frame window.

    ``data`` has shape (N, n_pairs, n_candidates, n_joints, 3) in meters;
    ``mask`` marks real candidates.  Masked slots are exactly zero.
    ``center_track`` carries the per-frame cluster center (NaN rows for
    frames where the person was not observed).
    """

    data: np.ndarray
    mask: np.ndarray
    person_id: int = 0
    center_track: np.ndarray | None = None
    joint_format: str = "body25"
    start_frame: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 5 or self.data.shape[-1] != 3:
            raise ValueError(f"data must be (N, VP, MC, I, 3), got {self.data.shape}")
        if self.mask.shape != self.data.shape[:4]:
            raise ValueError("mask shape must match data shape minus the last axis")
        if np.any(self.data[~self.mask] != 0.0):
            raise ValueError("masked-out entries must be exactly zero")
        if self.center_track is None:
            self.center_track = np.full((self.data.shape[0], 3), np.nan)
        else:
            self.center_track = np.asarray(self.center_track, dtype=np.float64)
            if self.center_track.shape != (self.data.shape[0], 3):
                raise ValueError("center_track must be (N, 3)")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class CandidateRecord:
    """One triangulated candidate tagged with its provenance indices."""

    joint_type: int
    pair: ViewPairIndex
    ids: CandidateIndex
    position: np.ndarray


def enumerate_view_pairs(n_views: int) -> list[ViewPairIndex]:
    """All unordered view pairs of views 1..V in lexicographic order."""
    if n_views < 2:
        raise TooFewViews(f"need at least 2 views, got {n_views}")
    pairs = []
    k = 0
    for a in range(1, n_views + 1):
        for b in range(a + 1, n_views + 1):
            pairs.append(ViewPairIndex(a, b, k))
            k += 1
    return pairs


def enumerate_id_pairs(m1: int, m2: int) -> list[CandidateIndex]:
    """Cartesian product of person indices in the two views, lexicographic."""
    if m1 < 0 or m2 < 0:
        raise ValueError("person counts must be nonnegative")
    return [
        CandidateIndex(a, b, a * m2 + b)
        for a in range(m1)
        for b in range(m2)
    ]


def _triangulate_rows(uv1: np.ndarray, P1: np.ndarray,
                      uv2: np.ndarray, P2: np.ndarray):
    """Batched DLT for one view pair.

    Returns (positions (n, 3), valid (n,)) where invalid rows are
    degenerate systems (coincident smallest singular values or points at
    infinity).
    """
    n = uv1.shape[0]
    A = np.empty((n, 4, 4))
    A[:, 0] = uv1[:, 0, None] * P1[2] - P1[0]
    A[:, 1] = uv1[:, 1, None] * P1[2] - P1[1]
    A[:, 2] = uv2[:, 0, None] * P2[2] - P2[0]
    A[:, 3] = uv2[:, 1, None] * P2[2] - P2[1]
    _, s, Vt = np.linalg.svd(A)
    X = Vt[:, -1, :]
    norms = np.linalg.norm(X, axis=1)
    valid = (s[:, 2] - s[:, 3] > 1e-9 * s[:, 0]) & (np.abs(X[:, 3]) >= 1e-12 * norms)
    pos = np.zeros((n, 3))
    w = np.where(valid, X[:, 3], 1.0)
    pos[valid] = (X[:, :3] / w[:, None])[valid]
    return pos, valid


def triangulate_all(
    dets: list[DetectionSet],
    cams: list[CameraView],
) -> tuple[list[CandidateRecord], int]:
    """Triangulate every same-typed joint across every view pair and ID pair.

    ``dets`` holds one DetectionSet per view for a single frame.  Returns
    candidate records in enumeration order (view pair, joint type, ID
    combination) plus the number of degenerate triangulations dropped.
    With fewer than two views the result is empty.
    """
    by_view = {d.view: d for d in dets}
    cams_by_id = {c.id: c for c in cams}
    view_ids = sorted(by_view)
    if len(view_ids) < 2:
        return [], 0
    fmt = get_format(dets[0].joint_format)
    n_joints = fmt.n_joints

    pairs = enumerate_view_pairs(len(view_ids))
    records: list[CandidateRecord] = []
    dropped = 0
    for pair in pairs:
        id1, id2 = view_ids[pair.first - 1], view_ids[pair.second - 1]
        d1, d2 = by_view[id1], by_view[id2]
        P1, P2 = cams_by_id[id1].projection, cams_by_id[id2].projection
        id_pairs = enumerate_id_pairs(d1.person_count, d2.person_count)
        for joint in range(n_joints):
            rows = []
            tags = []
            for combo in id_pairs:
                j1 = d1.persons[combo.first][joint]
                j2 = d2.persons[combo.second][joint]
                if np.all(np.isfinite(j1[:2])) and np.all(np.isfinite(j2[:2])):
                    rows.append((j1[:2], j2[:2]))
                    tags.append(combo)
            if not rows:
                continue
            uv1 = np.array([r[0] for r in rows])
            uv2 = np.array([r[1] for r in rows])
            pos, valid = _triangulate_rows(uv1, P1, uv2, P2)
            for k, combo in enumerate(tags):
                if valid[k]:
                    records.append(CandidateRecord(joint, pair, combo, pos[k]))
                else:
                    dropped += 1
    return records, dropped


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator):
    n = points.shape[0]
    centers = np.empty((k, 3))
    centers[0] = points[rng.integers(n)]
    for i in range(1, k):
        d2 = np.min(
            np.sum((points[:, None, :] - centers[None, :i, :]) ** 2, axis=2),
            axis=1,
        )
        total = d2.sum()
        if total <= 0:
            centers[i] = points[rng.integers(n)]
        else:
            centers[i] = points[rng.choice(n, p=d2 / total)]
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray):
    n_clusters = centers.shape[0]
    trace = []
    labels = np.zeros(points.shape[0], dtype=np.intp)
    for _ in range(100):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(points.shape[0]), labels].sum()))
        new_centers = centers.copy()
        for m in range(n_clusters):
            sel = labels == m
            if np.any(sel):
                new_centers[m] = points[sel].mean(axis=0)
            else:
                # reseed an empty cluster on the globally farthest point
                far = np.argmax(d2[np.arange(points.shape[0]), labels])
                new_centers[m] = points[far]
        motion = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if motion < 1e-6:
            break
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    trace.append(float(d2[np.arange(points.shape[0]), labels].sum()))
    return centers, labels, np.array(trace)


def cluster_midhips(
    candidates: np.ndarray,
    n_persons: int,
    rng: np.random.Generator | int | None = None,
    n_init: int = 10,
) -> ClusterResult:
    """Lloyd k-means with k-means++ seeding over mid-hip candidates.

    Runs ``n_init`` seeded restarts and keeps the lowest-inertia result
    (deterministic given the rng).  Each run converges when the largest
    centroid motion drops below 1e-6 m, or after 100 iterations.  Raises
    InsufficientCandidates when fewer candidates than clusters are
    supplied (or n_persons < 1).
    """
    points = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if n_persons < 1:
        raise InsufficientCandidates(
            f"cannot cluster into {n_persons} groups"
        )
    if points.shape[0] < n_persons:
        raise InsufficientCandidates(
            f"{points.shape[0]} candidates for {n_persons} clusters"
        )
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(max(n_init, 1)):
        centers0 = _kmeans_pp_init(points, n_persons, rng)
        centers, labels, trace = _lloyd(points, centers0)
        if best is None or trace[-1] < best[2][-1]:
            best = (centers, labels, trace)
    centers, labels, trace = best
    return ClusterResult(
        centers=centers,
        assignments=labels,
        person_count=n_persons,
        inertia_trace=trace,
    )


def threshold_assign(
    records: list[CandidateRecord],
    centers: np.ndarray,
    thresholds: ThresholdTable,
) -> list[list[CandidateRecord]]:
    """Assign candidates to every person whose center is within threshold.

    A candidate of joint type i goes to person m iff its distance to
    center m is strictly below the type-i threshold; candidates near two
    people are duplicated into both subsets, the rest are discarded.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.size == 0:
        raise ValueError("at least one cluster center required")
    subsets: list[list[CandidateRecord]] = [[] for _ in range(centers.shape[0])]
    for rec in records:
        th = thresholds.values[rec.joint_type]
        dists = np.linalg.norm(centers - rec.position, axis=1)
        for m in np.nonzero(dists < th)[0]:
            subsets[m].append(rec)
    return subsets


def arrange_tensor(
    frame_records: list[list[CandidateRecord]],
    centers: np.ndarray,
    n_view_pairs: int,
    n_joint_types: int,
    cap: int = 4,
    person_id: int = 0,
    joint_format: str = "body25",
    start_frame: int = 0,
) -> JointCloud:
    """Arrange one person's per-frame candidate subsets into the padded tensor.

    Per (frame, view pair, joint type) slot, the ``cap`` candidates
    nearest the person's center are kept (ties broken by enumeration
    order) and stored in enumeration order; empty slots stay zero with a
    false mask.
    """
    n_frames = len(frame_records)
    data = np.zeros((n_frames, n_view_pairs, cap, n_joint_types, 3))
    mask = np.zeros((n_frames, n_view_pairs, cap, n_joint_types), dtype=bool)
    centers = np.asarray(centers, dtype=np.float64).reshape(n_frames, 3)
    for n, records in enumerate(frame_records):
        slots: dict[tuple[int, int], list[tuple[int, CandidateRecord]]] = {}
        for order, rec in enumerate(records):
            slots.setdefault((rec.pair.index, rec.joint_type), []).append((order, rec))
        for (vp, joint), entries in slots.items():
            if len(entries) > cap:
                center = centers[n]
                dist = [float(np.linalg.norm(rec.position - center)) for _, rec in entries]
                ranked = sorted(range(len(entries)), key=lambda k: (dist[k], entries[k][0]))
                entries = sorted((entries[k] for k in ranked[:cap]), key=lambda e: e[0])
            for slot, (_, rec) in enumerate(entries):
                data[n, vp, slot, joint] = rec.position
                mask[n, vp, slot, joint] = True
    return JointCloud(
        data=data,
        mask=mask,
        person_id=person_id,
        center_track=centers,
        joint_format=joint_format,
        start_frame=start_frame,
    )


def refine_centers(centers: np.ndarray, midhips: np.ndarray,
                   radius: float, sweeps: int = 5) -> np.ndarray:
    """Snap cluster centers onto the trimmed mean of nearby mid-hips.

    Cross-identity ghost candidates drag plain k-means centers off the
    true bodies; re-averaging only the candidates within the mid-hip
    assignment radius (the same threshold the construction applies to
    mid-hip candidates) removes that drag.  No-ops on centers with no
    candidate in range.
    """
    refined = np.asarray(centers, dtype=np.float64).copy()
    midhips = np.asarray(midhips, dtype=np.float64).reshape(-1, 3)
    for _ in range(sweeps):
        moved = False
        for m in range(refined.shape[0]):
            near = midhips[np.linalg.norm(midhips - refined[m], axis=1) < radius]
            if len(near):
                new = near.mean(axis=0)
                if np.linalg.norm(new - refined[m]) > 1e-12:
                    refined[m] = new
                    moved = True
        if not moved:
            break
    return refined


def _match_centers(tracked: np.ndarray, new_centers: np.ndarray):
    """Greedy nearest-neighbor matching of new cluster centers to tracks.

    Returns an array mapping track index -> new center index (-1 when the
    track found no center this frame).
    """
    n_t, n_c = tracked.shape[0], new_centers.shape[0]
    assignment = np.full(n_t, -1, dtype=np.intp)
    if n_c == 0:
        return assignment
    d = np.linalg.norm(tracked[:, None, :] - new_centers[None, :, :], axis=2)
    used_t, used_c = set(), set()
    for _ in range(min(n_t, n_c)):
        best = None
        for it in range(n_t):
            if it in used_t:
                continue
            for ic in range(n_c):
                if ic in used_c:
                    continue
                if best is None or d[it, ic] < d[best]:
                    best = (it, ic)
        it, ic = best
        assignment[it] = ic
        used_t.add(it)
        used_c.add(ic)
    return assignment


def build_window_clouds(
    dets_window: list[list[DetectionSet]],
    cams: list[CameraView],
    thresholds: ThresholdTable | None = None,
    cap: int = 4,
    seed: int | None = 0,
    start_frame: int = 0,
) -> tuple[list[JointCloud], dict]:
    """Run the full construction for one window of frames.

    ``dets_window[n]`` holds the per-view detection sets of frame n.
    Persons are the clusters of the first frame, tracked across the
    window by nearest-neighbor center matching.  Returns one cloud per
    person plus a stats dict (raw candidate counts, degenerate drops,
    per-frame centers, threshold discards, and a track-continuity
    diagnostic).
    """
    if len(cams) < 2:
        raise TooFewViews(f"need at least 2 calibrated views, got {len(cams)}")
    n_frames = len(dets_window)
    if n_frames < 1:
        raise ValueError("empty window")
    fmt = get_format(dets_window[0][0].joint_format)
    if thresholds is None:
        thresholds = ThresholdTable.default(fmt.name)
    n_pairs = len(enumerate_view_pairs(len(cams)))
    rng = np.random.default_rng(seed)

    per_frame_records: list[list[CandidateRecord]] = []
    stats = {
        "frames": n_frames,
        "views": len(cams),
        "view_pairs": n_pairs,
        "raw_candidates_per_joint": [],
        "degenerate_drops": 0,
        "threshold_discards": 0,
        "cluster_centers": [],
        "track_max_jump": 0.0,
        "untracked_centers": 0,
    }
    frame_centers: list[np.ndarray] = []
    for dets in dets_window:
        counts = [d.person_count for d in dets]
        m_n = min(counts) if counts else 0
        if m_n < 1:
            raise InsufficientCandidates(
                "a frame has zero observed persons in at least one view"
            )
        records, dropped = triangulate_all(dets, cams)
        stats["degenerate_drops"] += dropped
        per_joint = np.zeros(fmt.n_joints, dtype=int)
        for rec in records:
            per_joint[rec.joint_type] += 1
        stats["raw_candidates_per_joint"].append(per_joint.tolist())
        midhips = np.array(
            [r.position for r in records if r.joint_type == fmt.midhip_index]
        ).reshape(-1, 3)
        clusters = cluster_midhips(midhips, m_n, rng)
        centers = refine_centers(
            clusters.centers, midhips, thresholds.values[fmt.midhip_index]
        )
        per_frame_records.append(records)
        frame_centers.append(centers)
        stats["cluster_centers"].append(centers.tolist())

    # person identity = first-frame clusters in lexicographic center order
    order0 = np.lexsort(frame_centers[0].T[::-1])
    tracks = frame_centers[0][order0]
    n_persons = tracks.shape[0]
    track_centers = np.full((n_frames, n_persons, 3), np.nan)
    track_centers[0] = tracks
    last_seen = tracks.copy()
    for n in range(1, n_frames):
        assignment = _match_centers(last_seen, frame_centers[n])
        stats["untracked_centers"] += frame_centers[n].shape[0] - int(
            np.sum(assignment >= 0)
        )
        for p in range(n_persons):
            if assignment[p] >= 0:
                c = frame_centers[n][assignment[p]]
                jump = float(np.linalg.norm(c - last_seen[p]))
                stats["track_max_jump"] = max(stats["track_max_jump"], jump)
                track_centers[n, p] = c
                last_seen[p] = c

    clouds = []
    for p in range(n_persons):
        per_person_frames: list[list[CandidateRecord]] = []
        centers = np.empty((n_frames, 3))
        for n in range(n_frames):
            c = track_centers[n, p]
            if np.all(np.isfinite(c)):
                subsets = threshold_assign(
                    per_frame_records[n], c[None, :], thresholds
                )
                kept = subsets[0]
                stats["threshold_discards"] += len(per_frame_records[n]) - len(kept)
                per_person_frames.append(kept)
                centers[n] = c
            else:
                per_person_frames.append([])
                centers[n] = last_seen[p]
        clouds.append(arrange_tensor(
            per_person_frames, centers, n_pairs, fmt.n_joints,
            cap=cap, person_id=p, joint_format=fmt.name, start_frame=start_frame,
        ))
    return clouds, stats


# --- detections JSON Lines I/O -------------------------------------------

def save_detections(dets: list[DetectionSet], path: str | Path) -> None:
    """Write detection sets to JSON Lines, one object per (frame, view)."""
    with open(path, "w") as fh:
        for d in sorted(dets, key=lambda d: (d.frame, d.view)):
            persons = []
            for p in d.persons:
                joints = []
                for row in p:
                    if np.all(np.isfinite(row[:2])):
                        joints.append([float(row[0]), float(row[1]), float(row[2])])
                    else:
                        joints.append(None)
                persons.append(joints)
            fh.write(json.dumps({
                "frame": d.frame,
                "view": d.view,
                "persons": persons,
                "format": d.joint_format,
            }, sort_keys=True))
            fh.write("\n")


def load_detections(path: str | Path) -> list[DetectionSet]:
    dets = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            fmt = get_format(raw.get("format", "body25"))
            persons = []
            for joints in raw["persons"]:
                arr = np.full((fmt.n_joints, 3), np.nan)
                for i, j in enumerate(joints):
                    if j is not None:
                        arr[i] = j
                persons.append(arr)
            dets.append(DetectionSet(
                frame=int(raw["frame"]),
                view=int(raw["view"]),
                persons=persons,
                joint_format=fmt.name,
            ))
    return sorted(dets, key=lambda d: (d.frame, d.view))


def group_by_frame(dets: list[DetectionSet]) -> list[list[DetectionSet]]:
    """Group a flat detection list into per-frame lists, frame order."""
    frames: dict[int, list[DetectionSet]] = {}
    for d in dets:
        frames.setdefault(d.frame, []).append(d)
    return [sorted(frames[f], key=lambda d: d.view) for f in sorted(frames)]


# --- binary cloud dump -----------------------------------------------------

_CLOUD_MAGIC = 0x4A434C44  # "JCLD"
_CLOUD_VERSION = 1


def write_cloud(cloud: JointCloud, path: str | Path) -> None:
    """Dump a cloud as float32 data plus mask bytes behind an 8-int header.

    Layout: 8 little-endian uint32 (magic, version, N, n_pairs,
    n_candidates, n_joints, 3, mask byte offset), the flat float32 data,
    then the mask as 0/1 bytes.
    """
    n, vp, mc, i, _ = cloud.data.shape
    data32 = cloud.data.astype("<f4").ravel()
    mask_offset = 8 * 4 + data32.nbytes
    header = np.array(
        [_CLOUD_MAGIC, _CLOUD_VERSION, n, vp, mc, i, 3, mask_offset],
        dtype="<u4",
    )
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(data32.tobytes())
        fh.write(cloud.mask.astype(np.uint8).ravel().tobytes())


def read_cloud(path: str | Path) -> JointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = np.frombuffer(blob[: 8 * 4], dtype="<u4")
    if header[0] != _CLOUD_MAGIC:
        raise ValueError(f"{path}: not a cloud dump (bad magic)")
    if header[1] != _CLOUD_VERSION:
        raise ValueError(f"{path}: unsupported version {header[1]}")
    n, vp, mc, i, three, mask_offset = (int(x) for x in header[2:])
    if three != 3:
        raise ValueError(f"{path}: malformed header")
    count = n * vp * mc * i * 3
    data = np.frombuffer(
        blob[8 * 4: 8 * 4 + count * 4], dtype="<f4"
    ).astype(np.float64).reshape(n, vp, mc, i, 3)
    mask = np.frombuffer(
        blob[mask_offset: mask_offset + n * vp * mc * i], dtype=np.uint8
    ).astype(bool).reshape(n, vp, mc, i)
    data = data.copy()
    data[~mask] = 0.0
    return JointCloud(data=data, mask=mask)
