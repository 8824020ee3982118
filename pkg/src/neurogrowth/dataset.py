"""Frame serialization, downsampling and training-dataset assembly.

A case archive is a directory with a JSON header and one binary blob per
stored frame (8-byte magic, two uint32 grid dims, float32 row-major
payload, all little-endian). Archives round-trip bit-exactly. The packed
dataset couples per-frame inputs [phi0, theta0, iter] with binary targets
phi(iter) at a fixed 300x300 resolution, split 75/25 by case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FrameRecord",
    "FrameArchive",
    "DatasetManifest",
    "write_archive",
    "read_archive",
    "resample_area",
    "resample_nearest",
    "downsample",
    "extract_frames",
    "assemble_dataset",
    "save_dataset",
    "load_dataset",
]

FRAME_MAGIC = b"NGPHIFRM"
TARGET_SIZE = 300


@dataclass
class FrameRecord:
    iteration: int
    phi: np.ndarray
    dims: tuple[int, int]

    @classmethod
    def capture(cls, iteration: int, phi: np.ndarray) -> "FrameRecord":
        phi = np.asarray(phi, dtype=np.float32)
        return cls(iteration, phi.copy(), phi.shape)


@dataclass
class FrameArchive:
    case_id: str
    seed: int
    n_neurons: int
    theta0: np.ndarray
    frames: list[FrameRecord] = field(default_factory=list)

    @property
    def dims_history(self) -> list[tuple[int, int]]:
        return [f.dims for f in self.frames]


def _write_frame(path: Path, frame: FrameRecord) -> None:
    arr = np.ascontiguousarray(frame.phi, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(np.array(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_frame(path) -> FrameRecord:
    """Read one binary frame blob; the iteration index comes from the name."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FRAME_MAGIC:
            raise ValueError(f"{path}: not a frame file (bad magic {magic!r})")
        dims = np.frombuffer(fh.read(8), dtype="<u4")
        data = np.frombuffer(fh.read(), dtype="<f4")
    ni, nj = int(dims[0]), int(dims[1])
    if data.size != ni * nj:
        raise ValueError(f"{path}: payload size mismatch")
    it = int(path.stem.split("_")[-1]) if "_" in path.stem else 0
    return FrameRecord(it, data.reshape(ni, nj).copy(), (ni, nj))


def write_archive(directory, archive: FrameArchive) -> Path:
    """Write a case directory: header.json, theta0 blob and frame blobs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "case_id": archive.case_id,
        "seed": archive.seed,
        "n_neurons": archive.n_neurons,
        "frame_count": len(archive.frames),
        "dims_history": [list(d) for d in archive.dims_history],
        "iterations": [f.iteration for f in archive.frames],
    }
    with open(directory / "header.json", "w") as fh:
        json.dump(header, fh, indent=1)
    _write_frame(directory / "theta0.bin",
                 FrameRecord(0, archive.theta0, archive.theta0.shape))
    for k, frame in enumerate(archive.frames):
        _write_frame(directory / f"frame_{k:05d}_{frame.iteration:08d}.bin", frame)
    return directory


def read_archive(directory) -> FrameArchive:
    directory = Path(directory)
    with open(directory / "header.json") as fh:
        header = json.load(fh)
    theta0 = read_frame(directory / "theta0.bin").phi
    frames = []
    paths = sorted(directory.glob("frame_*.bin"))
    if len(paths) != header["frame_count"]:
        raise ValueError(f"{directory}: header says {header['frame_count']} frames, "
                         f"found {len(paths)}")
    for path, it in zip(paths, header["iterations"]):
        rec = read_frame(path)
        rec.iteration = int(it)
        frames.append(rec)
    return FrameArchive(header["case_id"], header["seed"], header["n_neurons"],
                        theta0, frames)


def _overlap_weights(n_src: int, n_dst: int) -> np.ndarray:
    """(n_dst, n_src) row-stochastic interval-overlap matrix (area averaging)."""
    w = np.zeros((n_dst, n_src))
    scale = n_src / n_dst
    for k in range(n_dst):
        lo, hi = k * scale, (k + 1) * scale
        i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
        for i in range(i0, min(i1, n_src)):
            w[k, i] = min(hi, i + 1) - max(lo, i)
    w /= w.sum(axis=1, keepdims=True)
    return w


def resample_area(arr: np.ndarray, target: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE)) -> np.ndarray:
    """Exact box-average resampling to `target` (both up and down)."""
    arr = np.asarray(arr, dtype=float)
    wi = _overlap_weights(arr.shape[0], target[0])
    wj = _overlap_weights(arr.shape[1], target[1])
    return wi @ arr @ wj.T


def resample_nearest(arr: np.ndarray, target: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE)) -> np.ndarray:
    arr = np.asarray(arr)
    ii = np.minimum(((np.arange(target[0]) + 0.5) * arr.shape[0] / target[0]).astype(int),
                    arr.shape[0] - 1)
    jj = np.minimum(((np.arange(target[1]) + 0.5) * arr.shape[1] / target[1]).astype(int),
                    arr.shape[1] - 1)
    return arr[np.ix_(ii, jj)]


def downsample(frame: FrameRecord, theta: np.ndarray | None = None,
               target: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE),
               binarize: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    """Resample a frame's phi (area averaging) and optional theta (nearest).

    With `binarize`, phi is thresholded at 0.5 (ties count as foreground),
    which is how ground-truth target frames are stored.
    """
    phi = resample_area(frame.phi, target)
    np.clip(phi, 0.0, 1.0, out=phi)
    if binarize:
        phi = (phi >= 0.5).astype(float)
    th = resample_nearest(theta, target) if theta is not None else None
    return phi, th


def extract_frames(frames: list[FrameRecord], k: int = 60) -> tuple[list[FrameRecord], bool]:
    """Pick k evenly spaced frames, always including the final one.

    When the count divides evenly the selection is a pure stride aligned to
    the last frame. Returns (frames, short_flag); short_flag is set when
    fewer than k were available (all are returned).
    """
    s = len(frames)
    if s == 0:
        return [], False
    if s < k:
        return list(frames), True
    if s % k == 0:
        stride = s // k
        idx = list(range(stride - 1, s, stride))
    else:
        idx = sorted({int(round(x)) for x in np.linspace(0, s - 1, k)})
        while len(idx) < k:  # rounding collisions: backfill from the unused pool
            pool = sorted(set(range(s)) - set(idx))
            idx.append(pool[0])
            idx = sorted(idx)
    return [frames[i] for i in idx], False


@dataclass
class DatasetManifest:
    case_ids: list[str]
    train_cases: list[str]
    test_cases: list[str]
    frames_per_case: int
    target: tuple[int, int]
    iter_norm: int          # iteration count used to normalize the iter channel
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "case_ids": self.case_ids,
            "train_cases": self.train_cases,
            "test_cases": self.test_cases,
            "frames_per_case": self.frames_per_case,
            "target": list(self.target),
            "iter_norm": self.iter_norm,
            "seed": self.seed,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(d["case_ids"], d["train_cases"], d["test_cases"],
                   d["frames_per_case"], tuple(d["target"]), d["iter_norm"], d["seed"])


def assemble_dataset(archives: list[FrameArchive], seed: int,
                     target: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE),
                     ) -> tuple[DatasetManifest, np.ndarray, np.ndarray]:
    """Pack archives into (cases, frames, H, W, 3) inputs and (..., 1) targets.

    Input channels are the downsampled initial phi, the initial theta and a
    constant plane holding the frame's iteration normalized by the largest
    iteration in the dataset. Targets are binarized phi at that iteration.
    The train/test split is case-disjoint: cases are shuffled with `seed`
    and a quarter (rounded) is held out.
    """
    if not archives:
        raise ValueError("no archives given")
    counts = {len(a.frames) for a in archives}
    if len(counts) != 1:
        offenders = {a.case_id: len(a.frames) for a in archives}
        raise ValueError(f"archives disagree on frame count: {offenders}")
    n_frames = counts.pop()
    if n_frames == 0:
        raise ValueError("archives contain no frames")

    iter_norm = max(max(f.iteration for f in a.frames) for a in archives)
    iter_norm = max(iter_norm, 1)

    n_cases = len(archives)
    inputs = np.zeros((n_cases, n_frames, *target, 3), dtype=np.float32)
    targets = np.zeros((n_cases, n_frames, *target, 1), dtype=np.float32)
    for ci, arch in enumerate(archives):
        phi0, th0 = downsample(arch.frames[0], arch.theta0, target)
        for fi, frame in enumerate(arch.frames):
            gt, _ = downsample(frame, None, target, binarize=True)
            inputs[ci, fi, :, :, 0] = phi0
            inputs[ci, fi, :, :, 1] = th0
            inputs[ci, fi, :, :, 2] = frame.iteration / iter_norm
            targets[ci, fi, :, :, 0] = gt

    ids = [a.case_id for a in archives]
    order = np.random.default_rng(seed).permutation(n_cases)
    n_test = int(round(n_cases * 0.25))
    test_ids = [ids[i] for i in sorted(order[:n_test])]
    train_ids = [ids[i] for i in sorted(order[n_test:])]
    manifest = DatasetManifest(ids, train_ids, test_ids, n_frames, target,
                               iter_norm, seed)
    return manifest, inputs, targets


def save_dataset(path, manifest: DatasetManifest, inputs: np.ndarray,
                 targets: np.ndarray) -> None:
    """Write the packed arrays (.npz) and the manifest alongside (.json)."""
    path = Path(path)
    np.savez_compressed(path, inputs=inputs, targets=targets)
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(manifest.to_json())


def load_dataset(path) -> tuple[DatasetManifest, np.ndarray, np.ndarray]:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    with np.load(path) as data:
        inputs, targets = data["inputs"], data["targets"]
    manifest = DatasetManifest.from_json(path.with_suffix(".json").read_text())
    return manifest, inputs, targets
