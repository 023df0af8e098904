"""Play-data persistence, padded window sampling and the proprio neighbour index.

On disk a dataset is a directory::

    manifest.json
    episodes/ep_000000.bin ...

Each episode file is ``b"TEPS"`` followed by version, T, obs dim and action dim
(unsigned 32-bit little-endian) and then the float32 little-endian
observation and action payloads, row-major.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import kernels
from .playtable import ACT_DIM, OBS_DIM, PROPRIO, SCENE

EPISODE_MAGIC = b"TEPS"
EPISODE_VERSION = 1
MIN_WINDOW = 8
MAX_WINDOW = 16
EPS_PROPRIO = 0.05
EPS_SCENE = 0.1


class DatasetError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    episode_id: int
    observations: np.ndarray  # (T, 9)
    actions: np.ndarray  # (T, 3)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if len(self.observations) != len(self.actions):
            raise DatasetError(
                f"episode {self.episode_id}: {len(self.observations)} observations vs {len(self.actions)} actions"
            )

    @property
    def length(self) -> int:
        return len(self.observations)


@dataclass
class Window:
    episode_id: int
    start: int
    raw_length: int
    observations: np.ndarray  # (16, 9)
    actions: np.ndarray  # (16, 3)
    mask: np.ndarray  # (16,) True on real steps


# ----------------------------------------------------------------- files
def write_dataset(episodes: list[EpisodeRecord], path, collector_seed: int | None = None,
                  overwrite: bool = False) -> dict:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise DatasetError(f"{path} exists and is not empty; pass overwrite to replace it")
    ep_dir = path / "episodes"
    ep_dir.mkdir(parents=True, exist_ok=True)
    for old in ep_dir.glob("ep_*.bin"):
        old.unlink()
    lengths = []
    for i, ep in enumerate(episodes):
        if ep.length < MAX_WINDOW:
            raise DatasetError(f"episode {ep.episode_id} has {ep.length} steps; need >= {MAX_WINDOW}")
        header = EPISODE_MAGIC + struct.pack("<4I", EPISODE_VERSION, ep.length, OBS_DIM, ACT_DIM)
        payload = ep.observations.astype("<f4").tobytes() + ep.actions.astype("<f4").tobytes()
        (ep_dir / f"ep_{i:06d}.bin").write_bytes(header + payload)
        lengths.append(ep.length)
    manifest = {
        "episodes": len(episodes),
        "obs_dim": OBS_DIM,
        "act_dim": ACT_DIM,
        "lengths": lengths,
        "collector_seed": collector_seed,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_episode(file) -> EpisodeRecord:
    file = Path(file)
    buf = file.read_bytes()
    if buf[:4] != EPISODE_MAGIC:
        raise DatasetError(f"{file}: bad magic {buf[:4]!r}")
    version, n, od, ad = struct.unpack_from("<4I", buf, 4)
    if version != EPISODE_VERSION:
        raise DatasetError(f"{file}: unsupported version {version}")
    need = 20 + 4 * n * (od + ad)
    if len(buf) != need:
        raise DatasetError(f"{file}: expected {need} bytes, found {len(buf)}")
    obs = np.frombuffer(buf, dtype="<f4", count=n * od, offset=20).reshape(n, od)
    act = np.frombuffer(buf, dtype="<f4", count=n * ad, offset=20 + 4 * n * od).reshape(n, ad)
    ep_id = int(file.stem.split("_")[-1])
    return EpisodeRecord(ep_id, obs.astype(np.float64), act.astype(np.float64))


def read_dataset(path) -> tuple[list[EpisodeRecord], dict]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"no dataset manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    files = sorted((path / "episodes").glob("ep_*.bin"))
    if len(files) != manifest["episodes"]:
        raise DatasetError(f"{path}: manifest lists {manifest['episodes']} episodes, found {len(files)} files")
    return [read_episode(f) for f in files], manifest


# ----------------------------------------------------------------- dataset
class Dataset:
    """Read-only view over episodes with flat per-timestep arrays."""

    def __init__(self, episodes: list[EpisodeRecord]):
        if not episodes:
            raise DatasetError("dataset is empty")
        self.episodes = episodes
        self.lengths = np.array([ep.length for ep in episodes])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        self.observations = np.concatenate([ep.observations for ep in episodes])
        self.actions = np.concatenate([ep.actions for ep in episodes])
        self.observations.setflags(write=False)
        self.actions.setflags(write=False)
        self.episode_of = np.repeat(np.arange(len(episodes)), self.lengths)
        self._index: ProprioIndex | None = None
        self.window_starts = self.valid_starts(MIN_WINDOW)

    def __len__(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def index(self) -> ProprioIndex:
        if self._index is None:
            self._index = build_proprio_index(self)
        return self._index

    def valid_starts(self, k: int) -> np.ndarray:
        """Flat indices t whose episode still holds t + k - 1."""
        out = [np.arange(o, o + n - k + 1) for o, n in zip(self.offsets[:-1], self.lengths) if n >= k]
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)

    def episode_end(self, flat_t: int) -> int:
        """Flat index of the last step in the episode holding ``flat_t``."""
        return int(self.offsets[self.episode_of[flat_t] + 1] - 1)


def make_window(ds: Dataset, flat_start: int, raw_length: int) -> Window:
    """Cut ``raw_length`` real steps (truncated at episode end) and pad to 16."""
    end = ds.episode_end(flat_start)
    raw = int(min(raw_length, end - flat_start + 1))
    obs = np.empty((MAX_WINDOW, OBS_DIM))
    act = np.empty((MAX_WINDOW, ACT_DIM))
    obs[:raw] = ds.observations[flat_start : flat_start + raw]
    act[:raw] = ds.actions[flat_start : flat_start + raw]
    obs[raw:] = obs[raw - 1]
    # keep-still pad action: zero motion, same gripper command
    act[raw:, :2] = 0.0
    act[raw:, 2] = act[raw - 1, 2]
    mask = np.zeros(MAX_WINDOW, dtype=bool)
    mask[:raw] = True
    ep = int(ds.episode_of[flat_start])
    return Window(ds.episodes[ep].episode_id, int(flat_start - ds.offsets[ep]), raw, obs, act, mask)


def sample_window(rng: np.random.Generator, ds: Dataset) -> Window:
    """Episode proportional to length, uniform start, raw length uniform in 8..16.

    Starts are drawn among steps with at least 8 real steps left, so
    truncation at the episode end never drops a window below 8.
    """
    starts = ds.window_starts
    flat_start = int(starts[rng.integers(len(starts))])
    raw = int(rng.integers(MIN_WINDOW, MAX_WINDOW + 1))
    return make_window(ds, flat_start, raw)


def stack_windows(windows: list[Window]):
    obs = np.stack([w.observations for w in windows])
    act = np.stack([w.actions for w in windows])
    mask = np.stack([w.mask for w in windows])
    return obs, act, mask


# ----------------------------------------------------------- proprio index
class ProprioIndex:
    """Uniform 2-d grid over (x, y) of the proprio keys; exact radius queries."""

    def __init__(self, keys: np.ndarray, cell: float = EPS_PROPRIO):
        self.keys = np.ascontiguousarray(keys, dtype=np.float64)
        self.cell = float(cell)
        self.n_side = int(np.ceil(1.0 / self.cell)) + 1
        ix = np.clip(np.floor(self.keys[:, 0] / self.cell).astype(np.int64), 0, self.n_side - 1)
        iy = np.clip(np.floor(self.keys[:, 1] / self.cell).astype(np.int64), 0, self.n_side - 1)
        cell_id = ix * self.n_side + iy
        self.order = np.argsort(cell_id, kind="stable").astype(np.int64)
        counts = np.bincount(cell_id, minlength=self.n_side * self.n_side)
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def __len__(self) -> int:
        return len(self.keys)

    def query(self, q, r: float) -> np.ndarray:
        """Sorted indices with ||key - q||_2 <= r."""
        q = np.asarray(q, dtype=np.float64)
        return kernels.grid_query(self.keys, self.order, self.cell_start, self.n_side, self.cell, q, float(r))


def build_proprio_index(ds: Dataset | np.ndarray) -> ProprioIndex:
    obs = ds.observations if isinstance(ds, Dataset) else np.asarray(ds)
    return ProprioIndex(obs[:, PROPRIO])


def mine_negative(index: ProprioIndex, observations: np.ndarray, anchor: np.ndarray,
                  rng: np.random.Generator, eps_p: float = EPS_PROPRIO, eps_s: float = EPS_SCENE):
    """A dataset observation with similar proprio but a different scene.

    Returns ``(observation, used_fallback)``; the fallback is a uniformly
    random dataset state.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    cand = index.query(anchor[PROPRIO], eps_p)
    if len(cand):
        diff = observations[cand][:, SCENE] - anchor[SCENE]
        far = cand[np.sqrt(np.sum(diff * diff, axis=1)) >= eps_s]
        if len(far):
            return observations[far[int(rng.integers(len(far)))]], False
    return observations[int(rng.integers(len(observations)))], True
