"""Grasp datasets: canonical on-disk format, protocol splits, normalisation and a
synthetic squeeze-and-release generator.

Canonical layout (one directory)::

    manifest.json                 class_names, frame counts, one entry per grasp
    tactile/<grasp_id>.csv        T*28 rows x 50 columns, frames stacked vertically
    kinesthetic/<grasp_id>.csv    header theta_al,theta_ar,theta_2l,theta_2r + K rows
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetFormatError, InvalidArgumentError
from .models import N_JOINTS, SENSOR_COLS, SENSOR_ROWS

log = logging.getLogger(__name__)

KINESTHETIC_HEADER = ("theta_al", "theta_ar", "theta_2l", "theta_2r")
MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "hapticfusion-dataset/1"
TEST_CLAMP = (-0.5, 1.5)


@dataclass(frozen=True)
class Grasp:
    grasp_id: str
    label: int
    tactile: np.ndarray  # [T, 28, 50], raw sensor counts
    kinesthetic: np.ndarray  # [K, 4], degrees


@dataclass(frozen=True)
class NormalizationStats:
    tactile_min: float
    tactile_max: float
    kinesthetic_min: np.ndarray  # per joint
    kinesthetic_max: np.ndarray
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "tactile_min": self.tactile_min,
            "tactile_max": self.tactile_max,
            "kinesthetic_min": self.kinesthetic_min.tolist(),
            "kinesthetic_max": self.kinesthetic_max.tolist(),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class Dataset:
    grasps: tuple[Grasp, ...]
    class_names: tuple[str, ...]
    normalization_stats: NormalizationStats | None = None

    def __post_init__(self):
        n = len(self.class_names)
        for g in self.grasps:
            if not 0 <= g.label < n:
                raise InvalidArgumentError(f"grasp {g.grasp_id}: label {g.label} outside {n} classes")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.grasps], dtype=np.int64)

    def indices_by_class(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.class_names]
        for i, g in enumerate(self.grasps):
            out[g.label].append(i)
        return out

    def tactile_batch(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self.grasps[i].tactile for i in indices])

    def kinesthetic_batch(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self.grasps[i].kinesthetic for i in indices])

    def label_batch(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([self.grasps[i].label for i in indices], dtype=np.int64)


# -- splits ------------------------------------------------------------------

PROTOCOLS = ("bayesian", "neural")


@dataclass(frozen=True)
class SplitCounts:
    """Per-class budget. ``pool`` grasps are used for training, ``test`` for testing.

    Bayesian: the whole pool trains the base models. Neural: ``fusion`` grasps of
    the pool are held out for the fusion head. ``val_fraction`` of the base
    training grasps become validation.
    """

    test: int = 45
    pool: int = 15
    fusion: int = 5
    val_fraction: float = 0.2

    def base(self, protocol: str) -> int:
        return self.pool if protocol == "bayesian" else self.pool - self.fusion

    def val(self, protocol: str) -> int:
        return math.floor(self.val_fraction * self.base(protocol) + 0.5)

    @property
    def per_class(self) -> int:
        return self.test + self.pool


@dataclass(frozen=True)
class SplitPlan:
    protocol: str
    seed: int
    train: tuple[tuple[int, ...], ...]  # per class, indices into Dataset.grasps
    val: tuple[tuple[int, ...], ...]
    fusion_train: tuple[tuple[int, ...], ...]
    test: tuple[tuple[int, ...], ...]

    def flat(self, part: str) -> list[int]:
        return [i for per_class in getattr(self, part) for i in per_class]

    def training_indices(self) -> list[int]:
        """Every grasp that any model of this protocol may learn from."""
        return sorted(self.flat("train") + self.flat("val") + self.flat("fusion_train"))


def make_split(ds: Dataset, protocol: str, seed: int, counts: SplitCounts | None = None) -> SplitPlan:
    """Per-class random split. The test set depends only on ``seed``, so the
    bayesian and neural plans of one seed test on the same grasps."""
    if protocol not in PROTOCOLS:
        raise InvalidArgumentError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    counts = counts or SplitCounts()
    if counts.fusion >= counts.pool or counts.test < 1:
        raise InvalidArgumentError(f"inconsistent split counts {counts}")
    by_class = ds.indices_by_class()
    short = {ds.class_names[c]: len(ix) for c, ix in enumerate(by_class) if len(ix) < counts.per_class}
    if short:
        raise InvalidArgumentError(
            f"protocol needs {counts.per_class} grasps per class "
            f"({counts.pool} train + {counts.test} test); short classes: {short}"
        )
    rng = np.random.default_rng(seed)
    n_val = counts.val(protocol)
    n_base = counts.base(protocol)
    train, val, fusion, test = [], [], [], []
    for ix in by_class:
        perm = [ix[k] for k in rng.permutation(len(ix))]
        test.append(tuple(perm[:counts.test]))
        pool = perm[counts.test:counts.test + counts.pool]
        base, rest = pool[:n_base], pool[n_base:]
        val.append(tuple(base[:n_val]))
        train.append(tuple(base[n_val:]))
        fusion.append(tuple(rest) if protocol == "neural" else ())
    return SplitPlan(protocol, seed, tuple(train), tuple(val), tuple(fusion), tuple(test))


# -- normalisation -----------------------------------------------------------

def compute_stats(ds: Dataset, indices: Sequence[int]) -> NormalizationStats:
    if len(indices) == 0:
        raise InvalidArgumentError("normalisation needs at least one training grasp")
    tac = np.stack([ds.grasps[i].tactile for i in indices])
    kin = np.concatenate([ds.grasps[i].kinesthetic for i in indices], axis=0)
    warnings = []
    if tac.max() == tac.min():
        warnings.append("tactile values are constant over the training grasps; mapped to 0.5")
    kmin, kmax = kin.min(axis=0), kin.max(axis=0)
    for j in np.flatnonzero(kmax == kmin):
        name = KINESTHETIC_HEADER[j] if j < len(KINESTHETIC_HEADER) else str(j)
        warnings.append(f"kinesthetic column {name} is constant over the training grasps; mapped to 0.5")
    for w in warnings:
        log.warning(w)
    return NormalizationStats(float(tac.min()), float(tac.max()), kmin, kmax, tuple(warnings))


def _minmax(x, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.5)


def apply_stats(grasp: Grasp, stats: NormalizationStats, clamp: bool) -> Grasp:
    tac = _minmax(grasp.tactile, stats.tactile_min, stats.tactile_max)
    kin = _minmax(grasp.kinesthetic, stats.kinesthetic_min, stats.kinesthetic_max)
    if clamp:
        tac = np.clip(tac, *TEST_CLAMP)
        kin = np.clip(kin, *TEST_CLAMP)
    return replace(grasp, tactile=np.asarray(tac, dtype=np.float64), kinesthetic=np.asarray(kin, dtype=np.float64))


def normalize(ds: Dataset, plan: SplitPlan) -> Dataset:
    """Min-max scale with statistics from the plan's training grasps only.

    Tactile uses one global range, kinesthetic one range per joint. Grasps the
    plan does not train on are clamped to [-0.5, 1.5].
    """
    train_ix = plan.training_indices()
    stats = compute_stats(ds, train_ix)
    train_set = set(train_ix)
    grasps = tuple(apply_stats(g, stats, clamp=i not in train_set) for i, g in enumerate(ds.grasps))
    return Dataset(grasps, ds.class_names, stats)


# -- canonical files -----------------------------------------------------------

def _write_csv(path: Path, rows: np.ndarray, header: str | None = None) -> None:
    # %.17g round-trips every float64 exactly
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header or "", comments="")


def save_dataset(ds: Dataset, directory) -> Path:
    """Write raw (unnormalised) grasps in the canonical format. Returns the manifest path."""
    root = Path(directory)
    (root / "tactile").mkdir(parents=True, exist_ok=True)
    (root / "kinesthetic").mkdir(parents=True, exist_ok=True)
    if not ds.grasps:
        raise InvalidArgumentError("cannot save an empty dataset")
    t_frames = ds.grasps[0].tactile.shape[0]
    k_samples = ds.grasps[0].kinesthetic.shape[0]
    entries = []
    for g in ds.grasps:
        if "/" in g.grasp_id or "\\" in g.grasp_id or g.grasp_id in ("", ".", ".."):
            raise InvalidArgumentError(f"grasp id {g.grasp_id!r} is not usable as a file name")
        tac_rel = f"tactile/{g.grasp_id}.csv"
        kin_rel = f"kinesthetic/{g.grasp_id}.csv"
        _write_csv(root / tac_rel, g.tactile.reshape(-1, g.tactile.shape[-1]))
        _write_csv(root / kin_rel, g.kinesthetic, header=",".join(KINESTHETIC_HEADER))
        entries.append(
            {
                "grasp_id": g.grasp_id,
                "label": ds.class_names[g.label],
                "tactile_file": tac_rel,
                "kinesthetic_file": kin_rel,
            }
        )
    manifest = {
        "format": FORMAT_TAG,
        "class_names": list(ds.class_names),
        "tactile_frames": t_frames,
        "kinesthetic_samples": k_samples,
        "grasps": entries,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def _read_csv(path: Path, grasp_id: str, what: str, skip_header: bool) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"grasp {grasp_id}: {what} file not found: {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"grasp {grasp_id}: cannot parse {what} file {path}: {exc}") from exc
    return arr


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    root = path.parent
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid manifest: {exc}") from exc
    try:
        class_names = tuple(manifest["class_names"])
        t_frames = int(manifest["tactile_frames"])
        k_samples = int(manifest["kinesthetic_samples"])
        entries = manifest["grasps"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: manifest missing or malformed field: {exc}") from exc
    label_of = {name: i for i, name in enumerate(class_names)}
    grasps, seen = [], set()
    for e in entries:
        gid = str(e["grasp_id"])
        if gid in seen:
            raise DatasetFormatError(f"duplicate grasp_id {gid}")
        seen.add(gid)
        if e["label"] not in label_of:
            raise DatasetFormatError(f"grasp {gid}: unknown label {e['label']!r}")
        kin_path = root / e["kinesthetic_file"]
        if kin_path.is_file():
            with open(kin_path, encoding="utf-8") as fh:
                header = tuple(h.strip() for h in fh.readline().strip().split(","))
            if header != KINESTHETIC_HEADER:
                raise DatasetFormatError(
                    f"grasp {gid}: kinesthetic header {header} != {KINESTHETIC_HEADER}"
                )
        kin = _read_csv(kin_path, gid, "kinesthetic", skip_header=True)
        tac = _read_csv(root / e["tactile_file"], gid, "tactile", skip_header=False)
        if kin.shape != (k_samples, N_JOINTS):
            raise DatasetFormatError(
                f"grasp {gid}: kinesthetic shape {kin.shape}, expected {(k_samples, N_JOINTS)}"
            )
        if tac.shape != (t_frames * SENSOR_ROWS, SENSOR_COLS):
            raise DatasetFormatError(
                f"grasp {gid}: tactile shape {tac.shape} ({tac.shape[0] / SENSOR_ROWS:g} frames), "
                f"expected {(t_frames * SENSOR_ROWS, SENSOR_COLS)} ({t_frames} frames)"
            )
        if np.any(tac < 0):
            raise DatasetFormatError(f"grasp {gid}: negative tactile pressure values")
        grasps.append(Grasp(gid, label_of[e["label"]], tac.reshape(t_frames, SENSOR_ROWS, SENSOR_COLS), kin))
    return Dataset(tuple(grasps), class_names)


# -- upstream conversion ---------------------------------------------------------

def _to_time_major_tactile(arr: np.ndarray) -> np.ndarray:
    """Accept [n, 28, 50, T] or [n, T, 28, 50]; return [n, T, 28, 50]."""
    if arr.ndim != 4:
        raise DatasetFormatError(f"tactile array must be 4-D, got {arr.shape}")
    if arr.shape[1:3] == (SENSOR_ROWS, SENSOR_COLS):
        return np.moveaxis(arr, 3, 1)
    if arr.shape[2:4] == (SENSOR_ROWS, SENSOR_COLS):
        return arr
    raise DatasetFormatError(f"no {SENSOR_ROWS}x{SENSOR_COLS} frame axes in tactile array {arr.shape}")


def _to_time_major_kinesthetic(arr: np.ndarray) -> np.ndarray:
    """Accept [n, 4, K] or [n, K, 4]; return [n, K, 4]."""
    if arr.ndim != 3:
        raise DatasetFormatError(f"kinesthetic array must be 3-D, got {arr.shape}")
    if arr.shape[1] == N_JOINTS and arr.shape[2] != N_JOINTS:
        return np.swapaxes(arr, 1, 2)
    if arr.shape[2] == N_JOINTS:
        return arr
    raise DatasetFormatError(f"no joint axis of size {N_JOINTS} in kinesthetic array {arr.shape}")


def convert_upstream(src, out) -> Path:
    """Convert an array bundle into the canonical format.

    ``src`` is an ``.npz`` file or a directory with ``tactile.npy``,
    ``kinesthetic.npy`` and ``labels.npy`` (optionally ``class_names.txt``, one
    name per line). Frame axes may be channel-last as published
    (28 x 50 x T and 4 x K per grasp) or time-major. Labels may be 0- or 1-based.
    """
    src = Path(src)
    if src.is_file():
        with np.load(src) as bundle:
            tac, kin, labels = bundle["tactile"], bundle["kinesthetic"], bundle["labels"]
        names_file = src.with_name("class_names.txt")
    else:
        try:
            tac = np.load(src / "tactile.npy")
            kin = np.load(src / "kinesthetic.npy")
            labels = np.load(src / "labels.npy")
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"upstream bundle incomplete: {exc}") from exc
        names_file = src / "class_names.txt"
    tac = _to_time_major_tactile(np.asarray(tac, dtype=np.float64))
    kin = _to_time_major_kinesthetic(np.asarray(kin, dtype=np.float64))
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if not (len(tac) == len(kin) == len(labels)):
        raise DatasetFormatError(f"bundle sizes differ: {len(tac)}, {len(kin)}, {len(labels)}")
    if labels.min() == 1:
        labels = labels - 1
    n_classes = int(labels.max()) + 1
    if names_file.is_file():
        class_names = tuple(l.strip() for l in names_file.read_text(encoding="utf-8").splitlines() if l.strip())
        if len(class_names) < n_classes:
            raise DatasetFormatError(f"{names_file}: {len(class_names)} names for {n_classes} classes")
    else:
        class_names = tuple(f"object_{c + 1:02d}" for c in range(n_classes))
    counters = [0] * len(class_names)
    grasps = []
    for t, k, y in zip(tac, kin, labels):
        counters[y] += 1
        grasps.append(Grasp(f"c{y + 1:02d}_g{counters[y]:03d}", int(y), np.clip(t, 0, None), k))
    save_dataset(Dataset(tuple(grasps), class_names), out)
    return Path(out) / MANIFEST_NAME


# -- synthetic generator -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 6
    grasps_per_class: int = 60
    frames: int = 8  # tactile T; the recorded dataset has 21
    samples: int = 20  # kinesthetic K; the recorded dataset has 41
    noise: float = 0.7
    seed: int = 0
    # optional per-class latent overrides; drawn from the seed when None
    stiffness: tuple[float, ...] | None = None
    size: tuple[float, ...] | None = None
    inclusions: tuple[int, ...] | None = None

    def validate(self):
        if self.classes < 2 or self.grasps_per_class < 1 or self.frames < 1 or self.samples < 1:
            raise InvalidArgumentError(f"invalid synthetic config {self}")
        if self.noise < 0:
            raise InvalidArgumentError("noise level must be non-negative")
        for name in ("stiffness", "size", "inclusions"):
            v = getattr(self, name)
            if v is not None and len(v) != self.classes:
                raise InvalidArgumentError(f"{name} override needs {self.classes} values, got {len(v)}")


@dataclass(frozen=True)
class ObjectLatent:
    stiffness: float  # 0 soft .. 1 rigid
    size: float  # 0 small .. 1 large
    inclusion_offsets: tuple[tuple[float, float], ...] = field(default=())


CONTACT_LEVEL = 0.3  # squeeze effort at which the fingers touch the object


def squeeze_profile(n: int) -> np.ndarray:
    """Triangular squeeze-and-release effort in [0, 1] at the midpoints of n
    equal time slots, so even very short sequences see the squeeze."""
    t = (np.arange(n) + 0.5) / n
    return 1.0 - np.abs(2.0 * t - 1.0)


def _class_latents(cfg: SyntheticConfig, rng: np.random.Generator) -> list[ObjectLatent]:
    stiff = rng.uniform(0.15, 1.0, cfg.classes)
    size = rng.uniform(0.3, 1.0, cfg.classes)
    n_inc = rng.integers(0, 4, cfg.classes)
    offsets = rng.uniform(-0.6, 0.6, size=(cfg.classes, 3, 2))
    if cfg.stiffness is not None:
        stiff = np.asarray(cfg.stiffness, dtype=float)
    if cfg.size is not None:
        size = np.asarray(cfg.size, dtype=float)
    if cfg.inclusions is not None:
        n_inc = np.asarray(cfg.inclusions, dtype=int)
    return [
        ObjectLatent(float(stiff[c]), float(size[c]), tuple(map(tuple, offsets[c, : n_inc[c]])))
        for c in range(cfg.classes)
    ]


def kinesthetic_mean(latent: ObjectLatent, samples: int, asym: float = 0.0) -> np.ndarray:
    """Noise-free joint angles [K, 4] in degrees for one object."""
    u = squeeze_profile(samples)
    approach = np.minimum(u / CONTACT_LEVEL, 1.0)
    press = np.maximum(u - CONTACT_LEVEL, 0.0) / (1.0 - CONTACT_LEVEL)
    give = 1.0 - latent.stiffness
    # actuated joints close until contact (smaller objects -> further), then
    # keep closing in proportion to how much the object yields
    actuated = 10.0 + approach * (60.0 - 35.0 * latent.size) + press * 25.0 * give
    # distal joints wrap around large objects; soft objects let them curl in
    distal = 5.0 + approach * 30.0 * latent.size + press * 15.0 * give
    return np.stack(
        [actuated * (1 + asym), actuated * (1 - asym), distal * (1 - asym), distal * (1 + asym)], axis=1
    )


def tactile_mean(latent: ObjectLatent, frames: int, center=(0.0, 0.0), rows=SENSOR_ROWS, cols=SENSOR_COLS):
    """Noise-free pressure frames [T, rows, cols] in sensor counts."""
    u = squeeze_profile(frames)
    press = np.maximum(u - 0.5 * CONTACT_LEVEL, 0.0) / (1.0 - 0.5 * CONTACT_LEVEL)
    yy, xx = np.mgrid[0:rows, 0:cols].astype(float)
    cy = (rows - 1) / 2 + center[0]
    cx = (cols - 1) / 2 + center[1]
    d2 = ((yy - cy) / 1.0) ** 2 + ((xx - cx) / 1.6) ** 2
    give = 1.0 - latent.stiffness
    base_r = 3.0 + 7.0 * latent.size
    out = np.zeros((frames, rows, cols))
    for t in range(frames):
        if press[t] <= 0:
            continue
        # soft objects spread: wider contact, lower peak
        r = base_r * np.sqrt(press[t]) * (1.0 + 0.8 * give)
        peak = press[t] * (40.0 + 160.0 * latent.stiffness)
        out[t] = peak * np.clip(1.0 - d2 / (r * r), 0.0, None)
        for oy, ox in latent.inclusion_offsets:
            iy, ix = cy + oy * r, cx + ox * r * 1.6
            bump = np.exp(-(((yy - iy) ** 2 + (xx - ix) ** 2) / (2 * 1.3**2)))
            out[t] += press[t] * 120.0 * bump
    return out


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Per-class latent objects, per-grasp placement jitter and sensor noise.

    All per-grasp randomness is scaled by ``cfg.noise``; at noise 0 every grasp
    of a class is identical.
    """
    cfg.validate()
    latent_rng, grasp_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    latents = _class_latents(cfg, latent_rng)
    nz = cfg.noise
    grasps = []
    for c, lat in enumerate(latents):
        for k in range(cfg.grasps_per_class):
            # the object's apparent properties vary with placement
            jit = grasp_rng.normal(size=6)
            seen = replace(
                lat,
                stiffness=float(np.clip(lat.stiffness + 0.06 * nz * jit[0], 0.0, 1.0)),
                size=float(np.clip(lat.size + 0.06 * nz * jit[1], 0.0, 1.2)),
            )
            kin = kinesthetic_mean(seen, cfg.samples, asym=0.05 * nz * jit[2])
            kin = kin + 1.5 * nz * grasp_rng.normal(size=kin.shape)
            tac = tactile_mean(seen, cfg.frames, center=(2.0 * nz * jit[3], 4.0 * nz * jit[4]))
            tac = tac * (1.0 + 0.1 * nz * jit[5]) + 8.0 * nz * grasp_rng.normal(size=tac.shape)
            grasps.append(Grasp(f"c{c + 1:02d}_g{k + 1:03d}", c, np.clip(tac, 0.0, None), kin))
    names = tuple(f"object_{c + 1:02d}" for c in range(cfg.classes))
    return Dataset(tuple(grasps), names)
