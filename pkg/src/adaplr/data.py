"""Synthetic shift tasks, label-noise injectors and stochastic augmentation."""

from __future__ import annotations

import csv
import json
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionError, FormatError, GenerationError, LayoutError, NoiseSpecError,
)
from .numerics import PURPOSE_DATA, RngStream, as_matrix, stream_for

Layout = Union[str, tuple]

# Asymmetric mapping used for digit-like classes: 2->7, 3->8, 7->1, 5<->6.
DIGIT_MAPPING = {2: 7, 3: 8, 7: 1, 5: 6, 6: 5}


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: Optional[np.ndarray]
    num_classes: int
    layout: Layout = "flat"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        if self.features.shape[0] < 1:
            raise GenerationError("dataset must hold at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise GenerationError("features must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.features),):
                raise DimensionError("one label per sample required")
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise GenerationError("labels must lie in [0, C)")
        if self.layout != "flat":
            h, w = self.layout
            if h * w != self.features.shape[1]:
                raise LayoutError(f"grid {h}x{w} does not match {self.features.shape[1]} features")
            self.layout = (int(h), int(w))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def without_labels(self) -> "LabeledDataset":
        return LabeledDataset(self.features, None, self.num_classes, self.layout, dict(self.provenance))

    def subset(self, idx) -> "LabeledDataset":
        lab = None if self.labels is None else self.labels[idx]
        return LabeledDataset(self.features[idx], lab, self.num_classes, self.layout, dict(self.provenance))


# ------------------------------------------------------------------ generators

@dataclass
class ShiftTask:
    """Gaussian clusters on a circle; the target is the source pushed through a transform.

    Class ``k`` sits at angle ``phi_k = 2 pi k / C`` on a circle of ``radius``
    in features 0 and 1. With four or more features the same angle is also
    drawn on a second circle, ``harmonic_weight * radius * (cos, sin)(harmonic
    * phi_k)``, in features 2 and 3; features beyond that are nuisance noise.
    The target turns each plane in ``rotation_planes`` (default: the primary
    circle plane) by ``rotation_deg``: only part of the class signal moves,
    so every class is partially pushed towards its angular neighbour. Then
    per-feature ``scale``, ``translation`` and additive ``feature_noise``
    are applied.
    """

    num_classes: int = 10
    dim: int = 4
    n_source: int = 2000
    n_target: int = 2000
    radius: float = 4.0
    harmonic_weight: float = 0.55
    harmonic: int = 3
    cluster_std: float = 0.5
    primary_std: Optional[float] = 1.5
    nuisance_std: float = 1.0
    rotation_deg: float = 0.0
    rotation_planes: Optional[list] = None
    translation: Union[float, Sequence[float]] = 0.0
    scale: Union[float, Sequence[float]] = 1.0
    feature_noise: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["rotation_planes"] is not None:
            d["rotation_planes"] = [list(p) for p in d["rotation_planes"]]
        for k in ("translation", "scale"):
            if not np.isscalar(d[k]):
                d[k] = [float(v) for v in d[k]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftTask":
        d = dict(d)
        if d.get("rotation_planes") is not None:
            d["rotation_planes"] = [tuple(p) for p in d["rotation_planes"]]
        return cls(**d)

    def planes(self) -> list:
        if self.rotation_planes is not None:
            return [tuple(p) for p in self.rotation_planes]
        return [(0, 1)]


def _blob_samples(task: ShiftTask, n: int, stream: RngStream):
    c, d = task.num_classes, task.dim
    labels = np.arange(n) % c
    labels = labels[stream.permutation(n)]
    angles = 2 * np.pi * np.arange(c) / c
    centres = np.zeros((c, d))
    centres[:, 0] = task.radius * np.cos(angles)
    centres[:, 1] = task.radius * np.sin(angles)
    if d >= 4:
        centres[:, 2] = task.harmonic_weight * task.radius * np.cos(task.harmonic * angles)
        centres[:, 3] = task.harmonic_weight * task.radius * np.sin(task.harmonic * angles)
    n_signal = 4 if d >= 4 else 2
    x = centres[labels] + stream.normal(0.0, task.cluster_std, (n, d))
    if task.primary_std is not None:
        x[:, :2] = centres[labels, :2] + stream.normal(0.0, task.primary_std, (n, 2))
    if d > n_signal:
        x[:, n_signal:] = stream.normal(0.0, task.nuisance_std, (n, d - n_signal))
    return x, labels


def apply_shift(task: ShiftTask, x: np.ndarray, stream: Optional[RngStream] = None) -> np.ndarray:
    """Push features through the task's target transform."""
    d = x.shape[1]
    planes = task.planes()
    used = [k for p in planes for k in p]
    if len(set(used)) != len(used) or not all(0 <= k < d for k in used):
        raise GenerationError(f"rotation planes {planes} must be disjoint feature pairs below {d}")
    theta = np.deg2rad(task.rotation_deg)
    rot = np.eye(d)
    for i, j in planes:
        rot[i, i] = rot[j, j] = np.cos(theta)
        rot[i, j], rot[j, i] = -np.sin(theta), np.sin(theta)
    out = x @ rot.T
    out = out * np.broadcast_to(np.asarray(task.scale, dtype=float), (d,))
    out = out + np.broadcast_to(np.asarray(task.translation, dtype=float), (d,))
    if task.feature_noise > 0:
        if stream is None:
            raise GenerationError("feature noise needs a random stream")
        out = out + stream.normal(0.0, task.feature_noise, out.shape)
    return out


def generate_blob_task(task: ShiftTask) -> tuple[LabeledDataset, LabeledDataset]:
    """Source and target datasets of a blob shift task (target keeps hidden truth)."""
    if task.num_classes < 2 or task.dim < 2:
        raise GenerationError("need C >= 2 and D >= 2")
    if not task.radius > 0:
        raise GenerationError("zero cluster separation")
    if task.n_source < 1 or task.n_target < 1:
        raise GenerationError("sample counts must be positive")
    params = [task.radius, task.harmonic_weight, task.cluster_std, task.nuisance_std, task.rotation_deg, task.feature_noise]
    if not np.all(np.isfinite(params + list(np.ravel(task.translation)) + list(np.ravel(task.scale)))):
        raise GenerationError("transform parameters must be finite")
    xs, ys = _blob_samples(task, task.n_source, stream_for(task.seed, PURPOSE_DATA, 0))
    xt, yt = _blob_samples(task, task.n_target, stream_for(task.seed, PURPOSE_DATA, 1))
    xt = apply_shift(task, xt, stream_for(task.seed, PURPOSE_DATA, 2))
    prov = {"generator": "blobs", "seed": task.seed}
    return (LabeledDataset(xs, ys, task.num_classes, "flat", {**prov, "domain": "source"}),
            LabeledDataset(xt, yt, task.num_classes, "flat", {**prov, "domain": "target"}))


_GLYPHS = {
    0: [".####.", "#....#", "#...##", "#..#.#", "#.#..#", "##...#", "#....#", ".####."],
    1: ["..##..", ".###..", "..##..", "..##..", "..##..", "..##..", "..##..", ".####."],
    2: [".####.", "#....#", ".....#", "....#.", "...#..", "..#...", ".#....", "######"],
    3: [".####.", "#....#", ".....#", "..###.", ".....#", ".....#", "#....#", ".####."],
    4: ["....#.", "...##.", "..#.#.", ".#..#.", "#...#.", "######", "....#.", "....#."],
    5: ["######", "#.....", "#.....", "#####.", ".....#", ".....#", "#....#", ".####."],
    6: [".####.", "#.....", "#.....", "#####.", "#....#", "#....#", "#....#", ".####."],
    7: ["######", ".....#", "....#.", "...#..", "..#...", "..#...", "..#...", "..#..."],
    8: [".####.", "#....#", "#....#", ".####.", "#....#", "#....#", "#....#", ".####."],
    9: [".####.", "#....#", "#....#", ".#####", ".....#", ".....#", "....#.", ".###.."],
}


def digit_glyphs() -> np.ndarray:
    """Ten 8x8 digit rasters (values 0/1), glyphs centred in 6 columns."""
    out = np.zeros((10, 8, 8))
    for k, rows in _GLYPHS.items():
        out[k, :, 1:7] = [[ch == "#" for ch in r] for r in rows]
    return out


@dataclass
class DigitTask:
    """8x8 raster digits; the target domain thickens strokes, blurs and lowers contrast."""

    n_source: int = 2000
    n_target: int = 2000
    pixel_noise: float = 0.15
    max_shift: int = 1
    target_dilate: int = 1
    target_blur: float = 0.6
    target_contrast: float = 0.6
    seed: int = 0


def _digit_samples(task: DigitTask, n: int, stream: RngStream, target: bool):
    glyphs = digit_glyphs()
    labels = (np.arange(n) % 10)[stream.permutation(n)]
    imgs = glyphs[labels].copy()
    if target:
        for _ in range(task.target_dilate):
            imgs = np.stack([ndimage.grey_dilation(im, size=(1, 2)) for im in imgs])
        imgs = ndimage.gaussian_filter(imgs, sigma=(0, task.target_blur, task.target_blur))
        imgs = task.target_contrast * imgs + (1 - task.target_contrast) * 0.5
    shifts = stream.integers(-task.max_shift, task.max_shift + 1, (n, 2))
    imgs = np.stack([np.roll(im, tuple(s), axis=(0, 1)) for im, s in zip(imgs, shifts)])
    imgs = imgs + stream.normal(0.0, task.pixel_noise, imgs.shape)
    return imgs.reshape(n, 64), labels


def generate_digit_task(task: DigitTask) -> tuple[LabeledDataset, LabeledDataset]:
    xs, ys = _digit_samples(task, task.n_source, stream_for(task.seed, PURPOSE_DATA, 10), False)
    xt, yt = _digit_samples(task, task.n_target, stream_for(task.seed, PURPOSE_DATA, 11), True)
    prov = {"generator": "digits", "seed": task.seed}
    return (LabeledDataset(xs, ys, 10, (8, 8), {**prov, "domain": "source"}),
            LabeledDataset(xt, yt, 10, (8, 8), {**prov, "domain": "target"}))


# ---------------------------------------------------------------- label noise

@dataclass
class NoiseSpec:
    kind: str                      # "symmetric" | "asymmetric" | "shift"
    rate: float = 0.0
    mapping: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric", "shift"):
            raise NoiseSpecError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise NoiseSpecError("noise rate must lie in [0, 1]")
        if self.kind == "asymmetric":
            _check_mapping(self.mapping)


def _check_mapping(mapping) -> dict:
    if not mapping:
        raise NoiseSpecError("asymmetric noise needs a non-empty mapping")
    m = {int(k): int(v) for k, v in mapping.items()}
    fixed = [k for k, v in m.items() if k == v]
    if fixed:
        raise NoiseSpecError(f"mapping has fixed points {fixed}")
    return m


def corrupted_count(rate: float, n: int) -> int:
    """``round(rate * n)`` with halves rounded up, on the decimal form of ``rate``.

    0.3297 * 25000 is 8242.5 in decimal but not in binary; this gives 8243.
    """
    return int((Decimal(repr(float(rate))) * n).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def inject_symmetric_noise(labels, rate: float, stream: RngStream, num_classes: int) -> np.ndarray:
    """Relabel exactly ``round(rate * N)`` uniformly chosen samples to a uniform *different* class."""
    if not 0.0 <= rate <= 1.0:
        raise NoiseSpecError("noise rate must lie in [0, 1]")
    y = np.asarray(labels, dtype=np.int64).copy()
    n_bad = corrupted_count(rate, len(y))
    idx = stream.permutation(len(y))[:n_bad]
    y[idx] = (y[idx] + stream.integers(1, num_classes, n_bad)) % num_classes
    return y


def inject_asymmetric_noise(labels, rate: float, mapping: dict, stream: RngStream) -> np.ndarray:
    """Relabel ``round(rate * M)`` of the ``M`` samples whose class is mapped."""
    m = _check_mapping(mapping)
    if not 0.0 <= rate <= 1.0:
        raise NoiseSpecError("noise rate must lie in [0, 1]")
    y = np.asarray(labels, dtype=np.int64).copy()
    eligible = np.flatnonzero(np.isin(y, list(m)))
    n_bad = corrupted_count(rate, len(eligible))
    idx = eligible[stream.permutation(len(eligible))[:n_bad]]
    y[idx] = [m[int(v)] for v in y[idx]]
    return y


def asymmetric_rate_for(labels, mapping: dict, global_rate: float) -> float:
    """Per-eligible-sample rate giving ``global_rate`` corrupted labels overall."""
    m = _check_mapping(mapping)
    y = np.asarray(labels)
    eligible = np.count_nonzero(np.isin(y, list(m)))
    r = global_rate * len(y) / max(eligible, 1)
    if r > 1.0:
        raise NoiseSpecError(f"mapped classes cover too few samples for rate {global_rate}")
    return r


def inject_shift_noise(source_model, target: LabeledDataset):
    """Pseudo-labels inferred by the source model; noise = disagreement with hidden truth."""
    from .labels import infer_pseudo_labels_aggregated
    return infer_pseudo_labels_aggregated(source_model, target.features, target.num_classes,
                                          true_labels=target.labels)


# ---------------------------------------------------------------- augmentation

def _need_grid(layout, name):
    if layout == "flat" or layout is None:
        raise LayoutError(f"{name} needs an HxW grid layout")
    return layout


def _resample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="nearest")


@dataclass
class CropResize:
    area: tuple = (0.08, 1.0)
    aspect: tuple = (3 / 4, 4 / 3)

    def apply(self, x, stream, layout):
        h, w = _need_grid(layout, "crop_resize")
        out = np.empty_like(x)
        for n, img in enumerate(x.reshape(-1, h, w)):
            a = stream.uniform(*self.area)
            r = np.exp(stream.uniform(np.log(self.aspect[0]), np.log(self.aspect[1])))
            ch = min(h, np.sqrt(a / r) * h)
            cw = min(w, np.sqrt(a * r) * w)
            top = stream.uniform(0.0, h - ch)
            left = stream.uniform(0.0, w - cw)
            # pixel centres of the crop, rescaled to the full grid
            rows = top + (np.arange(h) + 0.5) * ch / h - 0.5
            cols = left + (np.arange(w) + 0.5) * cw / w - 0.5
            out[n] = _resample(img, rows, cols).ravel()
        return out


@dataclass
class AffineJitter:
    max_rotation_deg: float = 10.0
    max_shear_deg: float = 5.0

    def apply(self, x, stream, layout):
        h, w = _need_grid(layout, "affine_jitter")
        out = np.empty_like(x)
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        for n, img in enumerate(x.reshape(-1, h, w)):
            t = np.deg2rad(stream.uniform(-self.max_rotation_deg, self.max_rotation_deg))
            s = np.tan(np.deg2rad(stream.uniform(-self.max_shear_deg, self.max_shear_deg)))
            mat = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]) @ np.array([[1, s], [0, 1]])
            offset = centre - mat @ centre
            out[n] = ndimage.affine_transform(img, mat, offset, order=1, mode="nearest").ravel()
        return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


@dataclass
class GaussianBlur:
    sigma: tuple = (0.1, 1.0)

    def apply(self, x, stream, layout):
        h, w = _need_grid(layout, "gaussian_blur")
        out = np.empty_like(x)
        for n, img in enumerate(x.reshape(-1, h, w)):
            k = gaussian_kernel(stream.uniform(*self.sigma))
            img = ndimage.convolve1d(img, k, axis=0, mode="nearest")
            out[n] = ndimage.convolve1d(img, k, axis=1, mode="nearest").ravel()
        return out


@dataclass
class ChannelDistort:
    scale: tuple = (0.8, 1.2)
    offset: tuple = (-0.1, 0.1)

    def apply(self, x, stream, layout):
        s = stream.uniform(*self.scale, (len(x), 1))
        o = stream.uniform(*self.offset, (len(x), 1))
        return x * s + o


@dataclass
class FeatureJitter:
    sigma: float = 0.1

    def apply(self, x, stream, layout):
        if self.sigma == 0:
            return x.copy()
        return x + stream.normal(0.0, self.sigma, x.shape)


@dataclass
class RandomMask:
    drop: float = 0.1

    def apply(self, x, stream, layout):
        return x * (stream.random(x.shape) >= self.drop)


TRANSFORMS = {
    "crop_resize": CropResize, "affine_jitter": AffineJitter, "gaussian_blur": GaussianBlur,
    "channel_distort": ChannelDistort, "feature_jitter": FeatureJitter, "random_mask": RandomMask,
}


@dataclass
class AugmentationSpec:
    transforms: list = field(default_factory=list)
    layout: Layout = "flat"

    @classmethod
    def from_list(cls, items: Sequence[dict], layout: Layout = "flat") -> "AugmentationSpec":
        """Build from ``[{"name": "feature_jitter", "sigma": 0.3}, ...]``."""
        ts = []
        for item in items:
            item = dict(item)
            ts.append(TRANSFORMS[item.pop("name")](**item))
        return cls(ts, layout)

    def to_list(self) -> list:
        inv = {v: k for k, v in TRANSFORMS.items()}
        return [{"name": inv[type(t)], **asdict(t)} for t in self.transforms]


def default_augmentation(layout: Layout = "flat") -> AugmentationSpec:
    if layout == "flat":
        return AugmentationSpec([FeatureJitter(0.5), RandomMask(0.1)], layout)
    return AugmentationSpec([CropResize(), AffineJitter(), GaussianBlur(), ChannelDistort()], layout)


def augment(batch, spec: AugmentationSpec, stream: RngStream) -> np.ndarray:
    """Apply the spec's transforms in order with fresh random draws per sample."""
    x = as_matrix(batch, "batch").copy()
    for t in spec.transforms:
        x = t.apply(x, stream, spec.layout)
    return x


# ------------------------------------------------------------------------ I/O

def write_dataset(ds: LabeledDataset, csv_path) -> tuple[Path, Path]:
    """Write ``<name>.csv`` (features + label) and a ``<name>.json`` sidecar."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"feature_{i}" for i in range(ds.dim)]
        w.writerow(header + (["label"] if ds.labels is not None else []))
        for i, row in enumerate(ds.features):
            vals = [repr(float(v)) for v in row]
            if ds.labels is not None:
                vals.append(int(ds.labels[i]))
            w.writerow(vals)
    sidecar = csv_path.with_suffix(".json")
    layout = "flat" if ds.layout == "flat" else list(ds.layout)
    sidecar.write_text(json.dumps({"num_classes": ds.num_classes, "layout": layout,
                                   "provenance": ds.provenance}, indent=2, sort_keys=True))
    return csv_path, sidecar


def read_dataset(csv_path) -> LabeledDataset:
    csv_path = Path(csv_path)
    try:
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        with csv_path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        has_label = header[-1] == "label"
        n_feat = len(header) - has_label
        feats = np.array([[float(v) for v in r[:n_feat]] for r in body]).reshape(len(body), n_feat)
        labels = np.array([int(r[n_feat]) for r in body]) if has_label else None
    except (OSError, ValueError, IndexError, KeyError) as exc:
        raise FormatError(f"{csv_path}: cannot read dataset ({exc})") from exc
    layout = meta["layout"]
    layout = "flat" if layout == "flat" else tuple(layout)
    return LabeledDataset(feats, labels, int(meta["num_classes"]), layout, meta.get("provenance", {}))
