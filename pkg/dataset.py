"""
Metadata ingestion, label binarization, patient-level splits, image loading
and resizing for chest X-ray manifests.

Metadata CSV columns:
    Image Index, Finding Labels, Patient ID[, Patient Age, Patient Gender, View Position]

"Finding Labels" is either pipe-separated (wide format, one row per image) or a
single label per row (long format, rows merged by image id). "No Finding" is
encoded as the all-zero label vector.
"""

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from errors import ConfigError, MetadataError, MissingDataError
from npy_io import read_npy, write_npy

LABELS: Tuple[str, ...] = (
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
)
NO_FINDING = "No Finding"
BINARY_CLASSES: Tuple[str, str] = (NO_FINDING, "Disease Present")

IMAGE_COL = "Image Index"
LABEL_COL = "Finding Labels"
PATIENT_COL = "Patient ID"
AGE_COL = "Patient Age"
SEX_COL = "Patient Gender"
VIEW_COL = "View Position"
SPLIT_COL = "Split"
REQUIRED_COLUMNS = {IMAGE_COL, LABEL_COL, PATIENT_COL}
MANIFEST_COLUMNS = [IMAGE_COL, LABEL_COL, PATIENT_COL, AGE_COL, SEX_COL, VIEW_COL, SPLIT_COL]

UNKNOWN = "unknown"
SEXES = ("M", "F")
VIEWS = ("PA", "AP")
IMAGE_SUFFIXES = (".npy", ".pgm")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    patient_id: str
    labels: Tuple[int, ...]  # 14 entries aligned to LABELS
    age: Optional[int] = None
    sex: str = UNKNOWN
    view_position: str = UNKNOWN

    @property
    def label_vector(self) -> np.ndarray:
        return np.array(self.labels, dtype=np.float64)

    @property
    def label_names(self) -> List[str]:
        return [name for name, bit in zip(LABELS, self.labels) if bit]


@dataclass
class DatasetManifest:
    records: List[SampleRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord]) -> "DatasetManifest":
        ids = [r.image_id for r in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise MetadataError(f"duplicate image ids in manifest: {dupes}")
        return cls(sorted(records, key=lambda r: r.image_id))

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def label_counts(self) -> np.ndarray:
        """Per-disease positive counts n_i"""
        if not self.records:
            return np.zeros(len(LABELS), dtype=np.int64)
        return np.array([r.labels for r in self.records], dtype=np.int64).sum(axis=0)

    @property
    def binary_counts(self) -> np.ndarray:
        """Counts of [No Finding, Disease Present]"""
        diseased = sum(derive_binary_label(r.labels) for r in self.records)
        return np.array([self.total - diseased, diseased], dtype=np.int64)

    @property
    def patients(self) -> List[str]:
        return sorted({r.patient_id for r in self.records})

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class SplitSpec:
    fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise ConfigError(
                f"split needs (train, val, test) fractions, got {self.fractions}"
            )
        if any(f < 0 for f in self.fractions):
            raise ConfigError(f"split fractions must be non-negative, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(
                f"split fractions must sum to 1, got {self.fractions} (sum {sum(self.fractions)})"
            )


# ---------------------------------------------------------------------------
# Metadata parsing
# ---------------------------------------------------------------------------


def _validate_columns(df: pd.DataFrame, data_type: str, required_cols: set):
    missing_cols = required_cols - set(df.columns)
    if missing_cols:
        raise MetadataError(
            f"{data_type} missing required columns: {sorted(missing_cols)}"
        )


def _parse_age(value: str, row_number: int) -> Optional[int]:
    if value == "":
        return None
    try:
        years = float(value.rstrip("Yy"))
        if not np.isfinite(years):
            raise ValueError(value)
        age = int(years)
    except (ValueError, OverflowError):
        raise MetadataError(f"row {row_number}: invalid patient age '{value}'")
    if age < 0:
        raise MetadataError(f"row {row_number}: negative patient age {age}")
    return age


def _normalize(value: str, allowed: Tuple[str, ...]) -> str:
    value = value.strip().upper()
    return value if value in allowed else UNKNOWN


@dataclass
class _PendingImage:
    patient_id: str
    first_row: int
    labels: set = field(default_factory=set)
    no_finding: bool = False
    age: Optional[int] = None
    sex: str = UNKNOWN
    view_position: str = UNKNOWN


def parse_metadata(text: str) -> List[SampleRecord]:
    """Parse wide- or long-format metadata into records sorted by image id"""
    try:
        df = pd.read_csv(
            io.StringIO(text), dtype=str, keep_default_na=False,
            skipinitialspace=True, skip_blank_lines=False,
        )
    except pd.errors.EmptyDataError:
        raise MetadataError("metadata has no header row")
    df = df.fillna("")  # blank lines and short rows
    df.columns = [str(c).strip() for c in df.columns]
    _validate_columns(df, "metadata", REQUIRED_COLUMNS)

    pending: Dict[str, _PendingImage] = {}
    for index, row in df.iterrows():
        row_number = index + 2  # header is row 1
        if all(str(value).strip() == "" for value in row):
            continue
        image_id = row[IMAGE_COL].strip()
        patient_id = row[PATIENT_COL].strip()
        if not image_id:
            raise MetadataError(f"row {row_number}: empty image id")
        if not patient_id:
            raise MetadataError(f"row {row_number}: empty patient id for {image_id}")

        entry = pending.get(image_id)
        if entry is None:
            entry = pending[image_id] = _PendingImage(patient_id, row_number)
        elif entry.patient_id != patient_id:
            raise MetadataError(
                f"row {row_number}: image {image_id} has conflicting patient ids "
                f"'{entry.patient_id}' (row {entry.first_row}) and '{patient_id}'"
            )

        for name in row[LABEL_COL].split("|"):
            name = name.strip()
            if name == NO_FINDING:
                entry.no_finding = True
            elif name in LABELS:
                entry.labels.add(name)
            elif name == "":
                raise MetadataError(f"row {row_number}: empty finding label for {image_id}")
            else:
                raise MetadataError(f"row {row_number}: unknown disease label '{name}'")
        if entry.no_finding and entry.labels:
            raise MetadataError(
                f"row {row_number}: image {image_id} is marked both '{NO_FINDING}' "
                f"and {sorted(entry.labels)}"
            )

        if AGE_COL in df.columns and entry.age is None:
            entry.age = _parse_age(row[AGE_COL].strip(), row_number)
        if SEX_COL in df.columns and entry.sex == UNKNOWN:
            entry.sex = _normalize(row[SEX_COL], SEXES)
        if VIEW_COL in df.columns and entry.view_position == UNKNOWN:
            entry.view_position = _normalize(row[VIEW_COL], VIEWS)

    return [
        SampleRecord(
            image_id=image_id,
            patient_id=entry.patient_id,
            labels=tuple(int(name in entry.labels) for name in LABELS),
            age=entry.age,
            sex=entry.sex,
            view_position=entry.view_position,
        )
        for image_id, entry in sorted(pending.items())
    ]


def derive_binary_label(labels) -> int:
    """1 (Disease Present) iff any disease bit is set"""
    return int(np.any(np.asarray(labels) != 0))


# ---------------------------------------------------------------------------
# Manifest CSV
# ---------------------------------------------------------------------------


def manifest_frame(manifest: DatasetManifest, split: str) -> pd.DataFrame:
    rows = [
        {
            IMAGE_COL: r.image_id,
            LABEL_COL: "|".join(r.label_names) or NO_FINDING,
            PATIENT_COL: r.patient_id,
            AGE_COL: "" if r.age is None else str(r.age),
            SEX_COL: "" if r.sex == UNKNOWN else r.sex,
            VIEW_COL: "" if r.view_position == UNKNOWN else r.view_position,
            SPLIT_COL: split,
        }
        for r in manifest.records
    ]
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def write_manifest_csv(manifest: DatasetManifest, split: str, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_frame(manifest, split).to_csv(path, index=False)
    return path


def read_manifest_csv(path: PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise MissingDataError(f"manifest not found: {path}", [str(path)])
    return DatasetManifest.from_records(parse_metadata(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


# greyscale modes Pillow decodes PGM into, with the full-scale value of each
PGM_SCALES = {"L": 255.0, "I": 65535.0, "I;16": 65535.0, "I;16B": 65535.0}


def _read_pgm(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            pixels = np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise ConfigError(f"{path}: unreadable PGM: {e}") from e
    if mode not in PGM_SCALES:
        raise ConfigError(f"{path}: expected a greyscale PGM, got image mode '{mode}'")
    return (pixels.astype(np.float64) / PGM_SCALES[mode])[None]


def load_image(path: PathLike) -> np.ndarray:
    """Load an NPY or greyscale PGM image as a C x H x W float64 array in [0, 1]"""
    path = Path(path)
    if not path.exists():
        raise MissingDataError(f"image not found: {path}", [str(path)])
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix != ".npy":
        raise ConfigError(f"{path}: unsupported image format '{suffix}', expected .npy or .pgm")

    array = np.load(path, allow_pickle=False)
    if array.dtype.kind in "ui":
        array = array.astype(np.float64) / np.iinfo(array.dtype).max
    else:
        array = array.astype(np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ConfigError(f"{path}: image must be H x W or C x H x W, got shape {array.shape}")
    return array


def find_image(image_dir: PathLike, image_id: str) -> Optional[Path]:
    """Resolve an image id to a file: exact name first, then <stem>.npy / <stem>.pgm"""
    image_dir = Path(image_dir)
    exact = image_dir / image_id
    if exact.exists() and exact.suffix.lower() in IMAGE_SUFFIXES:
        return exact
    for suffix in IMAGE_SUFFIXES:
        candidate = image_dir / f"{Path(image_id).stem}{suffix}"
        if candidate.exists():
            return candidate
    return None


def image_stem(image_id: str) -> str:
    return Path(image_id).stem


def _axis_taps(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_image(image, target: Tuple[int, int] = (256, 256)) -> np.ndarray:
    """Bilinear resize with half-pixel centre alignment"""
    x = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"image must be a non-empty C x H x W array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite pixels")
    out_h, out_w = target
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be positive, got {target}")

    r0, r1, fr = _axis_taps(x.shape[1], out_h)
    c0, c1, fc = _axis_taps(x.shape[2], out_w)
    rows = x[:, r0, :] * (1.0 - fr)[None, :, None] + x[:, r1, :] * fr[None, :, None]
    return rows[:, :, c0] * (1.0 - fc)[None, None, :] + rows[:, :, c1] * fc[None, None, :]


# ---------------------------------------------------------------------------
# Selection and splitting
# ---------------------------------------------------------------------------


def subsample(records: Sequence[SampleRecord], n: Optional[int], seed: int) -> List[SampleRecord]:
    """Seeded uniform subset without replacement, kept in input order"""
    records = list(records)
    if n is None or n >= len(records):
        return records
    if n < 1:
        raise ConfigError(f"subset size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(records), size=n, replace=False))
    return [records[i] for i in chosen]


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def patient_split(
    manifest: DatasetManifest, spec: SplitSpec
) -> Tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Partition by patient: seeded permutation, then train/val/test by patient count"""
    if manifest.total == 0:
        raise ConfigError("cannot split an empty manifest")
    patients = manifest.patients
    order = np.random.default_rng(spec.seed).permutation(len(patients))

    n_train = min(_round_half_up(spec.fractions[0] * len(patients)), len(patients))
    n_val = min(_round_half_up(spec.fractions[1] * len(patients)), len(patients) - n_train)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignment[patients[idx]] = 0
        elif rank < n_train + n_val:
            assignment[patients[idx]] = 1
        else:
            assignment[patients[idx]] = 2

    buckets: Tuple[List[SampleRecord], ...] = ([], [], [])
    for record in manifest.records:
        buckets[assignment[record.patient_id]].append(record)
    return tuple(DatasetManifest(list(b)) for b in buckets)


# ---------------------------------------------------------------------------
# Demographics
# ---------------------------------------------------------------------------


def _age_bin(age: Optional[int]) -> str:
    if age is None:
        return UNKNOWN
    low = (age // 10) * 10
    return f"{low}-{low + 9}"


@dataclass
class DemographicsSummary:
    total: int
    label_counts: Dict[str, int]
    age_bins: Dict[str, int]
    sex_counts: Dict[str, int]
    view_counts: Dict[str, int]

    def sections(self) -> List[Tuple[str, Dict[str, int]]]:
        return [
            ("labels", self.label_counts),
            ("age", self.age_bins),
            ("sex", self.sex_counts),
            ("view", self.view_counts),
        ]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"section": section, "category": category, "count": count}
            for section, counts in self.sections()
            for category, count in counts.items()
        ]
        return pd.DataFrame(rows, columns=["section", "category", "count"])

    def to_text(self) -> str:
        lines = [f"Total images: {self.total}"]
        titles = {
            "labels": "Finding label counts",
            "age": "Age (decade bins)",
            "sex": "Sex",
            "view": "View position",
        }
        for section, counts in self.sections():
            lines.append("")
            lines.append(titles[section])
            lines.append("-" * len(titles[section]))
            for category, count in counts.items():
                lines.append(f"  {category:<20} {count}")
        return "\n".join(lines) + "\n"


def summarize_demographics(manifest: DatasetManifest) -> DemographicsSummary:
    label_counts = {name: int(n) for name, n in zip(LABELS, manifest.label_counts)}
    label_counts[NO_FINDING] = int(manifest.binary_counts[0])

    ages: Dict[str, int] = {}
    sexes = {s: 0 for s in SEXES + (UNKNOWN,)}
    views = {v: 0 for v in VIEWS + (UNKNOWN,)}
    for r in manifest.records:
        key = _age_bin(r.age)
        ages[key] = ages.get(key, 0) + 1
        sexes[r.sex] += 1
        views[r.view_position] += 1

    known = sorted((k for k in ages if k != UNKNOWN), key=lambda k: int(k.split("-")[0]))
    age_bins = {k: ages[k] for k in known}
    age_bins[UNKNOWN] = ages.get(UNKNOWN, 0)
    return DemographicsSummary(manifest.total, label_counts, age_bins, sexes, views)


# ---------------------------------------------------------------------------
# In-memory arrays for training
# ---------------------------------------------------------------------------


@dataclass
class ArrayDataset:
    images: np.ndarray  # (N, C, H, W)
    labels: np.ndarray  # (N, 14) multi-hot
    image_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0], len(LABELS)):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.images.shape[0]} images x {len(LABELS)} classes"
            )
        if not self.image_ids:
            self.image_ids = [f"sample_{i}" for i in range(self.images.shape[0])]

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def binary_targets(self) -> np.ndarray:
        """One-hot [No Finding, Disease Present]"""
        diseased = (self.labels.sum(axis=1) > 0).astype(np.float64)
        return np.stack([1.0 - diseased, diseased], axis=1)

    def targets(self, task: str) -> np.ndarray:
        if task == "binary":
            return self.binary_targets()
        if task == "multilabel":
            return self.labels.copy()
        raise ConfigError(f"unknown task '{task}', expected 'binary' or 'multilabel'")

    def subset(self, indices) -> "ArrayDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ArrayDataset(
            self.images[indices], self.labels[indices], [self.image_ids[i] for i in indices]
        )

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, image_dir: PathLike) -> "ArrayDataset":
        """Load <image_dir>/<stem>.npy for every record"""
        if manifest.total == 0:
            raise ConfigError("manifest is empty")
        image_dir = Path(image_dir)
        paths = [image_dir / f"{image_stem(r.image_id)}.npy" for r in manifest.records]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingDataError(
                f"{len(missing)} image arrays missing: {', '.join(missing)}", missing
            )
        images = [read_npy(p) for p in paths]
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise ConfigError(f"image arrays have inconsistent shapes: {sorted(shapes)}")
        return cls(
            np.stack(images).astype(np.float64),
            np.array([r.labels for r in manifest.records], dtype=np.float64),
            [r.image_id for r in manifest.records],
        )


def save_image_array(image: np.ndarray, image_dir: PathLike, image_id: str) -> Path:
    path = Path(image_dir) / f"{image_stem(image_id)}.npy"
    write_npy(np.asarray(image, dtype=np.float32), path)
    return path
