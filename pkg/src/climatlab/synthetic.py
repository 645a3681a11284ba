"""Deterministic synthetic longitudinal cohorts.

Each subject gets a baseline toy radiograph (two bright bands whose gap
narrows with grade), a handful of clinical variables correlated with a latent
progression rate, a non-decreasing grade trajectory driven by that rate, and
per-horizon availability masks. Generation is reproducible byte-for-byte from
the master seed via per-subject derived seeds.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ClinicalVariable:
    """Schema entry for one clinical variable.

    Numerical variables are drawn in [lo, hi]; categorical ones take `levels`
    labels. `noise` blurs the link to the latent progression rate (an
    uninformative variable is pure noise).
    """

    name: str
    kind: str  # "numerical" | "categorical"
    levels: int = 2
    lo: float = 0.0
    hi: float = 1.0
    noise: float = 0.15
    informative: bool = True

    @property
    def onehot_width(self) -> int:
        return 4 if self.kind == "numerical" else self.levels


def default_variables():
    return [
        ClinicalVariable("age", "numerical", lo=45.0, hi=79.0, noise=0.15),
        ClinicalVariable("bmi", "numerical", lo=20.0, hi=36.0, noise=0.2),
        ClinicalVariable("symptom_score", "numerical", lo=0.0, hi=100.0, noise=0.1),
        ClinicalVariable("sex", "categorical", levels=2, informative=False),
        ClinicalVariable("injury", "categorical", levels=2, noise=0.25),
        ClinicalVariable("surgery", "categorical", levels=2, noise=0.3),
    ]


@dataclass
class CohortConfig:
    subjects: int = 2000
    horizons: int = 4
    grades: int = 3
    image_size: int = 64
    patch: int = 16
    initial_grade_probs: list = None
    rate_beta: tuple = (1.2, 2.8)
    missingness: list = None
    noise_sd: float = 8.0
    gap_range: tuple = (26, 8)
    band_thickness: int = 8
    band_value: int = 230
    background: int = 25
    variables: list = field(default_factory=default_variables)
    seed: int = 0

    def __post_init__(self):
        if self.grades < 2:
            raise ValueError("need at least 2 grades")
        if self.initial_grade_probs is None:
            w = np.linspace(1.0, 0.6, self.grades)
            self.initial_grade_probs = list(w / w.sum())
        if len(self.initial_grade_probs) != self.grades:
            raise ValueError("initial_grade_probs must have one entry per grade")
        if self.missingness is None:
            self.missingness = [0.0] + [
                min(0.1 + 0.05 * t, 0.4) for t in range(self.horizons)
            ]
        if len(self.missingness) != self.horizons + 1:
            raise ValueError(f"missingness needs {self.horizons + 1} entries")
        if self.missingness[0] != 0.0:
            raise ValueError("the baseline label (t=0) is never masked")
        if any(not 0.0 <= m < 1.0 for m in self.missingness):
            raise ValueError("missingness rates must lie in [0, 1)")
        self.variables = [
            v if isinstance(v, ClinicalVariable) else ClinicalVariable(**v)
            for v in self.variables
        ]

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["rate_beta"] = list(self.rate_beta)
        d["gap_range"] = list(self.gap_range)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "CohortConfig":
        d = dict(d)
        if "rate_beta" in d:
            d["rate_beta"] = tuple(d["rate_beta"])
        if "gap_range" in d:
            d["gap_range"] = tuple(d["gap_range"])
        return cls(**d)


def kl_style_preset(**overrides) -> CohortConfig:
    """5-grade preset mirroring a KL-like grading scale."""
    base = dict(grades=5, gap_range=(28, 4), rate_beta=(1.5, 2.5))
    base.update(overrides)
    return CohortConfig(**base)


# ---------------------------------------------------------------------------
# Sampling primitives
# ---------------------------------------------------------------------------

def sample_trajectory(initial_grade: int, rate: float, horizons: int, grades: int, rng):
    """Saturating Markov chain: y_{t+1} = min(y_t + Bernoulli(rate), grades-1)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    traj = [int(initial_grade)]
    for _ in range(horizons):
        step = 1 if rng.random() < rate else 0
        traj.append(min(traj[-1] + step, grades - 1))
    return traj


def sample_masks(missingness, rng):
    """Per-horizon availability: 1 = observed. t=0 always observed."""
    masks = [1]
    for rate in missingness[1:]:
        masks.append(0 if rng.random() < rate else 1)
    return masks


def render_image(grade: int, noise_sd: float, rng, *, grades: int = 3,
                 size: int = 64, gap_range=(26, 8), band_thickness: int = 8,
                 band_value: int = 230, background: int = 25) -> np.ndarray:
    """Two bright horizontal bands; the gap between them shrinks linearly
    with grade. Adds Gaussian pixel noise and a random translation of at most
    2 px. Identical (grade, rng state) gives an identical image."""
    gap_max, gap_min = gap_range
    gap = int(round(gap_max - (gap_max - gap_min) * grade / (grades - 1)))
    dy = int(rng.integers(-2, 3))
    dx = int(rng.integers(-2, 3))
    img = np.full((size, size), float(background))
    cy = size // 2 + dy
    half = gap // 2
    col_lo, col_hi = 6 + dx, size - 6 + dx
    upper = slice(max(cy - half - band_thickness, 0), max(cy - half, 0))
    lower = slice(min(cy + (gap - half), size), min(cy + (gap - half) + band_thickness, size))
    img[upper, col_lo:col_hi] = band_value
    img[lower, col_lo:col_hi] = band_value
    img += rng.normal(0.0, noise_sd, size=(size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _clinical_values(var: ClinicalVariable, rate: float, rng):
    z = rng.normal()
    if var.kind == "numerical":
        u = np.clip(rate + var.noise * z, 0.0, 1.0) if var.informative else rng.random()
        return var.lo + (var.hi - var.lo) * float(u)
    if var.informative:
        u = np.clip(rate + var.noise * z, 0.0, 0.999999)
        return int(u * var.levels)
    return int(rng.integers(var.levels))


# ---------------------------------------------------------------------------
# PGM I/O
# ---------------------------------------------------------------------------

def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    stream = io.BytesIO(data)
    magic = stream.readline().strip()
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    dims = stream.readline().split()
    w, h = int(dims[0]), int(dims[1])
    maxval = int(stream.readline())
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(stream.read(w * h), dtype=np.uint8)
    return pixels.reshape(h, w)


# ---------------------------------------------------------------------------
# Cohort generation and loading
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
TABLE_NAME = "cohort.csv"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def generate_subject(cfg: CohortConfig, rng):
    """Draw one subject: latent rate, trajectory, clinical values, masks,
    and the rendered baseline image."""
    rate = float(rng.beta(*cfg.rate_beta))
    initial = int(rng.choice(cfg.grades, p=cfg.initial_grade_probs))
    traj = sample_trajectory(initial, rate, cfg.horizons, cfg.grades, rng)
    clinical = {v.name: _clinical_values(v, rate, rng) for v in cfg.variables}
    masks = sample_masks(cfg.missingness, rng)
    image = render_image(
        traj[0], cfg.noise_sd, rng, grades=cfg.grades, size=cfg.image_size,
        gap_range=cfg.gap_range, band_thickness=cfg.band_thickness,
        band_value=cfg.band_value, background=cfg.background,
    )
    return {"rate": rate, "trajectory": traj, "clinical": clinical,
            "masks": masks, "image": image}


def generate_cohort(cfg: CohortConfig, out_dir) -> Path:
    """Write images/, cohort.csv and manifest.json under out_dir. Fully
    reproducible: per-subject generators are spawned from the master seed, so
    regeneration (serial or parallel by subject) is byte-identical."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.subjects)

    header = (["subject_id"]
              + [v.name for v in cfg.variables]
              + [f"y_{t}" for t in range(cfg.horizons + 1)]
              + [f"mask_{t}" for t in range(cfg.horizons + 1)])
    rows = []
    image_files = []
    for i in range(cfg.subjects):
        rng = np.random.Generator(np.random.PCG64(seeds[i]))
        subject = generate_subject(cfg, rng)
        sid = f"subj_{i:05d}"
        img_rel = f"images/{sid}.pgm"
        write_pgm(out / img_rel, subject["image"])
        image_files.append(img_rel)
        row = [sid]
        for v in cfg.variables:
            val = subject["clinical"][v.name]
            row.append(f"{val:.4f}" if v.kind == "numerical" else str(int(val)))
        row.extend(str(g) for g in subject["trajectory"])
        row.extend(str(m) for m in subject["masks"])
        rows.append(row)

    with open(out / TABLE_NAME, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)

    checks = {TABLE_NAME: _sha256(out / TABLE_NAME)}
    for rel in image_files:
        checks[rel] = _sha256(out / rel)
    manifest = {
        "format": "climatlab-cohort-v1",
        "config": cfg.to_json_dict(),
        "subjects": [r[0] for r in rows],
        "checksums": checks,
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return out


@dataclass
class Cohort:
    """In-memory view of a generated dataset."""

    config: CohortConfig
    ids: list
    images: np.ndarray           # (subjects, size, size) uint8
    clinical: dict               # name -> (subjects,) float array (NaN = missing)
    labels: np.ndarray           # (subjects, horizons+1) int
    masks: np.ndarray            # (subjects, horizons+1) int

    @property
    def n_subjects(self) -> int:
        return len(self.ids)


def load_cohort(path, verify: bool = True) -> Cohort:
    """Load a generated cohort; verify=True checks every file's checksum
    against the manifest (corruption detection)."""
    root = Path(path)
    with open(root / MANIFEST_NAME) as f:
        manifest = json.load(f)
    if manifest.get("format") != "climatlab-cohort-v1":
        raise ValueError(f"{root}: not a cohort directory")
    cfg = CohortConfig.from_json_dict(manifest["config"])
    if verify:
        for rel, want in manifest["checksums"].items():
            got = _sha256(root / rel)
            if got != want:
                raise ValueError(f"checksum mismatch for {rel}: dataset is corrupt")

    ids, label_rows, mask_rows = [], [], []
    clinical = {v.name: [] for v in cfg.variables}
    with open(root / TABLE_NAME, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(row["subject_id"])
            for v in cfg.variables:
                cell = row[v.name]
                clinical[v.name].append(float(cell) if cell != "" else np.nan)
            label_rows.append([int(row[f"y_{t}"]) for t in range(cfg.horizons + 1)])
            mask_rows.append([int(row[f"mask_{t}"]) for t in range(cfg.horizons + 1)])
    images = np.stack([read_pgm(root / f"images/{sid}.pgm") for sid in ids])
    return Cohort(
        config=cfg,
        ids=ids,
        images=images,
        clinical={k: np.asarray(v) for k, v in clinical.items()},
        labels=np.asarray(label_rows),
        masks=np.asarray(mask_rows),
    )


# ---------------------------------------------------------------------------
# Encoding for the model and the generator-calibration probe
# ---------------------------------------------------------------------------

def numeric_ranges(cohort: Cohort, subject_idx) -> dict:
    """Per-variable (min, max) of the numerical variables over the given
    subjects (attach training-split ranges to avoid leakage)."""
    ranges = {}
    for v in cohort.config.variables:
        if v.kind != "numerical":
            continue
        vals = cohort.clinical[v.name][subject_idx]
        vals = vals[~np.isnan(vals)]
        lo, hi = float(vals.min()), float(vals.max())
        if lo == hi:
            hi = lo + 1e-9
        ranges[v.name] = (lo, hi)
    return ranges


def encode_clinical(cohort: Cohort, ranges: dict, subject_idx=None) -> list:
    """One-hot encode each clinical variable: numericals use 4-bin
    quantization against `ranges`, categoricals direct one-hot; missing
    values (NaN) become all-zero vectors. Returns [(n, d_i)] arrays."""
    from .features import categorical_onehot, quantize_onehot

    if subject_idx is None:
        subject_idx = np.arange(cohort.n_subjects)
    encoded = []
    for v in cohort.config.variables:
        vals = cohort.clinical[v.name][subject_idx]
        block = np.zeros((len(vals), v.onehot_width))
        for i, val in enumerate(vals):
            if np.isnan(val):
                continue
            if v.kind == "numerical":
                lo, hi = ranges[v.name]
                block[i] = quantize_onehot(float(val), lo, hi)
            else:
                block[i] = categorical_onehot(int(val), v.levels)
        encoded.append(block)
    return encoded


def linear_probe_accuracy(images: np.ndarray, labels: np.ndarray,
                          train_idx, test_idx) -> float:
    """Least-squares linear probe on per-row mean intensities; the oracle
    used to calibrate the image generator."""
    feats = images.astype(np.float64).mean(axis=2)
    feats = np.hstack([feats, np.ones((len(feats), 1))])
    classes = np.unique(labels[train_idx])
    targets = (labels[train_idx][:, None] == classes[None, :]).astype(np.float64)
    coef, *_ = np.linalg.lstsq(feats[train_idx], targets, rcond=None)
    preds = classes[np.argmax(feats[test_idx] @ coef, axis=1)]
    return float(np.mean(preds == labels[test_idx]))
