"""Synthetic face dataset: generation, storage, loading, and splitting.

Each sample is a procedurally drawn cartoon face on a 3x64x64 canvas with a
standard 68-point landmark layout (17 jaw, 2x5 brows, 9 nose, 2x6 eyes, 20
mouth) derived analytically from the same parameters that drive the
renderer.  Expression classes map to distinct geometry regimes (mouth
curvature, mouth aperture, brow slant/raise, eye openness, asymmetry), so
both the classification and the landmark-regression signal are real.

On disk a dataset is a directory of binary PPM (P6) images plus
``labels.csv`` (path, expression id) and ``landmarks.csv`` (path followed by
136 normalized coordinates, 6 decimal places).
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import EXPRESSIONS, IMAGE_SIZE, LANDMARK_DIM, NUM_CLASSES, NUM_LANDMARKS
from .errors import ManifestError
from .rng import substream

LABELS_FILE = "labels.csv"
LANDMARKS_FILE = "landmarks.csv"


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    expression: int
    landmarks: np.ndarray  # (68, 2) float32 in [0, 1]


@dataclass
class ManifestRecord:
    path: str
    expression: int


@dataclass
class DatasetManifest:
    root: Path
    records: list
    landmarks: dict  # path -> (136,) float32

    def __len__(self):
        return len(self.records)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(NUM_CLASSES, dtype=np.int64)
        for r in self.records:
            counts[r.expression] += 1
        return counts

    def load(self) -> "LoadedDataset":
        n = len(self.records)
        images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        landmarks = np.empty((n, LANDMARK_DIM), dtype=np.float32)
        paths = []
        for i, r in enumerate(self.records):
            raw = read_ppm(self.root / r.path)
            images[i] = raw.astype(np.float32).transpose(2, 0, 1) / 255.0
            labels[i] = r.expression
            landmarks[i] = self.landmarks[r.path]
            paths.append(r.path)
        return LoadedDataset(images=images, labels=labels, landmarks=landmarks, paths=paths)


@dataclass
class LoadedDataset:
    images: np.ndarray  # (n, 3, H, W) float32
    labels: np.ndarray  # (n,) int64
    landmarks: np.ndarray  # (n, 136) float32
    paths: list

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices) -> "LoadedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LoadedDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            landmarks=self.landmarks[idx],
            paths=[self.paths[i] for i in idx],
        )

    def sample(self, i: int) -> Sample:
        return Sample(
            image=self.images[i],
            expression=int(self.labels[i]),
            landmarks=self.landmarks[i].reshape(NUM_LANDMARKS, 2),
        )


# ---------------------------------------------------------------------------
# face parameterization


@dataclass
class SyntheticFaceParams:
    head_center: tuple  # (cx, cy) in normalized coordinates
    head_radii: tuple  # (rx, ry)
    eye_openness: float  # vertical eye scale, ~1.0 nominal
    brow_slant: float  # > 0 pulls the inner brow ends down
    brow_raise: float  # lifts both brows
    mouth_curve: float  # > 0 raises the mouth corners
    mouth_aperture: float  # vertical inner-lip gap
    mouth_asym: float  # tilts the whole mouth (one corner up)
    noise_scale: float  # pixel noise sigma


_CLASS_BASE = {
    # openness, slant, raise, curve, aperture, asym
    0: (0.75, 0.022, 0.000, -0.012, 0.010, 0.000),  # anger
    1: (0.90, 0.010, 0.010, -0.006, 0.014, 0.025),  # disgust
    2: (1.30, -0.014, 0.030, -0.002, 0.018, 0.000),  # fear
    3: (1.00, -0.004, 0.008, 0.030, 0.016, 0.000),  # happiness
    4: (0.85, -0.024, 0.004, -0.030, 0.010, 0.000),  # sadness
    5: (1.35, -0.008, 0.042, 0.002, 0.055, 0.000),  # surprise
}


def face_params(class_id: int, rng: np.random.Generator) -> SyntheticFaceParams:
    """Class base regime plus per-sample Gaussian jitter, clipped to safe ranges."""
    openness, slant, raise_, curve, aperture, asym = _CLASS_BASE[class_id]
    cx = np.clip(0.50 + rng.normal(0, 0.012), 0.46, 0.54)
    cy = np.clip(0.52 + rng.normal(0, 0.012), 0.48, 0.545)
    rx = np.clip(0.30 + rng.normal(0, 0.012), 0.26, 0.33)
    ry = np.clip(0.36 + rng.normal(0, 0.012), 0.32, 0.385)
    return SyntheticFaceParams(
        head_center=(float(cx), float(cy)),
        head_radii=(float(rx), float(ry)),
        eye_openness=float(np.clip(openness + rng.normal(0, 0.08), 0.5, 1.6)),
        brow_slant=float(np.clip(slant + rng.normal(0, 0.006), -0.04, 0.04)),
        brow_raise=float(np.clip(raise_ + rng.normal(0, 0.006), -0.01, 0.055)),
        mouth_curve=float(np.clip(curve + rng.normal(0, 0.005), -0.045, 0.045)),
        mouth_aperture=float(np.clip(aperture + rng.normal(0, 0.006), 0.004, 0.07)),
        mouth_asym=float(np.clip(asym + rng.normal(0, 0.006), -0.04, 0.04)),
        noise_scale=float(rng.uniform(0.005, 0.02)),
    )


def _mouth_curves(p: SyntheticFaceParams):
    cx, cy = p.head_center
    rx, ry = p.head_radii
    mx, my = cx, cy + 0.55 * ry
    mw = 0.47 * rx
    lip = 0.016

    def base(u):
        return my + p.mouth_asym * u - p.mouth_curve * u * u

    def outer_upper(u):
        return base(u) - (p.mouth_aperture / 2 + lip) * (1 - u * u)

    def outer_lower(u):
        return base(u) + (p.mouth_aperture / 2 + lip) * (1 - u * u)

    def inner_upper(u):
        return base(u) - (p.mouth_aperture / 2) * (1 - u * u)

    def inner_lower(u):
        return base(u) + (p.mouth_aperture / 2) * (1 - u * u)

    return mx, mw, outer_upper, outer_lower, inner_upper, inner_lower


def _feature_geometry(p: SyntheticFaceParams):
    cx, cy = p.head_center
    rx, ry = p.head_radii
    geometry = {
        "eye_dx": 0.38 * rx,
        "eye_y": cy - 0.19 * ry,
        "eye_rx": 0.18 * rx,
        "eye_ry": 0.085 * ry * p.eye_openness,
        "brow_y": cy - 0.19 * ry - 0.19 * ry - p.brow_raise,
        "brow_w": 0.22 * rx,
        "nose_top": cy - 0.17 * ry,
        "nose_tip": cy + 0.20 * ry,
        "nose_w": 0.15 * rx,
    }
    return geometry


def landmarks_from_params(p: SyntheticFaceParams) -> np.ndarray:
    """The 68-point layout implied by the face parameters, shape (68, 2)."""
    cx, cy = p.head_center
    rx, ry = p.head_radii
    g = _feature_geometry(p)
    pts = np.zeros((NUM_LANDMARKS, 2), dtype=np.float64)

    # jaw 0..16: lower half of the head ellipse, left ear to right ear
    t = np.linspace(0.0, 1.0, 17)
    theta = np.pi * (1.0 - t)
    pts[0:17, 0] = cx + rx * np.cos(theta)
    pts[0:17, 1] = cy + ry * np.sin(theta)

    # brows 17..21 (left, outer to inner) and 22..26 (right, inner to outer)
    u = np.linspace(-1.0, 1.0, 5)
    arch = 0.010
    ex_l, ex_r = cx - g["eye_dx"], cx + g["eye_dx"]
    pts[17:22, 0] = ex_l + u * g["brow_w"]
    pts[17:22, 1] = g["brow_y"] + p.brow_slant * u - arch * (1 - u * u)
    pts[22:27, 0] = ex_r + u * g["brow_w"]
    pts[22:27, 1] = g["brow_y"] - p.brow_slant * u - arch * (1 - u * u)

    # nose 27..30 bridge, 31..35 base
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(g["nose_top"], g["nose_tip"], 4)
    ub = np.linspace(-1.0, 1.0, 5)
    pts[31:36, 0] = cx + ub * g["nose_w"]
    pts[31:36, 1] = g["nose_tip"] + 0.018 * (1 - ub * ub)

    # eyes 36..41 (left) and 42..47 (right): corner, two upper, corner, two lower
    phi = np.array([np.pi, 2 * np.pi / 3, np.pi / 3, 0.0, -np.pi / 3, -2 * np.pi / 3])
    for start, ex in ((36, ex_l), (42, ex_r)):
        pts[start : start + 6, 0] = ex + g["eye_rx"] * np.cos(phi)
        pts[start : start + 6, 1] = g["eye_y"] - g["eye_ry"] * np.sin(phi)

    # mouth 48..59 outer ring, 60..67 inner ring
    mx, mw, outer_upper, outer_lower, inner_upper, inner_lower = _mouth_curves(p)
    uu = np.array([-1.0, -2 / 3, -1 / 3, 0.0, 1 / 3, 2 / 3, 1.0])
    pts[48:55, 0] = mx + uu * mw
    pts[48:55, 1] = outer_upper(uu)
    ul = np.array([2 / 3, 1 / 3, 0.0, -1 / 3, -2 / 3])
    pts[55:60, 0] = mx + ul * mw
    pts[55:60, 1] = outer_lower(ul)
    ui = np.array([-0.85, -0.5, 0.0, 0.5, 0.85])
    pts[60:65, 0] = mx + ui * mw
    pts[60:65, 1] = inner_upper(ui)
    uj = np.array([0.5, 0.0, -0.5])
    pts[65:68, 0] = mx + uj * mw
    pts[65:68, 1] = inner_lower(uj)
    return pts


# ---------------------------------------------------------------------------
# rendering

_BG = np.array([0.24, 0.27, 0.32])
_SKIN = np.array([0.85, 0.72, 0.60])
_INK = np.array([0.13, 0.11, 0.11])
_LIP = np.array([0.55, 0.16, 0.16])
_EYE_WHITE = np.array([0.95, 0.95, 0.93])
_PUPIL = np.array([0.08, 0.07, 0.07])
_MOUTH_DARK = np.array([0.12, 0.05, 0.05])


def _grid(size: int):
    rows, cols = np.mgrid[0:size, 0:size]
    scale = size - 1
    return cols / scale, rows / scale  # X, Y in [0, 1]


def _blend(canvas, alpha, color):
    canvas *= (1.0 - alpha)[..., None]
    canvas += alpha[..., None] * color


def _ellipse_alpha(X, Y, center, radii, softness=0.08):
    q = ((X - center[0]) / radii[0]) ** 2 + ((Y - center[1]) / radii[1]) ** 2
    return np.clip((1.0 - q) / softness, 0.0, 1.0)


def _stroke_alpha(X, Y, points, width=0.008, aa=0.010):
    """Anti-aliased distance field around a dense point chain."""
    px = points[:, 0][None, None, :]
    py = points[:, 1][None, None, :]
    d2 = (X[..., None] - px) ** 2 + (Y[..., None] - py) ** 2
    d = np.sqrt(d2.min(axis=-1))
    return np.clip((width + aa - d) / aa, 0.0, 1.0)


def _curve_points(fn, u_lo, u_hi, x_of_u, n=60):
    u = np.linspace(u_lo, u_hi, n)
    return np.stack([x_of_u(u), fn(u)], axis=1)


def render_face(p: SyntheticFaceParams, rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """Rasterize the face as (size, size, 3) uint8."""
    X, Y = _grid(size)
    canvas = np.empty((size, size, 3), dtype=np.float64)
    canvas[:] = _BG

    cx, cy = p.head_center
    rx, ry = p.head_radii
    g = _feature_geometry(p)
    _blend(canvas, _ellipse_alpha(X, Y, (cx, cy), (rx, ry)), _SKIN)

    # eyes: white fill, pupil, outline
    ex_l, ex_r = cx - g["eye_dx"], cx + g["eye_dx"]
    for ex in (ex_l, ex_r):
        eye_alpha = _ellipse_alpha(X, Y, (ex, g["eye_y"]), (g["eye_rx"], g["eye_ry"]), 0.25)
        _blend(canvas, eye_alpha, _EYE_WHITE)
        pupil = _ellipse_alpha(X, Y, (ex, g["eye_y"]), (0.016, 0.016), 0.5)
        _blend(canvas, pupil * eye_alpha, _PUPIL)

    # inner-mouth fill between the inner lip curves
    mx, mw, outer_upper, outer_lower, inner_upper, inner_lower = _mouth_curves(p)
    with np.errstate(invalid="ignore"):
        u_pix = (X - mx) / mw
    inside = (np.abs(u_pix) <= 0.9) & (Y >= inner_upper(u_pix)) & (Y <= inner_lower(u_pix))
    _blend(canvas, inside.astype(np.float64), _MOUTH_DARK)

    # dark strokes: brows, eye outlines, nose
    ink_pts = []
    u = np.linspace(-1.0, 1.0, 25)
    arch = 0.010
    ink_pts.append(
        np.stack([ex_l + u * g["brow_w"], g["brow_y"] + p.brow_slant * u - arch * (1 - u * u)], axis=1)
    )
    ink_pts.append(
        np.stack([ex_r + u * g["brow_w"], g["brow_y"] - p.brow_slant * u - arch * (1 - u * u)], axis=1)
    )
    phi = np.linspace(0, 2 * np.pi, 40)
    for ex in (ex_l, ex_r):
        ink_pts.append(
            np.stack([ex + g["eye_rx"] * np.cos(phi), g["eye_y"] - g["eye_ry"] * np.sin(phi)], axis=1)
        )
    ink_pts.append(
        np.stack([np.full(12, cx), np.linspace(g["nose_top"], g["nose_tip"], 12)], axis=1)
    )
    ub = np.linspace(-1.0, 1.0, 15)
    ink_pts.append(np.stack([cx + ub * g["nose_w"], g["nose_tip"] + 0.018 * (1 - ub * ub)], axis=1))
    _blend(canvas, _stroke_alpha(X, Y, np.concatenate(ink_pts)), _INK)

    # lip strokes: outer and inner rings
    lip_pts = [
        _curve_points(outer_upper, -1.0, 1.0, lambda u: mx + u * mw),
        _curve_points(outer_lower, -1.0, 1.0, lambda u: mx + u * mw),
        _curve_points(inner_upper, -0.85, 0.85, lambda u: mx + u * mw, n=40),
        _curve_points(inner_lower, -0.85, 0.85, lambda u: mx + u * mw, n=40),
    ]
    _blend(canvas, _stroke_alpha(X, Y, np.concatenate(lip_pts), width=0.007), _LIP)

    canvas += rng.normal(0.0, p.noise_scale, canvas.shape)
    return (np.clip(canvas, 0.0, 1.0) * 255.0).round().astype(np.uint8)


# ---------------------------------------------------------------------------
# PPM I/O


def write_ppm(path, img: np.ndarray):
    """img is (H, W, 3) uint8."""
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6":
        raise ManifestError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h = (int(v) for v in parts[1].split())
    except ValueError:
        raise ManifestError(f"{path}: malformed PPM dimensions {parts[1]!r}") from None
    if parts[2] != b"255":
        raise ManifestError(f"{path}: PPM maxval must be 255, got {parts[2]!r}")
    data = parts[3]
    if len(data) != w * h * 3:
        raise ManifestError(f"{path}: PPM payload is {len(data)} bytes, expected {w * h * 3}")
    if (h, w) != (IMAGE_SIZE, IMAGE_SIZE):
        raise ManifestError(f"{path}: image is {w}x{h}, expected {IMAGE_SIZE}x{IMAGE_SIZE}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# generation, loading, splitting


def generate_synthetic_dataset(n: int, seed: int, out_dir) -> DatasetManifest:
    """Write n samples (n/6 per class, interleaved) and the two csv files.

    Generation is a pure function of (n, seed): every image byte and every
    landmark value is reproduced exactly on a rerun.  Landmarks are rounded
    to 6 decimals at generation time so the csv round-trips exactly.
    """
    if n % NUM_CLASSES:
        raise ValueError(f"n must be divisible by {NUM_CLASSES}, got {n}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    records = []
    landmark_table = {}
    label_rows = []
    landmark_rows = []
    for i in range(n):
        class_id = i % NUM_CLASSES
        rng = substream(seed, "sample", i)
        params = face_params(class_id, rng)
        lm = np.round(landmarks_from_params(params), 6).astype(np.float32)
        img = render_face(params, rng)
        name = f"img_{i:05d}.ppm"
        write_ppm(root / name, img)
        records.append(ManifestRecord(path=name, expression=class_id))
        landmark_table[name] = lm.reshape(-1)
        label_rows.append(f"{name},{class_id}")
        landmark_rows.append(name + "," + ",".join(f"{v:.6f}" for v in lm.reshape(-1)))

    with open(root / LABELS_FILE, "w", newline="") as f:
        f.write("path,expression\n")
        f.write("\n".join(label_rows) + "\n")
    coord_names = ",".join(f"x{i},y{i}" for i in range(NUM_LANDMARKS))
    with open(root / LANDMARKS_FILE, "w", newline="") as f:
        f.write("path," + coord_names + "\n")
        f.write("\n".join(landmark_rows) + "\n")
    return DatasetManifest(root=root, records=records, landmarks=landmark_table)


def load_manifest(root) -> DatasetManifest:
    """Validated manifest; raises ManifestError naming the offending row."""
    root = Path(root)
    labels_path = root / LABELS_FILE
    landmarks_path = root / LANDMARKS_FILE
    if not labels_path.is_file():
        raise ManifestError(f"missing {labels_path}")
    if not landmarks_path.is_file():
        raise ManifestError(f"missing {landmarks_path}")

    records = []
    seen = set()
    with open(labels_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "expression"]:
            raise ManifestError(f"{labels_path}: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"{labels_path} row {lineno}: expected 2 fields, got {len(row)}")
            path, expr_text = row
            try:
                expr = int(expr_text)
            except ValueError:
                raise ManifestError(
                    f"{labels_path} row {lineno}: expression {expr_text!r} is not an integer"
                ) from None
            if not 0 <= expr < NUM_CLASSES:
                raise ManifestError(
                    f"{labels_path} row {lineno}: expression id {expr} outside 0..{NUM_CLASSES - 1} "
                    f"(path {path!r})"
                )
            if path in seen:
                raise ManifestError(f"{labels_path} row {lineno}: duplicate path {path!r}")
            seen.add(path)
            if not (root / path).is_file():
                raise ManifestError(f"{labels_path} row {lineno}: image file {path!r} does not exist")
            records.append(ManifestRecord(path=path, expression=expr))

    landmark_table = {}
    with open(landmarks_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "path" or len(header) != 1 + LANDMARK_DIM:
            raise ManifestError(
                f"{landmarks_path}: bad header (expected path plus {LANDMARK_DIM} coordinate columns)"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            path = row[0]
            values = row[1:]
            if len(values) != LANDMARK_DIM:
                raise ManifestError(
                    f"{landmarks_path} row {lineno}: {len(values)} values, expected {LANDMARK_DIM} "
                    f"(path {path!r})"
                )
            if path in landmark_table:
                raise ManifestError(f"{landmarks_path} row {lineno}: duplicate path {path!r}")
            if path not in seen:
                raise ManifestError(
                    f"{landmarks_path} row {lineno}: path {path!r} has no labels.csv record"
                )
            try:
                coords = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError:
                raise ManifestError(
                    f"{landmarks_path} row {lineno}: non-numeric coordinate (path {path!r})"
                ) from None
            if np.any(coords < 0.0) or np.any(coords > 1.0):
                raise ManifestError(
                    f"{landmarks_path} row {lineno}: coordinate outside [0, 1] (path {path!r})"
                )
            landmark_table[path] = coords

    for r in records:
        if r.path not in landmark_table:
            raise ManifestError(f"{landmarks_path}: no landmark row for path {r.path!r}")

    manifest = DatasetManifest(root=root, records=records, landmarks=landmark_table)
    for r in records:  # every image must decode
        read_ppm(root / r.path)
    return manifest


def split_train_val(manifest: DatasetManifest, val_fraction: float, seed: int):
    """Stratified split: round(val_fraction * class_count) of each class to val."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    by_class = {c: [] for c in range(NUM_CLASSES)}
    for i, r in enumerate(manifest.records):
        by_class[r.expression].append(i)

    val_indices = set()
    for c, idxs in by_class.items():
        if not idxs:
            continue
        n_val = int(np.floor(val_fraction * len(idxs) + 0.5))
        if n_val == 0 or n_val == len(idxs):
            raise ValueError(
                f"class '{EXPRESSIONS[c]}' with {len(idxs)} samples cannot give a nonempty "
                f"split at val_fraction={val_fraction}"
            )
        order = substream(seed, "split", c).permutation(len(idxs))
        val_indices.update(idxs[j] for j in order[:n_val])

    def take(keep_val: bool) -> DatasetManifest:
        recs = [r for i, r in enumerate(manifest.records) if (i in val_indices) == keep_val]
        lms = {r.path: manifest.landmarks[r.path] for r in recs}
        return DatasetManifest(root=manifest.root, records=recs, landmarks=lms)

    return take(False), take(True)
