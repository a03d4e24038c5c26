"""Branch-specific training-time augmentation.

The emotion view gets the full pipeline (color jitter, horizontal flip,
random erasing, and batch-level mixing); the appearance view gets color
jitter only, so landmark targets never need spatial correction.  All
functions are pure given an explicit numpy Generator.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass
class AugmentConfig:
    jitter_range: float = 0.2  # brightness/contrast factors drawn from [1-d, 1+d]
    flip_prob: float = 0.5
    erase_prob: float = 0.5
    erase_area: tuple = (0.02, 0.2)  # rectangle area as a fraction of the image
    erase_aspect: tuple = (0.3, 3.3)  # rectangle height/width ratio
    mix_alpha: float = 0.2
    enable_jitter: bool = True
    enable_flip: bool = True
    enable_erase: bool = True
    enable_mix: bool = True
    mix_real_term: bool = True  # also train on the unmixed samples

    def validate(self):
        if not 0.0 <= self.jitter_range < 1.0:
            raise ConfigurationError(f"jitter_range must be in [0, 1), got {self.jitter_range}")
        for name in ("flip_prob", "erase_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.erase_area
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigurationError(f"erase_area must satisfy 0 < lo <= hi < 1, got {self.erase_area}")
        lo, hi = self.erase_aspect
        if not (0.0 < lo <= hi):
            raise ConfigurationError(f"erase_aspect must satisfy 0 < lo <= hi, got {self.erase_aspect}")
        if self.mix_alpha <= 0:
            raise ConfigurationError(f"mix_alpha must be positive, got {self.mix_alpha}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enable_jitter=False, enable_flip=False, enable_erase=False, enable_mix=False)


def color_jitter(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random brightness/contrast, clamped back into [0, 1]."""
    d = cfg.jitter_range
    contrast = rng.uniform(1.0 - d, 1.0 + d)
    brightness = rng.uniform(1.0 - d, 1.0 + d)
    if contrast == 1.0 and brightness == 1.0:
        return img.copy()
    mean = img.mean()
    out = contrast * (img - mean) + mean * brightness
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    """Reverse column order in every channel."""
    return img[:, :, ::-1].copy()


def random_erase(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Fill one random rectangle with uniform noise, with probability erase_prob.

    A candidate rectangle is accepted only if it fits inside the image and
    its rounded pixel area stays within the configured area bounds; after 10
    rejected candidates the image is returned unchanged.
    """
    if rng.random() >= cfg.erase_prob:
        return img.copy()
    _, height, width = img.shape
    total = height * width
    lo, hi = cfg.erase_area
    for _ in range(10):
        area = rng.uniform(lo, hi) * total
        aspect = rng.uniform(*cfg.erase_aspect)
        h = int(round(np.sqrt(area * aspect)))
        w = int(round(np.sqrt(area / aspect)))
        if h < 1 or w < 1 or h > height or w > width:
            continue
        if not (lo <= (h * w) / total <= hi):
            continue
        top = int(rng.integers(0, height - h + 1))
        left = int(rng.integers(0, width - w + 1))
        out = img.copy()
        noise = rng.random((img.shape[0], h, w)).astype(img.dtype)
        out[:, top : top + h, left : left + w] = noise
        return out
    return img.copy()


@dataclass
class MixedBatch:
    images: np.ndarray  # lam * batch_a + (1 - lam) * batch_b
    target_a: np.ndarray  # class distributions
    target_b: np.ndarray
    lam: float

    def mixed_targets(self) -> np.ndarray:
        return self.lam * self.target_a + (1.0 - self.lam) * self.target_b


def mix_augment(batch_a, batch_b, labels_a, labels_b, alpha: float, rng) -> MixedBatch:
    """Convex image mixing with a Beta(alpha, alpha) coefficient shared by the batch.

    Because cross-entropy is linear in the target distribution, training
    against ``mixed_targets()`` equals the lam-weighted sum of the two
    endpoint losses.
    """
    batch_a = np.asarray(batch_a)
    batch_b = np.asarray(batch_b)
    if batch_a.shape != batch_b.shape:
        raise DimensionError(f"mix_augment batch shapes differ: {batch_a.shape} vs {batch_b.shape}")
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape or labels_a.shape[0] != batch_a.shape[0]:
        raise DimensionError(
            f"mix_augment label shapes {labels_a.shape}/{labels_b.shape} do not match batch {batch_a.shape}"
        )
    lam = float(rng.beta(alpha, alpha))
    images = np.clip(lam * batch_a + (1.0 - lam) * batch_b, 0.0, 1.0).astype(batch_a.dtype)
    return MixedBatch(images=images, target_a=labels_a, target_b=labels_b, lam=lam)


def apply_branch_pipelines(sample, cfg: AugmentConfig, rng: np.random.Generator):
    """(emotion_view, appearance_view) for one sample.

    The two views draw from independent child streams of ``rng``.  The
    appearance pipeline applies no spatial transform, so the sample's
    landmark targets stay valid as-is.
    """
    img = sample.image if hasattr(sample, "image") else np.asarray(sample)
    rng_emotion, rng_appearance = rng.spawn(2)

    view = img
    if cfg.enable_erase:
        view = random_erase(view, cfg, rng_emotion)
    if cfg.enable_flip and rng_emotion.random() < cfg.flip_prob:
        view = horizontal_flip(view)
    if cfg.enable_jitter:
        view = color_jitter(view, cfg, rng_emotion)
    emotion_view = view if view is not img else img.copy()

    if cfg.enable_jitter:
        appearance_view = color_jitter(img, cfg, rng_appearance)
    else:
        appearance_view = img.copy()
    return emotion_view, appearance_view
