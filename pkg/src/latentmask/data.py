"""Dataset ingestion and 8-bit image <-> tensor conversion."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass
class ImageDataset:
    root: str
    items: list          # (path, label-or-None), lexicographically sorted
    target_size: tuple   # (H, W)
    classes: list = None
    skipped: int = 0

    def __len__(self):
        return len(self.items)

    def load_all(self):
        """Decode every item into a (N, 3, H, W) tensor in [-1, 1] plus a
        label tensor (or None for unlabeled sets)."""
        images, labels = [], []
        for path, label in self.items:
            images.append(to_tensor(_load_image(path, self.target_size)))
            labels.append(label)
        x = torch.stack(images)
        y = None if self.classes is None else torch.tensor(labels)
        return x, y


def _load_image(path, target_size):
    img = Image.open(path).convert("RGB")
    H, W = target_size
    if img.size != (W, H):
        img = img.resize((W, H), Image.BILINEAR)
    return np.asarray(img)


def load_dataset(root, target_size, labeled=False):
    """Enumerate PNG/JPEG files under root in lexicographic path order.

    With `labeled`, the immediate parent directory names the class; labels
    index into the sorted class list. Undecodable files are skipped with a
    warning and counted.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    classes = sorted({p.parent.name for p in paths}) if labeled else None
    items, skipped = [], 0
    for p in paths:
        try:
            with Image.open(p) as img:
                img.verify()
        except Exception:
            logger.warning("skipping undecodable image %s", p)
            skipped += 1
            continue
        label = classes.index(p.parent.name) if labeled else None
        items.append((str(p), label))
    return ImageDataset(root=str(root), items=items, target_size=tuple(target_size),
                        classes=classes, skipped=skipped)


def to_tensor(image):
    """uint8 (H, W, 3) array -> float32 (3, H, W) tensor in [-1, 1]."""
    arr = np.asarray(image, dtype=np.float32)
    t = torch.from_numpy(arr).permute(2, 0, 1)
    return t / 127.5 - 1.0


def from_tensor(t):
    """(3, H, W) tensor in [-1, 1] -> uint8 (H, W, 3) array. Values are
    clamped, mapped to [0, 255] and rounded half away from zero."""
    arr = t.detach().clamp(-1.0, 1.0).permute(1, 2, 0).numpy().astype(np.float64)
    scaled = (arr + 1.0) * 127.5
    return np.floor(scaled + 0.5).clip(0, 255).astype(np.uint8)


def save_image(t, path):
    Image.fromarray(from_tensor(t)).save(path, format="PNG")
