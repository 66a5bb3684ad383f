"""Shared builders for test corpora."""
from __future__ import annotations

import numpy as np

from wsisearch.model import PatchFeature, SlideRecord


def grid_coords(n: int, width: int = 8) -> list[tuple[int, int]]:
    return [(i % width, i // width) for i in range(n)]


def make_slide(
    slide_id: str,
    features,
    *,
    site: str = "brain",
    subtype: str = "gbm",
    patient_id: str | None = None,
    magnification: str = "20x",
) -> SlideRecord:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise AssertionError("make_slide wants a (n, dim) feature matrix")
    patches = tuple(
        PatchFeature(x=x, y=y, feature=row)
        for (x, y), row in zip(grid_coords(len(features)), features)
    )
    return SlideRecord(
        slide_id=slide_id,
        patient_id=patient_id if patient_id is not None else f"pt-{slide_id}",
        site=site,
        subtype=subtype,
        magnification=magnification,
        patches=patches,
    )


def gaussian_slides(
    rng: np.random.Generator,
    count: int,
    patches: int,
    dim: int,
    *,
    mean=None,
    sigma: float = 0.1,
    prefix: str = "s",
    site: str = "brain",
    subtype: str = "gbm",
) -> list[SlideRecord]:
    """Slides whose patches cluster around a shared mean vector."""
    if mean is None:
        mean = rng.normal(size=dim)
    out = []
    for i in range(count):
        feats = mean + sigma * rng.normal(size=(patches, dim))
        out.append(
            make_slide(f"{prefix}{i:03d}", feats, site=site, subtype=subtype)
        )
    return out
