"""Synthetic scenes with a planted region-to-label matching.

A scene has ``M`` random unit region vectors. ``n_positive`` of them are
paired with a label whose embedding is the region plus isotropic Gaussian
noise of expected norm ``noise_sigma`` (per-coordinate std
``noise_sigma / sqrt(d)``), renormalized. The remaining labels
are negatives: each is a unit vector with cosine exactly
``distractor_correlation`` to one randomly chosen region, so it responds
strongly there without being present. "Frozen" features are the clean
geometry re-noised independently at twice the noise level.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .io import atomic_write_text, dumps_json, read_matrix, write_matrix
from .types import FeatureSet, LabelSet, label_vector


@dataclass(frozen=True)
class SceneSpec:
    M: int = 16
    N: int = 8
    n_positive: int = 3
    d: int = 32
    noise_sigma: float = 0.3
    distractor_correlation: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.d < 2:
            raise ValueError("need M >= 1, N >= 1 and d >= 2")
        if not 1 <= self.n_positive <= min(self.M, self.N):
            raise ValueError("n_positive must be in [1, min(M, N)]")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValueError("noise_sigma must be finite and >= 0")
        if not 0 <= self.distractor_correlation < 1:
            raise ValueError("distractor_correlation must be in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class PlantedScene:
    spec: SceneSpec
    visual: FeatureSet
    labels: LabelSet
    frozen_visual: FeatureSet
    frozen_labels: LabelSet
    y: np.ndarray
    planted: tuple[tuple[int, int], ...]  # (region, label) pairs

    def sidecar(self) -> dict:
        return {
            "y": [int(v) for v in self.y],
            "planted": [list(p) for p in self.planted],
            "spec": asdict(self.spec),
        }


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_scene(spec: SceneSpec) -> PlantedScene:
    rng = np.random.default_rng(spec.seed)
    M, N, d, sigma = spec.M, spec.N, spec.d, spec.noise_sigma
    regions = _unit(rng.standard_normal((M, d)))
    planted_regions = rng.choice(M, spec.n_positive, replace=False)
    planted_labels = rng.choice(N, spec.n_positive, replace=False)

    clean = np.empty((N, d))
    clean[planted_labels] = regions[planted_regions]
    rho = spec.distractor_correlation
    for i in np.setdiff1d(np.arange(N), planted_labels):
        anchor = regions[rng.integers(M)]
        g = rng.standard_normal(d)
        g = _unit(g - (g @ anchor) * anchor)
        clean[i] = rho * anchor + np.sqrt(1 - rho * rho) * g

    # noise ~ N(0, sigma^2 / d) per coordinate: expected perturbation norm is sigma
    step = sigma / np.sqrt(d)
    labels = clean.copy()
    labels[planted_labels] = _unit(clean[planted_labels]
                                   + step * rng.standard_normal((spec.n_positive, d)))
    frozen_visual = _unit(regions + 2 * step * rng.standard_normal((M, d)))
    frozen_labels = _unit(clean + 2 * step * rng.standard_normal((N, d)))

    y = np.zeros(N)
    y[planted_labels] = 1
    order = np.argsort(planted_labels)
    planted = tuple((int(planted_regions[j]), int(planted_labels[j])) for j in order)
    return PlantedScene(spec, FeatureSet(regions, True), LabelSet(labels, True),
                        FeatureSet(frozen_visual, True), LabelSet(frozen_labels, True),
                        label_vector(y), planted)


def planted_recovery_rate(plan, scene: PlantedScene) -> float:
    """Fraction of planted pairs ``(k, i)`` for which region ``k`` is the argmax of plan column ``i``.

    ``np.argmax`` resolves ties to the lowest region index.
    """
    p = np.asarray(getattr(plan, "entries", plan), dtype=np.float64)
    if p.shape != (scene.spec.M, scene.spec.N):
        raise ValueError(f"plan shape {p.shape} does not match scene {scene.spec.M}x{scene.spec.N}")
    best = p.argmax(axis=0)
    return float(np.mean([best[i] == k for k, i in scene.planted]))


SCENE_MATRICES = ("visual", "labels", "frozen_visual", "frozen_labels")


def write_scene(scene: PlantedScene, directory, fmt: str = "bin") -> list[Path]:
    """Write the four feature matrices plus ``scene.json``; returns the paths written."""
    if fmt not in ("bin", "csv"):
        raise ValueError("matrix format must be 'bin' or 'csv'")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in SCENE_MATRICES:
        path = directory / f"{name}.{fmt}"
        write_matrix(path, getattr(scene, name).rows)
        paths.append(path)
    side = directory / "scene.json"
    atomic_write_text(side, dumps_json(scene.sidecar()))
    paths.append(side)
    return paths


def read_scene(directory) -> PlantedScene:
    directory = Path(directory)
    meta = json.loads((directory / "scene.json").read_text())
    mats = {}
    for name in SCENE_MATRICES:
        for fmt in ("bin", "csv"):
            path = directory / f"{name}.{fmt}"
            if path.exists():
                mats[name] = read_matrix(path)
                break
        else:
            raise FileNotFoundError(f"missing {name} matrix in {directory}")
    return PlantedScene(SceneSpec(**meta["spec"]),
                        FeatureSet(mats["visual"]), LabelSet(mats["labels"]),
                        FeatureSet(mats["frozen_visual"]), LabelSet(mats["frozen_labels"]),
                        label_vector(meta["y"]), tuple(tuple(p) for p in meta["planted"]))
