"""Centroid-based verification: per-subject prototypes, Euclidean trial
scoring, the strict threshold accept rule, and equal-error-rate computation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .dataset import Trial
from .errors import DataError


@dataclass(frozen=True)
class Centroid:
    """Mean embedding of one subject's training instances."""

    subject_id: str
    vector: np.ndarray
    support: int

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if self.support < 1:
            raise DataError(f"centroid for {self.subject_id} has empty support")
        if not np.all(np.isfinite(vector)):
            raise DataError(f"centroid for {self.subject_id} is not finite")
        object.__setattr__(self, "vector", vector)


@dataclass(frozen=True)
class TrialScore:
    claimed_subject: str
    instance_id: str
    distance: float
    genuine: bool

    def __post_init__(self):
        if self.distance < 0:
            raise DataError("trial distance must be nonnegative")


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_genuine: int
    n_impostor: int


def compute_centroids(embeddings: Mapping[str, np.ndarray],
                      subject_of: Mapping[str, str]) -> dict[str, Centroid]:
    """Arithmetic mean of embeddings per subject; summation order is fixed by
    sorted instance id so results are permutation-independent bit for bit."""
    groups: dict[str, list[str]] = {}
    for instance_id in embeddings:
        groups.setdefault(subject_of[instance_id], []).append(instance_id)
    centroids = {}
    for subject in sorted(groups):
        ids = sorted(groups[subject])
        total = np.zeros_like(np.asarray(embeddings[ids[0]], dtype=np.float64))
        for i in ids:
            total = total + np.asarray(embeddings[i], dtype=np.float64)
        centroids[subject] = Centroid(subject, total / len(ids), len(ids))
    if not centroids:
        raise DataError("no embeddings to build centroids from")
    return centroids


def score_trials(trials: Iterable[Trial], embeddings: Mapping[str, np.ndarray],
                 centroids: Mapping[str, Centroid]) -> list[TrialScore]:
    """Euclidean distance of each trial embedding to its claimed centroid."""
    scores = []
    for trial in trials:
        centroid = centroids.get(trial.claimed_subject)
        if centroid is None:
            raise DataError(f"no centroid for claimed subject {trial.claimed_subject!r}")
        emb = embeddings.get(trial.instance_id)
        if emb is None:
            raise DataError(f"no embedding for trial instance {trial.instance_id!r}")
        distance = float(np.linalg.norm(np.asarray(emb, dtype=np.float64) - centroid.vector))
        scores.append(TrialScore(trial.claimed_subject, trial.instance_id, distance, trial.genuine))
    return scores


def _candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Distinct-score midpoints plus the reject-all / accept-all boundaries."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[distinct[0]], mids, [distinct[-1] + 1.0]])


def eer_from_distances(genuine: np.ndarray, impostor: np.ndarray) -> EerResult:
    """Sweep candidate thresholds of the step functions FPR/FNR; pick the one
    minimizing |FPR - FNR| (ties toward smaller threshold), report their mean.

    Acceptance is strict: a trial is accepted iff distance < threshold, so
    FPR(e) counts impostor distances < e and FNR(e) counts genuine >= e.
    """
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if len(genuine) == 0 or len(impostor) == 0:
        raise DataError("EER needs at least one genuine and one impostor score")
    candidates = _candidate_thresholds(np.concatenate([genuine, impostor]))
    fpr = np.searchsorted(impostor, candidates, side="left") / len(impostor)
    fnr = (len(genuine) - np.searchsorted(genuine, candidates, side="left")) / len(genuine)
    best = int(np.argmin(np.abs(fpr - fnr)))
    return EerResult(
        eer=float((fpr[best] + fnr[best]) / 2.0),
        threshold=float(candidates[best]),
        n_genuine=len(genuine),
        n_impostor=len(impostor),
    )


def compute_eer(scores: Iterable[TrialScore]) -> EerResult:
    scores = list(scores)
    genuine = np.array([s.distance for s in scores if s.genuine])
    impostor = np.array([s.distance for s in scores if not s.genuine])
    return eer_from_distances(genuine, impostor)


def verify(embedding: np.ndarray, centroid: Centroid, threshold: float) -> bool:
    """Accept iff the Euclidean distance is strictly below the threshold."""
    distance = np.linalg.norm(np.asarray(embedding, dtype=np.float64) - centroid.vector)
    return bool(distance < threshold)


def export_scores_csv(scores: Iterable[TrialScore], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["claimed_subject", "genuine", "distance"])
        for s in scores:
            writer.writerow([s.claimed_subject, int(s.genuine), f"{s.distance:.9g}"])
