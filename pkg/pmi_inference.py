"""
PMI Inference

Turns hit matrices into label distributions and predicts by summing the
pointwise mutual information of each candidate label with every map's
best-matching unit.

Counts are smoothed additively (epsilon on each cell, epsilon * n_labels on
each denominator) so that never-seen (label, unit) pairs stay finite and
unvisited units come out evidence-neutral. At prediction time a label with no
counts at all scores -inf once the model has seen any sample, so it never
wins; an untrained model keeps its all-zero scores.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from dendsom import DendSomModel, HitMatrix
from som_core import UnitIndex

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-9


class UntrainedModelError(ValueError):
    """Raised when predicting with a model whose hit matrices are empty"""


@dataclass(frozen=True)
class LabelDistribution:
    """Posterior P(l | unit) and prior P(l) over every label"""

    posterior: np.ndarray
    prior: np.ndarray


@dataclass(frozen=True)
class Prediction:
    """Winning label and the summed PMI of every candidate"""

    label: int
    scores: dict[int, float]


@dataclass(frozen=True)
class PredictionRecord:
    """One row of exported predictions"""

    sample_id: int
    true_label: int
    predicted_label: int
    scores: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "true_label": self.true_label,
            "predicted_label": self.predicted_label,
            "scores": {str(label): score for label, score in self.scores.items()},
        }


def _counts(hits) -> np.ndarray:
    return np.asarray(hits.counts if isinstance(hits, HitMatrix) else hits, dtype=np.float64)


def _unit(unit) -> int:
    return unit.linear if isinstance(unit, UnitIndex) else int(unit)


def posterior(
    hits: HitMatrix, unit: UnitIndex, label: int, epsilon: float = DEFAULT_EPSILON
) -> float:
    """Smoothed P(label | unit) = (H[l,u] + eps) / (sum_i H[i,u] + eps * n_labels)"""
    counts = _counts(hits)
    column = counts[:, _unit(unit)]
    return float((column[label] + epsilon) / (column.sum() + epsilon * counts.shape[0]))


def prior(hits: HitMatrix, label: int, epsilon: float = DEFAULT_EPSILON) -> float:
    """
    Smoothed P(label) from row sums of the hit matrix

    An all-zero matrix yields the uniform prior and logs a warning.
    """
    counts = _counts(hits)
    total = counts.sum()
    if total == 0:
        logger.warning("⚠️  Hit matrix is empty; prior falls back to uniform")
    return float(
        (counts[label].sum() + epsilon) / (total + epsilon * counts.shape[0])
    )


def pmi(
    hits: HitMatrix, unit: UnitIndex, label: int, epsilon: float = DEFAULT_EPSILON
) -> float:
    """Natural-log ratio of the smoothed posterior to the smoothed prior"""
    return math.log(
        posterior(hits, unit, label, epsilon) / prior(hits, label, epsilon)
    )


def label_distribution(
    hits: HitMatrix, unit: UnitIndex, epsilon: float = DEFAULT_EPSILON
) -> LabelDistribution:
    counts = _counts(hits)
    n_labels = counts.shape[0]
    column = counts[:, _unit(unit)]
    return LabelDistribution(
        posterior=(column + epsilon) / (column.sum() + epsilon * n_labels),
        prior=(counts.sum(axis=1) + epsilon) / (counts.sum() + epsilon * n_labels),
    )


def pmi_tables(hits: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """
    PMI of every (label, unit) pair of every map

    Args:
        hits: Counts of shape (S, L, U)
        epsilon: Additive smoothing constant

    Returns:
        Array (S, L, U) of natural-log PMI values
    """
    counts = np.asarray(hits, dtype=np.float64)
    n_labels = counts.shape[1]
    column_totals = counts.sum(axis=1, keepdims=True)
    posteriors = (counts + epsilon) / (column_totals + epsilon * n_labels)
    row_totals = counts.sum(axis=2, keepdims=True)
    grand_totals = row_totals.sum(axis=1, keepdims=True)
    priors = (row_totals + epsilon) / (grand_totals + epsilon * n_labels)
    return np.log(posteriors) - np.log(priors)


def _check_candidates(candidates: Iterable[int], n_labels: int) -> list[int]:
    ordered = sorted({int(label) for label in candidates})
    if not ordered:
        raise ValueError("Candidate label set is empty")
    for label in ordered:
        if not 0 <= label < n_labels:
            raise ValueError(f"Candidate label {label} outside [0, {n_labels})")
    return ordered


class PmiClassifier:
    """
    Precomputed PMI tables of a trained model

    Args:
        model: Trained DendSOM
        epsilon: Smoothing constant
        strict: Reject models that have not seen any sample
        restrict_to: Estimate distributions from these label rows only
            (per-task Task-IL variant); scores still use global labels
    """

    def __init__(
        self,
        model: DendSomModel,
        epsilon: float = DEFAULT_EPSILON,
        strict: bool = True,
        restrict_to: Optional[Sequence[int]] = None,
    ):
        if epsilon <= 0.0:
            raise ValueError(f"Smoothing epsilon must be positive, got {epsilon}")
        if not model.is_trained:
            if strict:
                raise UntrainedModelError(
                    "Model has empty hit matrices; train it before predicting"
                )
            logger.warning("⚠️  Predicting with an untrained model; scores are all zero")

        self.model = model
        self.epsilon = epsilon
        if restrict_to is None:
            self.labels = list(range(model.n_labels))
            self.tables = pmi_tables(model.hits, epsilon)
        else:
            self.labels = _check_candidates(restrict_to, model.n_labels)
            self.tables = pmi_tables(model.hits[:, self.labels, :], epsilon)
        # every map counts every sample, so map 0 holds the label totals
        row_totals = model.hits[0, self.labels, :].sum(axis=1)
        self.unseen = (row_totals == 0) & (row_totals.sum() > 0)
        self._row = {label: row for row, label in enumerate(self.labels)}

    def scores_for_bmus(self, bmus: np.ndarray) -> np.ndarray:
        """Summed PMI per table row for one vector of per-map BMUs"""
        maps = np.arange(self.model.n_maps)
        return self.tables[maps, :, bmus].sum(axis=0)

    def predict_bmus(self, bmus: np.ndarray, candidates: Iterable[int]) -> Prediction:
        ordered = _check_candidates(candidates, self.model.n_labels)
        missing = [label for label in ordered if label not in self._row]
        if missing:
            raise ValueError(
                f"Candidates {missing} are outside the labels this classifier models"
            )
        summed = np.where(self.unseen, -np.inf, self.scores_for_bmus(bmus))
        scores = {label: float(summed[self._row[label]]) for label in ordered}
        # ordered ascending, so max() keeps the smallest label among ties
        best = max(ordered, key=lambda label: (scores[label], -label))
        return Prediction(label=best, scores=scores)

    def predict(self, image: np.ndarray, candidates: Iterable[int]) -> Prediction:
        return self.predict_bmus(self.model.bmus(image), candidates)


def predict(
    model: DendSomModel,
    image: np.ndarray,
    candidates: Optional[Iterable[int]] = None,
    epsilon: float = DEFAULT_EPSILON,
    strict: bool = True,
) -> Prediction:
    """
    Predict the candidate label with the largest summed PMI

    Args:
        model: Trained DendSOM
        image: Array (N1, N2)
        candidates: Labels to choose from; all labels when None
        epsilon: Smoothing constant
        strict: Reject untrained models

    Returns:
        Prediction with the argmax label (smallest label on ties) and per-candidate scores
    """
    if candidates is None:
        candidates = range(model.n_labels)
    candidates = _check_candidates(candidates, model.n_labels)
    classifier = PmiClassifier(model, epsilon=epsilon, strict=strict)
    return classifier.predict(image, candidates)
