"""
Continual-Learning Protocols

Split-protocol task construction and the Task-IL, Domain-IL and Class-IL
harnesses. Tasks are presented strictly one after another, each sample once;
after every task the model is scored on every test task, including the ones
it has not been trained on yet.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from datasets import LabeledDataset, shuffle
from dendsom import DendSomModel
from pmi_inference import DEFAULT_EPSILON, PmiClassifier, PredictionRecord

logger = logging.getLogger(__name__)

DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))
CURVE_HEADER = ("trained_through_task", "eval_task", "accuracy")


class Scenario(str, Enum):
    TASK_IL = "task-il"
    DOMAIN_IL = "domain-il"
    CLASS_IL = "class-il"


class ScenarioError(ValueError):
    """Raised on inconsistent tasks, label spaces or violated scenario checks"""


@dataclass(frozen=True)
class SplitTask:
    """One task of the split protocol: the samples carrying global_labels"""

    task_id: int
    global_labels: tuple[int, ...]
    samples: LabeledDataset

    def within_task_labels(self, labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Map global labels to their position in global_labels"""
        return to_within_task(
            self.samples.labels if labels is None else labels, self.global_labels
        )


@dataclass
class ScenarioResult:
    """Accuracy statistics of one scenario run"""

    scenario: str
    task_labels: list[list[int]]
    per_task_accuracy: list[float]
    accuracy_after_each_task: list[list[float]]
    final_accuracy: float
    companion_class_il_accuracy: Optional[float] = None
    samples_per_task: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioResult":
        return cls(**data)


def to_within_task(labels: np.ndarray, global_labels: Sequence[int]) -> np.ndarray:
    """
    Replace each global label by its index in global_labels

    Raises:
        ScenarioError: If a label is not part of the task
    """
    labels = np.asarray(labels, dtype=np.int64)
    lookup = {label: index for index, label in enumerate(global_labels)}
    try:
        return np.array([lookup[int(label)] for label in labels], dtype=np.int64)
    except KeyError as e:
        raise ScenarioError(f"Label {e.args[0]} is not in task labels {global_labels}")


def make_split(
    dataset: LabeledDataset, pairs: Sequence[Sequence[int]] = DEFAULT_PAIRS
) -> list[SplitTask]:
    """
    Partition a dataset into tasks by label groups

    Sample order inside each task follows the dataset order.

    Raises:
        ScenarioError: On overlapping groups, groups that leave dataset labels
            uncovered, or a group without samples
    """
    groups = [tuple(int(label) for label in pair) for pair in pairs]
    if not groups:
        raise ScenarioError("At least one label group is required")
    seen = set()
    for group in groups:
        if not group:
            raise ScenarioError("Label groups must not be empty")
        overlap = seen.intersection(group)
        if overlap or len(set(group)) != len(group):
            raise ScenarioError(f"Label groups overlap on {sorted(overlap) or group}")
        seen.update(group)

    present = set(np.unique(dataset.labels).tolist())
    uncovered = present - seen
    if uncovered:
        raise ScenarioError(f"Labels {sorted(uncovered)} are not covered by any group")

    tasks = []
    for task_id, group in enumerate(groups):
        indices = np.flatnonzero(np.isin(dataset.labels, group))
        if len(indices) == 0:
            raise ScenarioError(f"Task {task_id} with labels {group} has no samples")
        tasks.append(SplitTask(task_id, group, dataset.subset(indices)))
    return tasks


def predict_records(
    model: DendSomModel,
    dataset: LabeledDataset,
    candidates: Iterable[int],
    epsilon: float = DEFAULT_EPSILON,
    strict: bool = True,
) -> list[PredictionRecord]:
    """Predict every sample of dataset over a fixed candidate set"""
    if len(dataset) == 0:
        raise ValueError("Cannot evaluate on an empty dataset")
    classifier = PmiClassifier(model, epsilon=epsilon, strict=strict)
    candidates = list(candidates)
    records = []
    for sample_id, (bmus, truth) in enumerate(
        zip(model.bmus_many(dataset.images), dataset.labels)
    ):
        prediction = classifier.predict_bmus(bmus, candidates)
        records.append(
            PredictionRecord(sample_id, int(truth), prediction.label, prediction.scores)
        )
    return records


def evaluate(
    model: DendSomModel,
    dataset: LabeledDataset,
    candidates: Optional[Iterable[int]] = None,
    epsilon: float = DEFAULT_EPSILON,
    strict: bool = True,
) -> float:
    """
    Top-1 accuracy of model on dataset

    Args:
        candidates: Labels to choose from; every model label when None
    """
    if candidates is None:
        candidates = range(model.n_labels)
    records = predict_records(model, dataset, candidates, epsilon, strict)
    return float(np.mean([r.predicted_label == r.true_label for r in records]))


def _accuracy(
    classifier: PmiClassifier,
    bmus: np.ndarray,
    truth: np.ndarray,
    candidates: Sequence[int],
) -> np.ndarray:
    """Per-sample correctness indicators"""
    return np.array(
        [
            classifier.predict_bmus(sample_bmus, candidates).label == label
            for sample_bmus, label in zip(bmus, truth)
        ],
        dtype=bool,
    )


def _check_tasks(tasks: Sequence[SplitTask], test_tasks: Sequence[SplitTask]):
    if not tasks:
        raise ScenarioError("No tasks given")
    if len(tasks) != len(test_tasks):
        raise ScenarioError(
            f"{len(tasks)} training tasks but {len(test_tasks)} test tasks"
        )
    for train_task, test_task in zip(tasks, test_tasks):
        if train_task.global_labels != test_task.global_labels:
            raise ScenarioError(
                f"Task {train_task.task_id} trains on {train_task.global_labels} "
                f"but tests on {test_task.global_labels}"
            )


def required_labels(scenario: Scenario, tasks: Sequence[SplitTask]) -> int:
    """Size of the label space the model must count over"""
    if Scenario(scenario) is Scenario.DOMAIN_IL:
        return max(len(task.global_labels) for task in tasks)
    return max(max(task.global_labels) for task in tasks) + 1


def run_scenario(
    model_factory: Callable[[int], DendSomModel],
    tasks: Sequence[SplitTask],
    scenario: Union[Scenario, str],
    test_tasks: Sequence[SplitTask],
    seed=0,
    n_iter_per_task: Optional[int] = None,
    epsilon: float = DEFAULT_EPSILON,
    task_il_distribution: str = "global",
) -> ScenarioResult:
    """
    Train on tasks sequentially and score every test task after each one

    Args:
        model_factory: Builds a fresh model for a given label-space size
        tasks: Training tasks in presentation order
        scenario: task-il, domain-il or class-il
        test_tasks: Test split of the same tasks, same order
        seed: Seed (int or SeedSequence) for the within-task sample order
        n_iter_per_task: Cap on samples used per task; whole task when None
        epsilon: PMI smoothing constant
        task_il_distribution: "global" uses the global hit matrices with
            candidate restriction, "per_task" estimates the distributions from
            the task's label rows only

    Returns:
        ScenarioResult with the accuracy matrix and final accuracy
    """
    scenario = Scenario(scenario)
    if task_il_distribution not in ("global", "per_task"):
        raise ScenarioError(
            f"Unknown task_il_distribution '{task_il_distribution}', "
            "expected 'global' or 'per_task'"
        )
    _check_tasks(tasks, test_tasks)

    n_labels = required_labels(scenario, tasks)
    model = model_factory(n_labels)
    if model.n_labels != n_labels:
        raise ScenarioError(
            f"{scenario.value} needs a model over {n_labels} labels, "
            f"factory built one over {model.n_labels}"
        )
    all_labels = list(range(n_labels))
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    task_seeds = seed.spawn(len(tasks))

    matrix = []
    samples_per_task = []
    step = 0
    for r, task in enumerate(tasks):
        ordered = shuffle(task.samples, task_seeds[r])
        labels = (
            to_within_task(ordered.labels, task.global_labels)
            if scenario is Scenario.DOMAIN_IL
            else ordered.labels
        )
        n_iter = len(ordered) if n_iter_per_task is None else min(n_iter_per_task, len(ordered))
        model.fit(ordered.images, labels, n_iter=n_iter, start_step=step)
        step += n_iter
        samples_per_task.append(n_iter)
        logger.info(
            f"{scenario.value}: trained task {r} {task.global_labels} on {n_iter} samples"
        )

        classifier = PmiClassifier(model, epsilon=epsilon, strict=False)
        row, pooled, class_il_row = [], [], []
        for test_task in test_tasks:
            bmus = model.bmus_many(test_task.samples.images)
            truth = test_task.samples.labels
            if scenario is Scenario.TASK_IL:
                task_classifier = (
                    PmiClassifier(
                        model,
                        epsilon=epsilon,
                        strict=False,
                        restrict_to=test_task.global_labels,
                    )
                    if task_il_distribution == "per_task"
                    else classifier
                )
                hits = _accuracy(task_classifier, bmus, truth, test_task.global_labels)
                if r == len(tasks) - 1:
                    class_il_row.append(
                        _accuracy(classifier, bmus, truth, all_labels).mean()
                    )
            elif scenario is Scenario.DOMAIN_IL:
                local = to_within_task(truth, test_task.global_labels)
                hits = _accuracy(classifier, bmus, local, all_labels)
            else:
                hits = _accuracy(classifier, bmus, truth, all_labels)
            row.append(float(hits.mean()))
            pooled.append(hits)
        matrix.append(row)

    per_task = matrix[-1]
    if scenario is Scenario.CLASS_IL:
        final = float(np.concatenate(pooled).mean())
    else:
        final = float(np.mean(per_task))

    companion = None
    if scenario is Scenario.TASK_IL:
        companion = float(np.mean(class_il_row))
        if task_il_distribution == "global":
            for c, (task_acc, class_acc) in enumerate(zip(per_task, class_il_row)):
                if task_acc < class_acc:
                    raise ScenarioError(
                        f"Task-IL accuracy {task_acc:.4f} below Class-IL accuracy "
                        f"{class_acc:.4f} on task {c}"
                    )

    return ScenarioResult(
        scenario=scenario.value,
        task_labels=[list(task.global_labels) for task in tasks],
        per_task_accuracy=per_task,
        accuracy_after_each_task=matrix,
        final_accuracy=final,
        companion_class_il_accuracy=companion,
        samples_per_task=samples_per_task,
    )


def write_curves_csv(result: ScenarioResult, path: Union[str, Path]) -> Path:
    """Write the accuracy matrix as (trained_through_task, eval_task, accuracy) rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_HEADER)
        for r, row in enumerate(result.accuracy_after_each_task):
            for c, accuracy in enumerate(row):
                writer.writerow([r, c, repr(accuracy)])
    return path
