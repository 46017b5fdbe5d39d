"""Identification training loop, plateau-halving learning-rate schedule, and
the repeated-split experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .autodiff import Tensor, adam_step, backward, softmax_cross_entropy, zero_grad
from .dataset import DatasetManifest, make_scenario, make_split, restrict_split
from .errors import BreathAuthError, ConfigError, DataError, NumericalError
from .models import FeatureStats, make_model
from .pipeline import (
    Bundle,
    InstanceSource,
    apply_stats,
    compute_features,
    make_bundle,
    manifest_source,
    stack_features,
    stack_stats,
)
from .verification import compute_centroids, compute_eer, score_trials


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 1000
    lr0: float = 0.001
    halvings_max: int = 4
    plateau_patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError(f"invalid train config {self}")
        if self.halvings_max < 0 or self.plateau_patience < 1:
            raise ConfigError(f"invalid train config {self}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = -1

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)

    def to_json(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "lr": self.lr,
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "n_epochs": self.n_epochs,
        }


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, history: TrainHistory):
        super().__init__(message)
        self.history = history


def _forward_numpy(model, bundle: Bundle, chunk: int = 256):
    """Inference logits and embeddings over a bundle, in bounded chunks."""
    logits, embeddings = [], []
    for start in range(0, len(bundle), chunk):
        out = model.forward(bundle.audio[start : start + chunk], bundle.motion[start : start + chunk])
        logits.append(out.logits)
        embeddings.append(out.embedding)
    return np.concatenate(logits), np.concatenate(embeddings)


def train(model, train_bundle: Bundle, val_bundle: Bundle, cfg: TrainConfig) -> TrainHistory:
    """Seeded mini-batch training with early stopping.

    The learning rate starts at lr0 and halves (at most halvings_max times)
    after plateau_patience epochs without a validation-loss improvement of
    more than min_delta; one further plateau stops training. The weights from
    the best validation epoch are restored before returning.
    """
    if len(train_bundle) == 0:
        raise DataError("training set is empty")
    present = set(np.unique(train_bundle.labels).tolist())
    if present != set(range(model.n_subjects)):
        raise DataError(
            f"training set covers {len(present)}/{model.n_subjects} subjects; all must be represented"
        )

    rng = np.random.default_rng([cfg.seed, 31])
    params = model.parameters()
    history = TrainHistory()
    lr = cfg.lr0
    halvings = 0
    best_val = np.inf
    best_weights = model.get_weights()
    since_improve = 0
    n = len(train_bundle)

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            logits, _ = model.forward_tensors(
                Tensor(train_bundle.audio[batch]), Tensor(train_bundle.motion[batch]),
                training=True, rng=rng,
            )
            loss = softmax_cross_entropy(logits, train_bundle.labels[batch])
            if not np.isfinite(loss.data):
                history.stop_reason = "diverged"
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", history)
            zero_grad(params)
            backward(loss)
            adam_step(params, lr)
            loss_sum += float(loss.data) * len(batch)

        try:
            val_logits, _ = _forward_numpy(model, val_bundle)
        except NumericalError as exc:
            history.stop_reason = "diverged"
            raise TrainingDiverged(f"non-finite validation outputs at epoch {epoch}: {exc}", history)
        val_loss = float(softmax_cross_entropy(Tensor(val_logits), val_bundle.labels).data)
        val_acc = float(np.mean(np.argmax(val_logits, axis=1) == val_bundle.labels))
        history.train_loss.append(loss_sum / n)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.lr.append(lr)

        if val_loss < best_val - cfg.min_delta:
            best_val = val_loss
            best_weights = model.get_weights()
            history.best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.plateau_patience:
                if halvings < cfg.halvings_max:
                    lr /= 2.0
                    halvings += 1
                    since_improve = 0
                else:
                    history.stop_reason = "plateau"
                    break
    else:
        history.stop_reason = "max_epochs"

    model.set_weights(best_weights)
    model.trained = True
    return history


def evaluate_identification(model, bundle: Bundle) -> float:
    """Fraction of instances whose argmax logit matches the true subject;
    argmax ties resolve to the lowest subject index."""
    if len(bundle) == 0:
        raise DataError("cannot evaluate on an empty instance set")
    logits, _ = _forward_numpy(model, bundle)
    return float(np.mean(np.argmax(logits, axis=1) == bundle.labels))


@dataclass
class RepetitionMetrics:
    repetition: int
    seed: int
    accuracy: float
    eer_scenario1: float | None
    eer_scenario2: float | None
    epochs: int
    stop_reason: str

    def to_json(self) -> dict:
        return {
            "repetition": self.repetition,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "eer_scenario1": self.eer_scenario1,
            "eer_scenario2": self.eer_scenario2,
            "epochs": self.epochs,
            "stop_reason": self.stop_reason,
        }


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class ExperimentResult:
    breath_type: str
    arch: str
    mode: str
    base_seed: int
    repetitions: list[RepetitionMetrics]
    failures: list[dict]

    @property
    def summary(self) -> dict:
        acc_mean, acc_std = _mean_std([r.accuracy for r in self.repetitions])
        e1_mean, e1_std = _mean_std([r.eer_scenario1 for r in self.repetitions])
        e2_mean, e2_std = _mean_std([r.eer_scenario2 for r in self.repetitions])
        return {
            "n_repetitions": len(self.repetitions),
            "n_failures": len(self.failures),
            "accuracy_mean": acc_mean,
            "accuracy_std": acc_std,
            "eer_scenario1_mean": e1_mean,
            "eer_scenario1_std": e1_std,
            "eer_scenario2_mean": e2_mean,
            "eer_scenario2_std": e2_std,
        }

    def to_json(self) -> dict:
        return {
            "breath_type": self.breath_type,
            "arch": self.arch,
            "mode": self.mode,
            "base_seed": self.base_seed,
            "repetitions": [r.to_json() for r in self.repetitions],
            "failures": self.failures,
            "summary": self.summary,
        }


def _subject_embeddings(model, features, ids, audio_stats, motion_stats, chunk: int = 256):
    """Embeddings keyed by instance id (labels not needed, so held-out
    subjects outside the model's label space are fine)."""
    ids = tuple(sorted(ids))
    audio, motion = stack_features(features, ids)
    audio = apply_stats(audio, audio_stats)
    motion = apply_stats(motion, motion_stats)
    chunks = []
    for start in range(0, len(ids), chunk):
        out = model.forward(audio[start : start + chunk], motion[start : start + chunk])
        chunks.append(out.embedding)
    emb = np.concatenate(chunks)
    return {i: emb[k] for k, i in enumerate(ids)}


def train_on_split(manifest, split, features, arch, mode, model_config, train_cfg, seed):
    """Fit a model on a split; returns (model, history, subject_index, stats)."""
    by_id = manifest.by_id()
    subjects = tuple(sorted({by_id[i].subject_id for i in split.all_ids()}))
    subject_index = {s: k for k, s in enumerate(subjects)}
    train_audio, train_motion = stack_features(features, split.train)
    audio_stats = stack_stats(train_audio)
    motion_stats = stack_stats(train_motion)
    train_b = make_bundle(features, split.train, subject_index, audio_stats, motion_stats)
    val_b = make_bundle(features, split.val, subject_index, audio_stats, motion_stats)

    model = make_model(arch, model_config, len(subjects), mode, seed=seed)
    model.feature_stats = FeatureStats(audio=audio_stats, motion=motion_stats)
    model.subjects = subjects
    model.breath_type = split.breath_type
    history = train(model, train_b, val_b, replace(train_cfg, seed=seed))
    return model, history, subject_index, audio_stats, motion_stats


def run_repetition(manifest: DatasetManifest, breath_type: str, arch: str, mode: str,
                   seed: int, features, model_config=None,
                   train_config: TrainConfig = TrainConfig(),
                   scenarios=(1, 2)) -> RepetitionMetrics:
    """One train/test split: identification accuracy plus the requested
    verification scenarios (scenario 2 retrains without the held-out subjects)."""
    by_id = manifest.by_id()
    split = make_split(manifest, breath_type, seed)
    model, history, subject_index, audio_stats, motion_stats = train_on_split(
        manifest, split, features, arch, mode, model_config, train_config, seed)
    test_b = make_bundle(features, split.test, subject_index, audio_stats, motion_stats)
    accuracy = evaluate_identification(model, test_b)

    eer1 = eer2 = None
    if 1 in scenarios:
        scenario = make_scenario(manifest, split, 1, seed)
        train_emb = _subject_embeddings(model, features, split.train, audio_stats, motion_stats)
        centroids = compute_centroids(train_emb, {i: by_id[i].subject_id for i in train_emb})
        test_emb = _subject_embeddings(model, features, split.test, audio_stats, motion_stats)
        eer1 = compute_eer(score_trials(scenario.trials, test_emb, centroids)).eer

    if 2 in scenarios:
        scenario = make_scenario(manifest, split, 2, seed)
        reduced = restrict_split(manifest, split, scenario.enrolled_subjects)
        model2, _, _, astats2, mstats2 = train_on_split(
            manifest, reduced, features, arch, mode, model_config, train_config, seed)
        train_emb = _subject_embeddings(model2, features, reduced.train, astats2, mstats2)
        centroids = compute_centroids(train_emb, {i: by_id[i].subject_id for i in train_emb})
        trial_ids = sorted({t.instance_id for t in scenario.trials})
        trial_emb = _subject_embeddings(model2, features, trial_ids, astats2, mstats2)
        eer2 = compute_eer(score_trials(scenario.trials, trial_emb, centroids)).eer

    return RepetitionMetrics(
        repetition=0, seed=seed, accuracy=accuracy,
        eer_scenario1=eer1, eer_scenario2=eer2,
        epochs=history.n_epochs, stop_reason=history.stop_reason,
    )


def run_experiment(manifest: DatasetManifest, breath_type: str, arch: str, mode: str,
                   n_repetitions: int, base_seed: int, model_config=None,
                   train_config: TrainConfig = TrainConfig(),
                   source: InstanceSource | None = None,
                   features: Mapping | None = None,
                   scenarios=(1, 2)) -> ExperimentResult:
    """Repeat the split/train/evaluate protocol with seeds base_seed + i and
    aggregate mean and standard deviation; per-repetition failures are
    recorded in the result, never silently dropped."""
    if n_repetitions < 1:
        raise ConfigError("need at least one repetition")
    if features is None:
        if source is None:
            source = manifest_source(manifest)
        features = compute_features(manifest.of_type(breath_type), source)

    result = ExperimentResult(breath_type, arch, mode, base_seed, [], [])
    for rep in range(n_repetitions):
        seed = base_seed + rep
        try:
            metrics = run_repetition(manifest, breath_type, arch, mode, seed, features,
                                     model_config, train_config, scenarios)
            metrics.repetition = rep
            result.repetitions.append(metrics)
        except BreathAuthError as exc:
            result.failures.append({"repetition": rep, "seed": seed, "error": str(exc)})
    if not result.repetitions:
        raise DataError(f"every repetition failed: {result.failures}")
    return result


def make_bundle_from_arrays(audio, motion, labels) -> Bundle:
    """Assemble a bundle directly from arrays (toy problems and tests)."""
    n = len(labels)
    ids = tuple(f"x{i:04d}" for i in range(n))
    return Bundle(ids, np.asarray(audio, dtype=np.float32),
                  np.asarray(motion, dtype=np.float32), np.asarray(labels, dtype=np.int64))
