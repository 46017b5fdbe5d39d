"""The two identification networks and their checkpoint format.

Both take an MFCC sequence and/or a motion sequence, fuse by channel
concatenation, and expose n-way logits plus a fixed-size embedding tapped
from the pre-logit final-time features. Monomodal variants reuse the same
stage definitions with the fusion skipped.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .dsp import ChannelStats
from .errors import ConfigError, DataError, NumericalError

MODES = ("multimodal", "audio", "motion")
ARCHS = ("cnn-lstm", "tcn")

AUDIO_CHANNELS = 20
MOTION_CHANNELS = 6

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CnnLstmConfig:
    """One conv layer per modality, channel-concat fusion, LSTM, linear head.

    forget_bias controls how long the cell retains evidence across the
    zero-padded tail: retention per step is sigmoid(forget_bias) at init, and
    center padding puts tens of constant frames between the breath and the
    final-time embedding tap. Values near 1 wash the breath out of the cell
    before the tap; 4.0 (~0.98 retention) keeps it alive.
    """

    n_filters: int = 64
    kernel: int = 9
    stride: int = 1
    hidden: int = 128
    forget_bias: float = 4.0

    def __post_init__(self):
        if min(self.n_filters, self.kernel, self.stride, self.hidden) < 1:
            raise ConfigError(f"invalid CNN-LSTM config {self}")


@dataclass(frozen=True)
class TcnConfig:
    """Two causal TCN stages of 4 residual blocks with dilations 1,2,4,8."""

    stage1_filters: int = 32
    stage2_filters: int = 64
    kernel: int = 5
    dropout: float = 0.1

    BLOCKS_PER_STAGE = 4
    DILATIONS = (1, 2, 4, 8)

    def __post_init__(self):
        if min(self.stage1_filters, self.stage2_filters, self.kernel) < 1:
            raise ConfigError(f"invalid TCN config {self}")
        if self.stage2_filters <= self.stage1_filters:
            raise ConfigError(
                f"stage-2 filters ({self.stage2_filters}) must exceed stage-1 ({self.stage1_filters})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def receptive_field(self) -> int:
        """Frames seen by one output of a single stage."""
        return 1 + (self.kernel - 1) * sum(self.DILATIONS)


@dataclass
class ModelOutput:
    logits: np.ndarray
    embedding: np.ndarray


@dataclass(frozen=True)
class FeatureStats:
    """Standardization statistics carried inside a checkpoint."""

    audio: ChannelStats | None
    motion: ChannelStats | None


def _needs_audio(mode: str) -> bool:
    return mode in ("multimodal", "audio")


def _needs_motion(mode: str) -> bool:
    return mode in ("multimodal", "motion")


class _BaseModel:
    arch: str

    def __init__(self, mode: str, n_subjects: int, dtype):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if n_subjects < 2:
            raise ConfigError(f"need at least 2 identification subjects, got {n_subjects}")
        self.mode = mode
        self.n_subjects = n_subjects
        self.dtype = dtype
        self.trained = False
        self.feature_stats: FeatureStats | None = None
        self.subjects: tuple[str, ...] | None = None  # label index -> subject id
        self.breath_type: str | None = None
        self._params: dict[str, Parameter] = {}

    def _add_param(self, name: str, data: np.ndarray) -> Parameter:
        p = Parameter(name, np.asarray(data, dtype=self.dtype))
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_weights(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        if set(weights) != set(self._params):
            missing = set(self._params) - set(weights)
            extra = set(weights) - set(self._params)
            raise DataError(f"weight names mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, values in weights.items():
            p = self._params[name]
            values = np.asarray(values, dtype=self.dtype)
            if values.shape != p.data.shape:
                raise DataError(f"parameter {name}: shape {values.shape} != {p.data.shape}")
            p.tensor.data = values.copy()

    def forward_tensors(self, audio, motion, training: bool = False,
                        rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def forward(self, audio: np.ndarray | None, motion: np.ndarray | None) -> ModelOutput:
        """Inference on numpy feature arrays; dropout off, outputs validated."""
        at = Tensor(np.asarray(audio, dtype=self.dtype)) if audio is not None else None
        mt = Tensor(np.asarray(motion, dtype=self.dtype)) if motion is not None else None
        logits, embedding = self.forward_tensors(at, mt, training=False)
        if not (np.all(np.isfinite(logits.data)) and np.all(np.isfinite(embedding.data))):
            raise NumericalError("model produced non-finite outputs")
        return ModelOutput(logits.data.copy(), embedding.data.copy())

    def _check_inputs(self, audio, motion):
        if _needs_audio(self.mode) and audio is None:
            raise DataError(f"{self.mode} model requires audio features")
        if _needs_motion(self.mode) and motion is None:
            raise DataError(f"{self.mode} model requires motion features")


class CnnLstmModel(_BaseModel):
    arch = "cnn-lstm"

    def __init__(self, config: CnnLstmConfig, n_subjects: int, mode: str = "multimodal",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__(mode, n_subjects, dtype)
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        c = config
        if _needs_audio(mode):
            self._add_param("audio_conv.w", ad.uniform_init(
                rng, (c.n_filters, AUDIO_CHANNELS, c.kernel), AUDIO_CHANNELS * c.kernel, c.n_filters * c.kernel, dtype))
            self._add_param("audio_conv.b", np.zeros(c.n_filters))
        if _needs_motion(mode):
            self._add_param("motion_conv.w", ad.uniform_init(
                rng, (c.n_filters, MOTION_CHANNELS, c.kernel), MOTION_CHANNELS * c.kernel, c.n_filters * c.kernel, dtype))
            self._add_param("motion_conv.b", np.zeros(c.n_filters))

        lstm_in = 2 * c.n_filters if mode == "multimodal" else c.n_filters
        self._add_param("lstm.w", ad.uniform_init(
            rng, (lstm_in + c.hidden, 4 * c.hidden), lstm_in + c.hidden, 4 * c.hidden, dtype))
        lstm_b = np.zeros(4 * c.hidden)
        lstm_b[c.hidden : 2 * c.hidden] = c.forget_bias
        self._add_param("lstm.b", lstm_b)
        self._add_param("head.w", ad.uniform_init(rng, (c.hidden, n_subjects), c.hidden, n_subjects, dtype))
        self._add_param("head.b", np.zeros(n_subjects))

    @property
    def embedding_dim(self) -> int:
        return self.config.hidden

    def _branch(self, x: Tensor, name: str) -> Tensor:
        p = self._params
        return ad.relu(ad.conv1d_valid(x, p[f"{name}.w"].tensor, p[f"{name}.b"].tensor,
                                       stride=self.config.stride))

    def forward_tensors(self, audio, motion, training=False, rng=None):
        self._check_inputs(audio, motion)
        if self.mode == "multimodal":
            fused = ad.concat_channels(self._branch(audio, "audio_conv"),
                                       self._branch(motion, "motion_conv"))
        elif self.mode == "audio":
            fused = self._branch(audio, "audio_conv")
        else:
            fused = self._branch(motion, "motion_conv")
        p = self._params
        _, h = ad.lstm_forward(fused, p["lstm.w"].tensor, p["lstm.b"].tensor, self.config.hidden)
        logits = ad.linear(h, p["head.w"].tensor, p["head.b"].tensor)
        return logits, h


class _TcnBlock:
    """Dilated causal conv (weight-normed) + relu + spatial dropout, with a
    1x1-conv residual when the channel count changes."""

    def __init__(self, model: _BaseModel, name: str, c_in: int, c_out: int,
                 kernel: int, dilation: int, rng: np.random.Generator):
        self.dilation = dilation
        self.c_in, self.c_out = c_in, c_out
        v = ad.uniform_init(rng, (c_out, c_in, kernel), c_in * kernel, c_out * kernel, model.dtype)
        self.v = model._add_param(f"{name}.v", v)
        norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2)))
        self.g = model._add_param(f"{name}.g", norms)  # effective filter equals v at init
        self.b = model._add_param(f"{name}.b", np.zeros(c_out))
        if c_in != c_out:
            self.res_w = model._add_param(f"{name}.res.w", ad.uniform_init(rng, (c_out, c_in, 1), c_in, c_out, model.dtype))
            self.res_b = model._add_param(f"{name}.res.b", np.zeros(c_out))
        else:
            self.res_w = self.res_b = None

    def forward(self, x: Tensor, dropout: float, training: bool, rng) -> Tensor:
        w = ad.weight_norm(self.v.tensor, self.g.tensor)
        y = ad.relu(ad.conv1d_causal_dilated(x, w, self.b.tensor, dilation=self.dilation))
        y = ad.spatial_dropout(y, dropout, training, rng)
        if self.res_w is not None:
            res = ad.conv1d_valid(x, self.res_w.tensor, self.res_b.tensor, stride=1)
        else:
            res = x
        return ad.add(res, y)


class TcnModel(_BaseModel):
    arch = "tcn"

    def __init__(self, config: TcnConfig, n_subjects: int, mode: str = "multimodal",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__(mode, n_subjects, dtype)
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        c = config

        def stage(prefix, c_in, c_out):
            blocks = []
            for i, d in enumerate(c.DILATIONS):
                blocks.append(_TcnBlock(self, f"{prefix}.block{i}", c_in if i == 0 else c_out,
                                        c_out, c.kernel, d, rng))
            return blocks

        self.audio_stage = stage("audio_tcn", AUDIO_CHANNELS, c.stage1_filters) if _needs_audio(mode) else None
        self.motion_stage = stage("motion_tcn", MOTION_CHANNELS, c.stage1_filters) if _needs_motion(mode) else None
        fused_channels = 2 * c.stage1_filters if mode == "multimodal" else c.stage1_filters
        self.stage2 = stage("stage2", fused_channels, c.stage2_filters)
        self._add_param("head.w", ad.uniform_init(rng, (c.stage2_filters, n_subjects), c.stage2_filters, n_subjects, dtype))
        self._add_param("head.b", np.zeros(n_subjects))

    @property
    def embedding_dim(self) -> int:
        return self.config.stage2_filters

    def _run_stage(self, blocks, x, training, rng):
        for block in blocks:
            x = block.forward(x, self.config.dropout, training, rng)
        return x

    def _sequence_tensors(self, audio, motion, training, rng) -> Tensor:
        self._check_inputs(audio, motion)
        if self.mode == "multimodal":
            fused = ad.concat_channels(
                self._run_stage(self.audio_stage, audio, training, rng),
                self._run_stage(self.motion_stage, motion, training, rng),
            )
        elif self.mode == "audio":
            fused = self._run_stage(self.audio_stage, audio, training, rng)
        else:
            fused = self._run_stage(self.motion_stage, motion, training, rng)
        return self._run_stage(self.stage2, fused, training, rng)

    def sequence_outputs(self, audio: np.ndarray | None, motion: np.ndarray | None) -> np.ndarray:
        """Full per-frame stage-2 output at inference (for causality checks)."""
        at = Tensor(np.asarray(audio, dtype=self.dtype)) if audio is not None else None
        mt = Tensor(np.asarray(motion, dtype=self.dtype)) if motion is not None else None
        return self._sequence_tensors(at, mt, training=False, rng=None).data.copy()

    def forward_tensors(self, audio, motion, training=False, rng=None):
        out = self._sequence_tensors(audio, motion, training, rng)
        embedding = ad.last_frame(out)
        p = self._params
        logits = ad.linear(embedding, p["head.w"].tensor, p["head.b"].tensor)
        return logits, embedding


def make_model(arch: str, config, n_subjects: int, mode: str,
               seed: int = 0, dtype=np.float32):
    rng = np.random.default_rng([seed, 41])
    if arch == "cnn-lstm":
        return CnnLstmModel(config or CnnLstmConfig(), n_subjects, mode, rng, dtype)
    if arch == "tcn":
        return TcnModel(config or TcnConfig(), n_subjects, mode, rng, dtype)
    raise ConfigError(f"arch must be one of {ARCHS}, got {arch!r}")


def embed(model: _BaseModel, audio: np.ndarray | None, motion: np.ndarray | None) -> np.ndarray:
    """Embedding of one instance (or batch) from a trained model."""
    if not model.trained:
        raise ConfigError("model is not trained; embeddings would be meaningless")
    return model.forward(audio, motion).embedding


def _stats_to_json(stats: ChannelStats | None):
    if stats is None:
        return None
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist()}


def _stats_from_json(obj):
    if obj is None:
        return None
    return ChannelStats(np.asarray(obj["mean"]), np.asarray(obj["std"]))


def save_model(model: _BaseModel, path: Path) -> None:
    """Self-describing JSON checkpoint: config header + named weight arrays."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "mode": model.mode,
        "n_subjects": model.n_subjects,
        "embedding_dim": model.embedding_dim,
        "dtype": np.dtype(model.dtype).name,
        "trained": model.trained,
        "subjects": None if model.subjects is None else list(model.subjects),
        "breath_type": model.breath_type,
        "config": asdict(model.config),
        "feature_stats": None if model.feature_stats is None else {
            "audio": _stats_to_json(model.feature_stats.audio),
            "motion": _stats_to_json(model.feature_stats.motion),
        },
        "params": {
            name: {"shape": list(p.data.shape), "values": p.data.astype(np.float64).ravel().tolist()}
            for name, p in model._params.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f)
        f.write("\n")


def load_model(path: Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no checkpoint at {path}")
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid checkpoint JSON ({exc})") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version!r}")

    arch = payload["arch"]
    dtype = np.dtype(payload["dtype"])
    if arch == "cnn-lstm":
        config = CnnLstmConfig(**payload["config"])
    elif arch == "tcn":
        config = TcnConfig(**payload["config"])
    else:
        raise DataError(f"{path}: unknown architecture {arch!r}")
    model = make_model(arch, config, payload["n_subjects"], payload["mode"], seed=0, dtype=dtype)

    weights = {}
    for name, entry in payload["params"].items():
        weights[name] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
    model.set_weights(weights)
    model.trained = bool(payload["trained"])
    subjects = payload.get("subjects")
    model.subjects = None if subjects is None else tuple(subjects)
    model.breath_type = payload.get("breath_type")
    stats = payload.get("feature_stats")
    if stats is not None:
        model.feature_stats = FeatureStats(
            audio=_stats_from_json(stats.get("audio")),
            motion=_stats_from_json(stats.get("motion")),
        )
    return model
