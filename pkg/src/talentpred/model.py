"""The multimodal talent classifier.

Three encoder branches (award text, exam sequence, one ANN per demographic
column) are concatenated, layer-normalised and fed to a fully connected
classifier with seven logits. In ``one`` mode every branch ends in a
trained linear map to width 1; in ``raw`` mode the branch outputs are used
as they are (pooled text width d_model, LSTM hidden size, identity ANN).

The award-text transformer is frozen here: its parameters live in
``ModelBundle.text_params`` and only the branch heads, LSTM, norm and
classifier are trained.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoders import (
    LstmConfig,
    TransformerConfig,
    Vocabulary,
    init_lstm,
    linear_backward,
    lstm_backward_batch,
    lstm_forward_batch,
)
from .errors import ConfigError, PersistenceError
from .numerics import layer_norm_backward, layer_norm_forward, sigmoid, xavier
from .talent import N_TYPES

Array = np.ndarray
MODES = ("one", "raw")


@dataclass
class FeatureSchema:
    """Demographic columns seen in training: categories or min/max range."""

    categorical: Dict[str, List[str]] = field(default_factory=dict)
    numerical: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def fit(cls, students) -> "FeatureSchema":
        cats: Dict[str, set] = {}
        nums: Dict[str, List[float]] = {}
        for st in students:
            for name, value in st.demographics.items():
                if value is None:
                    continue
                if isinstance(value, str):
                    cats.setdefault(name, set()).add(value)
                else:
                    nums.setdefault(name, []).append(float(value))
        clash = set(cats) & set(nums)
        if clash:
            raise ConfigError(f"columns mix text and numbers: {sorted(clash)}")
        return cls(
            {k: sorted(v) for k, v in sorted(cats.items())},
            {k: (min(v), max(v)) for k, v in sorted(nums.items())},
        )

    @property
    def columns(self) -> List[str]:
        return sorted([*self.categorical, *self.numerical])

    def width(self, column: str) -> int:
        return len(self.categorical[column]) if column in self.categorical else 1

    def encode(self, column: str, value) -> Array:
        if column in self.categorical:
            out = np.zeros(len(self.categorical[column]))
            if value in self.categorical[column]:
                out[self.categorical[column].index(value)] = 1.0
            return out
        lo, hi = self.numerical[column]
        if value is None or isinstance(value, str):
            return np.zeros(1)
        scaled = 0.0 if hi == lo else (float(value) - lo) / (hi - lo)
        return np.array([min(max(scaled, 0.0), 1.0)])

    def to_dict(self) -> dict:
        return {"categorical": self.categorical,
                "numerical": {k: list(v) for k, v in self.numerical.items()}}

    @classmethod
    def from_dict(cls, d) -> "FeatureSchema":
        return cls({k: list(v) for k, v in d.get("categorical", {}).items()},
                   {k: (float(v[0]), float(v[1])) for k, v in d.get("numerical", {}).items()})


@dataclass
class ModelConfig:
    mode: str = "one"
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    classifier_hidden: Tuple[int, ...] = ()
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.transformer.validate()
        self.lstm.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier_hidden"] = list(self.classifier_hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(
            mode=d.get("mode", "one"),
            transformer=TransformerConfig(**d.get("transformer", {})),
            lstm=LstmConfig(**d.get("lstm", {})),
            classifier_hidden=tuple(d.get("classifier_hidden", ())),
            ln_eps=d.get("ln_eps", 1e-5),
        )


@dataclass
class Batch:
    """Model inputs for a cohort slice; rows align with ``ids``."""

    ids: List[str]
    text: Array                 # (B, d_model) pooled award embeddings
    seq: Array                  # (B, T, 3) exam scores scaled to [0, 1]
    seq_mask: Array             # (B, T) observed timesteps
    seq_len: Array              # (B,) timesteps up to the horizon, before padding
    demo: Dict[str, Array]      # column -> (B, width)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, rows) -> "Batch":
        rows = np.asarray(rows)
        return Batch([self.ids[i] for i in rows], self.text[rows], self.seq[rows],
                     self.seq_mask[rows], self.seq_len[rows],
                     {k: v[rows] for k, v in self.demo.items()})


def group_names(schema: FeatureSchema) -> List[str]:
    return ["text", "exams", *schema.columns]


def group_widths(cfg: ModelConfig, schema: FeatureSchema) -> Dict[str, int]:
    if cfg.mode == "one":
        return {g: 1 for g in group_names(schema)}
    widths = {"text": cfg.transformer.d_model, "exams": cfg.lstm.hidden}
    widths.update({c: schema.width(c) for c in schema.columns})
    return widths


def init_params(cfg: ModelConfig, schema: FeatureSchema, rng: np.random.Generator) -> Dict[str, Array]:
    cfg.validate()
    p: Dict[str, Array] = {}
    p.update(init_lstm(cfg.lstm, rng, "lstm."))
    if cfg.mode == "one":
        p["text_proj.W"] = xavier(rng, cfg.transformer.d_model, 1)
        p["text_proj.b"] = np.zeros(1)
        p["exams_proj.W"] = xavier(rng, cfg.lstm.hidden, 1)
        p["exams_proj.b"] = np.zeros(1)
        for col in schema.columns:
            p[f"ann.{col}.W"] = xavier(rng, schema.width(col), 1)
            p[f"ann.{col}.b"] = np.zeros(1)
    width = sum(group_widths(cfg, schema).values())
    p["ln.gamma"] = np.ones(width)
    p["ln.beta"] = np.zeros(width)
    prev = width
    for i, h in enumerate(cfg.classifier_hidden):
        p[f"clf.h{i}.W"] = xavier(rng, prev, h)
        p[f"clf.h{i}.b"] = np.zeros(h)
        prev = h
    p["clf.W"] = xavier(rng, prev, N_TYPES)
    p["clf.b"] = np.zeros(N_TYPES)
    return p


def _linear_head(name, x, values, one):
    if not one:
        return x
    return x @ values[f"{name}.W"] + values[f"{name}.b"]


def branch_forward(batch: Batch, cfg: ModelConfig, schema: FeatureSchema, values,
                   rng=None, training: bool = False):
    """Per-group encoder outputs before concatenation, plus caches."""
    one = cfg.mode == "one"
    parts: Dict[str, Array] = {}
    parts["text"] = _linear_head("text_proj", batch.text, values, one)
    h, lstm_cache = lstm_forward_batch(batch.seq, batch.seq_mask, cfg.lstm, values, "lstm.",
                                       rng, training)
    parts["exams"] = _linear_head("exams_proj", h, values, one)
    for col in schema.columns:
        parts[col] = _linear_head(f"ann.{col}", batch.demo[col], values, one)
    return parts, (h, lstm_cache)


def forward(batch: Batch, cfg: ModelConfig, schema: FeatureSchema, values,
            rng=None, training: bool = False):
    """Returns ``(logits (B, 7), cache)``."""
    parts, branch_cache = branch_forward(batch, cfg, schema, values, rng, training)
    names = group_names(schema)
    concat = np.concatenate([parts[g] for g in names], axis=1)
    z, ln_cache = layer_norm_forward(concat, values["ln.gamma"], values["ln.beta"], cfg.ln_eps)
    acts = [z]
    for i in range(len(cfg.classifier_hidden)):
        z = np.maximum(z @ values[f"clf.h{i}.W"] + values[f"clf.h{i}.b"], 0.0)
        acts.append(z)
    logits = z @ values["clf.W"] + values["clf.b"]
    return logits, (batch, parts, branch_cache, ln_cache, acts)


def backward(dlogits: Array, cache, cfg: ModelConfig, schema: FeatureSchema, values) -> Dict[str, Array]:
    batch, parts, (h, lstm_cache), ln_cache, acts = cache
    one = cfg.mode == "one"
    g: Dict[str, Array] = {}
    dz, g["clf.W"], g["clf.b"] = linear_backward(dlogits, acts[-1], values["clf.W"])
    for i in reversed(range(len(cfg.classifier_hidden))):
        dz = dz * (acts[i + 1] > 0)
        dz, g[f"clf.h{i}.W"], g[f"clf.h{i}.b"] = linear_backward(dz, acts[i], values[f"clf.h{i}.W"])
    dconcat, g["ln.gamma"], g["ln.beta"] = layer_norm_backward(dz, ln_cache)
    names = group_names(schema)
    offsets = np.cumsum([0] + [parts[n].shape[1] for n in names])
    dparts = {n: dconcat[:, offsets[i]:offsets[i + 1]] for i, n in enumerate(names)}
    if one:
        _, g["text_proj.W"], g["text_proj.b"] = linear_backward(dparts["text"], batch.text, values["text_proj.W"])
        dh, g["exams_proj.W"], g["exams_proj.b"] = linear_backward(dparts["exams"], h, values["exams_proj.W"])
        for col in schema.columns:
            _, g[f"ann.{col}.W"], g[f"ann.{col}.b"] = linear_backward(
                dparts[col], batch.demo[col], values[f"ann.{col}.W"])
    else:
        dh = dparts["exams"]
    lstm_grads, _ = lstm_backward_batch(dh, lstm_cache, cfg.lstm, values, "lstm.")
    g.update(lstm_grads)
    return g


def predict_proba(batch: Batch, cfg: ModelConfig, schema: FeatureSchema, values) -> Array:
    logits, _ = forward(batch, cfg, schema, values)
    tiny = np.finfo(np.float64).eps
    return np.clip(sigmoid(logits), tiny, 1.0 - tiny)


def embeddings(batch: Batch, cfg: ModelConfig, schema: FeatureSchema, values) -> Tuple[Array, List[str]]:
    """Pre-concatenation branch outputs as an (B, F) matrix with column names."""
    parts, _ = branch_forward(batch, cfg, schema, values)
    names = group_names(schema)
    cols = []
    for n in names:
        w = parts[n].shape[1]
        cols += [n] if w == 1 else [f"{n}[{i}]" for i in range(w)]
    return np.concatenate([parts[n] for n in names], axis=1), cols


@dataclass
class ModelBundle:
    config: ModelConfig
    schema: FeatureSchema
    params: Dict[str, Array]
    text_params: Dict[str, Array]
    vocab: Vocabulary
    horizon: int
    temporal_split: bool = True
    version: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.config.mode

    def to_json_dict(self) -> dict:
        from .data import encode_array

        return {
            "version": self.version,
            "mode": self.config.mode,
            "config": self.config.to_dict(),
            "schema": self.schema.to_dict(),
            "horizon": self.horizon,
            "temporal_split": self.temporal_split,
            "vocab": self.vocab.to_lines(),
            "params": {k: encode_array(v) for k, v in sorted(self.params.items())},
            "text_params": {k: encode_array(v) for k, v in sorted(self.text_params.items())},
            "extra": self.extra,
        }

    @classmethod
    def from_json_dict(cls, doc) -> "ModelBundle":
        from .data import decode_array

        try:
            cfg = ModelConfig.from_dict(doc["config"])
            if doc.get("mode", cfg.mode) != cfg.mode:
                raise PersistenceError("mode field disagrees with config")
            schema = FeatureSchema.from_dict(doc["schema"])
            vocab = Vocabulary.from_lines(doc["vocab"])
            params = {k: decode_array(k, v) for k, v in doc["params"].items()}
            text_params = {k: decode_array(k, v) for k, v in doc["text_params"].items()}
            bundle = cls(cfg, schema, params, text_params, vocab, int(doc["horizon"]),
                         bool(doc.get("temporal_split", True)), int(doc["version"]),
                         doc.get("extra", {}))
        except PersistenceError:
            raise
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise PersistenceError(f"model file is incomplete or malformed: {exc}") from None
        bundle.check_shapes()
        return bundle

    def check_shapes(self) -> None:
        expected = init_params(self.config, self.schema, np.random.default_rng(0))
        if set(expected) != set(self.params):
            raise PersistenceError(
                f"parameter names differ from the configuration: {sorted(set(expected) ^ set(self.params))}")
        for k, v in expected.items():
            if self.params[k].shape != v.shape:
                raise PersistenceError(f"parameter {k!r} has shape {self.params[k].shape}, expected {v.shape}")
        emb = self.text_params.get("text.emb")
        if emb is None or emb.shape != (self.vocab.size, self.config.transformer.d_model):
            raise PersistenceError("text embedding table does not match the vocabulary")
