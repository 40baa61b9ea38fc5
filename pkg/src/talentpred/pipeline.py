"""Feature extraction, augmentation, text-encoder fine-tuning, auto-labeling,
training and prediction."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import model as net
from .clustering import ClusterAssignment, ClusterParams, cluster, map_clusters_to_types
from .data import SUBJECTS, AwardRecord, StudentRecord, all_awards
from .encoders import (
    TransformerConfig,
    Vocabulary,
    init_transformer,
    pad_batch,
    tokenize,
    transformer_backward,
    transformer_forward,
)
from .errors import ConfigError, DomainError, SkipRecord, TrainingError
from .metrics import roc_auc_multi
from .numerics import OptimizerState, ParamSet, adamw_step, bce_with_logits, exp_lr, sigmoid, xavier
from .talent import N_TYPES, TALENT_TYPES, TalentType

log = logging.getLogger(__name__)

Array = np.ndarray


# ------------------------------------------------------------------ features

@dataclass
class FeatureBundle:
    student_id: str
    text: List[str]
    sequence: Array          # (t, 3) scores / 100; zeros where missing
    seq_mask: Array          # (t,) True where the semester was observed
    discrete: Dict[str, Array]
    numerical: Dict[str, Array]


def input_awards(student: StudentRecord, horizon: int, temporal_split: bool = True) -> List[AwardRecord]:
    if not temporal_split:
        return list(student.awards)
    return [a for a in student.awards if a.semester < horizon]


def label_awards(student: StudentRecord, horizon: int, temporal_split: bool = True) -> List[int]:
    """Indices of the awards that define the student's labels."""
    if not temporal_split:
        return list(range(len(student.awards)))
    return [j for j, a in enumerate(student.awards) if a.semester >= horizon]


def extract_features(student: StudentRecord, horizon: int, schema: net.FeatureSchema,
                     temporal_split: bool = True) -> FeatureBundle:
    exams = [e for e in student.exams if e.semester <= horizon]
    if not exams:
        raise SkipRecord(f"student {student.id} has no exams up to semester {horizon}")
    seq = np.zeros((len(exams), len(SUBJECTS)))
    mask = np.zeros(len(exams), dtype=bool)
    for t, e in enumerate(exams):
        if e.complete:
            seq[t] = np.array(e.scores(), dtype=np.float64) / 100.0
            mask[t] = True
    discrete, numerical = {}, {}
    for col in schema.columns:
        value = student.demographics.get(col)
        target = discrete if col in schema.categorical else numerical
        target[col] = schema.encode(col, value)
    texts = [a.description for a in input_awards(student, horizon, temporal_split)]
    return FeatureBundle(student.id, texts, seq, mask, discrete, numerical)


def augment_truncate(seq, rng: np.random.Generator):
    """Drop the last k elements, k uniform on {0, ..., t-1}."""
    t = len(seq)
    if t == 0:
        raise DomainError("cannot truncate an empty sequence")
    k = int(rng.integers(0, t))
    return seq[: t - k]


def augment_mask(batch: net.Batch, rng: np.random.Generator) -> Array:
    """Per-student random prefix of the exam axis, as a new mask."""
    mask = batch.seq_mask.copy()
    for i, t in enumerate(batch.seq_len.tolist()):
        keep = len(augment_truncate(range(t), rng))
        mask[i, keep:] = False
    return mask


# ---------------------------------------------------------------- text side

def encode_texts(texts: Sequence[str], vocab: Vocabulary, cfg: TransformerConfig,
                 text_params: Dict[str, Array], chunk: int = 256) -> Array:
    """Pooled transformer embedding for each text, in input order."""
    out = np.zeros((len(texts), cfg.d_model))
    for start in range(0, len(texts), chunk):
        part = texts[start:start + chunk]
        ids, mask = pad_batch([tokenize(t, vocab, cfg.max_len) for t in part])
        out[start:start + len(part)], _ = transformer_forward(ids, mask, cfg, text_params)
    return out


def student_text_vectors(features: Sequence[FeatureBundle], vocab, cfg, text_params) -> Array:
    """Mean of the student's award embeddings; zeros for students without awards."""
    flat = [t for f in features for t in f.text]
    emb = encode_texts(flat, vocab, cfg, text_params) if flat else np.zeros((0, cfg.d_model))
    out = np.zeros((len(features), cfg.d_model))
    pos = 0
    for i, f in enumerate(features):
        n = len(f.text)
        if n:
            out[i] = emb[pos:pos + n].mean(axis=0)
        pos += n
    return out


@dataclass
class FinetuneConfig:
    epochs: int = 30
    lr0: float = 3e-3
    gamma: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.01


def finetune_text_encoder(texts: Sequence[str], labels, vocab: Vocabulary, cfg: TransformerConfig,
                          ft: FinetuneConfig, seed: int, init: Optional[Dict[str, Array]] = None):
    """Train the transformer plus a 7-way head to classify award texts.

    ``labels`` are talent types (or slot indices). Returns the encoder
    weights with the head dropped, and a per-epoch history.
    """
    if len(texts) == 0:
        raise DomainError("fine-tuning needs at least one award")
    if len(texts) != len(labels):
        raise DomainError("texts and labels differ in length")
    slots = np.array([TalentType.parse(l).slot for l in labels])
    if len(np.unique(slots)) < 2:
        log.warning("fine-tuning corpus holds a single talent type")
    targets = np.eye(N_TYPES)[slots]
    rng = np.random.default_rng(seed)
    values = dict(init) if init is not None else init_transformer(cfg, vocab.size, rng)
    values = {k: v.copy() for k, v in values.items()}
    values["head.W"] = xavier(rng, cfg.d_model, N_TYPES)
    values["head.b"] = np.zeros(N_TYPES)
    params = ParamSet()
    params.values = values
    params.grads = {k: np.zeros_like(v) for k, v in values.items()}
    state = OptimizerState.for_params(params, weight_decay=ft.weight_decay)
    tokens = [tokenize(t, vocab, cfg.max_len) for t in texts]
    n = len(tokens)
    history = []
    for epoch in range(ft.epochs):
        lr = exp_lr(ft.lr0, ft.gamma, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, ft.batch_size):
            rows = order[start:start + ft.batch_size]
            ids, mask = pad_batch([tokens[i] for i in rows])
            pooled, cache = transformer_forward(ids, mask, cfg, values)
            logits = pooled @ values["head.W"] + values["head.b"]
            loss, dlogits = bce_with_logits(logits, targets[rows])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}, batch {start}")
            grads = transformer_backward(dlogits @ values["head.W"].T, cache, cfg, values)
            grads["head.W"] = pooled.T @ dlogits
            grads["head.b"] = dlogits.sum(axis=0)
            params.grads = grads
            adamw_step(params, state, lr)
            total += loss * len(rows)
        pred = _finetune_predict(tokens, cfg, values)
        history.append({"epoch": epoch, "lr": lr, "loss": total / n,
                        "accuracy": float(np.mean(pred == slots))})
    encoder = {k: v for k, v in values.items() if not k.startswith("head.")}
    return encoder, history


def _finetune_predict(tokens, cfg, values, chunk=256) -> Array:
    preds = []
    for start in range(0, len(tokens), chunk):
        ids, mask = pad_batch(tokens[start:start + chunk])
        pooled, _ = transformer_forward(ids, mask, cfg, values)
        preds.append(np.argmax(pooled @ values["head.W"] + values["head.b"], axis=1))
    return np.concatenate(preds)


# ---------------------------------------------------------------- labeling

def auto_label(award_clusters: Sequence[Sequence[int]], mapping: Dict[int, TalentType]) -> Array:
    """Slot t is 1 iff the student has an award in a cluster named t.

    ``award_clusters[i]`` lists the cluster ids of student i's label awards;
    noise (-1) contributes nothing.
    """
    labels = np.zeros((len(award_clusters), N_TYPES), dtype=np.int64)
    for i, clusters in enumerate(award_clusters):
        for c in clusters:
            c = int(c)
            if c < 0:
                continue
            if c not in mapping:
                raise ConfigError(f"cluster {c} has no talent type mapping")
            labels[i, mapping[c].slot] = 1
    return labels


def gold_labels(students: Sequence[StudentRecord], horizon: int, temporal_split: bool = True) -> Array:
    out = np.zeros((len(students), N_TYPES), dtype=np.int64)
    for i, st in enumerate(students):
        for j in label_awards(st, horizon, temporal_split):
            g = st.awards[j].gold_type
            if g is not None:
                out[i, g.slot] = 1
    return out


def labels_from_clusters(students: Sequence[StudentRecord], award_ids: Sequence[str],
                         assign: ClusterAssignment, mapping: Dict[int, TalentType],
                         horizon: int, temporal_split: bool = True) -> Array:
    from .data import award_id

    cluster_of = dict(zip(award_ids, assign.labels.tolist()))
    per_student = []
    for st in students:
        ids = [award_id(st.id, j) for j in label_awards(st, horizon, temporal_split)]
        missing = [a for a in ids if a not in cluster_of]
        if missing:
            raise ConfigError(f"awards {missing[:3]} have no cluster assignment")
        per_student.append([cluster_of[a] for a in ids])
    return auto_label(per_student, mapping)


def stratified_split(labels, test_fraction: float, seed: int) -> Tuple[Array, Array]:
    """Seeded split stratified on each student's rarest positive type."""
    labels = np.asarray(labels)
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    freq = labels.sum(axis=0)
    order = np.argsort(freq, kind="stable")
    keys = np.full(len(labels), -1)
    for i, row in enumerate(labels):
        pos = [t for t in order if row[t]]
        if pos:
            keys[i] = pos[0]
    rng = np.random.default_rng(seed)
    test = []
    for key in sorted(set(keys.tolist())):
        members = np.nonzero(keys == key)[0]
        members = members[rng.permutation(len(members))]
        test.extend(members[: int(round(test_fraction * len(members)))].tolist())
    test = np.array(sorted(test), dtype=np.int64)
    train = np.setdiff1d(np.arange(len(labels)), test)
    return train, test


# ------------------------------------------------------------------- batches

def build_batch(features: Sequence[FeatureBundle], text_vectors: Array,
                schema: net.FeatureSchema) -> net.Batch:
    n = len(features)
    T = max(len(f.sequence) for f in features) if features else 1
    seq = np.zeros((n, T, len(SUBJECTS)))
    mask = np.zeros((n, T), dtype=bool)
    lens = np.zeros(n, dtype=np.int64)
    for i, f in enumerate(features):
        t = len(f.sequence)
        seq[i, :t] = f.sequence
        mask[i, :t] = f.seq_mask
        lens[i] = t
    demo = {}
    for col in schema.columns:
        src = "discrete" if col in schema.categorical else "numerical"
        demo[col] = np.stack([getattr(f, src)[col] for f in features]) if features \
            else np.zeros((0, schema.width(col)))
    return net.Batch([f.student_id for f in features], np.asarray(text_vectors, dtype=np.float64),
                     seq, mask, lens, demo)


def prepare(students: Sequence[StudentRecord], horizon: int, schema: net.FeatureSchema,
            vocab: Vocabulary, tcfg: TransformerConfig, text_params, temporal_split: bool = True,
            keep: Optional[Sequence[int]] = None):
    """Features + batch for the students that have data before the horizon.

    Returns ``(batch, kept_indices)``.
    """
    feats, kept = [], []
    for i, st in enumerate(students):
        if keep is not None and i not in keep:
            continue
        try:
            feats.append(extract_features(st, horizon, schema, temporal_split))
            kept.append(i)
        except SkipRecord as exc:
            log.info("skipping: %s", exc)
    text = student_text_vectors(feats, vocab, tcfg, text_params)
    return build_batch(feats, text, schema), np.array(kept, dtype=np.int64)


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    epochs: int = 50
    lr0: float = 1e-2
    gamma: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass
class Curves:
    rows: List[dict] = field(default_factory=list)

    def column(self, name) -> List[float]:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        keys = ["epoch", "train_loss", "test_loss", "train_rocauc", "test_rocauc"]
        lines = [",".join(keys)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[k]) for k in keys))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    return str(v) if isinstance(v, int) else repr(float(v))


def _safe_auc(y, p):
    try:
        return roc_auc_multi(y, p, "micro")
    except Exception:
        return None


def evaluate_loss(batch, y, cfg, schema, values) -> Tuple[float, Array]:
    logits, _ = net.forward(batch, cfg, schema, values)
    loss, _ = bce_with_logits(logits, y)
    return loss, sigmoid(logits)


def train(train_batch: net.Batch, y_train, cfg: net.ModelConfig, tcfg: TrainConfig,
          schema: net.FeatureSchema, seed: int, test_batch: Optional[net.Batch] = None,
          y_test=None) -> Tuple[Dict[str, Array], Curves]:
    """Minibatch AdamW on BCE-with-logits with an exponential LR per epoch.

    Exam sequences are re-truncated at random every epoch when
    ``tcfg.augment`` is set. Losses and micro ROC AUC are recorded on the
    full train and test sets (without augmentation) after each epoch.
    """
    cfg.validate()
    y_train = np.asarray(y_train, dtype=np.float64)
    rng = np.random.default_rng(seed)
    params = ParamSet()
    params.values = net.init_params(cfg, schema, rng)
    params.grads = {k: np.zeros_like(v) for k, v in params.values.items()}
    state = OptimizerState.for_params(params, beta1=tcfg.beta1, beta2=tcfg.beta2,
                                      eps=tcfg.adam_eps, weight_decay=tcfg.weight_decay)
    n = len(train_batch)
    bs = tcfg.batch_size if tcfg.batch_size > 0 else n
    curves = Curves()
    for epoch in range(tcfg.epochs):
        lr = exp_lr(tcfg.lr0, tcfg.gamma, epoch)
        epoch_batch = train_batch
        if tcfg.augment:
            epoch_batch = net.Batch(train_batch.ids, train_batch.text, train_batch.seq,
                                    augment_mask(train_batch, rng), train_batch.seq_len,
                                    train_batch.demo)
        order = rng.permutation(n)
        for start in range(0, n, bs):
            rows = order[start:start + bs]
            mb = epoch_batch.take(rows)
            logits, cache = net.forward(mb, cfg, schema, params.values, rng, training=True)
            loss, dlogits = bce_with_logits(logits, y_train[rows])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            params.grads = net.backward(dlogits, cache, cfg, schema, params.values)
            adamw_step(params, state, lr)
        tr_loss, tr_p = evaluate_loss(train_batch, y_train, cfg, schema, params.values)
        row = {"epoch": epoch, "lr": lr, "train_loss": tr_loss, "train_rocauc": _safe_auc(y_train, tr_p),
               "test_loss": None, "test_rocauc": None}
        if test_batch is not None and len(test_batch):
            te_loss, te_p = evaluate_loss(test_batch, np.asarray(y_test, dtype=np.float64), cfg,
                                          schema, params.values)
            row["test_loss"] = te_loss
            row["test_rocauc"] = _safe_auc(y_test, te_p)
        curves.rows.append(row)
        log.debug("epoch %d: %s", epoch, row)
    return params.values, curves


# ---------------------------------------------------------------- prediction

@dataclass
class Prediction:
    student_id: str
    confidences: Array

    def as_dict(self) -> dict:
        return {"id": self.student_id,
                "confidences": {t.value: float(c) for t, c in zip(TALENT_TYPES, self.confidences)}}


def predict(bundle: net.ModelBundle, features: Sequence[FeatureBundle]) -> List[Prediction]:
    """Seven sigmoid confidences per student; no augmentation."""
    for f in features:
        extra = set(f.discrete) | set(f.numerical)
        if extra != set(bundle.schema.columns):
            raise ConfigError(f"features of {f.student_id} do not match the model's columns")
        for col, v in {**f.discrete, **f.numerical}.items():
            if v.shape != (bundle.schema.width(col),):
                raise ConfigError(f"column {col!r} has width {v.shape}, model expects "
                                  f"{bundle.schema.width(col)}")
    if not features:
        return []
    tcfg = bundle.config.transformer
    if bundle.text_params["text.emb"].shape[0] != bundle.vocab.size:
        raise ConfigError("vocabulary and text encoder disagree in size")
    text = student_text_vectors(features, bundle.vocab, tcfg, bundle.text_params)
    batch = build_batch(features, text, bundle.schema)
    probs = net.predict_proba(batch, bundle.config, bundle.schema, bundle.params)
    return [Prediction(f.student_id, p) for f, p in zip(features, probs)]


def top_n_select(predictions: Sequence[Prediction], talent, n: int) -> List[str]:
    """Ids of the ``n`` most confident students for one type; ties by id."""
    if n > len(predictions) or n < 0:
        raise DomainError(f"cannot select {n} of {len(predictions)} students")
    slot = TalentType.parse(talent).slot
    ranked = sorted(predictions, key=lambda p: (-float(p.confidences[slot]), p.student_id))
    return [p.student_id for p in ranked[:n]]


# ----------------------------------------------------------- orchestration

def award_embeddings(students, vocab, tcfg, text_params):
    ids, awards, _ = all_awards(students)
    return ids, awards, encode_texts([a.description for a in awards], vocab, tcfg, text_params)


def cluster_awards(embeddings: Array, params: Optional[ClusterParams] = None) -> ClusterAssignment:
    return cluster(embeddings, params or ClusterParams())
