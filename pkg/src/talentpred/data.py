"""Student and award records, JSONL ingestion, embedding files, the synthetic
cohort generator and model persistence."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import IngestionError, PersistenceError
from .talent import TALENT_TYPES, TalentType

log = logging.getLogger(__name__)

SUBJECTS = ("english", "chinese", "math")


@dataclass
class AwardRecord:
    description: str
    semester: int
    gold_type: Optional[TalentType] = None

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "semester": self.semester,
            "gold_type": self.gold_type.value if self.gold_type is not None else None,
        }


@dataclass
class ExamRecord:
    semester: int
    english: Optional[float]
    chinese: Optional[float]
    math: Optional[float]

    @property
    def complete(self) -> bool:
        return None not in (self.english, self.chinese, self.math)

    def scores(self) -> Tuple[Optional[float], ...]:
        return (self.english, self.chinese, self.math)

    def to_dict(self) -> dict:
        return {"semester": self.semester, "english": self.english,
                "chinese": self.chinese, "math": self.math}


@dataclass
class StudentRecord:
    id: str
    demographics: Dict[str, object] = field(default_factory=dict)
    exams: List[ExamRecord] = field(default_factory=list)
    awards: List[AwardRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "demographics": dict(self.demographics),
            "exams": [e.to_dict() for e in self.exams],
            "awards": [a.to_dict() for a in self.awards],
        }


def award_id(student_id: str, index: int) -> str:
    return f"{student_id}#{index}"


# ---------------------------------------------------------------- parsing

def _require(obj, key, kind, line, where=""):
    if not isinstance(obj, dict) or key not in obj:
        raise IngestionError("missing field", line, where + key)
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise IngestionError(f"expected {getattr(kind, '__name__', kind)}", line, where + key)
    return value


def _score(value, line, name):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise IngestionError("score must be a finite number or null", line, name)
    if value < 0 or value > 100:
        log.warning("line %s: %s=%s clipped to [0, 100]", line, name, value)
    return float(min(max(value, 0.0), 100.0))


def student_from_dict(obj, line=None) -> StudentRecord:
    if not isinstance(obj, dict):
        raise IngestionError("row is not a JSON object", line)
    sid = _require(obj, "id", str, line)
    demo = obj.get("demographics", {})
    if not isinstance(demo, dict):
        raise IngestionError("expected object", line, "demographics")
    for name, value in demo.items():
        if isinstance(value, bool) or not isinstance(value, (str, int, float)) and value is not None:
            raise IngestionError("demographic values must be strings, numbers or null", line,
                                 f"demographics.{name}")
    exams = []
    for i, e in enumerate(obj.get("exams", [])):
        where = f"exams[{i}]."
        sem = _require(e, "semester", int, line, where)
        scores = [_score(e.get(s), line, where + s) for s in SUBJECTS]
        exams.append(ExamRecord(sem, *scores))
    sems = [e.semester for e in exams]
    if any(b <= a for a, b in zip(sems, sems[1:])):
        raise IngestionError("exam semesters must be strictly increasing", line, "exams")
    awards = []
    for i, a in enumerate(obj.get("awards", [])):
        where = f"awards[{i}]."
        desc = _require(a, "description", str, line, where)
        if not desc.strip():
            raise IngestionError("award description is empty", line, where + "description")
        sem = _require(a, "semester", int, line, where)
        gold = a.get("gold_type")
        if gold is not None:
            try:
                gold = TalentType.parse(gold)
            except ValueError:
                raise IngestionError(f"unknown talent type {gold!r}", line, where + "gold_type") from None
        awards.append(AwardRecord(desc, sem, gold))
    return StudentRecord(sid, dict(demo), exams, awards)


def load_students(path) -> List[StudentRecord]:
    """Read a students JSONL file, validating every row."""
    records: List[StudentRecord] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"invalid JSON: {exc.msg}", n) from None
            rec = student_from_dict(obj, n)
            if rec.id in seen:
                raise IngestionError(f"duplicate student id {rec.id!r}", n, "id")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        log.warning("%s holds no students", path)
    return records


def dumps_student(rec: StudentRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False)


def write_students(path, records: Iterable[StudentRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_student(rec) + "\n")


def load_exams_csv(path) -> Dict[str, List[ExamRecord]]:
    """Exams-only import: columns id, semester, english, chinese, math."""
    out: Dict[str, List[ExamRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "semester", *SUBJECTS} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"CSV header lacks {sorted(missing)}", 1)
        for n, row in enumerate(reader, 2):
            try:
                sem = int(row["semester"])
            except ValueError:
                raise IngestionError("semester is not an integer", n, "semester") from None
            scores = []
            for s in SUBJECTS:
                cell = (row[s] or "").strip()
                try:
                    scores.append(_score(float(cell), n, s) if cell else None)
                except ValueError:
                    raise IngestionError("score is not a number", n, s) from None
            out.setdefault(row["id"], []).append(ExamRecord(sem, *scores))
    for sid, exams in out.items():
        exams.sort(key=lambda e: e.semester)
        sems = [e.semester for e in exams]
        if len(set(sems)) != len(sems):
            raise IngestionError(f"duplicate semester for student {sid!r}")
    return out


# -------------------------------------------------------------- embeddings

@dataclass
class EmbeddingFile:
    ids: List[str]
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(zip(self.ids, self.vectors))


def load_embeddings(path) -> EmbeddingFile:
    ids: List[str] = []
    rows: List[List[float]] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"invalid JSON: {exc.msg}", n) from None
            eid = _require(obj, "id", str, n)
            vec = _require(obj, "vector", list, n)
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise IngestionError("empty vector", n, "vector")
            elif len(vec) != dim:
                raise IngestionError(f"embedding {eid!r} has dimension {len(vec)}, expected {dim}",
                                     n, "vector")
            try:
                arr = [float(v) for v in vec]
            except (TypeError, ValueError):
                raise IngestionError(f"embedding {eid!r} holds a non-number", n, "vector") from None
            if not all(math.isfinite(v) for v in arr):
                raise IngestionError(f"embedding {eid!r} is not finite", n, "vector")
            ids.append(eid)
            rows.append(arr)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    return EmbeddingFile(ids, vectors)


def write_embeddings(path, ids: List[str], vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid, vec in zip(ids, np.asarray(vectors, dtype=np.float64)):
            fh.write(json.dumps({"id": eid, "vector": vec.tolist()}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------- synthetic

# Each type owns its Latin keywords and CJK codepoints; fillers are shared.
KEYWORDS = {
    TalentType.ACADEMIC: (["mathematics", "olympiad", "physics", "chemistry", "science", "quiz",
                           "essay", "spelling"], ["數", "理", "化", "算"]),
    TalentType.SPORT: (["basketball", "football", "swimming", "athletics", "badminton", "relay",
                        "marathon", "volleyball"], ["籃", "球", "泳", "跑"]),
    TalentType.ART: (["painting", "piano", "dance", "choir", "drama", "sculpture", "violin",
                      "calligraphy"], ["畫", "琴", "舞", "唱"]),
    TalentType.LEADERSHIP: (["prefect", "captain", "president", "chairperson", "monitor",
                             "council", "leadership", "ambassador"], ["領", "袖", "班", "長"]),
    TalentType.SERVICE: (["volunteer", "community", "charity", "service", "elderly", "fundraising",
                          "outreach", "cleanup"], ["義", "工", "服", "務"]),
    TalentType.TECHNOLOGY: (["robotics", "coding", "programming", "app", "ai", "electronics",
                             "hackathon", "drone"], ["電", "腦", "程", "機"]),
    TalentType.OTHER: (["chess", "photography", "cooking", "scouting", "gardening", "origami",
                        "magic", "puzzle"], ["棋", "攝", "影", "烹"]),
}
FILLER = ["gold", "silver", "bronze", "merit", "award", "prize", "champion", "first", "second",
          "third", "place", "inter", "school", "competition", "contest", "district", "annual",
          "team", "individual", "open", "junior", "senior", "category", "2023", "2024"]
FILLER_CJK = ["獎", "第", "名", "賽", "校", "際", "冠", "軍"]


@dataclass
class SyntheticConfig:
    semesters: int = 6
    prevalence: Tuple[float, ...] = (0.30, 0.30, 0.25, 0.15, 0.20, 0.12, 0.15)
    award_rate_talented: float = 0.6
    award_rate_background: float = 0.01
    eca_rate_talented: float = 8.0
    eca_rate_background: float = 1.0
    missing_exam_rate: float = 0.03


def _award_text(t: TalentType, rng: np.random.Generator) -> str:
    latin, cjk = KEYWORDS[t]
    words = [str(rng.choice(["gold", "silver", "bronze", "merit", "champion"]))]
    n_kw = int(rng.integers(1, 3))
    words += [str(w) for w in rng.choice(latin, size=n_kw, replace=False)]
    n_fill = int(rng.integers(2, 5))
    words += [str(w) for w in rng.choice(FILLER, size=n_fill, replace=False)]
    rng.shuffle(words)
    zh = "".join(str(c) for c in rng.choice(cjk, size=2, replace=False))
    zh += "".join(str(c) for c in rng.choice(FILLER_CJK, size=2, replace=False))
    if rng.random() < 0.5:
        return " ".join(words) + " " + zh
    return zh + " " + " ".join(words)


def generate_synthetic(n_students: int, seed: int,
                       config: Optional[SyntheticConfig] = None) -> List[StudentRecord]:
    """Planted cohort: a pure function of ``(n_students, seed, config)``.

    Each student holds every talent type independently with the type's
    prevalence. Talented students win awards of that type far more often,
    join more activities of that kind, and Academic students have higher,
    rising exam scores. Every award carries its gold type.
    """
    cfg = config or SyntheticConfig()
    if n_students < 1:
        raise ValueError("n_students must be positive")
    rng = np.random.default_rng(seed)
    prevalence = np.asarray(cfg.prevalence)
    width = len(str(n_students - 1))
    records = []
    for s in range(n_students):
        talents = rng.random(len(TALENT_TYPES)) < prevalence
        academic = bool(talents[TalentType.ACADEMIC.slot])
        ability = rng.normal(60.0, 10.0) + (12.0 if academic else 0.0)
        trend = rng.normal(2.0 if academic else 0.0, 0.8)
        offsets = rng.normal(0.0, 5.0, size=3)
        exams = []
        for sem in range(1, cfg.semesters + 1):
            base = ability + trend * (sem - 1) + offsets
            scores = np.clip(np.round(base + rng.normal(0.0, 4.0, size=3), 1), 0.0, 100.0)
            if rng.random() < cfg.missing_exam_rate:
                exams.append(ExamRecord(sem, None, None, None))
            else:
                exams.append(ExamRecord(sem, *(float(v) for v in scores)))
        sport = bool(talents[TalentType.SPORT.slot])
        demo: Dict[str, object] = {
            "sex": "M" if rng.random() < (0.6 if sport else 0.5) else "F",
            "house": str(rng.choice(["Blue", "Green", "Red", "Yellow"])),
            "attendance": round(float(np.clip(rng.normal(0.93, 0.03), 0.7, 1.0)), 3),
        }
        for t, flag in zip(TALENT_TYPES, talents):
            lam = cfg.eca_rate_talented if flag else cfg.eca_rate_background
            demo[f"eca_{t.value.lower()}"] = int(rng.poisson(lam))
        awards = []
        for sem in range(1, cfg.semesters + 1):
            for t, flag in zip(TALENT_TYPES, talents):
                p = cfg.award_rate_talented if flag else cfg.award_rate_background
                if rng.random() < p:
                    awards.append(AwardRecord(_award_text(t, rng), sem, t))
        records.append(StudentRecord(f"S{s:0{width}d}", demo, exams, awards))
    return records


def all_awards(students: List[StudentRecord]):
    """Flatten to ``(ids, awards, owner_index)`` in student/award order."""
    ids, awards, owner = [], [], []
    for i, st in enumerate(students):
        for j, a in enumerate(st.awards):
            ids.append(award_id(st.id, j))
            awards.append(a)
            owner.append(i)
    return ids, awards, owner


# -------------------------------------------------------------- persistence

MODEL_VERSION = 1


def encode_array(arr) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    shape = list(arr.shape)
    return {"shape": shape, "data": arr.ravel().tolist()}


def decode_array(name: str, obj) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"parameter {name!r} is malformed: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise PersistenceError(f"parameter {name!r}: {data.size} values for shape {list(shape)}")
    return data.reshape(shape)


def save_model(bundle, path) -> None:
    """Write a ModelBundle as versioned JSON with named, shaped arrays."""
    doc = bundle.to_json_dict()
    text = json.dumps(doc, ensure_ascii=False, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path):
    from .model import ModelBundle

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"model file {path} is not valid JSON: {exc.msg}") from None
    except OSError as exc:
        raise PersistenceError(f"cannot read model file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise PersistenceError("model file must hold a JSON object")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise PersistenceError(f"unsupported model version {version!r} (expected {MODEL_VERSION})")
    return ModelBundle.from_json_dict(doc)


def save_text_encoder(path, cfg, vocab, params, history=()) -> None:
    """Fine-tuned transformer weights with their config and vocabulary."""
    doc = {
        "version": MODEL_VERSION,
        "config": cfg.to_dict(),
        "vocab": vocab.to_lines(),
        "params": {k: encode_array(v) for k, v in sorted(params.items())},
        "history": list(history),
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def load_text_encoder(path):
    """Inverse of ``save_text_encoder``: returns (cfg, vocab, params, history)."""
    from .encoders import TransformerConfig, Vocabulary

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"encoder file {path} is not valid JSON: {exc.msg}") from None
    except OSError as exc:
        raise PersistenceError(f"cannot read encoder file {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != MODEL_VERSION:
        raise PersistenceError(f"unsupported encoder version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        cfg = TransformerConfig(**doc["config"])
        vocab = Vocabulary.from_lines(doc["vocab"])
        params = {k: decode_array(k, v) for k, v in doc["params"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"encoder file is malformed: {exc}") from None
    emb = params.get("text.emb")
    if emb is None or emb.shape != (vocab.size, cfg.d_model):
        raise PersistenceError("encoder embedding table does not match its vocabulary")
    return cfg, vocab, params, doc.get("history", [])
