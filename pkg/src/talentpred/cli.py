"""Command-line interface: one subcommand per pipeline stage.

Every subcommand reads its inputs from explicit paths (defaulting to files in
``--out-dir``), writes its artifacts into ``--out-dir`` and prints a JSON
summary on stdout. Logs go to stderr. Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import data as dio
from . import explain as xpl
from . import model as net
from . import pipeline as P
from .clustering import ALGORITHMS, ClusterAssignment, ClusterParams, cluster, dbscan
from .clustering import map_clusters_to_types, mapping_agreement, read_mapping, write_mapping
from .encoders import TransformerConfig, Vocabulary
from .errors import ConfigError, TalentError
from .metrics import clustering_report, prediction_report, roc_curve
from .talent import TALENT_TYPES, TYPE_NAMES, TalentType

log = logging.getLogger("talentpred")

STOCHASTIC = {"synth", "finetune", "train", "explain"}
GLOBAL_KEYS = {"seed", "out_dir", "config", "verbose"}


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ------------------------------------------------------------------ config

def read_config(path) -> Dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment. Keys may carry a
    ``command.`` prefix to target one subcommand."""
    out: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, subparsers: Dict[str, argparse.ArgumentParser],
                  command: str, config: Dict[str, str]) -> None:
    sub = subparsers[command]
    dests = {a.dest: a for a in sub._actions}
    known_anywhere = {a.dest for p in subparsers.values() for a in p._actions}
    updates = {}
    for key, value in config.items():
        scope, _, name = key.rpartition(".")
        if scope and scope not in subparsers:
            raise ConfigError(f"config key {key!r} names an unknown command")
        if scope and scope != command:
            continue
        if name in GLOBAL_KEYS:
            continue
        if name not in known_anywhere:
            raise ConfigError(f"config key {key!r} matches no option")
        if name not in dests:
            continue
        action = dests[name]
        if isinstance(action, argparse._StoreTrueAction):
            updates[name] = value.lower() in ("1", "true", "yes", "on")
        elif action.nargs not in (None, "?"):
            updates[name] = value.split()
        else:
            # argparse converts string defaults with the option's type
            updates[name] = value
    sub.set_defaults(**updates)


# ------------------------------------------------------------------ parser

def _global(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="seed for stochastic commands")
    p.add_argument("--config", default=d, help="key=value file supplying option defaults")
    p.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else ".",
                   help="directory for all artifacts (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="talentpred", description=__doc__.splitlines()[0])
    _global(parser, suppress=False)
    sp = parser.add_subparsers(dest="command", metavar="COMMAND")
    sp.required = True
    subs: Dict[str, argparse.ArgumentParser] = {}

    def add(name, help_text):
        p = sp.add_parser(name, help=help_text)
        _global(p, suppress=True)
        subs[name] = p
        return p

    p = add("synth", "generate a synthetic cohort with planted talent types")
    p.add_argument("--n", type=int, default=1000, help="number of students")

    p = add("ingest", "validate a students JSONL file (and optional exams CSV)")
    p.add_argument("--students", required=True)
    p.add_argument("--exams-csv", help="replace exams for matching ids from a CSV")

    p = add("finetune", "fine-tune the text encoder on award descriptions")
    p.add_argument("--students")
    p.add_argument("--epochs", type=int, default=P.FinetuneConfig.epochs)
    p.add_argument("--lr0", type=float, default=P.FinetuneConfig.lr0)
    p.add_argument("--gamma", type=float, default=P.FinetuneConfig.gamma)
    p.add_argument("--batch-size", type=int, default=P.FinetuneConfig.batch_size)
    p.add_argument("--weight-decay", type=float, default=P.FinetuneConfig.weight_decay)
    p.add_argument("--d-model", type=int, default=TransformerConfig.d_model)
    p.add_argument("--heads", type=int, default=TransformerConfig.heads)
    p.add_argument("--layers", type=int, default=TransformerConfig.layers)
    p.add_argument("--ffn-width", type=int, default=TransformerConfig.ffn_width)
    p.add_argument("--max-len", type=int, default=TransformerConfig.max_len)

    p = add("embed", "embed every award description with a text encoder")
    p.add_argument("--students")
    p.add_argument("--encoder")

    p = add("cluster", "cluster award embeddings into talent groups")
    p.add_argument("--embeddings")
    p.add_argument("--students", help="students file with gold types, for scoring and naming")
    p.add_argument("--algo", choices=ALGORITHMS, default="ward")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--eps", type=float, help="fixed DBSCAN radius (default: sweep)")
    p.add_argument("--min-points", type=int, default=5)
    p.add_argument("--mapping", help="cluster_id<TAB>talent_type file naming the clusters")

    p = add("label", "derive per-student talent labels from award clusters")
    p.add_argument("--students")
    p.add_argument("--clusters")
    p.add_argument("--mapping")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--no-temporal-split", action="store_true")

    p = add("train", "train the multimodal classifier")
    p.add_argument("--students")
    p.add_argument("--labels")
    p.add_argument("--encoder")
    p.add_argument("--mode", choices=net.MODES, default="one")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--no-temporal-split", action="store_true")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--drop-unawarded", action="store_true",
                   help="leave out students without any positive label")
    p.add_argument("--epochs", type=int, default=P.TrainConfig.epochs)
    p.add_argument("--lr0", type=float, default=P.TrainConfig.lr0)
    p.add_argument("--gamma", type=float, default=P.TrainConfig.gamma)
    p.add_argument("--batch-size", type=int, default=P.TrainConfig.batch_size)
    p.add_argument("--weight-decay", type=float, default=P.TrainConfig.weight_decay)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--lstm-hidden", type=int, default=20)
    p.add_argument("--lstm-layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--hidden", type=int, nargs="*", default=[], help="classifier hidden widths")

    p = add("predict", "talent confidences for every student")
    p.add_argument("--students")
    p.add_argument("--model")
    p.add_argument("--top-n", nargs=2, metavar=("TYPE", "N"),
                   help="list the N most confident students for TYPE")

    p = add("evaluate", "accuracy and ROC AUC of a model on the held-out split")
    p.add_argument("--students")
    p.add_argument("--labels")
    p.add_argument("--model")
    p.add_argument("--split", help="split.json from train (default: evaluate every student)")
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("explain", "logistic surrogate and Shapley attributions")
    p.add_argument("--students")
    p.add_argument("--labels")
    p.add_argument("--model")
    p.add_argument("--split")
    p.add_argument("--max-iter", type=int, default=xpl.SurrogateConfig.max_iter)
    p.add_argument("--lr", type=float, default=xpl.SurrogateConfig.lr)

    return parser, subs


# ----------------------------------------------------------------- helpers

class Ctx:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.seed = args.seed

    def path(self, given: Optional[str], default: str) -> Path:
        return Path(given) if given else self.out / default

    def out_file(self, name: str) -> Path:
        return self.out / name


def _students(ctx: Ctx) -> List[dio.StudentRecord]:
    return dio.load_students(ctx.path(ctx.args.students, "students.jsonl"))


def read_labels(path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", *TYPE_NAMES]:
            raise ConfigError(f"labels file {path} has an unexpected header")
        for row in reader:
            out[row[0]] = np.array([int(v) for v in row[1:]], dtype=np.int64)
    return out


def labels_csv(ids: Sequence[str], labels: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *TYPE_NAMES])
    for sid, row in zip(ids, labels):
        w.writerow([sid, *[int(v) for v in row]])
    return buf.getvalue()


def _labels_for(batch_ids: Sequence[str], table: Dict[str, np.ndarray]) -> np.ndarray:
    missing = [s for s in batch_ids if s not in table]
    if missing:
        raise ConfigError(f"no labels for students {missing[:3]}")
    return np.stack([table[s] for s in batch_ids]) if batch_ids else np.zeros((0, len(TYPE_NAMES)))


def _model_batch(ctx: Ctx, bundle: net.ModelBundle, students):
    batch, kept = P.prepare(students, bundle.horizon, bundle.schema, bundle.vocab,
                            bundle.config.transformer, bundle.text_params, bundle.temporal_split)
    return batch, kept


def _split_rows(ctx: Ctx, batch: net.Batch, part: str) -> np.ndarray:
    split_path = ctx.args.split or (ctx.out / "split.json")
    if ctx.args.split is None and not Path(split_path).exists():
        return np.arange(len(batch))
    try:
        doc = json.loads(Path(split_path).read_text(encoding="utf-8"))
        wanted = set(doc[part])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"split file {split_path} is malformed: {exc}") from None
    return np.array([i for i, s in enumerate(batch.ids) if s in wanted], dtype=np.int64)


# --------------------------------------------------------------- commands

def cmd_synth(ctx: Ctx) -> dict:
    if ctx.args.n < 1:
        raise ConfigError("--n must be at least 1")
    students = dio.generate_synthetic(ctx.args.n, ctx.seed)
    dio.write_students(ctx.out_file("students.jsonl"), students)
    n_awards = sum(len(s.awards) for s in students)
    return {"students": len(students), "awards": n_awards, "output": "students.jsonl"}


def cmd_ingest(ctx: Ctx) -> dict:
    students = dio.load_students(ctx.args.students)
    replaced = 0
    if ctx.args.exams_csv:
        exams = dio.load_exams_csv(ctx.args.exams_csv)
        for st in students:
            if st.id in exams:
                st.exams = exams[st.id]
                replaced += 1
    out = ctx.out_file("students.jsonl")
    if out.resolve() == Path(ctx.args.students).resolve():
        raise ConfigError("ingest would overwrite its input; choose another --out-dir")
    dio.write_students(out, students)
    return {"students": len(students), "awards": sum(len(s.awards) for s in students),
            "exams_replaced": replaced, "output": "students.jsonl"}


def cmd_finetune(ctx: Ctx) -> dict:
    a = ctx.args
    students = _students(ctx)
    ids, awards, _ = dio.all_awards(students)
    gold = [(aw.description, aw.gold_type) for aw in awards if aw.gold_type is not None]
    if not gold:
        raise ConfigError("fine-tuning needs awards with gold_type")
    tcfg = TransformerConfig(d_model=a.d_model, heads=a.heads, ffn_width=a.ffn_width,
                             layers=a.layers, max_len=a.max_len)
    tcfg.validate()
    vocab = Vocabulary.build(aw.description for aw in awards)
    ft = P.FinetuneConfig(a.epochs, a.lr0, a.gamma, a.batch_size, a.weight_decay)
    enc, history = P.finetune_text_encoder([g[0] for g in gold], [g[1] for g in gold],
                                           vocab, tcfg, ft, ctx.seed)
    dio.save_text_encoder(ctx.out_file("encoder.json"), tcfg, vocab, enc, history)
    lines = ["epoch,lr,loss,accuracy"]
    lines += [f"{h['epoch']},{h['lr']!r},{h['loss']!r},{h['accuracy']!r}" for h in history]
    _write(ctx.out_file("finetune_history.csv"), "\n".join(lines) + "\n")
    emb = P.encode_texts([aw.description for aw in awards], vocab, tcfg, enc)
    dio.write_embeddings(ctx.out_file("award_embeddings.jsonl"), ids, emb)
    last = history[-1] if history else {}
    return {"awards": len(awards), "labelled_awards": len(gold), "vocab_size": vocab.size,
            "final_loss": last.get("loss"), "final_accuracy": last.get("accuracy"),
            "outputs": ["encoder.json", "finetune_history.csv", "award_embeddings.jsonl"]}


def cmd_embed(ctx: Ctx) -> dict:
    students = _students(ctx)
    tcfg, vocab, enc, _ = dio.load_text_encoder(ctx.path(ctx.args.encoder, "encoder.json"))
    ids, awards, emb = P.award_embeddings(students, vocab, tcfg, enc)
    dio.write_embeddings(ctx.out_file("award_embeddings.jsonl"), ids, emb)
    return {"awards": len(ids), "dim": tcfg.d_model, "output": "award_embeddings.jsonl"}


def cmd_cluster(ctx: Ctx) -> dict:
    a = ctx.args
    emb = dio.load_embeddings(ctx.path(a.embeddings, "award_embeddings.jsonl"))
    if not emb.ids:
        raise ConfigError("no embeddings to cluster")
    params = ClusterParams(algorithm=a.algo, k=a.k, min_points=a.min_points,
                           seed=ctx.seed if ctx.seed is not None else 0)
    if a.algo == "dbscan" and a.eps is not None:
        params.eps = a.eps
        params.validate()
        assign = dbscan(emb.vectors, a.eps, a.min_points)
    else:
        assign = cluster(emb.vectors, params)
    gold = None
    students_path = a.students or (ctx.out / "students.jsonl")
    if Path(students_path).exists():
        students = dio.load_students(students_path)
        ids, awards, _ = dio.all_awards(students)
        by_id = dict(zip(ids, awards))
        golds = [by_id[i].gold_type if i in by_id else None for i in emb.ids]
        if all(g is not None for g in golds):
            gold = golds
    report = {"algorithm": a.algo, "k_found": assign.k, "points": len(emb.ids),
              "noise": int((assign.labels < 0).sum())}
    if "eps" in assign.extra:
        report["eps"] = assign.extra["eps"]
    if a.mapping:
        mapping = map_clusters_to_types(assign, mapping_file=a.mapping)
    elif gold is not None:
        mapping = map_clusters_to_types(assign, gold)
    else:
        raise ConfigError("naming clusters needs gold award types or --mapping")
    if gold is not None:
        slots = [g.slot for g in gold]
        keep = assign.labels >= 0
        report.update(clustering_report(np.array(slots)[keep], assign.labels[keep])
                      if keep.any() else {})
        report["mapping_agreement"] = mapping_agreement(assign, gold, mapping)
    write_mapping(ctx.out_file("mapping.tsv"), mapping)
    lines = ["award_id\tcluster"] + [f"{i}\t{int(c)}" for i, c in zip(emb.ids, assign.labels)]
    _write(ctx.out_file("clusters.tsv"), "\n".join(lines) + "\n")
    _write(ctx.out_file("cluster_report.json"), _dump(report))
    return report


def _read_clusters(path) -> ClusterAssignment:
    ids, labels = [], []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()[1:], 2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigError(f"clusters line {n}: expected award_id<TAB>cluster")
        ids.append(parts[0])
        labels.append(int(parts[1]))
    labels = np.array(labels, dtype=np.int64)
    k = int(len(set(labels[labels >= 0].tolist())))
    assign = ClusterAssignment(labels, k)
    assign.extra["ids"] = ids
    return assign


def cmd_label(ctx: Ctx) -> dict:
    a = ctx.args
    students = _students(ctx)
    assign = _read_clusters(ctx.path(a.clusters, "clusters.tsv"))
    mapping = read_mapping(ctx.path(a.mapping, "mapping.tsv"))
    temporal = not a.no_temporal_split
    y = P.labels_from_clusters(students, assign.extra["ids"], assign, mapping, a.horizon, temporal)
    _write(ctx.out_file("labels.csv"), labels_csv([s.id for s in students], y))
    summary = {"students": len(students), "horizon": a.horizon,
               "positives": dict(zip(TYPE_NAMES, y.sum(axis=0).tolist()))}
    if all(aw.gold_type is not None for s in students for aw in s.awards):
        summary["gold_agreement"] = float(np.mean(y == P.gold_labels(students, a.horizon, temporal)))
    return summary


def cmd_train(ctx: Ctx) -> dict:
    a = ctx.args
    students = _students(ctx)
    table = read_labels(ctx.path(a.labels, "labels.csv"))
    tcfg, vocab, enc, _ = dio.load_text_encoder(ctx.path(a.encoder, "encoder.json"))
    schema = net.FeatureSchema.fit(students)
    temporal = not a.no_temporal_split
    batch, kept = P.prepare(students, a.horizon, schema, vocab, tcfg, enc, temporal)
    y = _labels_for(batch.ids, table)
    if a.drop_unawarded:
        rows = np.nonzero(y.sum(axis=1) > 0)[0]
        batch, y = batch.take(rows), y[rows]
    if len(batch) < 2:
        raise ConfigError("training needs at least two students with exam data")
    tr, te = P.stratified_split(y, a.test_fraction, ctx.seed)
    cfg = net.ModelConfig(mode=a.mode, transformer=tcfg,
                          lstm=net.LstmConfig(hidden=a.lstm_hidden, layers=a.lstm_layers,
                                              dropout=a.dropout),
                          classifier_hidden=tuple(a.hidden))
    train_cfg = P.TrainConfig(epochs=a.epochs, lr0=a.lr0, gamma=a.gamma, batch_size=a.batch_size,
                              weight_decay=a.weight_decay, augment=not a.no_augment)
    values, curves = P.train(batch.take(tr), y[tr], cfg, train_cfg, schema, ctx.seed,
                             batch.take(te), y[te])
    bundle = net.ModelBundle(cfg, schema, values, enc, vocab, a.horizon, temporal,
                             extra={"train": train_cfg.to_dict(), "seed": ctx.seed})
    dio.save_model(bundle, ctx.out_file("model.json"))
    _write(ctx.out_file("curves.csv"), curves.to_csv())
    split = {"seed": ctx.seed, "train": [batch.ids[i] for i in tr], "test": [batch.ids[i] for i in te]}
    _write(ctx.out_file("split.json"), _dump(split))
    last = curves.rows[-1] if curves.rows else {}
    return {"mode": a.mode, "train_students": int(len(tr)), "test_students": int(len(te)),
            "final_train_loss": last.get("train_loss"), "final_test_loss": last.get("test_loss"),
            "final_train_rocauc": last.get("train_rocauc"), "final_test_rocauc": last.get("test_rocauc"),
            "outputs": ["model.json", "curves.csv", "split.json"]}


def cmd_predict(ctx: Ctx) -> dict:
    a = ctx.args
    students = _students(ctx)
    bundle = dio.load_model(ctx.path(a.model, "model.json"))
    feats = []
    for st in students:
        try:
            feats.append(P.extract_features(st, bundle.horizon, bundle.schema, bundle.temporal_split))
        except TalentError as exc:
            log.warning("skipping %s: %s", st.id, exc)
    preds = P.predict(bundle, feats)
    text = "".join(json.dumps(p.as_dict(), ensure_ascii=False, sort_keys=True) + "\n" for p in preds)
    _write(ctx.out_file("predictions.jsonl"), text)
    summary = {"students": len(preds), "output": "predictions.jsonl"}
    if a.top_n:
        talent = TalentType.parse(a.top_n[0])
        try:
            n = int(a.top_n[1])
        except ValueError:
            raise ConfigError("--top-n count must be an integer") from None
        chosen = P.top_n_select(preds, talent, n)
        summary["top_n"] = {"type": talent.value, "n": n, "ids": chosen}
    return summary


def _eval_data(ctx: Ctx):
    a = ctx.args
    students = _students(ctx)
    bundle = dio.load_model(ctx.path(a.model, "model.json"))
    table = read_labels(ctx.path(a.labels, "labels.csv"))
    batch, _ = _model_batch(ctx, bundle, students)
    y = _labels_for(batch.ids, table)
    return bundle, batch, y


def table_rows(report: dict) -> List[dict]:
    rows = [{"type": t, "accuracy": v["accuracy"], "rocauc": v["rocauc"]}
            for t, v in report["per_type"].items()]
    rows.append({"type": "Average", "accuracy": report["accuracy"],
                 "rocauc": report["rocauc_micro"], "rocauc_macro": report["rocauc_macro"]})
    return rows


def cmd_evaluate(ctx: Ctx) -> dict:
    bundle, batch, y = _eval_data(ctx)
    has_split = ctx.args.split is not None or (ctx.out / "split.json").exists()
    parts = ("train", "test") if has_split else ("all",)
    metrics = {"mode": bundle.mode}
    roc_lines = ["part,type,fpr,tpr"]
    for part in parts:
        rows = _split_rows(ctx, batch, part) if has_split else np.arange(len(batch))
        if len(rows) == 0:
            raise ConfigError(f"the {part} split holds no evaluable students")
        p = net.predict_proba(batch.take(rows), bundle.config, bundle.schema, bundle.params)
        rep = prediction_report(y[rows], p, ctx.args.threshold)
        rep["table"] = table_rows(rep)
        metrics[part] = rep
        curves = [(name, y[rows, j], p[:, j]) for j, name in enumerate(TYPE_NAMES)]
        curves.append(("micro", y[rows].ravel(), p.ravel()))
        for name, truth, score in curves:
            if truth.min() == truth.max():
                continue
            c = roc_curve(truth, score)
            roc_lines += [f"{part},{name},{f!r},{t!r}" for f, t in zip(c.fpr.tolist(), c.tpr.tolist())]
    _write(ctx.out_file("metrics.json"), _dump(metrics))
    _write(ctx.out_file("roc.csv"), "\n".join(roc_lines) + "\n")
    return metrics


def cmd_explain(ctx: Ctx) -> dict:
    bundle, batch, y = _eval_data(ctx)
    if bundle.mode != "one":
        log.warning("surrogate features are full-width branch outputs in %s mode", bundle.mode)
    tr = _split_rows(ctx, batch, "train")
    te = _split_rows(ctx, batch, "test")
    E, names = net.embeddings(batch, bundle.config, bundle.schema, bundle.params)
    cfg = xpl.SurrogateConfig(lr=ctx.args.lr, max_iter=ctx.args.max_iter)
    model = xpl.fit_logistic_surrogate(E[tr], y[tr], cfg, ctx.seed, names)
    report = xpl.explain_cohort(model, E, list(batch.ids))
    rows = xpl.feature_importance_report(report)
    _write(ctx.out_file("surrogate.json"), _dump(model.to_dict()))
    _write(ctx.out_file("shap_report.json"), _dump(report.to_json_dict()))
    _write(ctx.out_file("importance.csv"), xpl.importance_csv(rows))
    full = net.predict_proba(batch.take(te), bundle.config, bundle.schema, bundle.params)
    sur = model.predict_proba(E[te])
    summary = {
        "features": names,
        "surrogate_iterations": model.iterations,
        "surrogate_test_rocauc": prediction_report(y[te], sur)["rocauc_micro"],
        "full_test_rocauc": prediction_report(y[te], full)["rocauc_micro"],
        "efficiency_error": report.efficiency_error(),
        "top_feature": {r.type: r.feature for r in rows if r.rank == 1},
        "outputs": ["surrogate.json", "shap_report.json", "importance.csv"],
    }
    return summary


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "finetune": cmd_finetune, "embed": cmd_embed,
    "cluster": cmd_cluster, "label": cmd_label, "train": cmd_train, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "explain": cmd_explain,
}


def run(argv: Optional[Sequence[str]] = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            _apply_config(parser, subs, args.command, read_config(args.config))
            args = parser.parse_args(argv)
            cfg = read_config(args.config)
            if args.seed is None and "seed" in cfg:
                args.seed = int(cfg["seed"])
            if "out_dir" in cfg and not any(a.startswith("--out-dir") for a in argv):
                args.out_dir = cfg["out_dir"]
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}), file=sys.stderr)
        return 1
    except ValueError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}), file=sys.stderr)
        return 1
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_seed = args.command in STOCHASTIC or (
        args.command == "cluster" and args.algo not in ("ward", "average"))
    if needs_seed and args.seed is None:
        subs[args.command].print_usage(sys.stderr)
        print(f"talentpred {args.command}: error: --seed is required", file=sys.stderr)
        return 2
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](Ctx(args))
    except (TalentError, OSError, ValueError, KeyError) as exc:
        kind = type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc)}, ensure_ascii=False), file=sys.stderr)
        return 1
    stdout.write(_dump({"command": args.command, **summary}))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
