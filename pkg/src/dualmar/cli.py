"""Stage-oriented command-line interface.

Each command reads durable artifacts written by its upstream stage, stamps
its own outputs with the resolved config hash, and refuses to mix artifacts
produced under different configurations (StaleArtifact).  Logs are JSON
lines on stderr; stdout carries only the machine-readable report the
command is documented to emit.
"""
from __future__ import annotations

import os

# Thread cap has to land before numpy's first import anywhere in the
# process, so it happens at module import time.
_threads = os.environ.get("DUALMAR_THREADS")
if _threads and _threads.isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json      # noqa: E402
import sys       # noqa: E402
import time      # noqa: E402
from pathlib import Path  # noqa: E402

from .errors import DualmarError, MissingInput, StaleArtifact, ConfigInvalid  # noqa: E402


def log(event: str, **fields) -> None:
    rec = {"ts": round(time.time(), 3), "event": event}
    rec.update(fields)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr, flush=True)


# ------------------------------------------------------------- artifact meta

def _meta_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".meta.json")


def write_meta(artifact: Path, cfg_hash: str, stage: str) -> None:
    _meta_path(artifact).write_text(json.dumps(
        {"config_hash": cfg_hash, "stage": stage}, sort_keys=True) + "\n")


def require_artifact(artifact: Path, cfg_hash: str) -> None:
    if not artifact.exists():
        raise MissingInput(f"missing upstream artifact: {artifact}")
    meta = _meta_path(artifact)
    if not meta.exists():
        raise MissingInput(f"artifact has no provenance sidecar: {meta}")
    recorded = json.loads(meta.read_text()).get("config_hash")
    if recorded != cfg_hash:
        raise StaleArtifact(
            f"{artifact} was produced under config {recorded}, current is {cfg_hash}; "
            "rerun the upstream stage")


# ------------------------------------------------------------ shared loaders

def _dataset_paths(out: Path, name: str) -> tuple[Path, Path]:
    return out / f"{name}.jsonl", out / "vocab.json"


def _load_split(out: Path, name: str, cfg_hash: str):
    from .ehr import load_dataset
    data_path, vocab_path = _dataset_paths(out, name)
    require_artifact(data_path, cfg_hash)
    require_artifact(vocab_path, cfg_hash)
    return load_dataset(data_path, vocab_path)


def _load_graph(out: Path, cfg_hash: str):
    from .cograph import load_graph, assemble_adjacency, neighbor_mask
    coo = out / "cograph.coo"
    require_artifact(coo, cfg_hash)
    b, phi, _nodes = load_graph(out / "cograph")
    a, a_hat = assemble_adjacency(b, phi)
    return b, a, neighbor_mask(a), a_hat


def _synth_config(cfg: dict):
    from .ehr import SyntheticConfig
    d = cfg["data"]
    return SyntheticConfig(
        patients=d["patients"], num_diseases=d["num_diseases"],
        lab_sizes=tuple(d["lab_sizes"]), clusters=d["clusters"],
        hierarchy_depth=d["hierarchy_depth"], affinity=d["affinity"],
        progression=d["progression"], mean_admissions=d["mean_admissions"],
        hf_codes=tuple(d["hf_codes"]) if d["hf_codes"] else None,
        seed=d["seed"])


def _hf_codes(cfg: dict) -> tuple[str, ...]:
    from .ehr import planted_structure
    return planted_structure(_synth_config(cfg)).hf_codes


def _encoder_config(cfg: dict):
    from .pipeline import EncoderConfig
    e = cfg["encoder"]
    return EncoderConfig(
        feature_width=e["feature_width"], gnn_hidden=e["gnn_hidden"],
        admission_width=e["admission_width"], attention_dim=e["attention_dim"],
        patient_width=e["patient_width"], decoder_hidden=e["decoder_hidden"],
        dropout_attention=e["dropout_attention"],
        dropout_decoder=e["dropout_decoder"], dropout_head=e["dropout_head"],
        propagation=e["propagation"],
        feature_init_gamma=e["feature_init_gamma"])


def _prior_rows(out: Path, cfg: dict, dataset, cfg_hash: str) -> dict | None:
    """Node feature rows from the embedding export, when enabled and present.

    Disease nodes match on the disease code; lab nodes match on the lab's
    abnormality-marker code when the graph carries marker entities."""
    import numpy as np
    from .ehr import marker_code
    if not cfg["encoder"]["use_kg_prior"]:
        return None
    path = out / "embeddings.tsv"
    if not path.exists():
        log("prior_skipped", reason="no embeddings.tsv; using random feature rows")
        return None
    require_artifact(path, cfg_hash)
    width = cfg["encoder"]["feature_width"]
    by_code: dict[str, np.ndarray] = {}
    for line in path.read_text().splitlines()[1:]:
        parts = line.split("\t")
        code = parts[1]
        if code:
            by_code[code] = np.array([float(x) for x in parts[3:]])
    wanted = {i: code for i, code in enumerate(dataset.disease_codes)}
    for l, lab in enumerate(dataset.labs):
        wanted[dataset.num_diseases + l] = marker_code(lab.code)
    rows = {}
    for node, code in wanted.items():
        if code in by_code:
            if by_code[code].shape != (width,):
                raise ConfigInvalid(
                    f"embedding width {by_code[code].shape[0]} does not match "
                    f"encoder feature_width {width}")
            rows[node] = by_code[code]
    log("prior_rows", matched=len(rows), diseases=len(dataset.disease_codes),
        labs=len(dataset.labs))
    return rows or None


def _cat_sizes(dataset) -> tuple[int, int, int]:
    return tuple(len(v) for v in dataset.labs_by_category().values())


# ----------------------------------------------------------------- commands

def cmd_data_synth(cfg: dict, cfg_hash: str, args) -> int:
    from .ehr import generate_synthetic, save_dataset
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(_synth_config(cfg))
    data_path, vocab_path = _dataset_paths(out, "dataset")
    save_dataset(ds, data_path, vocab_path)
    for p in (data_path, vocab_path):
        write_meta(p, cfg_hash, "data-synth")
    log("data_synth", patients=len(ds.patients), diseases=ds.num_diseases,
        labs=len(ds.labs), out=str(data_path))
    return 0


def cmd_kg_synth(cfg: dict, cfg_hash: str, args) -> int:
    from .ehr import synthetic_disease_kg
    from .kg import save_triples, SYSTEM_BY_CATEGORY
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    graph = synthetic_disease_kg(_synth_config(cfg))
    path = out / "kg_raw.tsv"
    save_triples(graph, path)
    write_meta(path, cfg_hash, "kg-synth")
    # The raw TSV carries surfaces only, so emit the surface -> code table
    # that lets kg-normalize keep the planted concepts distinct.
    xref = [{"system": SYSTEM_BY_CATEGORY[e.category], "key": e.surface,
             "code": e.code}
            for e in graph.entities.values() if e.code]
    xref_path = out / "kg_xref.json"
    xref_path.write_text(json.dumps(xref, sort_keys=True) + "\n")
    write_meta(xref_path, cfg_hash, "kg-synth")
    log("kg_synth", entities=len(graph.entities), triples=len(graph.triples),
        xref_rows=len(xref), out=str(path))
    return 0


def cmd_data_split(cfg: dict, cfg_hash: str, args) -> int:
    from .ehr import save_dataset, split_dataset
    out = Path(cfg["out_dir"])
    ds = _load_split(out, "dataset", cfg_hash)
    parts = split_dataset(ds, tuple(cfg["split"]["ratios"]), seed=cfg["split"]["seed"])
    sizes = {}
    for name, part in zip(("train", "valid", "test"), parts):
        data_path, vocab_path = _dataset_paths(out, name)
        save_dataset(part, data_path, vocab_path)
        write_meta(data_path, cfg_hash, "data-split")
        write_meta(vocab_path, cfg_hash, "data-split")
        sizes[name] = len(part.patients)
    log("data_split", **sizes)
    return 0


def cmd_graph_build(cfg: dict, cfg_hash: str, args) -> int:
    from .cograph import build_cooccurrence, save_graph, node_codes
    out = Path(cfg["out_dir"])
    train = _load_split(out, "train", cfg_hash)
    g = cfg["graph"]
    b = build_cooccurrence(train, include_disease_lab=g["include_disease_lab"],
                           include_lab_lab=g["include_lab_lab"],
                           per_patient=g["per_patient"])
    save_graph(out / "cograph", b, g["phi"], node_codes(train))
    for suffix in (".coo", ".json"):
        write_meta(Path(str(out / "cograph") + suffix), cfg_hash, "graph-build")
    log("graph_build", nodes=b.shape[0], nonzeros=int(b.nnz), phi=g["phi"])
    return 0


def cmd_kg_normalize(cfg: dict, cfg_hash: str, args) -> int:
    from .kg import load_triples, normalize_kg, save_kg_archive, CrossRefTable
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    src = Path(args.triples)
    if not src.exists():
        raise MissingInput(f"triple file not found: {src}")
    graph = load_triples(src)
    table = None
    if args.xref:
        xref_path = Path(args.xref)
        if not xref_path.exists():
            raise MissingInput(f"cross-reference file not found: {xref_path}")
        rows = json.loads(xref_path.read_text())
        table = CrossRefTable([(r["system"], r["key"], r["code"]) for r in rows])
    normalized = normalize_kg(graph, table, theta=cfg["kg"]["theta"],
                              relation_theta=cfg["kg"]["relation_theta"])
    kg_dir = out / "kg"
    save_kg_archive(normalized, kg_dir)
    write_meta(kg_dir / "triples.tsv", cfg_hash, "kg-normalize")
    log("kg_normalize", entities=len(normalized.entities),
        relations=len(normalized.relations), triples=len(normalized.triples),
        out=str(kg_dir))
    return 0


def cmd_kg_stats(cfg: dict, cfg_hash: str, args) -> int:
    from .kg import load_kg_archive, kg_stats
    out = Path(cfg["out_dir"])
    kg_dir = Path(args.kg_dir) if args.kg_dir else out / "kg"
    require_artifact(kg_dir / "triples.tsv", cfg_hash)
    stats = kg_stats(load_kg_archive(kg_dir))
    stats["config_hash"] = cfg_hash
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_harvest_render(cfg: dict, cfg_hash: str, args) -> int:
    from .harvest import PromptSpec, render_prompt, prompt_hash
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    specs_path = Path(args.specs)
    if not specs_path.exists():
        raise MissingInput(f"spec file not found: {specs_path}")
    lines = []
    for raw in specs_path.read_text().splitlines():
        if not raw.strip():
            continue
        rec = json.loads(raw)
        spec = PromptSpec(term=rec["term"], category=rec["category"],
                          topics=rec.get("topics", ""), text=rec.get("text", ""))
        prompt = render_prompt(spec)
        lines.append(json.dumps({"term": spec.term, "category": spec.category,
                                 "prompt_hash": prompt_hash(prompt),
                                 "prompt": prompt}, sort_keys=True))
    dest = out / "prompts.jsonl"
    dest.write_text("\n".join(lines) + ("\n" if lines else ""))
    write_meta(dest, cfg_hash, "harvest-render")
    log("harvest_render", prompts=len(lines), out=str(dest))
    return 0


def cmd_harvest_parse(cfg: dict, cfg_hash: str, args) -> int:
    from .harvest import parse_updates, upper_snake
    from .kg import Entity, Relation, Triple, KnowledgeGraph, save_kg_archive
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    resp_path = Path(args.responses)
    if not resp_path.exists():
        raise MissingInput(f"response file not found: {resp_path}")

    entities: dict[tuple[str, str], int] = {}
    relations: dict[str, int] = {}
    triples = []
    seen = set()
    report_lines = []
    for raw in resp_path.read_text().splitlines():
        if not raw.strip():
            continue
        rec = json.loads(raw)
        term, category = rec["term"], rec.get("category", "Other")
        parsed = parse_updates(rec["response"], term)
        for t in parsed.accepted:
            head_cat = category if t.head.casefold() == term.casefold() else "Other"
            tail_cat = category if head_cat == "Other" else "Other"
            hk, tk = (t.head, head_cat), (t.tail, tail_cat)
            for key in (hk, tk):
                if key not in entities:
                    entities[key] = len(entities)
            label = upper_snake(t.relation)
            if label not in relations:
                relations[label] = len(relations)
            trip = (entities[hk], relations[label], entities[tk])
            if trip not in seen:
                seen.add(trip)
                triples.append(trip)
        report_lines.append(json.dumps({
            "term": term, "accepted": len(parsed.accepted),
            "rejected": [{"snippet": s, "reason": r} for s, r in parsed.rejected],
        }, sort_keys=True))

    graph = KnowledgeGraph(
        entities={i: Entity(i, surface, cat, None)
                  for (surface, cat), i in entities.items()},
        relations={i: Relation(i, label) for label, i in relations.items()},
        triples=[Triple(h, r, t, "Generated") for h, r, t in triples])
    frag_dir = out / "fragment"
    save_kg_archive(graph, frag_dir)
    write_meta(frag_dir / "triples.tsv", cfg_hash, "harvest-parse")
    report = out / "parse_report.jsonl"
    report.write_text("\n".join(report_lines) + ("\n" if report_lines else ""))
    write_meta(report, cfg_hash, "harvest-parse")
    log("harvest_parse", triples=len(triples), entities=len(entities),
        out=str(frag_dir))
    return 0


def cmd_kge_train(cfg: dict, cfg_hash: str, args) -> int:
    from .kg import load_kg_archive, graph_to_id_triples
    from .kge import KgeConfig, train_kge
    from .nn.checkpoint import save_checkpoint
    from .report import write_history_tsv, render_curves_png
    out = Path(cfg["out_dir"])
    kg_dir = Path(args.kg_dir) if args.kg_dir else out / "kg"
    require_artifact(kg_dir / "triples.tsv", cfg_hash)
    graph = load_kg_archive(kg_dir)
    triples, ent_ids, rel_ids = graph_to_id_triples(graph)
    k = cfg["kge"]
    kge_cfg = KgeConfig(k=k["k"], gamma=k["gamma"], lam=k["lam"],
                        negatives=k["negatives"], steps=k["steps"],
                        lr=k["lr"], batch_size=k["batch_size"])
    table, history = train_kge(triples, len(ent_ids), len(rel_ids), kge_cfg,
                               seed=k["seed"])
    ckpt = out / "kge.ckpt"
    save_checkpoint(ckpt, {
        "entity_modulus": table.entity_modulus,
        "entity_phase": table.entity_phase,
        "relation_modulus": table.relation_modulus,
        "relation_phase": table.relation_phase,
    }, config={"k": k["k"], "gamma": k["gamma"], "lam": k["lam"],
               "num_entities": len(ent_ids), "num_relations": len(rel_ids)},
       meta={"config_hash": cfg_hash, "entity_ids": ent_ids, "relation_ids": rel_ids})
    write_meta(ckpt, cfg_hash, "kge-train")
    losses = [loss for _step, loss in history]
    write_history_tsv(out / "kge_history.tsv", {"loss": losses}, cfg_hash)
    write_meta(out / "kge_history.tsv", cfg_hash, "kge-train")
    render_curves_png(out / "kge_loss.png", {"loss": losses},
                      "embedding training loss", ylabel="mean batch loss")
    write_meta(out / "kge_loss.png", cfg_hash, "kge-train")
    log("kge_train", steps=k["steps"], final_loss=losses[-1] if losses else None,
        out=str(ckpt))
    return 0


def _load_kge_table(out: Path, cfg: dict, cfg_hash: str):
    from .kge import EmbeddingTable
    from .nn.checkpoint import load_checkpoint
    ckpt = out / "kge.ckpt"
    require_artifact(ckpt, cfg_hash)
    arrays, config, meta = load_checkpoint(ckpt)
    table = EmbeddingTable(
        entity_modulus=arrays["entity_modulus"],
        entity_phase=arrays["entity_phase"],
        relation_modulus=arrays["relation_modulus"],
        relation_phase=arrays["relation_phase"])
    return table, config, meta


def cmd_kge_eval(cfg: dict, cfg_hash: str, args) -> int:
    import numpy as np
    from .kg import load_kg_archive, graph_to_id_triples
    from .kge import evaluate_link_prediction
    from .report import write_metrics_tsv, render_bars_png
    out = Path(cfg["out_dir"])
    kg_dir = Path(args.kg_dir) if args.kg_dir else out / "kg"
    require_artifact(kg_dir / "triples.tsv", cfg_hash)
    table, kge_conf, _meta = _load_kge_table(out, cfg, cfg_hash)
    graph = load_kg_archive(kg_dir)
    triples, _, _ = graph_to_id_triples(graph)
    rng = np.random.default_rng(cfg["kge"]["seed"])
    order = rng.permutation(len(triples))
    n_test = max(1, len(triples) // 10)
    report = evaluate_link_prediction(
        table, triples[order[:n_test]], triples, lam=kge_conf["lam"],
        filtered=cfg["kge"]["filtered_eval"])
    metrics = {"mrr": report.mrr}
    metrics.update({f"hits@{k}": v for k, v in report.hits.items()})
    payload = {"config_hash": cfg_hash, "count": report.count,
               "filtered": report.filtered, "metrics": metrics,
               "by_direction": report.by_direction}
    (out / "kge_eval.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    write_meta(out / "kge_eval.json", cfg_hash, "kge-eval")
    write_metrics_tsv(out / "kge_eval.tsv", metrics, cfg_hash)
    write_meta(out / "kge_eval.tsv", cfg_hash, "kge-eval")
    render_bars_png(out / "kge_eval.png", metrics, "link prediction")
    write_meta(out / "kge_eval.png", cfg_hash, "kge-eval")
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_kge_export(cfg: dict, cfg_hash: str, args) -> int:
    from .kg import load_kg_archive
    from .kge import export_entity_embeddings
    out = Path(cfg["out_dir"])
    kg_dir = Path(args.kg_dir) if args.kg_dir else out / "kg"
    require_artifact(kg_dir / "triples.tsv", cfg_hash)
    table, _conf, meta = _load_kge_table(out, cfg, cfg_hash)
    graph = load_kg_archive(kg_dir)
    rows = export_entity_embeddings(table)
    ent_ids = meta["entity_ids"]
    lines = ["entity_id\tcode\tsurface\t" + "\t".join(
        f"v{i}" for i in range(rows.shape[1]))]
    for row_idx, eid in enumerate(ent_ids):
        ent = graph.entities[eid]
        vals = "\t".join(f"{x:.17g}" for x in rows[row_idx])
        lines.append(f"{eid}\t{ent.code or ''}\t{ent.surface}\t{vals}")
    dest = out / "embeddings.tsv"
    dest.write_text("\n".join(lines) + "\n")
    write_meta(dest, cfg_hash, "kge-export")
    log("kge_export", entities=len(ent_ids), width=rows.shape[1], out=str(dest))
    return 0


def cmd_proxy_pretrain(cfg: dict, cfg_hash: str, args) -> int:
    from .ehr import proxy_examples
    from .pipeline import (init_model, proxy_joint_train, proxy_individual_train,
                           save_model)
    from .report import write_history_tsv, render_curves_png
    out = Path(cfg["out_dir"])
    train = _load_split(out, "train", cfg_hash)
    _b, _a, mask, a_hat = _load_graph(out, cfg_hash)
    enc_cfg = _encoder_config(cfg)
    model = init_model(enc_cfg, mask, train.num_diseases, _cat_sizes(train),
                       seed=cfg["encoder"]["seed"],
                       prior_rows=_prior_rows(out, cfg, train, cfg_hash),
                       a_hat=a_hat)
    px = proxy_examples(train)
    t = cfg["train"]
    joint = proxy_joint_train(model, px, epochs=t["joint_epochs"],
                              lr=t["joint_lr"], batch_size=t["batch_size"],
                              seed=t["seed"], decay=t["decay"])
    individual = proxy_individual_train(model, px, epochs=t["individual_epochs"],
                                        lr=t["individual_lr"],
                                        batch_size=t["batch_size"],
                                        seed=t["seed"] + 1, decay=t["decay"])
    ckpt = out / "pretrained.ckpt"
    save_model(model, ckpt, meta={"config_hash": cfg_hash, "phase": "pretrained"})
    write_meta(ckpt, cfg_hash, "proxy-pretrain")
    curves = {"joint": joint}
    curves.update({f"cat{c}": h for c, h in individual.items()})
    write_history_tsv(out / "pretrain_history.tsv", curves, cfg_hash)
    write_meta(out / "pretrain_history.tsv", cfg_hash, "proxy-pretrain")
    render_curves_png(out / "pretrain_loss.png", curves, "proxy pretraining loss")
    write_meta(out / "pretrain_loss.png", cfg_hash, "proxy-pretrain")
    log("proxy_pretrain", joint_final=joint[-1] if joint else None,
        examples=len(px), out=str(ckpt))
    return 0


def _task_command(cfg: dict, cfg_hash: str, path: str) -> int:
    from .ehr import downstream_examples
    from .pipeline import (init_model, load_model, add_head, task_train,
                           save_model)
    from .report import write_history_tsv, render_curves_png
    out = Path(cfg["out_dir"])
    train = _load_split(out, "train", cfg_hash)
    _b, _a, mask, a_hat = _load_graph(out, cfg_hash)
    t = cfg["train"]
    if path == "finetune":
        ckpt_in = out / "pretrained.ckpt"
        require_artifact(ckpt_in, cfg_hash)
        model, _meta = load_model(ckpt_in, mask, a_hat=a_hat)
    else:
        model = init_model(_encoder_config(cfg), mask, train.num_diseases,
                           _cat_sizes(train), seed=cfg["encoder"]["seed"],
                           prior_rows=_prior_rows(out, cfg, train, cfg_hash),
                           a_hat=a_hat)
    examples = downstream_examples(train, _hf_codes(cfg))
    add_head(model, t["task"], path, seed=t["seed"] + 2)
    history = task_train(model, examples, t["task"], path,
                         epochs=t["task_epochs"], lr=t["task_lr"],
                         batch_size=t["batch_size"], seed=t["seed"] + 3,
                         decay=t["decay"], rt=t["rt"])
    stage = "finetune" if path == "finetune" else "direct-train"
    ckpt = out / f"model_{path}.ckpt"
    save_model(model, ckpt, meta={"config_hash": cfg_hash, "path": path,
                                  "task": t["task"]})
    write_meta(ckpt, cfg_hash, stage)
    name = f"{path}_history.tsv"
    write_history_tsv(out / name, {"loss": history}, cfg_hash)
    write_meta(out / name, cfg_hash, stage)
    render_curves_png(out / f"{path}_loss.png", {"loss": history},
                      f"{path} training loss")
    write_meta(out / f"{path}_loss.png", cfg_hash, stage)
    log(stage.replace("-", "_"), final_loss=history[-1] if history else None,
        examples=len(examples), out=str(ckpt))
    return 0


def cmd_finetune(cfg: dict, cfg_hash: str, args) -> int:
    return _task_command(cfg, cfg_hash, "finetune")


def cmd_direct_train(cfg: dict, cfg_hash: str, args) -> int:
    return _task_command(cfg, cfg_hash, "direct")


def cmd_evaluate(cfg: dict, cfg_hash: str, args) -> int:
    from .ehr import downstream_examples
    from .metrics import diagnosis_report, hf_report
    from .pipeline import init_model, load_model, add_head, predict
    from .report import write_metrics_tsv, render_bars_png
    out = Path(cfg["out_dir"])
    split = _load_split(out, args.split, cfg_hash)
    _b, _a, mask, a_hat = _load_graph(out, cfg_hash)
    t = cfg["train"]
    if args.fresh:
        model = init_model(_encoder_config(cfg), mask, split.num_diseases,
                           _cat_sizes(split), seed=cfg["encoder"]["seed"],
                           a_hat=a_hat)
        path = "direct"
        add_head(model, t["task"], path, seed=t["seed"] + 2)
        source = "fresh"
    else:
        ckpt = Path(args.model) if args.model else out / "model_finetune.ckpt"
        require_artifact(ckpt, cfg_hash)
        model, meta = load_model(ckpt, mask, a_hat=a_hat)
        path = meta.get("path", "finetune")
        source = str(ckpt)
    examples = downstream_examples(split, _hf_codes(cfg))
    probs = predict(model, examples, path, rt=t["rt"])
    if t["task"] == "diagnosis":
        truth = [ex.target_diseases for ex in examples]
        metrics = diagnosis_report(probs, truth, ks=tuple(cfg["evaluate"]["recall_ks"]))
    else:
        labels = [ex.hf_label for ex in examples]
        metrics = hf_report(probs[:, 0], labels)
    payload = {"config_hash": cfg_hash, "task": t["task"], "split": args.split,
               "model": source, "path": path, "count": len(examples),
               "metrics": metrics}
    stem = "fresh" if args.fresh else Path(source).stem.removeprefix("model_")
    base = out / f"metrics_{stem}_{args.split}"
    base.with_suffix(".json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    write_meta(base.with_suffix(".json"), cfg_hash, "evaluate")
    write_metrics_tsv(base.with_suffix(".tsv"), metrics, cfg_hash)
    write_meta(base.with_suffix(".tsv"), cfg_hash, "evaluate")
    render_bars_png(base.with_suffix(".png"), metrics, f"{t['task']} on {args.split}")
    write_meta(base.with_suffix(".png"), cfg_hash, "evaluate")
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_gradcheck(cfg: dict, cfg_hash: str, args) -> int:
    from .nn.gradcheck import standard_suite, max_relative_error
    from .report import write_metrics_tsv
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, build, arrays in standard_suite(seed=0):
        results[name] = max_relative_error(build, arrays)
    worst = max(results.values())
    payload = {"config_hash": cfg_hash, "cases": len(results),
               "max_relative_error": worst,
               "per_primitive": {k: results[k] for k in sorted(results)}}
    print(json.dumps(payload, sort_keys=True))
    write_metrics_tsv(out / "gradcheck.tsv", results, cfg_hash)
    write_meta(out / "gradcheck.tsv", cfg_hash, "gradcheck")
    tol = 1e-4
    if worst > tol:
        log("gradcheck_failed", max_relative_error=worst, tolerance=tol)
        return 1
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON config file (defaults apply otherwise)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the base seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="artifact directory (default: artifacts)")
    parser = argparse.ArgumentParser(
        prog="dualmar", parents=[common],
        description="Stage-by-stage pipeline driver; artifacts land in --out-dir "
                    "and are stamped with the resolved config hash.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        return sub.add_parser(name, help=help_text, parents=[common])

    add("data-synth", "generate the synthetic admission dataset")
    add("data-split", "patient-level train/valid/test split")
    add("kg-synth", "write the planted disease ontology as a raw triple file")
    add("graph-build", "co-occurrence graph from the train split")

    p = add("kg-normalize", "normalize a raw triple file into an archive")
    p.add_argument("triples", help="raw triple TSV (head, relation, tail, category-pair)")
    p.add_argument("--xref", help="JSON list of {system, key, code} cross-reference rows")

    p = add("kg-stats", "vocabulary and triple counts as JSON on stdout")
    p.add_argument("kg_dir", nargs="?", help="archive directory (default: OUT/kg)")

    p = add("harvest-render", "render extraction prompts from specs")
    p.add_argument("specs", help="JSONL of {term, category, topics, text}")

    p = add("harvest-parse", "parse oracle responses into a KG fragment")
    p.add_argument("responses", help="JSONL of {term, category, response}")

    for name, help_text in [("kge-train", "train polar embeddings on a KG archive"),
                            ("kge-eval", "filtered link-prediction ranking report"),
                            ("kge-export", "write per-entity feature rows as TSV")]:
        p = add(name, help_text)
        p.add_argument("kg_dir", nargs="?", help="archive directory (default: OUT/kg)")

    add("proxy-pretrain", "joint then per-category decoder pretraining")
    add("finetune", "downstream training from the pretrained checkpoint")
    add("direct-train", "downstream training from scratch")

    p = add("evaluate", "score a trained model on a split")
    p.add_argument("model", nargs="?", help="checkpoint (default: OUT/model_finetune.ckpt)")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--fresh", action="store_true",
                   help="score an untrained model instead of a checkpoint")

    add("gradcheck", "finite-difference check of every primitive")
    return parser


_HANDLERS = {
    "data-synth": cmd_data_synth,
    "data-split": cmd_data_split,
    "graph-build": cmd_graph_build,
    "kg-synth": cmd_kg_synth,
    "kg-normalize": cmd_kg_normalize,
    "kg-stats": cmd_kg_stats,
    "harvest-render": cmd_harvest_render,
    "harvest-parse": cmd_harvest_parse,
    "kge-train": cmd_kge_train,
    "kge-eval": cmd_kge_eval,
    "kge-export": cmd_kge_export,
    "proxy-pretrain": cmd_proxy_pretrain,
    "finetune": cmd_finetune,
    "direct-train": cmd_direct_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for flag in ("config", "seed", "out_dir"):
        if not hasattr(args, flag):
            setattr(args, flag, None)
    try:
        from .config import load_config, config_hash
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir)
        cfg_hash = config_hash(cfg)
        log("start", command=args.command, config_hash=cfg_hash,
            out_dir=cfg["out_dir"])
        code = _HANDLERS[args.command](cfg, cfg_hash, args)
        log("done", command=args.command, exit=code)
        return code
    except DualmarError as exc:
        log("error", command=args.command, type=type(exc).__name__,
            message=str(exc))
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
