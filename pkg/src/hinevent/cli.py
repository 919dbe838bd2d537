"""Command-line entry point: one subcommand per pipeline stage, files as
the contract between stages. Usage errors exit 2, data errors exit 1."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import clustering, evaluation, metapath, ppgcn, streaming
from .hin import NodeType, load_hin, save_hin
from .ingest import (
    CorpusError,
    DEFAULT_SLOT_SECONDS,
    build_event_layer,
    build_hin,
    load_enrichment_dir,
    parse_corpus,
    write_corpus,
)


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(path, allowed: dict) -> dict:
    """Read a flat JSON config; unknown keys are usage errors."""
    if path is None:
        resolved = dict(allowed)
    else:
        with open(path, encoding="utf-8") as fh:
            overrides = json.load(fh)
        unknown = sorted(set(overrides) - set(allowed))
        if unknown:
            raise UsageError(f"unknown config key: {unknown[0]!r}")
        resolved = dict(allowed)
        resolved.update(overrides)
    _log("resolved config: " + json.dumps(resolved, sort_keys=True))
    return resolved


def _write_labels(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, label in pairs:
            fh.write(f"{key}\t{label}\n")


def _read_labels(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, label = line.split("\t")
            out[key] = label
    return out


# -- subcommands ---------------------------------------------------------


def _cmd_generate(args) -> int:
    allowed = {f.name: getattr(evaluation.SyntheticSpec(), f.name)
               for f in evaluation.SyntheticSpec.__dataclass_fields__.values()}
    if args.spec == "default":
        spec = evaluation.SyntheticSpec(seed=args.seed)
        _log("resolved config: " + json.dumps({"spec": "default", "seed": args.seed}))
    else:
        values = _load_config(args.spec, allowed)
        values["instances_per_event"] = tuple(values["instances_per_event"])
        values["events_per_chain"] = tuple(values["events_per_chain"])
        spec = evaluation.SyntheticSpec(**values)
    records, truth_events, truth_chains = evaluation.generate_synthetic(spec)
    import os

    os.makedirs(args.out, exist_ok=True)
    write_corpus(records, os.path.join(args.out, "corpus.jsonl"))
    _write_labels(os.path.join(args.out, "event_labels.tsv"),
                  sorted(truth_events.items()))
    _write_labels(os.path.join(args.out, "chain_labels.tsv"),
                  sorted(truth_chains.items()))
    _log(f"wrote {len(records)} records, {spec.n_events} events to {args.out}")
    return 0


def _cmd_build_hin(args) -> int:
    records, errors = parse_corpus(args.corpus)
    for err in errors:
        _log(f"parse: {err}")
    tables = load_enrichment_dir(args.enrich) if args.enrich else None
    hin = build_hin(records, tables, slot_width=args.slot_mins * 60)
    save_hin(hin, args.out)
    _log(f"built graph over {len(records)} records -> {args.out}")
    return 0


_TRAIN_KEYS = {
    "anchors_per_round": 256, "batch_size": 32, "batches_per_epoch": 16,
    "learning_rate": 0.2, "epochs": 30, "hidden_dim": 32, "output_dim": 32,
    "seed": 0, "score": ppgcn.MODULUS, "freeze_weights_uniform": False,
    "feature_dim": 64, "max_path_len": None,
}


def _cmd_train_weights(args) -> int:
    cfg_values = _load_config(args.config, dict(_TRAIN_KEYS))
    feature_dim = int(cfg_values.pop("feature_dim"))
    max_len = cfg_values.pop("max_path_len")
    config = ppgcn.TrainConfig(**cfg_values)
    hin = load_hin(args.hin)
    labels = _read_labels(args.labels)
    if args.task == "event":
        pathset = metapath.default_detection_pathset(max_len or 4)
        anchor_kind = NodeType.EVENT_INSTANCE
        classes = {}
        for rid, cls in labels.items():
            idx = hin.index_of(anchor_kind, rid)
            if idx is None:
                raise ValueError(f"label references unknown record {rid!r}")
            classes[idx] = cls
    else:
        if not args.chain_labels:
            raise UsageError("--chain-labels is required for the evolution task")
        chain_labels = _read_labels(args.chain_labels)
        assignments = {}
        for rid, event_id in labels.items():
            idx = hin.index_of(NodeType.EVENT_INSTANCE, rid)
            if idx is None:
                raise ValueError(f"label references unknown record {rid!r}")
            assignments[idx] = event_id
        hin = build_event_layer(hin, assignments)
        pathset = metapath.default_evolution_pathset(max_len or 6)
        anchor_kind = NodeType.EVENT
        classes = {}
        for event_id, chain in chain_labels.items():
            idx = hin.index_of(NodeType.EVENT, event_id)
            if idx is None:
                raise ValueError(f"chain label references unknown event {event_id!r}")
            classes[idx] = chain
    mats = metapath.per_path_similarity_matrices(hin, pathset)
    features = ppgcn.hashed_features(hin, anchor_kind, dim=feature_dim)
    rng = np.random.default_rng(config.seed)
    params = ppgcn.ModelParams.init(feature_dim, config.hidden_dim, config.output_dim,
                                    len(pathset), rng, seed=config.seed)
    params, history = ppgcn.train(params, mats, features, classes, config)
    params.save(args.out)
    if args.weights_out:
        metapath.save_weights(params.path_weights, args.weights_out)
    if args.pathset_out:
        metapath.save_pathset(pathset, args.pathset_out)
    final = history[-1] if history else float("nan")
    _log(f"trained {config.epochs} epochs, final pair accuracy {final:.4f}")
    return 0


def _cmd_cluster(args) -> int:
    da = np.load(args.distances)
    labels = clustering.dbscan(da, args.eps, args.min_pts, args.threads)
    _write_labels(args.out, list(enumerate(labels.tolist())))
    _log(f"clustered {labels.shape[0]} points into {int(labels.max()) + 1} clusters")
    return 0


def _similarity_for(args, hin, pathset_default, anchors=None):
    if args.pathset:
        pathset = metapath.load_pathset(args.pathset)
    else:
        pathset = pathset_default
    weights = (metapath.load_weights(args.weights) if args.weights
               else metapath.uniform_weights(len(pathset)))
    if weights.shape[0] != len(pathset):
        raise ValueError("weights length does not match the meta-path set")
    mats = metapath.per_path_similarity_matrices(hin, pathset, anchors=anchors)
    return metapath.combine_similarities(mats, weights)


def _cmd_detect(args) -> int:
    hin = load_hin(args.hin)
    sim = _similarity_for(args, hin, metapath.default_detection_pathset())
    dm = clustering.from_similarity(sim, threads=args.threads)
    labels = clustering.dbscan(dm, args.eps, args.min_pts, args.threads)
    ids = [hin.key_of(NodeType.EVENT_INSTANCE, i) for i in range(labels.shape[0])]
    _write_labels(args.out, list(zip(ids, labels.tolist())))
    _log(f"detected {int(labels.max()) + 1} events over {labels.shape[0]} instances")
    return 0


def _cmd_evolve(args) -> int:
    hin = load_hin(args.hin)
    event_labels = _read_labels(args.event_labels)
    assignments = {}
    for rid, event_id in event_labels.items():
        idx = hin.index_of(NodeType.EVENT_INSTANCE, rid)
        if idx is None:
            raise ValueError(f"label references unknown record {rid!r}")
        assignments[idx] = event_id
    layered = build_event_layer(hin, assignments)
    sim = _similarity_for(args, layered, metapath.default_evolution_pathset())
    dm = clustering.from_similarity(sim, threads=args.threads)
    labels = clustering.dbscan(dm, args.eps, args.min_pts, args.threads)
    ids = [layered.key_of(NodeType.EVENT, i) for i in range(labels.shape[0])]
    _write_labels(args.out, list(zip(ids, labels.tolist())))
    _log(f"linked {labels.shape[0]} events into {int(labels.max()) + 1} chains")
    return 0


_STREAM_KEYS = {
    "slice_mins": 30, "t1_hours": 24.0, "t2_days": 7.0, "top_k": 50,
    "detect_epsilon": clustering.DETECTION_EPSILON,
    "evolve_epsilon": clustering.EVOLUTION_EPSILON,
    "min_pts": 1, "threads": 1, "seed": 0, "retention_days": None,
    "slice_retrieval_cap": 2000, "detect_weights_file": None,
    "evolve_weights_file": None, "detect_max_path_len": 4,
    "evolve_max_path_len": 6, "enrich_dir": None,
}


def _stream_config(values: dict) -> streaming.StreamConfig:
    retrieval = streaming.RetrievalConfig(
        t1=float(values["t1_hours"]) * 3600.0,
        t2=float(values["t2_days"]) * 86400.0,
        top_k=int(values["top_k"]),
    )
    detection_paths = metapath.default_detection_pathset(int(values["detect_max_path_len"]))
    evolution_paths = metapath.default_evolution_pathset(int(values["evolve_max_path_len"]))
    detect_weights = (metapath.load_weights(values["detect_weights_file"])
                      if values["detect_weights_file"] else None)
    evolve_weights = (metapath.load_weights(values["evolve_weights_file"])
                      if values["evolve_weights_file"] else None)
    retention = (float(values["retention_days"]) * 86400.0
                 if values["retention_days"] is not None else None)
    enrichment = load_enrichment_dir(values["enrich_dir"]) if values["enrich_dir"] else None
    return streaming.StreamConfig(
        slice_width=int(values["slice_mins"]) * 60,
        retrieval=retrieval,
        detect_epsilon=float(values["detect_epsilon"]),
        evolve_epsilon=float(values["evolve_epsilon"]),
        min_pts=int(values["min_pts"]),
        threads=int(values["threads"]),
        seed=int(values["seed"]),
        retention=retention,
        slice_retrieval_cap=int(values["slice_retrieval_cap"]),
        detect_weights=detect_weights,
        evolve_weights=evolve_weights,
        detection_paths=detection_paths,
        evolution_paths=evolution_paths,
        enrichment=enrichment,
    )


def _cmd_stream_replay(args) -> int:
    import os

    values = _load_config(args.config, dict(_STREAM_KEYS))
    config = _stream_config(values)
    records, errors = parse_corpus(args.corpus)
    for err in errors:
        _log(f"parse: {err}")
    labels_dir = args.labels_dir or args.report + ".labels"
    os.makedirs(labels_dir, exist_ok=True)
    with open(args.report, "w", encoding="utf-8") as report_fh:
        def on_slice(report, assignment):
            path = os.path.join(labels_dir, f"slice_{report.t}.tsv")
            _write_labels(path, sorted(assignment.items()))
            report.labels_path = path
            report_fh.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")

        reports, session = streaming.run_stream(records, config, on_slice=on_slice)
    for note in session.diagnostics:
        _log(note)
    _log(f"processed {len(reports)} slices, {session.next_event_id} events, "
         f"{session.next_chain_id} chains")
    return 0


def _cmd_eval(args) -> int:
    if args.metric == "nmi":
        pred = _read_labels(args.pred)
        truth = _read_labels(args.truth)
        if set(pred) != set(truth):
            raise ValueError("prediction and truth label files cover different ids")
        keys = sorted(pred)
        value = evaluation.nmi([pred[k] for k in keys], [truth[k] for k in keys])
        print(f"{value:.6f}")
        return 0
    if args.metric == "sweep":
        sim = np.load(args.similarities)
        pairs = []
        with open(args.pairs, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    i, j, same = line.split()
                    pairs.append((int(i), int(j), same not in ("0", "false", "False")))
        result = evaluation.threshold_sweep(sim, pairs, step=args.step)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                for th, acc in zip(result.thresholds, result.accuracies):
                    fh.write(f"{th:.2f}\t{acc:.6f}\n")
        print(f"best_threshold\t{result.best_threshold:.2f}")
        print(f"epsilon\t{result.best_epsilon:.2f}")
        return 0
    return _cmd_generate(args)  # eval generate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hinevent",
                                     description="Event mining over typed message graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded synthetic corpus")
    p.add_argument("--spec", default="default", help="'default' or a JSON spec file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("build-hin", help="build the typed graph from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--enrich", default=None)
    p.add_argument("--slot-mins", type=int, default=DEFAULT_SLOT_SECONDS // 60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_hin)

    p = sub.add_parser("train-weights", help="learn meta-path weights from labels")
    p.add_argument("--hin", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--chain-labels", default=None)
    p.add_argument("--task", choices=("event", "evolution"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-out", default=None)
    p.add_argument("--pathset-out", default=None)
    p.set_defaults(func=_cmd_train_weights)

    p = sub.add_parser("cluster", help="density-cluster a distance matrix (.npy)")
    p.add_argument("--distances", required=True)
    p.add_argument("--eps", type=float, default=clustering.DETECTION_EPSILON)
    p.add_argument("--min-pts", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("detect", help="static event detection on a built graph")
    p.add_argument("--hin", required=True)
    p.add_argument("--pathset", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--eps", type=float, default=clustering.DETECTION_EPSILON)
    p.add_argument("--min-pts", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evolve", help="chain detected events on a built graph")
    p.add_argument("--hin", required=True)
    p.add_argument("--event-labels", required=True)
    p.add_argument("--pathset", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--eps", type=float, default=clustering.EVOLUTION_EPSILON)
    p.add_argument("--min-pts", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("stream-replay", help="replay a corpus slice by slice")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--labels-dir", default=None)
    p.set_defaults(func=_cmd_stream_replay)

    p = sub.add_parser("eval", help="metrics, threshold sweep, corpus generation")
    ev = p.add_subparsers(dest="metric", required=True)
    q = ev.add_parser("nmi")
    q.add_argument("--pred", required=True)
    q.add_argument("--truth", required=True)
    q.set_defaults(func=_cmd_eval, metric="nmi")
    q = ev.add_parser("sweep")
    q.add_argument("--similarities", required=True)
    q.add_argument("--pairs", required=True)
    q.add_argument("--step", type=float, default=0.01)
    q.add_argument("--out", default=None)
    q.set_defaults(func=_cmd_eval, metric="sweep")
    q = ev.add_parser("generate")
    q.add_argument("--spec", default="default")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_eval, metric="generate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return 2
    except (CorpusError, ValueError, OSError, KeyError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
