"""Batch command-line interface.

Subcommands: synth, score, train, eval, fuse, significance, visualness,
correlate. Every command is deterministic given its manifest: all randomness
flows from --seed through named substreams, outputs are written atomically,
and a ``<output>.manifest.json`` records the command line, configuration,
seed and input digests. Exit codes: 0 success, 1 data/I-O error, 2 usage
error.

Curve-producing report paths (eval sweeps, visualness curves and groups)
also render a PNG figure next to the delimited output; pass --no-plot to
skip it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import fusion as fusion_mod
from . import neighbor_models as nm
from . import plots
from . import synth as synth_mod
from . import visualness as vis_mod
from .corpus import Normalizer, preprocess
from .embedding_models import (
    DeviseModel,
    PsiModel,
    TrainConfig,
    conse_embed_image,
    conse_score,
    devise_embed_query,
    load_checkpoint,
    parse_label_predictions,
    save_checkpoint,
    train_devise,
    train_psi,
)
from .errors import (
    AllWordsOutOfVocabulary,
    ConfigError,
    CrossmediaError,
    EmptyAfterPreprocessing,
    EmptyQueryEncoding,
    NoResolvableLabel,
    QuerySetMismatch,
    ZeroVector,
)
from .manifest import ManifestWriter, atomic_output

MODELS = ("image2text", "text2image", "psi", "devise", "conse", "random")

NOISE_STREAM = 31


class UsageError(Exception):
    """Bad flag combination; maps to exit code 2."""


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, NOISE_STREAM])


def _normalizer(args) -> Normalizer:
    kwargs = {}
    if getattr(args, "stopwords", None):
        kwargs["stopwords"] = corpus_mod.read_word_list(args.stopwords)
    if getattr(args, "domain_stopwords", None):
        kwargs["domain_stopwords"] = corpus_mod.read_word_list(args.domain_stopwords)
    if getattr(args, "no_lemma", False):
        kwargs["use_lemma"] = False
    return Normalizer(**kwargs)


def _parse_number_list(text: str, cast=float) -> list:
    """Accepts 'a,b,c' or 'start:stop:step' (stop inclusive)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range syntax is start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise UsageError("range step must be positive")
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(cast(round(v, 10)))
            v += step
        return values
    return [cast(p) for p in text.split(",") if p.strip()]


def _config_snapshot(args, skip=("func", "argv")) -> dict:
    snap = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        snap[key] = str(value) if isinstance(value, Path) else value
    return snap


def _run_labels(paths: list[str], labels_arg: str | None) -> list[str]:
    if labels_arg:
        labels = [p.strip() for p in labels_arg.split(",")]
        if len(labels) != len(paths):
            raise UsageError(f"--labels needs {len(paths)} entries, got {len(labels)}")
    else:
        labels = [Path(p).stem for p in paths]
    if len(set(labels)) != len(labels):
        raise UsageError("run labels are not unique; pass --labels")
    return labels


def _pools_from_pairs(pairs: list[tuple[str, str, str]]):
    qtext: dict[str, str] = {}
    pools: dict[str, list[str]] = {}
    seen: set[tuple[str, str]] = set()
    for qid, text, img in pairs:
        qtext.setdefault(qid, text)
        if (qid, img) not in seen:
            pools.setdefault(qid, []).append(img)
            seen.add((qid, img))
    return qtext, pools


def _feature(store: corpus_mod.FeatureStore, image_id: str) -> np.ndarray:
    if image_id not in store:
        raise CrossmediaError(f"no feature vector for image {image_id!r}")
    return store.vector(image_id)


# ---------------------------------------------------------------- score


def _score_pools(args, norm, man) -> fusion_mod.ScoreTable:
    pairs = corpus_mod.read_query_pairs(args.pairs)
    man.add_input(args.pairs)
    qtext, pools = _pools_from_pairs(pairs)
    if args.noise:
        try:
            judgments = corpus_mod.parse_judgments(args.pairs, strict=True)
        except CrossmediaError as exc:
            raise UsageError(
                f"--noise needs the 4-column judgments layout as --pairs ({exc})"
            ) from exc
        noise_seed = args.noise_seed if args.noise_seed is not None else args.seed
        pools = eval_mod.inject_noise(pools, args.noise, judgments, _noise_rng(noise_seed))

    bags: dict[str, corpus_mod.BagOfWords | None] = {}
    empty_queries = 0
    for qid, text in qtext.items():
        try:
            bags[qid] = preprocess(text, norm)
        except EmptyAfterPreprocessing:
            bags[qid] = None
            empty_queries += 1
    if empty_queries:
        print(
            f"crossmedia: warning: {empty_queries} queries normalized to nothing; scored 0",
            file=sys.stderr,
        )

    model = args.model
    if model == "random":
        table = eval_mod.random_scores(pools, args.seed)
        table.model_id = "random"
        return table

    scores: dict[tuple[str, str], float] = {}
    unscorable = 0

    if model in ("image2text", "text2image"):
        if not args.click_log or not args.features:
            raise UsageError(f"{model} needs --click-log and --features")
        log = corpus_mod.parse_click_log(args.click_log, norm, strict=args.strict)
        store = corpus_mod.parse_features(
            args.features, binary=args.binary_features, strict=args.strict
        )
        man.add_input(args.click_log)
        man.add_input(args.features)
        cfg = nm.NeighborModelConfig(
            k_i2t=args.k or 50,
            k_t2i=args.k or 30,
            k_prime=args.k_prime,
            visual_sim=args.visual_sim,
        )

        def score_query(qid: str) -> list[tuple[str, str, float]]:
            bag = bags[qid]
            imgs = pools[qid]
            if bag is None:
                return [(qid, img, 0.0) for img in imgs]
            if model == "text2image":
                profile = nm.build_profile(bag, qtext[qid], log, cfg)
                return [
                    (qid, img, nm.score_text2image(_feature(store, img), profile, store, cfg))
                    for img in imgs
                ]
            return [
                (qid, img, nm.score_image2text(_feature(store, img), bag, log, store, cfg))
                for img in imgs
            ]

    elif model in ("psi", "devise"):
        if not args.checkpoint:
            raise UsageError(f"{model} needs --checkpoint")
        if not args.features:
            raise UsageError(f"{model} needs --features")
        store = corpus_mod.parse_features(
            args.features, binary=args.binary_features, strict=args.strict
        )
        man.add_input(args.features)
        man.add_input(args.checkpoint)
        table = None
        if model == "devise":
            if not args.embeddings:
                raise UsageError("devise needs --embeddings")
            table = corpus_mod.parse_embeddings(args.embeddings, strict=args.strict)
            man.add_input(args.embeddings)
        ckpt = load_checkpoint(args.checkpoint, table)
        if model == "psi" and not isinstance(ckpt, PsiModel):
            raise ConfigError("checkpoint is not a PSI model")
        if model == "devise" and not isinstance(ckpt, DeviseModel):
            raise ConfigError("checkpoint is not a DeViSE model")

        def _query_embedding(bag) -> np.ndarray | None:
            try:
                if isinstance(ckpt, PsiModel):
                    return ckpt.embed_query(bag)
                return devise_embed_query(bag, ckpt.table)
            except (EmptyQueryEncoding, AllWordsOutOfVocabulary):
                return None

        def score_query(qid: str) -> list[tuple[str, str, float]]:
            bag = bags[qid]
            imgs = pools[qid]
            phi = _query_embedding(bag) if bag is not None else None
            if phi is None:
                return [(qid, img, 0.0) for img in imgs]
            mat = np.stack([_feature(store, img) for img in imgs])
            vals = (mat @ ckpt.W_i.T) @ phi
            return [(qid, img, float(v)) for img, v in zip(imgs, vals)]

    elif model == "conse":
        if not args.embeddings or not args.label_predictions:
            raise UsageError("conse needs --embeddings and --label-predictions")
        table = corpus_mod.parse_embeddings(args.embeddings, strict=args.strict)
        preds = parse_label_predictions(args.label_predictions, strict=args.strict)
        man.add_input(args.embeddings)
        man.add_input(args.label_predictions)
        emb_cache: dict[str, np.ndarray | None] = {}

        def _image_embedding(img: str) -> np.ndarray | None:
            if img not in emb_cache:
                pred = preds.get(img)
                if pred is None:
                    emb_cache[img] = None
                else:
                    try:
                        emb_cache[img] = conse_embed_image(pred, table)
                    except NoResolvableLabel:
                        emb_cache[img] = None
            return emb_cache[img]

        for imgs in pools.values():
            for img in imgs:
                _image_embedding(img)

        def score_query(qid: str) -> list[tuple[str, str, float]]:
            bag = bags[qid]
            imgs = pools[qid]
            try:
                phi = devise_embed_query(bag, table) if bag is not None else None
            except AllWordsOutOfVocabulary:
                phi = None
            out = []
            for img in imgs:
                emb = _image_embedding(img)
                if phi is None or emb is None:
                    out.append((qid, img, 0.0))
                    continue
                try:
                    out.append((qid, img, conse_score(emb, phi)))
                except ZeroVector:
                    out.append((qid, img, 0.0))
            return out

    else:  # pragma: no cover - argparse choices guard this
        raise UsageError(f"unknown model {model!r}")

    qids = sorted(pools)
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(score_query, qids))
    else:
        results = [score_query(qid) for qid in qids]
    for rows in results:
        for qid, img, score in rows:
            if (qid, img) not in scores:
                scores[(qid, img)] = score
                if score == 0.0 and bags.get(qid) is None:
                    unscorable += 1
    if unscorable:
        print(
            f"crossmedia: warning: {unscorable} pairs scored 0 for unscorable queries",
            file=sys.stderr,
        )
    return fusion_mod.ScoreTable(model, scores)


def cmd_score(args) -> None:
    norm = _normalizer(args)
    man = ManifestWriter("score", args.argv, args.seed, _config_snapshot(args))
    if args.sweep_k:
        if args.model not in ("image2text", "text2image"):
            raise UsageError("--sweep-k only applies to image2text and text2image")
        if "{k}" not in str(args.out):
            raise UsageError("--sweep-k needs '{k}' in --out, e.g. run.k{k}.tsv")
        ks = _parse_number_list(args.sweep_k, int)
        for k in ks:
            sub = argparse.Namespace(**vars(args))
            sub.k = k
            table = _score_pools(sub, norm, man)
            out = Path(str(args.out).replace("{k}", str(k)))
            with atomic_output(out) as tmp:
                fusion_mod.write_run_file(table, tmp)
            man.add_output(out)
        manifest_path = Path(str(args.out).replace("{k}", "sweep") + ".manifest.json")
        man.write(manifest_path)
        return
    table = _score_pools(args, norm, man)
    with atomic_output(args.out) as tmp:
        fusion_mod.write_run_file(table, tmp)
    man.add_output(args.out)
    man.write(Path(str(args.out) + ".manifest.json"))


# ---------------------------------------------------------------- train


def cmd_train(args) -> None:
    norm = _normalizer(args)
    man = ManifestWriter("train", args.argv, args.seed, _config_snapshot(args))
    log = corpus_mod.parse_click_log(args.click_log, norm, strict=args.strict)
    store = corpus_mod.parse_features(
        args.features, binary=args.binary_features, strict=args.strict
    )
    man.add_input(args.click_log)
    man.add_input(args.features)
    if args.model == "psi":
        cfg = TrainConfig(
            d_c=args.dc,
            batch=args.batch,
            lr0=args.lr0,
            decay=args.decay,
            epochs=args.epochs,
            seed=args.seed,
        )
        model, losses = train_psi(log, store, cfg)
    else:
        if not args.embeddings:
            raise UsageError("devise needs --embeddings")
        table = corpus_mod.parse_embeddings(args.embeddings, strict=args.strict)
        man.add_input(args.embeddings)
        d_c = args.dc if args.dc_given else table.dim
        cfg = TrainConfig(
            d_c=d_c,
            batch=args.batch,
            lr0=args.lr0,
            decay=args.decay,
            epochs=args.epochs,
            seed=args.seed,
        )
        model, losses = train_devise(log, store, table, cfg)
    with atomic_output(args.out) as tmp:
        save_checkpoint(model, tmp)
    man.add_output(args.out)
    loss_path = Path(str(args.out) + ".loss.tsv")
    with atomic_output(loss_path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch\tmean_loss\n")
            for epoch, loss in enumerate(losses):
                fh.write(f"{epoch}\t{loss!r}\n")
    man.add_output(loss_path)
    man.write(Path(str(args.out) + ".manifest.json"))


# ---------------------------------------------------------------- eval


def _overall_metric(table, pools, judgments, metric, cutoff):
    run = eval_mod.rank_images(table, pools)
    if metric == "ndcg":
        return eval_mod.mean_ndcg(run, judgments, cutoff)
    return eval_mod.mean_average_precision(run, judgments)


def cmd_eval(args) -> None:
    man = ManifestWriter("eval", args.argv, args.seed, _config_snapshot(args))
    judgments = corpus_mod.parse_judgments(args.judgments, strict=args.strict)
    man.add_input(args.judgments)
    labels = _run_labels(args.run, args.labels)
    tables = []
    for path, label in zip(args.run, labels):
        tables.append(fusion_mod.read_run_file(path, label))
        man.add_input(path)
    noise_seed = args.noise_seed if args.noise_seed is not None else args.seed
    metric_label = f"ndcg{args.cutoff}" if args.metric == "ndcg" else "map"

    if args.noise_sweep:
        hs = _parse_number_list(args.noise_sweep, int)
        jpools = judgments.pools()
        series: dict[str, list[float]] = {label: [] for label in labels}
        for h in hs:
            pools = eval_mod.inject_noise(jpools, h, judgments, _noise_rng(noise_seed))
            for table, label in zip(tables, labels):
                sub = {q: pools[q] for q in table.pools() if q in pools}
                overall, _ = _overall_metric(table, sub, judgments, args.metric, args.cutoff)
                series[label].append(overall)
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("h\t" + "\t".join(labels) + "\n")
                for i, h in enumerate(hs):
                    row = "\t".join(repr(series[label][i]) for label in labels)
                    fh.write(f"{h}\t{row}\n")
        man.add_output(args.out)
        if not args.no_plot:
            png = Path(str(args.out) + ".png")
            plots.save_line_chart(png, hs, series, "noise level h", metric_label)
            man.add_output(png)
        man.write(Path(str(args.out) + ".manifest.json"))
        return

    if args.cutoff_sweep:
        if args.metric != "ndcg":
            raise UsageError("--cutoff-sweep only applies to the ndcg metric")
        cutoffs = _parse_number_list(args.cutoff_sweep, int)
        series = {label: [] for label in labels}
        for table, label in zip(tables, labels):
            if args.noise is not None:
                pools = eval_mod.inject_noise(
                    judgments.pools(), args.noise, judgments, _noise_rng(noise_seed)
                )
                pools = {q: pools[q] for q in table.pools() if q in pools}
            else:
                pools = table.pools()
            for cutoff in cutoffs:
                overall, _ = _overall_metric(table, pools, judgments, "ndcg", cutoff)
                series[label].append(overall)
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("cutoff\t" + "\t".join(labels) + "\n")
                for i, cutoff in enumerate(cutoffs):
                    row = "\t".join(repr(series[label][i]) for label in labels)
                    fh.write(f"{cutoff}\t{row}\n")
        man.add_output(args.out)
        if not args.no_plot:
            png = Path(str(args.out) + ".png")
            plots.save_line_chart(png, cutoffs, series, "rank cutoff", "ndcg")
            man.add_output(png)
        man.write(Path(str(args.out) + ".manifest.json"))
        return

    per_run: dict[str, tuple[float, dict[str, float]]] = {}
    for table, label in zip(tables, labels):
        if args.noise is not None:
            pools = eval_mod.inject_noise(
                judgments.pools(), args.noise, judgments, _noise_rng(noise_seed)
            )
            pools = {q: pools[q] for q in table.pools() if q in pools}
        else:
            pools = table.pools()
        per_run[label] = _overall_metric(table, pools, judgments, args.metric, args.cutoff)
    query_sets = [set(pq.keys()) for _, pq in per_run.values()]
    if any(qs != query_sets[0] for qs in query_sets[1:]):
        raise QuerySetMismatch("runs cover different query sets; evaluate them separately")

    if args.json:
        payload = {
            "metric": metric_label,
            "runs": {
                label: {"overall": overall, "per_query": dict(sorted(pq.items()))}
                for label, (overall, pq) in per_run.items()
            },
        }
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
    else:
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                if len(labels) == 1:
                    fh.write(f"query_id\t{metric_label}\n")
                else:
                    fh.write("query_id\t" + "\t".join(labels) + "\n")
                for qid in sorted(query_sets[0]):
                    row = "\t".join(repr(per_run[label][1][qid]) for label in labels)
                    fh.write(f"{qid}\t{row}\n")
                fh.write("ALL\t" + "\t".join(repr(per_run[label][0]) for label in labels) + "\n")
    man.add_output(args.out)
    man.write(Path(str(args.out) + ".manifest.json"))
    for label in labels:
        print(f"{label}\t{metric_label}\t{per_run[label][0]:.6f}")


# ---------------------------------------------------------------- fuse


def cmd_fuse(args) -> None:
    man = ManifestWriter("fuse", args.argv, args.seed, _config_snapshot(args))
    labels = _run_labels(args.run, args.labels)
    tables = []
    for path, label in zip(args.run, labels):
        tables.append(fusion_mod.read_run_file(path, label))
        man.add_input(path)
    if args.weights and args.learn:
        raise UsageError("pass either --weights or --learn, not both")
    if args.learn:
        if not args.judgments:
            raise UsageError("--learn needs --judgments")
        judgments = corpus_mod.parse_judgments(args.judgments, strict=args.strict)
        man.add_input(args.judgments)
        cfg = fusion_mod.CoordinateAscentConfig(
            restarts=args.restarts,
            steps_per_dim=args.steps_per_dim,
            sweeps=args.sweeps,
            seed=args.seed,
        )
        weights = fusion_mod.coordinate_ascent(
            tables, judgments, args.metric, cfg, args.cutoff, args.znorm
        )
    elif args.weights:
        weights = fusion_mod.read_weights(args.weights)
        man.add_input(args.weights)
    else:
        weights = fusion_mod.FusionWeights({t.model_id: 1.0 / len(tables) for t in tables})
    fused = fusion_mod.fuse(tables, weights, args.znorm)
    with atomic_output(args.out) as tmp:
        fusion_mod.write_run_file(fused, tmp)
    man.add_output(args.out)
    weights_out = args.weights_out or Path(str(args.out) + ".weights.tsv")
    with atomic_output(weights_out) as tmp:
        fusion_mod.write_weights(weights, tmp)
    man.add_output(weights_out)
    man.write(Path(str(args.out) + ".manifest.json"))
    for model_id in sorted(weights.weights):
        print(f"{model_id}\t{weights.weights[model_id]:.6f}")


# ---------------------------------------------------------------- significance


def cmd_significance(args) -> None:
    man = ManifestWriter("significance", args.argv, args.seed, _config_snapshot(args))
    a, _ = eval_mod.read_per_query_report(args.report_a)
    b, _ = eval_mod.read_per_query_report(args.report_b)
    man.add_input(args.report_a)
    man.add_input(args.report_b)
    exhaustive = {"auto": None, "always": True, "never": False}[args.exhaustive]
    result = eval_mod.randomization_test(
        a, b, trials=args.trials, seed=args.seed, variant=args.variant, exhaustive=exhaustive
    )
    rows = [
        ("diff", repr(result.diff)),
        ("trials", str(result.trials)),
        ("p_value", repr(result.p_value)),
        ("significant@0.05", str(result.significant).lower()),
        ("method", result.method),
    ]
    with atomic_output(args.out) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            if args.json:
                json.dump(
                    {
                        "diff": result.diff,
                        "trials": result.trials,
                        "p_value": result.p_value,
                        "significant@0.05": result.significant,
                        "method": result.method,
                    },
                    fh,
                    indent=2,
                    sort_keys=True,
                )
                fh.write("\n")
            else:
                for key, value in rows:
                    fh.write(f"{key}\t{value}\n")
    man.add_output(args.out)
    man.write(Path(str(args.out) + ".manifest.json"))
    print(f"diff={result.diff:.6f} p={result.p_value:.4f} method={result.method}")


# ---------------------------------------------------------------- visualness


def cmd_visualness(args) -> None:
    norm = _normalizer(args)
    man = ManifestWriter("visualness", args.argv, args.seed, _config_snapshot(args))
    vocab = vis_mod.ConceptVocabulary.from_file(args.vocab, norm)
    man.add_input(args.vocab)
    if (args.log is None) == (args.queries is None):
        raise UsageError("pass exactly one of --log or --queries")

    if args.curve:
        if args.log is None:
            raise UsageError("--curve needs --log (click counts come from the log)")
        log = corpus_mod.parse_click_log(args.log, norm, strict=args.strict)
        man.add_input(args.log)
        thresholds = _parse_number_list(args.thresholds)
        unweighted = vis_mod.visual_percentage_curve(log, vocab, thresholds, weighted=False)
        weighted = (
            vis_mod.visual_percentage_curve(log, vocab, thresholds, weighted=True)
            if args.weighted
            else None
        )
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                header = "threshold\tpercentage"
                if weighted:
                    header += "\tweighted_percentage"
                fh.write(header + "\n")
                for i, (t, p) in enumerate(unweighted):
                    row = f"{t!r}\t{p!r}"
                    if weighted:
                        row += f"\t{weighted[i][1]!r}"
                    fh.write(row + "\n")
        man.add_output(args.out)
        if not args.no_plot:
            series = {"unweighted": [p for _, p in unweighted]}
            if weighted:
                series["click-weighted"] = [p for _, p in weighted]
            png = Path(str(args.out) + ".png")
            plots.save_line_chart(
                png, thresholds, series, "visualness threshold", "visual-oriented fraction"
            )
            man.add_output(png)
        man.write(Path(str(args.out) + ".manifest.json"))
        return

    queries: dict[str, corpus_mod.BagOfWords] = {}
    display: dict[str, str] = {}
    skipped = 0
    if args.log is not None:
        log = corpus_mod.parse_click_log(args.log, norm, strict=args.strict)
        man.add_input(args.log)
        for key, bag in log.query_bags.items():
            qid = " ".join(key)
            queries[qid] = bag
            display[qid] = bag.text()
    else:
        man.add_input(args.queries)
        with open(args.queries, encoding="utf-8") as fh:
            for line in fh:
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                try:
                    bag = preprocess(text, norm)
                except EmptyAfterPreprocessing:
                    skipped += 1
                    continue
                queries.setdefault(text, bag)
                display[text] = text
    if skipped:
        print(f"crossmedia: warning: {skipped} queries normalized to nothing", file=sys.stderr)

    if args.group_edges:
        edges = _parse_number_list(args.group_edges)
        bins = vis_mod.group_by_visualness(queries, vocab, edges)
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("lo\thi\tcount\tquery_ids\n")
                for b in bins:
                    fh.write(f"{b.lo!r}\t{b.hi!r}\t{len(b.query_ids)}\t{','.join(b.query_ids)}\n")
        man.add_output(args.out)
        if not args.no_plot:
            png = Path(str(args.out) + ".png")
            bin_labels = [
                f"[{b.lo:g}, {b.hi:g}{']' if b.closed_right else ')'}" for b in bins
            ]
            plots.save_bar_chart(
                png,
                bin_labels,
                [len(b.query_ids) for b in bins],
                "visualness bin",
                "queries",
            )
            man.add_output(png)
        man.write(Path(str(args.out) + ".manifest.json"))
        return

    with atomic_output(args.out) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            header = "query\tvisualness\tmatched"
            if args.threshold is not None:
                header += "\tclass"
            fh.write(header + "\n")
            for qid in sorted(queries):
                report = vis_mod.visualness(queries[qid], vocab)
                matched = "|".join(phrase for _, _, phrase in report.matched_spans)
                row = f"{display[qid]}\t{report.score!r}\t{matched}"
                if args.threshold is not None:
                    label = (
                        vis_mod.VISUAL
                        if report.score > args.threshold
                        else vis_mod.NONVISUAL
                    )
                    row += f"\t{label}"
                fh.write(row + "\n")
    man.add_output(args.out)
    man.write(Path(str(args.out) + ".manifest.json"))


# ---------------------------------------------------------------- correlate


def cmd_correlate(args) -> None:
    norm = _normalizer(args)
    man = ManifestWriter("correlate", args.argv, args.seed, _config_snapshot(args))
    per_query, _ = eval_mod.read_per_query_report(args.report)
    man.add_input(args.report)
    judgments = corpus_mod.parse_judgments(args.judgments, strict=args.strict)
    man.add_input(args.judgments)
    vocab = None
    if args.property == "visualness":
        if not args.vocab:
            raise UsageError("--property visualness needs --vocab")
        vocab = vis_mod.ConceptVocabulary.from_file(args.vocab, norm)
        man.add_input(args.vocab)
    xs, ys = [], []
    skipped = 0
    for qid in sorted(per_query):
        text = judgments.query_text.get(qid)
        if text is None:
            raise QuerySetMismatch(f"report query {qid!r} absent from judgments")
        try:
            bag = preprocess(text, norm)
        except EmptyAfterPreprocessing:
            skipped += 1
            continue
        if args.property == "visualness":
            prop = vis_mod.visualness(bag, vocab).score
        else:
            prop = 1.0 / len(bag)
        xs.append(per_query[qid])
        ys.append(prop)
    if skipped:
        print(f"crossmedia: warning: {skipped} queries normalized to nothing", file=sys.stderr)
    rho = eval_mod.spearman(xs, ys)
    with atomic_output(args.out) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            if args.json:
                json.dump(
                    {"property": args.property, "n": len(xs), "spearman": rho},
                    fh,
                    indent=2,
                    sort_keys=True,
                )
                fh.write("\n")
            else:
                fh.write("property\tn\tspearman\n")
                fh.write(f"{args.property}\t{len(xs)}\t{rho!r}\n")
    man.add_output(args.out)
    man.write(Path(str(args.out) + ".manifest.json"))
    print(f"{args.property}\tn={len(xs)}\tspearman={rho:.4f}")


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> None:
    man = ManifestWriter("synth", args.argv, args.seed, _config_snapshot(args))
    cfg = synth_mod.SynthConfig(
        clusters=args.clusters,
        queries=args.queries,
        images=args.images,
        vocab_size=args.vocab_size,
        feature_dim=args.feature_dim,
        embedding_dim=args.embedding_dim,
        seed=args.seed,
    )
    corpus = synth_mod.generate(cfg)
    paths = synth_mod.write_corpus(corpus, args.out_dir)
    for path in paths.values():
        man.add_output(path)
    man.config["synth"] = asdict(cfg)
    man.write(Path(args.out_dir) / "manifest.json")
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    common.add_argument("--threads", type=int, default=1, help="worker threads for scoring")
    common.add_argument("--strict", action="store_true", help="malformed input lines are fatal")

    text = argparse.ArgumentParser(add_help=False)
    text.add_argument("--no-lemma", action="store_true", help="skip suffix lemmatization")
    text.add_argument("--stopwords", type=Path, help="replacement stopword list file")
    text.add_argument("--domain-stopwords", type=Path, help="replacement domain stopword file")

    parser = argparse.ArgumentParser(
        prog="crossmedia",
        description="Cross-media similarity scoring, fusion and evaluation over click logs.",
    )
    from . import __version__

    parser.add_argument("--version", action="version", version=f"crossmedia {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common, text], help="score (query, image) pairs")
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--pairs", required=True, type=Path, help="judgments or 3-column pair file")
    p.add_argument("--out", required=True, type=Path, help="run file to write")
    p.add_argument("--click-log", type=Path)
    p.add_argument("--features", type=Path)
    p.add_argument("--binary-features", action="store_true")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--label-predictions", type=Path)
    p.add_argument("--k", type=int, help="neighbor count override for the baselines")
    p.add_argument("--k-prime", type=int, default=100, help="candidate image cap")
    p.add_argument("--visual-sim", choices=("inv_euclidean", "cosine"), default="inv_euclidean")
    p.add_argument("--sweep-k", help="k values, e.g. 10:150:20; --out must contain {k}")
    p.add_argument("--noise", type=int, help="score pools with h-fold injected noise")
    p.add_argument("--noise-seed", type=int, help="noise stream seed (defaults to --seed)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", parents=[common, text], help="train psi or devise")
    p.add_argument("--model", required=True, choices=("psi", "devise"))
    p.add_argument("--click-log", required=True, type=Path)
    p.add_argument("--features", required=True, type=Path)
    p.add_argument("--binary-features", action="store_true")
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--out", required=True, type=Path, help="checkpoint to write")
    p.add_argument("--dc", type=int, default=200, help="common space dimensionality")
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--lr0", type=float, default=0.01)
    p.add_argument("--decay", type=float, default=0.95)
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate run files")
    p.add_argument("--run", action="append", required=True, help="run file (repeatable)")
    p.add_argument("--labels", help="comma-separated run labels")
    p.add_argument("--judgments", required=True, type=Path)
    p.add_argument("--metric", choices=("ndcg", "map"), default="ndcg")
    p.add_argument("--cutoff", type=int, default=25)
    p.add_argument("--noise", type=int, help="evaluate under h-fold injected noise")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--noise-sweep", help="h values, e.g. 0,1,2,5,10")
    p.add_argument("--cutoff-sweep", help="cutoffs, e.g. 5:50:5")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--json", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", parents=[common], help="late-fuse run files")
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--weights", type=Path, help="weights file to apply")
    p.add_argument("--learn", action="store_true", help="learn weights by coordinate ascent")
    p.add_argument("--judgments", type=Path)
    p.add_argument("--metric", choices=("ndcg", "map"), default="ndcg")
    p.add_argument("--cutoff", type=int, default=25)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--steps-per-dim", type=int, default=21)
    p.add_argument("--sweeps", type=int, default=25)
    p.add_argument("--znorm", action="store_true", help="z-normalize scores before the sigmoid")
    p.add_argument("--weights-out", type=Path)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser(
        "significance", parents=[common], help="randomization test on two per-query reports"
    )
    p.add_argument("--report-a", required=True, type=Path)
    p.add_argument("--report-b", required=True, type=Path)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument(
        "--variant",
        choices=("half", "paper", "flip"),
        default="half",
        help="half: swap half the queries per trial (paper accepted as an "
        "alias); flip: swap each query independently",
    )
    p.add_argument("--exhaustive", choices=("auto", "always", "never"), default="auto")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("visualness", parents=[common, text], help="query visualness analytics")
    p.add_argument("--vocab", required=True, type=Path, help="concept vocabulary file")
    p.add_argument("--log", type=Path, help="click log (distinct queries)")
    p.add_argument("--queries", type=Path, help="plain query list, one per line")
    p.add_argument("--threshold", type=float, help="adds a visual/nonvisual class column")
    p.add_argument("--curve", action="store_true", help="visual percentage vs threshold")
    p.add_argument("--weighted", action="store_true", help="add the click-weighted curve")
    p.add_argument("--thresholds", default="0:0.95:0.05")
    p.add_argument("--group-edges", help="bin edges, e.g. 0,0.2,0.4,0.6,0.8,1")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_visualness)

    p = sub.add_parser(
        "correlate", parents=[common, text], help="rank correlation of metric vs query property"
    )
    p.add_argument("--report", required=True, type=Path, help="per-query eval report")
    p.add_argument("--property", required=True, choices=("visualness", "inv-length"))
    p.add_argument("--judgments", required=True, type=Path, help="source of query texts")
    p.add_argument("--vocab", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("synth", parents=[common], help="generate a planted-relevance corpus")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=150)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--embedding-dim", type=int, default=16)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train":
        args.dc_given = any(a == "--dc" or a.startswith("--dc=") for a in argv)
    args.argv = argv
    try:
        args.func(args)
    except UsageError as exc:
        print(f"crossmedia: usage error: {exc}", file=sys.stderr)
        return 2
    except (CrossmediaError, OSError) as exc:
        print(f"crossmedia: error: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
