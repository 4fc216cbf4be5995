"""Command-line front end: ingest, train, eval, sweep, cost, knn.

Every training run lands in its own directory holding the model artifacts,
the split labels, a training-log CSV, and `config.resolved` (the full flat
key=value configuration the run actually used).  The same flat format works
as a `--config` input file; explicit command-line flags override it.

Exit codes: 0 success, 2 configuration or input error, 3 training
divergence, 4 corrupted or mismatched artifact.
"""

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import datasets
from .baselines import (
    OrderModel,
    VecConfig,
    VecModel,
    bin_sketch,
    embed_order,
    embed_vectors,
    load_pq,
    load_sketch,
    pq_discretize,
    save_pq,
    save_sketch,
    train_order,
    train_pq_boxes,
    train_vec,
)
from .corpus import load_corpus, save_corpus, save_split, split_corpus
from .errors import ArtifactError, ConfigError, TrainingDiverged
from .evaluate import (
    BinRepr,
    BoxRepr,
    ExactRepr,
    OrderRepr,
    VecRepr,
    mse_eval,
    quality_at_k,
    timing_probe,
    write_eval_csv,
    write_quality_csv,
)
from .io import write_sidecar
from .measures import MEASURES, canonical_measure
from .model import EntityEmbeddings, TrainConfig, embed_sets, train
from .quantize import (
    QuantTrainConfig,
    discretize,
    encoding_cost,
    load_codebook,
    save_codebook,
    train_quantized,
)

logger = logging.getLogger(__name__)

METHODS = ("set2box", "set2box+", "set2bin", "set2vec", "set2box-order", "set2box-pq")
OUT_ROOT_ENV = "SET2BOX_OUT"

MODEL_FILE = "model.s2b"
CODEBOOK_FILE = "codebook.s2bq"
PQ_FILE = "pqcodes.s2bp"
SKETCH_FILE = "sketch.s2bn"
SPLIT_FILE = "split.txt"
CONFIG_FILE = "config.resolved"
TRAIN_LOG = "train_log.csv"
EVAL_CSV = "eval.csv"
QUALITY_CSV = "quality.csv"

# one source of truth for option names, types, and defaults
TRAIN_DEFAULTS = {
    "method": "set2box",
    "d": 32,
    "D": 16,
    "K": 30,
    "beta": 2.0,
    "lam": 0.01,
    "tau": 1.0,
    "lr": 0.01,
    "epochs": 30,
    "batch": 512,
    "pos": 10,
    "neg": 10,
    "seed": 0,
    "train_frac": 0.2,
    "split_seed": 0,
    "measure": "ji",
}


def read_config_file(path):
    """Flat key=value lines; '#' starts a comment; unknown keys rejected."""
    out = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            out[key] = value
    return out


def _coerce(key, raw):
    ref = TRAIN_DEFAULTS.get(key)
    if ref is None or isinstance(ref, str):
        return raw
    try:
        if isinstance(ref, int):
            return int(raw)
        if isinstance(ref, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    return raw


def resolve_config(args):
    """Defaults <- config file <- explicit flags, as one flat dict."""
    resolved = dict(TRAIN_DEFAULTS)
    resolved["corpus"] = None
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key != "corpus" and key not in TRAIN_DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = _coerce(key, raw)
    for key in list(TRAIN_DEFAULTS) + ["corpus"]:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if resolved["corpus"] is None:
        raise ConfigError("no corpus path given (flag --corpus or config key)")
    if resolved["method"] not in METHODS:
        raise ConfigError(f"unknown method {resolved['method']!r}")
    resolved["measure"] = canonical_measure(resolved["measure"])
    return resolved


def write_resolved(path, resolved):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key}={resolved[key]}\n")


def load_resolved(run_dir):
    path = os.path.join(run_dir, CONFIG_FILE)
    if not os.path.exists(path):
        raise ArtifactError(f"{run_dir}: missing {CONFIG_FILE}")
    out = {}
    for key, raw in read_config_file(path).items():
        out[key] = _coerce(key, raw)
    return out


def default_run_dir(resolved):
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    name = "{method}-d{d}-seed{seed}".format(**resolved)
    return os.path.join(root, name)


def _train_config(resolved):
    common = dict(
        d=resolved["d"],
        beta=resolved["beta"],
        lr=resolved["lr"],
        batch_size=resolved["batch"],
        epochs=resolved["epochs"],
        num_pos_per_set=resolved["pos"],
        num_neg_per_set=resolved["neg"],
        seed=resolved["seed"],
    )
    method = resolved["method"]
    if method in ("set2box+", "set2box-pq"):
        return QuantTrainConfig(
            num_subspaces=resolved["D"],
            num_keys=resolved["K"],
            lam=resolved["lam"],
            tau=resolved["tau"],
            **common,
        )
    if method == "set2vec":
        return VecConfig(measure=resolved["measure"], **common)
    return TrainConfig(**common)


def _write_train_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "wall_s"])
        for st in history:
            w.writerow([st.epoch, repr(st.mean_loss), repr(st.wall_s)])


def train_run(resolved, run_dir, corpus=None):
    """Train one configuration into ``run_dir``; returns the run dir."""
    if corpus is None:
        corpus = load_corpus(resolved["corpus"])
    if corpus.split is None:
        corpus = split_corpus(corpus, resolved["train_frac"], resolved["split_seed"])
    os.makedirs(run_dir, exist_ok=True)
    write_resolved(os.path.join(run_dir, CONFIG_FILE), resolved)
    save_split(corpus, os.path.join(run_dir, SPLIT_FILE))
    method = resolved["method"]
    history = []
    meta = {k: resolved[k] for k in sorted(resolved) if k != "corpus"}
    if method == "set2bin":
        sketches = bin_sketch(corpus, resolved["d"], resolved["seed"])
        save_sketch(
            os.path.join(run_dir, SKETCH_FILE), sketches, resolved["d"], resolved["seed"]
        )
    elif method == "set2box":
        emb, history = train(corpus, _train_config(resolved))
        emb.save(os.path.join(run_dir, MODEL_FILE))
        write_sidecar(os.path.join(run_dir, MODEL_FILE), meta)
    elif method == "set2box+":
        emb, codebook, history = train_quantized(corpus, _train_config(resolved))
        emb.save(os.path.join(run_dir, MODEL_FILE))
        write_sidecar(os.path.join(run_dir, MODEL_FILE), meta)
        centers, offsets = embed_sets(emb, corpus)
        codes = discretize(centers, offsets, codebook, resolved["beta"])
        save_codebook(os.path.join(run_dir, CODEBOOK_FILE), codebook, codes)
    elif method == "set2box-pq":
        emb, books, history = train_pq_boxes(corpus, _train_config(resolved))
        emb.save(os.path.join(run_dir, MODEL_FILE))
        write_sidecar(os.path.join(run_dir, MODEL_FILE), meta)
        centers, offsets = embed_sets(emb, corpus)
        codes_c, codes_f = pq_discretize(centers, offsets, books)
        save_pq(os.path.join(run_dir, PQ_FILE), books, codes_c, codes_f)
    elif method == "set2vec":
        model, history = train_vec(corpus, _train_config(resolved))
        model.save(os.path.join(run_dir, MODEL_FILE))
        write_sidecar(os.path.join(run_dir, MODEL_FILE), meta)
    elif method == "set2box-order":
        model, history = train_order(corpus, _train_config(resolved))
        model.save(os.path.join(run_dir, MODEL_FILE))
        write_sidecar(os.path.join(run_dir, MODEL_FILE), meta)
    else:  # pragma: no cover - guarded by resolve_config
        raise ConfigError(f"unknown method {method!r}")
    _write_train_log(os.path.join(run_dir, TRAIN_LOG), history)
    return run_dir


def build_representation(run_dir, corpus, resolved=None):
    """Reload a run's artifacts as an estimating representation."""
    if resolved is None:
        resolved = load_resolved(run_dir)
    method = resolved["method"]
    beta = resolved["beta"]

    def check_entities(num):
        if num != corpus.num_entities:
            raise ConfigError(
                f"model was trained over {num} entities, corpus has "
                f"{corpus.num_entities}"
            )

    def check_sets(num):
        if num != corpus.n_sets:
            raise ConfigError(
                f"artifact covers {num} sets, corpus has {corpus.n_sets}"
            )

    if method == "set2bin":
        sketches, d, _seed = load_sketch(os.path.join(run_dir, SKETCH_FILE))
        check_sets(sketches.shape[0])
        return BinRepr(sketches, d)
    if method == "set2box":
        emb = EntityEmbeddings.load(os.path.join(run_dir, MODEL_FILE))
        check_entities(emb.num_entities)
        return BoxRepr.from_model(emb, corpus)
    if method == "set2box+":
        codebook, codes = load_codebook(os.path.join(run_dir, CODEBOOK_FILE))
        check_sets(codes.shape[0])
        return BoxRepr.from_codebook(codebook, codes, beta)
    if method == "set2box-pq":
        books, codes_c, codes_f = load_pq(os.path.join(run_dir, PQ_FILE))
        check_sets(codes_c.shape[0])
        return BoxRepr.from_pq(books, codes_c, codes_f, beta)
    if method == "set2vec":
        model = VecModel.load(os.path.join(run_dir, MODEL_FILE))
        check_entities(model.num_entities)
        return VecRepr(embed_vectors(model, corpus), model.measure)
    if method == "set2box-order":
        model = OrderModel.load(os.path.join(run_dir, MODEL_FILE))
        check_entities(model.num_entities)
        return OrderRepr(embed_order(model, corpus))
    raise ConfigError(f"unknown method {method!r}")


def _load_run_corpus(args, resolved):
    corpus_path = args.corpus or resolved.get("corpus")
    if not corpus_path:
        raise ConfigError("no corpus path on record; pass --corpus")
    split_path = os.path.join(args.run, SPLIT_FILE)
    if not os.path.exists(split_path):
        raise ArtifactError(f"{args.run}: missing {SPLIT_FILE}")
    return load_corpus(corpus_path, split_path=split_path)


def _split_count(corpus, split):
    return corpus.ids_in_split(split).size if split else corpus.n_sets


def _cost_for(resolved, num_sets):
    return encoding_cost(
        resolved["method"],
        num_sets,
        resolved["d"],
        resolved.get("D"),
        resolved.get("K"),
    )


def cmd_ingest(args):
    if args.synthetic:
        if args.synthetic != "ml1m":
            raise ConfigError(f"unknown synthetic preset {args.synthetic!r}")
        corpus = datasets.ml1m_like_corpus(seed=args.seed)
        source = f"synthetic preset {args.synthetic} (seed {args.seed})"
    else:
        if not args.ratings:
            raise ConfigError("ingest needs --ratings or --synthetic")
        corpus = datasets.ingest_movielens(args.ratings, args.min_rating)
        source = args.ratings
    save_corpus(corpus, args.out)
    print(
        f"ingested {source}: {corpus.n_sets} sets over {corpus.num_entities} "
        f"entities ({corpus.members.size} memberships) -> {args.out}"
    )
    return 0


def cmd_train(args):
    resolved = resolve_config(args)
    run_dir = args.out or default_run_dir(resolved)
    train_run(resolved, run_dir)
    print(f"trained {resolved['method']} -> {run_dir}")
    return 0


def _parse_measures(text):
    if not text or text == "all":
        return None
    return tuple(canonical_measure(m) for m in text.split(","))


def _parse_int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _parse_float_list(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def cmd_eval(args):
    resolved = load_resolved(args.run)
    corpus = _load_run_corpus(args, resolved)
    representation = build_representation(args.run, corpus, resolved)
    measures = _parse_measures(args.measures)
    if measures is None:
        measures = representation.measures
    report = mse_eval(
        corpus,
        representation,
        split=args.split,
        num_pairs=args.pairs,
        seed=args.seed,
        measures=measures,
        method=resolved["method"],
    )
    cost = _cost_for(resolved, _split_count(corpus, args.split))
    report.bits_real = cost.real
    report.bits_packed = cost.packed
    out_csv = args.csv_out or os.path.join(args.run, EVAL_CSV)
    write_eval_csv(out_csv, [report])
    for m in measures:
        print(
            f"{resolved['method']} {m} mse={report.mse[m]:.6g} "
            f"bits={cost.real:.6g} pairs={report.pairs} seed={report.seed}"
        )
    if args.knn_k:
        rows = []
        for k in _parse_int_list(args.knn_k):
            res = quality_at_k(
                corpus,
                representation,
                split=args.split,
                k=k,
                num_anchors=args.anchors,
                seed=args.seed,
                measure=args.knn_measure,
            )
            rows.append((resolved["method"], res))
            print(
                f"quality@{k}={res.quality:.4f} over {res.num_anchors} anchors"
                + (f" ({res.num_skipped} skipped)" if res.num_skipped else "")
            )
        write_quality_csv(os.path.join(args.run, QUALITY_CSV), rows)
    if args.timing:
        _print_timing(resolved, corpus)
    print(f"wrote {out_csv}")
    return 0


def _print_timing(resolved, corpus):
    """Constant-time check: per-pair latency by set size, plus the exact
    intersection contrast, on a fixed-size probe corpus."""
    sizes = tuple(
        s for s in (10, 100, 1000) if 2 * s <= corpus.num_entities
    ) or (10,)
    probe_sets = datasets.size_probe_corpus(sizes=sizes, sets_per_size=32, seed=0)
    d = resolved["d"]
    rng = np.random.default_rng(0)
    box = BoxRepr(
        rng.normal(0, 0.3, (probe_sets.n_sets, d)).astype(np.float32),
        rng.uniform(0.05, 0.2, (probe_sets.n_sets, d)).astype(np.float32),
        beta=resolved["beta"],
    )
    tb = timing_probe(box, probe_sets, sizes=sizes, pairs=2048, repeats=5)
    te = timing_probe(ExactRepr(probe_sets), probe_sets, sizes=sizes, pairs=2048, repeats=5)
    for (s, t_box), (_, t_exact) in zip(tb.rows, te.rows):
        print(f"size={s} box={t_box * 1e9:.0f}ns exact={t_exact * 1e9:.0f}ns per pair")
    print(f"latency ratio: box={tb.ratio():.2f} exact={te.ratio():.2f}")


def cmd_knn(args):
    resolved = load_resolved(args.run)
    corpus = _load_run_corpus(args, resolved)
    representation = build_representation(args.run, corpus, resolved)
    rows = []
    for k in _parse_int_list(args.k):
        res = quality_at_k(
            corpus,
            representation,
            split=args.split,
            k=k,
            num_anchors=args.anchors,
            seed=args.seed,
            measure=args.measure,
        )
        rows.append((resolved["method"], res))
        print(
            f"{resolved['method']} quality@{k}={res.quality:.4f} "
            f"anchors={res.num_anchors} skipped={res.num_skipped}"
        )
    write_quality_csv(args.csv_out or os.path.join(args.run, QUALITY_CSV), rows)
    return 0


def cmd_cost(args):
    if args.corpus:
        corpus = load_corpus(args.corpus)
        num_sets = corpus.n_sets
    elif args.num_sets is not None:
        num_sets = args.num_sets
    else:
        raise ConfigError("cost needs --num-sets or --corpus")
    cost = encoding_cost(args.method, num_sets, args.d, args.D, args.K)
    print(
        f"method={args.method} num_sets={num_sets} d={args.d} "
        f"bits_real={cost.real:.6g} bits_packed={cost.packed} "
        f"kb_real={cost.real / 8000:.6g} kb_packed={cost.packed / 8000:.6g}"
    )
    return 0


def _sweep_grid(resolved, lrs, betas, lams):
    method = resolved["method"]
    if method == "set2bin":
        raise ConfigError("set2bin has no training grid to sweep")
    grid = []
    if method in ("set2box+", "set2box-pq"):
        axes = [(lr, beta, lam) for lr in lrs for beta in betas for lam in lams]
    elif method in ("set2box",):
        axes = [(lr, beta, None) for lr in lrs for beta in betas]
    else:  # set2vec, set2box-order: lr only
        axes = [(lr, None, None) for lr in lrs]
    for lr, beta, lam in axes:
        point = dict(resolved)
        point["lr"] = lr
        if beta is not None:
            point["beta"] = beta
        if lam is not None:
            point["lam"] = lam
        grid.append(point)
    if not grid:
        raise ConfigError("sweep grid is empty")
    return grid


def _point_name(point):
    name = "lr{lr}".format(**point)
    if point["method"] in ("set2box", "set2box+", "set2box-pq"):
        name += "-beta{beta}".format(**point)
    if point["method"] in ("set2box+", "set2box-pq"):
        name += "-lam{lam}".format(**point)
    return name


def _sweep_task(task):
    """One grid point x seed: train, then validate. Runs in worker processes."""
    resolved, run_dir, val_pairs, eval_seed = task
    corpus = load_corpus(resolved["corpus"])
    corpus = split_corpus(corpus, resolved["train_frac"], resolved["split_seed"])
    train_run(resolved, run_dir, corpus=corpus)
    representation = build_representation(run_dir, corpus, resolved)
    report = mse_eval(
        corpus,
        representation,
        split="val",
        num_pairs=val_pairs,
        seed=eval_seed,
        method=resolved["method"],
    )
    row = {
        "method": resolved["method"],
        "lr": resolved["lr"],
        "beta": resolved["beta"],
        "lam": resolved["lam"],
        "seed": resolved["seed"],
        "run_dir": run_dir,
    }
    for m in MEASURES:
        row[f"mse_{m}"] = report.mse.get(m, "")
    present = [report.mse[m] for m in MEASURES if m in report.mse]
    row["mean_mse"] = float(np.mean(present))
    return row


def cmd_sweep(args):
    resolved = resolve_config(args)
    lrs = _parse_float_list(args.lrs)
    betas = _parse_float_list(args.betas)
    lams = _parse_float_list(args.lams)
    seeds = _parse_int_list(args.seeds)
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    grid = _sweep_grid(resolved, lrs, betas, lams)
    root = args.out or os.path.join(
        os.environ.get(OUT_ROOT_ENV, "runs"), "sweep-" + resolved["method"]
    )
    tasks = []
    for point in grid:
        for seed in seeds:
            run = dict(point)
            run["seed"] = seed
            run_dir = os.path.join(root, _point_name(point) + f"-seed{seed}")
            tasks.append((run, run_dir, args.val_pairs, args.eval_seed))
    if args.dry_run:
        for run, run_dir, _, _ in tasks:
            print(f"planned: {_point_name(run)} seed={run['seed']} -> {run_dir}")
        print(f"{len(tasks)} runs ({len(grid)} grid points x {len(seeds)} seeds)")
        return 0
    os.makedirs(root, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(task) for task in tasks]

    # flag the grid point with the lowest mean-over-seeds validation MSE
    by_point = {}
    for row in rows:
        key = (row["lr"], row["beta"], row["lam"])
        by_point.setdefault(key, []).append(row["mean_mse"])
    best_key = min(by_point, key=lambda k: float(np.mean(by_point[k])))
    for row in rows:
        row["best"] = int((row["lr"], row["beta"], row["lam"]) == best_key)

    header = ["method", "lr", "beta", "lam", "seed", "run_dir"]
    header += [f"mse_{m}" for m in MEASURES] + ["mean_mse", "best"]
    out_csv = os.path.join(root, "sweep.csv")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([
                repr(row[h]) if isinstance(row[h], float) else row[h] for h in header
            ])
    best_rows = [r for r in rows if r["best"]]
    print(
        f"best on val: lr={best_key[0]} beta={best_key[1]} lam={best_key[2]} "
        f"mean_mse={np.mean([r['mean_mse'] for r in best_rows]):.6g}"
    )
    print(f"wrote {out_csv} ({len(rows)} rows)")
    return 0


def _add_train_flags(sp):
    sp.add_argument("--corpus", help="corpus text file")
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--d", type=int, help="embedding dimension")
    sp.add_argument("--D", type=int, help="subspaces (quantized methods)")
    sp.add_argument("--K", type=int, help="keys per subspace (quantized methods)")
    sp.add_argument("--beta", type=float, help="softplus temperature")
    sp.add_argument("--lam", type=float, help="joint-loss weight")
    sp.add_argument("--tau", type=float, help="soft-assignment temperature")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--pos", type=int, help="positive triples per anchor set")
    sp.add_argument("--neg", type=int, help="negative triples per anchor set")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--train-frac", dest="train_frac", type=float)
    sp.add_argument("--split-seed", dest="split_seed", type=int)
    sp.add_argument("--measure", help="target measure (set2vec)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="set2box",
        description="Set similarity preservation with box embeddings.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="build a corpus file from ratings data")
    p.add_argument("--ratings", help="ratings file (UserID::MovieID::Rating::...)")
    p.add_argument("--synthetic", help="generate a synthetic preset (ml1m)")
    p.add_argument("--min-rating", dest="min_rating", type=float, default=3.0,
                   help="keep ratings strictly above this (default 3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="corpus file to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one method into a run directory")
    _add_train_flags(p)
    p.add_argument("--out", help="run directory (default under $SET2BOX_OUT)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MSE/cost (and optional knn, timing) of a run")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--corpus", help="corpus file (default: the one on record)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--measures", default="all", help="comma list, e.g. ji,oc")
    p.add_argument("--knn-k", dest="knn_k", help="comma list of k for quality@k")
    p.add_argument("--knn-measure", dest="knn_measure", default="ji")
    p.add_argument("--anchors", type=int, default=500)
    p.add_argument("--timing", action="store_true", help="run the latency probe")
    p.add_argument("--csv-out", dest="csv_out", help="eval CSV path override")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hyperparameter grid with per-seed runs")
    _add_train_flags(p)
    p.add_argument("--lrs", default="0.001,0.01")
    p.add_argument("--betas", default="1,2,4")
    p.add_argument("--lams", default="0,0.001,0.01,0.1,1")
    p.add_argument("--seeds", default="0")
    p.add_argument("--val-pairs", dest="val_pairs", type=int, default=10_000)
    p.add_argument("--eval-seed", dest="eval_seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", dest="dry_run", action="store_true")
    p.add_argument("--out", help="sweep root directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="closed-form encoding cost")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--num-sets", dest="num_sets", type=int)
    p.add_argument("--corpus", help="count sets from a corpus file instead")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--D", type=int)
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("knn", help="top-k neighbor quality of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--k", default="10")
    p.add_argument("--anchors", type=int, default=500)
    p.add_argument("--measure", default="ji")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv-out", dest="csv_out")
    p.set_defaults(func=cmd_knn)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
