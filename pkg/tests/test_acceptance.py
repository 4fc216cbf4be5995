"""Release gate: the full accuracy-vs-cost study plus the standalone checks.

Slow by design.  The study trains every method at desk scale on the
MovieLens-like corpus (the synthetic stand-in when no ratings file is
present) and the whole module is collected last; each check records one
PASS/FAIL line for the end-of-run summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

import set2box.autodiff as ad
from set2box.autodiff import Tape
from set2box.baselines import (
    VecConfig,
    bin_sketch,
    embed_order,
    embed_vectors,
    hash_entities,
    train_order,
    train_vec,
)
from set2box.boxes import contains_points, graph_bor, graph_smooth_volume, intersect
from set2box.cli import main
from set2box.corpus import SetCorpus, cardinality_profile, split_corpus
from set2box.datasets import (
    load_ml1m_or_synthetic,
    make_random_corpus,
    size_probe_corpus,
)
from set2box.evaluate import (
    BinRepr,
    BoxRepr,
    ExactRepr,
    OrderRepr,
    VecRepr,
    mse_eval,
    timing_probe,
)
from set2box.measures import MEASURES, similarity
from set2box.model import (
    TrainConfig,
    embed_sets,
    graph_batch_loss,
    ratio_table,
    train,
)
from set2box.optim import ParamStore, gradcheck
from set2box.quantize import (
    Codebook,
    QuantTrainConfig,
    discretize,
    encoding_cost,
    graph_joint_loss,
    graph_st_reconstruct,
    reconstruct,
    soft_assign,
    train_quantized,
)


# ---------------------------------------------------------------------------
# 1. box-algebra laws


def test_box_algebra_laws(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    n, d = 1000, 4

    def boxes():
        c = rng.uniform(-2.0, 2.0, (n, d))
        f = rng.uniform(0.1, 1.5, (n, d))
        return c - f, c + f

    amin, amax = boxes()
    bmin, bmax = boxes()
    cmin, cmax = boxes()

    region_ok = True
    im, iM = intersect(amin, amax, amin, amax)
    region_ok &= np.array_equal(im, amin) and np.array_equal(iM, amax)
    ab = intersect(amin, amax, bmin, bmax)
    ba = intersect(bmin, bmax, amin, amax)
    region_ok &= np.array_equal(ab[0], ba[0]) and np.array_equal(ab[1], ba[1])
    left = intersect(*intersect(amin, amax, bmin, bmax), cmin, cmax)
    right = intersect(amin, amax, *intersect(bmin, bmax, cmin, cmax))
    region_ok &= np.array_equal(left[0], right[0]) and np.array_equal(left[1], right[1])

    # transitivity of containment on constructed chains inner c mid c outer
    pad1 = rng.uniform(0.0, 0.5, (n, d))
    pad2 = rng.uniform(0.0, 0.5, (n, d))
    mid_min, mid_max = amin - pad1, amax + pad1
    out_min, out_max = mid_min - pad2, mid_max + pad2
    region_ok &= bool(np.all(out_min <= amin) and np.all(amax <= out_max))

    # union-side laws: membership agreement on 10 Monte-Carlo points per triple
    lo = np.minimum(np.minimum(amin, bmin), cmin) - 0.2
    hi = np.maximum(np.maximum(amax, bmax), cmax) + 0.2
    pts = lo[:, None, :] + rng.random((n, 10, d)) * (hi - lo)[:, None, :]

    def member(mins, maxs):
        return np.all((pts >= mins[:, None, :]) & (pts <= maxs[:, None, :]), axis=-1)

    in_a, in_b, in_c = member(amin, amax), member(bmin, bmax), member(cmin, cmax)
    in_ab = member(*intersect(amin, amax, bmin, bmax))
    agreements = [
        np.mean((in_a | in_a) == in_a),                                   # idempotent
        np.mean((in_a | in_b) == (in_b | in_a)),                          # commutative
        np.mean(((in_a | in_b) | in_c) == (in_a | (in_b | in_c))),        # associative
        np.mean((in_a & (in_a | in_b)) == in_a),                          # absorption
        np.mean((in_a | in_ab) == in_a),                                  # absorption
        np.mean((in_a & (in_b | in_c)) == ((in_a & in_b) | (in_a & in_c))),  # distributive
    ]
    mc_ok = min(agreements) >= 0.999
    dt = time.perf_counter() - t0
    ok = region_ok and mc_ok and dt < 10.0
    assert criterion(
        1, ok,
        f"6 laws x 1000 boxes; MC agreement >= {min(agreements):.4f}; {dt:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. gradient validation


def _grad_fixture_corpus(rng):
    sets = [np.sort(rng.choice(10, size=rng.integers(2, 5), replace=False))
            for _ in range(6)]
    members = np.concatenate(sets)
    offsets = np.cumsum([0] + [len(s) for s in sets])
    return SetCorpus(members, offsets, num_entities=10)


def _entity_params(rng, num_entities, d):
    params = ParamStore()
    params.add("q_center", rng.normal(0, 0.3, (num_entities, d)), dtype=np.float64)
    params.add("q_offset_raw", rng.normal(-1.0, 0.3, (num_entities, d)), dtype=np.float64)
    params.add("ctx_center", rng.normal(0, 0.3, d), dtype=np.float64)
    params.add("ctx_offset", rng.normal(0, 0.3, d), dtype=np.float64)
    return params


def test_gradient_validation(criterion):
    t0 = time.perf_counter()
    reports = {}

    def run(name, build):
        worst = 0.0
        for i in range(20):
            rng = np.random.default_rng(1000 + i)
            loss_fn, params = build(rng)
            rep = gradcheck(loss_fn, params, tol_rel=1e-3, max_coords_per_param=8,
                            seed=i)
            worst = max(worst, rep.max_rel_err)
            if not rep.passed:
                break
        reports[name] = worst
        return worst <= 1e-3

    def scp(rng):
        m, d = int(rng.integers(4, 8)), 3
        offsets = np.array([0, m // 2, m])
        params = ParamStore()
        params.add("rows", rng.normal(0, 1, (m, d)), dtype=np.float64)
        params.add("ctx", rng.normal(0, 1, d), dtype=np.float64)

        def loss(leaves):
            out = ad.scp_pool(leaves["rows"], offsets, leaves["ctx"])
            return ad.mean(out * out)

        return loss, params

    def bor_fam(rng):
        d = 3
        params = ParamStore()
        for name in ("ca", "cb"):
            params.add(name, rng.normal(0, 1, (4, d)), dtype=np.float64)
        for name in ("fa", "fb"):
            params.add(name, rng.normal(-0.5, 0.3, (4, d)), dtype=np.float64)

        def loss(leaves):
            fa = ad.softplus(leaves["fa"], 1.0)
            fb = ad.softplus(leaves["fb"], 1.0)
            val = graph_bor(leaves["ca"] - fa, leaves["ca"] + fa,
                            leaves["cb"] - fb, leaves["cb"] + fb, 2.0)
            return ad.mean(val)

        return loss, params

    def vol(rng):
        d = 4
        params = ParamStore()
        params.add("mins", rng.normal(0, 1, (5, d)), dtype=np.float64)
        params.add("maxs", rng.normal(0.5, 1, (5, d)), dtype=np.float64)

        def loss(leaves):
            return ad.mean(graph_smooth_volume(leaves["mins"], leaves["maxs"], 2.0))

        return loss, params

    def triple(rng):
        corpus = _grad_fixture_corpus(rng)
        params = _entity_params(rng, 10, 3)
        ids = np.array([[0, 1, 2], [3, 4, 5]])
        ratios = ratio_table(corpus, ids, dtype=np.float64)

        def loss(leaves):
            return graph_batch_loss(leaves, corpus, ids, ratios, beta=2.0)

        return loss, params

    def joint(rng):
        corpus = _grad_fixture_corpus(rng)
        params = _entity_params(rng, 10, 4)
        params.add("key_centers", rng.normal(0, 0.5, (2, 3, 2)), dtype=np.float64)
        params.add("key_offsets_raw", rng.normal(-0.5, 0.3, (2, 3, 2)), dtype=np.float64)
        ids = np.array([[0, 1, 2], [3, 4, 5]])
        ratios = ratio_table(corpus, ids, dtype=np.float64)
        config = QuantTrainConfig(d=4, num_subspaces=2, num_keys=3, lam=0.01,
                                  tau=1.0, beta=2.0)

        def loss(leaves):
            return graph_joint_loss(leaves, corpus, ids, ratios, config,
                                    soft_forward=True)

        return loss, params

    ok = all([
        run("scp", scp),
        run("bor", bor_fam),
        run("smooth_volume", vol),
        run("triple_loss", triple),
        run("joint_loss", joint),
    ])
    dt = time.perf_counter() - t0
    ok = ok and dt < 60.0
    worst_name = max(reports, key=reports.get)
    assert criterion(
        2, ok,
        f"5 families x 20 fixtures; worst rel err {reports[worst_name]:.2e} "
        f"({worst_name}); {dt:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. oracle equivalence


def test_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    corpus = make_random_corpus(50, 30, min_size=1, max_size=10, seed=21)
    pysets = [set(corpus.set_members(i).tolist()) for i in range(50)]
    profile_ok = True
    for i, j, k in itertools.combinations(range(50), 3):
        prof = cardinality_profile(corpus, (i, j, k))
        si, sj, sk = pysets[i], pysets[j], pysets[k]
        want = (
            len(si), len(sj), len(sk),
            len(si & sj), len(sj & sk), len(sk & si),
            len(si & sj & sk),
        )
        if tuple(int(c) for c in prof.counts) != want:
            profile_ok = False
            break

    corpus100 = make_random_corpus(100, 60, min_size=1, max_size=12, seed=9)
    d, seed = 32, 5
    sketches = bin_sketch(corpus100, d, seed)
    slots = hash_entities(corpus100.members, d, seed)
    slot_sets = [
        set(slots[corpus100.offsets[s]:corpus100.offsets[s + 1]].tolist())
        for s in range(100)
    ]
    rep = BinRepr(sketches, d)
    bin_ok = True
    pairs = np.array(list(itertools.combinations(range(100), 2)))
    for m in MEASURES:
        est = rep.estimate(pairs[:, 0], pairs[:, 1], m)
        want = np.array([
            similarity(
                len(slot_sets[a] & slot_sets[b]),
                len(slot_sets[a]), len(slot_sets[b]), m,
                union=len(slot_sets[a] | slot_sets[b]),
            )
            for a, b in pairs
        ])
        bin_ok &= bool(np.array_equal(est, want))
    dt = time.perf_counter() - t0
    ok = profile_ok and bin_ok and dt < 30.0
    assert criterion(
        3, ok,
        f"19600 triples exact; {len(pairs)} sketch pairs x 4 measures exact; {dt:.1f}s",
    )


# ---------------------------------------------------------------------------
# 4. encoding-cost closed forms


def test_encoding_cost_closed_forms(criterion):
    rng = np.random.default_rng(4)
    methods = ("set2bin", "set2vec", "set2box-order", "set2box", "set2box+", "set2box-pq")
    ok = True
    for _ in range(50):
        method = methods[rng.integers(len(methods))]
        n = int(rng.integers(1, 1_000_000))
        d = int(2 ** rng.integers(2, 8))
        D = int(rng.choice([p for p in (1, 2, 4, 8, 16) if d % p == 0]))
        K = int(rng.integers(1, 65))
        cost = encoding_cost(method, n, d,
                             None if method in ("set2bin", "set2vec", "set2box-order",
                                                "set2box") else D,
                             None if method in ("set2bin", "set2vec", "set2box-order",
                                                "set2box") else K)
        width = math.ceil(math.log2(K)) if K > 1 else 0
        if method == "set2bin":
            real, packed = float(d * n), d * n
        elif method in ("set2vec", "set2box-order"):
            real, packed = float(32 * d * n), 32 * d * n
        elif method == "set2box":
            real, packed = float(64 * d * n), 64 * d * n
        elif method == "set2box+":
            real = 64 * K * d + n * D * (math.log2(K) if K > 1 else 0.0)
            packed = 64 * K * d + n * D * width
        else:  # pq: two code streams over two vector codebooks
            real = 64 * K * d + 2 * n * D * (math.log2(K) if K > 1 else 0.0)
            packed = 64 * K * d + 2 * n * D * width
        ok &= math.isclose(cost.real, real, rel_tol=1e-12, abs_tol=0.0)
        ok &= cost.packed == packed
        if not ok:
            break
    assert criterion(4, ok, "50 random (method, |S|, d, D, K) tuples, both bit forms")


# ---------------------------------------------------------------------------
# the desk-scale study feeding 5-8


BETA = 2.0
EPOCHS = 8
SEEDS = (0, 1, 2)
LAMS = (0.0, 0.001, 0.01, 0.1, 1.0)


def _median_by_measure(runs):
    return {m: float(np.median([r[m] for r in runs])) for m in MEASURES}


@pytest.fixture(scope="module")
def study():
    t0 = time.perf_counter()
    corpus, source = load_ml1m_or_synthetic()
    corpus = split_corpus(corpus, 0.2, seed=0)
    n = corpus.n_sets

    def test_mse(rep, measures=MEASURES):
        return mse_eval(corpus, rep, split="test", num_pairs=100_000, seed=0,
                        measures=measures).mse

    def val_mean(rep):
        mse = mse_eval(corpus, rep, split="val", num_pairs=20_000, seed=0).mse
        return float(np.mean(list(mse.values())))

    common = dict(beta=BETA, batch_size=512, epochs=EPOCHS,
                  num_pos_per_set=10, num_neg_per_set=10)

    boxplus = {lam: {"test": [], "val": []} for lam in LAMS}
    for lam in LAMS:
        for seed in SEEDS:
            cfg = QuantTrainConfig(d=32, num_subspaces=16, num_keys=30, lam=lam,
                                   tau=1.0, lr=0.001, seed=seed, **common)
            emb, codebook, _ = train_quantized(corpus, cfg)
            centers, offsets = embed_sets(emb, corpus)
            codes = discretize(centers, offsets, codebook, BETA)
            rep = BoxRepr.from_codebook(codebook, codes, BETA)
            boxplus[lam]["test"].append(test_mse(rep))
            boxplus[lam]["val"].append(val_mean(rep))
            print(f"[study] box+ lam={lam} seed={seed} "
                  f"oc={boxplus[lam]['test'][-1]['oc']:.4f}", flush=True)

    val_med = {lam: float(np.median(boxplus[lam]["val"])) for lam in LAMS}
    best_lam = min(LAMS, key=lambda l: val_med[l])
    best_pos_lam = min((l for l in LAMS if l > 0), key=lambda l: val_med[l])

    bits_plus = encoding_cost("set2box+", n, 32, 16, 30)
    per_set = bits_plus.packed / n

    bin_by_mult = {}
    for mult in (1, 2, 4, 8, 16, 32):
        d_bin = max(8, int(round(per_set * mult)))
        runs = [test_mse(BinRepr(bin_sketch(corpus, d_bin, seed), d_bin))
                for seed in SEEDS]
        bin_by_mult[mult] = {"d": d_bin, "med": _median_by_measure(runs)}
        print(f"[study] bin d={d_bin} (~{mult}x) ji={bin_by_mult[mult]['med']['ji']:.4f}",
              flush=True)
    bin256 = _median_by_measure(
        [test_mse(BinRepr(bin_sketch(corpus, 256, seed), 256)) for seed in SEEDS]
    )

    vec_runs = {m: [] for m in MEASURES}
    for m in MEASURES:
        for seed in SEEDS:
            cfg = VecConfig(d=8, measure=m, lr=0.01, seed=seed, **common)
            model, _ = train_vec(corpus, cfg)
            rep = VecRepr(embed_vectors(model, corpus), m)
            vec_runs[m].append(test_mse(rep, measures=[m]))
            print(f"[study] vec {m} seed={seed} mse={vec_runs[m][-1][m]:.4f}",
                  flush=True)
    vec_med = {m: float(np.median([r[m] for r in vec_runs[m]])) for m in MEASURES}

    box4_runs = []
    for seed in SEEDS:
        emb, _ = train(corpus, TrainConfig(d=4, lr=0.001, seed=seed, **common))
        box4_runs.append(test_mse(BoxRepr.from_model(emb, corpus)))
        print(f"[study] box d=4 seed={seed} oc={box4_runs[-1]['oc']:.4f}", flush=True)

    order_runs = []
    for seed in SEEDS:
        model, _ = train_order(corpus, TrainConfig(d=8, lr=0.01, seed=seed, **common))
        order_runs.append(test_mse(OrderRepr(embed_order(model, corpus))))
        print(f"[study] order d=8 seed={seed} oc={order_runs[-1]['oc']:.4f}", flush=True)

    return {
        "source": source,
        "n": n,
        "elapsed": time.perf_counter() - t0,
        "boxplus_med": _median_by_measure(boxplus[best_lam]["test"]),
        "boxplus_by_lam": {lam: _median_by_measure(boxplus[lam]["test"])
                           for lam in LAMS},
        "best_lam": best_lam,
        "best_pos_lam": best_pos_lam,
        "bin256": bin256,
        "bin_by_mult": bin_by_mult,
        "bits_plus": bits_plus,
        "vec_med": vec_med,
        "box4_med": _median_by_measure(box4_runs),
        "order_med": _median_by_measure(order_runs),
    }


def test_equal_budget_accuracy(study, criterion):
    bp, bn, vc = study["boxplus_med"], study["bin256"], study["vec_med"]
    beats = all(bp[m] < bn[m] and bp[m] < vc[m] for m in MEASURES)
    oc_gain = bn["oc"] / bp["oc"]
    in_budget = study["elapsed"] < 45 * 60
    ok = beats and oc_gain >= 2.0 and in_budget
    assert criterion(
        5, ok,
        f"{study['source']} corpus, n={study['n']}: quantized-box OC "
        f"{bp['oc']:.4f} vs sketch {bn['oc']:.4f} ({oc_gain:.1f}x), vec OC "
        f"{vc['oc']:.4f}; all-measure wins={beats}; study {study['elapsed']/60:.1f} min",
    )


def test_conciseness_budget_multiple(study, criterion):
    target = study["boxplus_med"]["ji"]
    reached = None
    for mult in sorted(study["bin_by_mult"]):
        entry = study["bin_by_mult"][mult]
        if entry["med"]["ji"] <= target:
            reached = (entry["d"] * study["n"]) / study["bits_plus"].packed
            break
    if reached is None:
        ok, text = True, ">32x (never reached on the grid)"
    else:
        ok, text = reached >= 4.0, f"{reached:.1f}x"
    assert criterion(
        6, ok, f"sketch needs {text} of the quantized-box bit budget to match JI "
        f"{target:.4f}",
    )


def test_joint_training_ablation(study, criterion):
    lam = study["best_pos_lam"]
    with_joint = float(np.mean(list(study["boxplus_by_lam"][lam].values())))
    without = float(np.mean(list(study["boxplus_by_lam"][0.0].values())))
    ok = with_joint <= without
    rel = (without - with_joint) / without * 100 if without else 0.0
    assert criterion(
        7, ok,
        f"best lam={lam}: mean MSE {with_joint:.4f} vs {without:.4f} at lam=0 "
        f"({rel:+.0f}% relative)",
    )


def test_box_vs_order_ablation(study, criterion):
    box_oc = study["box4_med"]["oc"]
    order_oc = study["order_med"]["oc"]
    ok = box_oc <= order_oc
    assert criterion(
        8, ok, f"box d=4 OC {box_oc:.4f} vs order d=8 OC {order_oc:.4f}",
    )


# ---------------------------------------------------------------------------
# 9. constant-time estimation


def test_constant_time_estimation(criterion):
    probe = size_probe_corpus(sizes=(10, 100, 1000), sets_per_size=64, seed=0)
    rng = np.random.default_rng(0)
    box = BoxRepr(
        rng.normal(0, 0.3, (probe.n_sets, 32)).astype(np.float32),
        rng.uniform(0.05, 0.2, (probe.n_sets, 32)).astype(np.float32),
        beta=BETA,
    )
    tb = timing_probe(box, probe, sizes=(10, 100, 1000), pairs=4096, repeats=5)
    te = timing_probe(ExactRepr(probe), probe, sizes=(10, 100, 1000), pairs=4096,
                      repeats=5)
    ok = tb.ratio() <= 1.5 and te.ratio() >= 5.0
    assert criterion(
        9, ok,
        f"box latency ratio {tb.ratio():.2f} (<= 1.5), exact {te.ratio():.1f} (>= 5)",
    )


# ---------------------------------------------------------------------------
# 10. straight-through exactness


def test_straight_through_exactness(criterion):
    rng = np.random.default_rng(10)
    D, K, subdim = 4, 8, 2
    d = D * subdim
    codebook = Codebook(
        rng.normal(0, 1, (D, K, subdim)).astype(np.float32),
        rng.normal(-0.5, 0.5, (D, K, subdim)).astype(np.float32),
        d,
    )
    centers = rng.normal(0, 1, (1000, d)).astype(np.float32)
    offsets = rng.uniform(0.1, 1.0, (1000, d)).astype(np.float32)

    codes = discretize(centers, offsets, codebook, BETA)
    rec_c, rec_f = reconstruct(codes, codebook)

    tape = Tape()
    cb = {
        "key_centers": tape.leaf(codebook.centers),
        "key_offsets_raw": tape.leaf(codebook.offsets_raw),
    }
    st_c, st_f, st_codes = graph_st_reconstruct(
        tape.leaf(centers), tape.leaf(offsets), cb, BETA, 1.0, (D, K, subdim)
    )
    forward_ok = (
        np.array_equal(st_c.value, rec_c)
        and np.array_equal(st_f.value, rec_f)
        and np.array_equal(st_codes, codes)
    )
    weights = soft_assign(centers, offsets, codebook, BETA, tau=1.0)
    argmax_ok = np.array_equal(weights.argmax(axis=-1), codes)
    ok = forward_ok and argmax_ok
    assert criterion(
        10, ok, "1000 boxes: hard forward bitwise equal; soft argmax equals codes",
    )


# ---------------------------------------------------------------------------
# 11. pipeline determinism


def test_pipeline_determinism(criterion, tmp_path):
    from set2box.corpus import save_corpus

    corpus_file = tmp_path / "corpus.txt"
    save_corpus(make_random_corpus(200, 80, min_size=2, max_size=10, seed=2),
                corpus_file)
    outputs = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main([
            "train", "--corpus", str(corpus_file), "--method", "set2box+",
            "--d", "8", "--D", "4", "--K", "8", "--epochs", "2", "--seed", "7",
            "--train-frac", "0.3", "--out", str(run),
        ]) == 0
        assert main(["eval", "--run", str(run), "--pairs", "5000"]) == 0
        outputs.append({
            f: (run / f).read_bytes()
            for f in ("model.s2b", "codebook.s2bq", "eval.csv")
        })
    ok = outputs[0] == outputs[1]
    assert criterion(
        11, ok,
        "two single-process train+eval runs: model, codebook, and CSV bitwise equal",
    )
