"""Acceptance suite: every release-gating criterion, one pass/fail line each.

Heavier than the unit tests: criterion 5 trains the default configuration on
the frozen synthetic dataset and criterion 6 trains the four ablation
variants. Run with `pytest tests/test_acceptance.py -s` to see the lines as
they print.
"""

import time

import numpy as np
import pytest
import scipy.stats

from conftest import (
    ACCEPTANCE_DATA_SEED,
    ACCEPTANCE_FRACTION,
    ACCEPTANCE_M,
    ACCEPTANCE_N,
    ACCEPTANCE_T_TEST,
    ACCEPTANCE_T_TRAIN,
    tiny_config,
)
from mmtsad import network, synthesize_ex
from mmtsad.config import AblationFlags, DetectorConfig
from mmtsad.data import SynthSpec, fit_norm_stats, stack_windows, window_ends
from mmtsad.graph import cosine_similarity, rebuild_topology
from mmtsad.metrics import f1_score
from mmtsad.pipeline import detect_on, evaluate, fit_detector
from mmtsad.scoring import interpret, per_sensor_scores, pot_threshold


def report(criterion: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    tail = f"  ({detail})" if detail else ""
    print(f"ACCEPTANCE {criterion}: {status}{tail}")
    assert passed, f"{criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. Structural invariants
# ---------------------------------------------------------------------------


def test_criterion_1_structural_invariants():
    from mmtsad.mgat import init_mgat_params, initial_features, multi_head_attention, relational_scores

    t0 = time.time()
    rng = np.random.default_rng(1001)
    issues = []
    for trial in range(100):
        n = int(rng.integers(2, 31))
        k = int(rng.integers(1, n + 1))
        m = int(rng.integers(1, min(5, n) + 1))
        # first m entries guarantee every modality id occurs
        modality = tuple(
            [(i % m) + 1 for i in range(m)]
            + [int(x) for x in rng.integers(1, m + 1, size=n - m)]
        )
        v = rng.standard_normal((n, 6))
        topo = rebuild_topology(v, modality, k)

        # TopK membership versus the brute-force oracle
        sim = cosine_similarity(v)
        for i in range(n):
            ranked = sorted(range(n), key=lambda j: (j != i, -sim[i, j], j))
            expected = set(ranked[: min(k, n)])
            got = set(np.flatnonzero(topo.A[i]))
            if got != expected or len(got) != min(k, n):
                issues.append(f"trial {trial}: TopK row {i}")
        # modality constraints and disjointness
        for i in range(n):
            if topo.A_intra[i].sum() > k or topo.A_inter[i].sum() > k:
                issues.append(f"trial {trial}: relational degree")
            for j in np.flatnonzero(topo.A_intra[i]):
                if modality[i] != modality[j]:
                    issues.append(f"trial {trial}: intra modality")
            for j in np.flatnonzero(topo.A_inter[i]):
                if modality[i] == modality[j]:
                    issues.append(f"trial {trial}: inter modality")
        if (topo.A_intra & topo.A_inter).any():
            issues.append(f"trial {trial}: overlap")

        # attention normalization on a random feature batch
        heads = 2
        cfg = tiny_config(embed_dim=4, heads=heads, window=6,
                          time_channels=4, topk=k)
        params = init_mgat_params(cfg, rng, np.float64)
        window = rng.standard_normal((2, n, cfg.window))
        emb = rng.uniform(-0.5, 0.5, (n, cfg.embed_dim))
        feat, _ = initial_features(window, emb, params)
        _, _, cache = multi_head_attention(feat, topo.A, params, 0, heads)
        for alpha in cache["alphas"]:
            if np.abs(alpha.sum(axis=-1) - 1.0).max() > 1e-6:
                issues.append(f"trial {trial}: alpha sum")
        for rel, adj in (("intra", topo.A_intra), ("inter", topo.A_inter)):
            beta, _ = relational_scores(emb, adj, params, f"l0.{rel}.", np.float64)
            sums = beta.sum(axis=1)
            nonempty = adj.any(axis=1)
            if nonempty.any() and np.abs(sums[nonempty] - 1.0).max() > 1e-6:
                issues.append(f"trial {trial}: beta sum {rel}")
            if (~nonempty).any() and sums[~nonempty].any():
                issues.append(f"trial {trial}: beta empty {rel}")
    elapsed = time.time() - t0
    report(
        "1 structural-invariants",
        not issues and elapsed < 60.0,
        f"100 configurations, {elapsed:.1f}s" + (f"; issues: {issues[:3]}" if issues else ""),
    )


# ---------------------------------------------------------------------------
# 2. Gradient correctness
# ---------------------------------------------------------------------------


def _sample_fd_failures(loss_fn, vec, gvec, indices, h, rtol, atol=1e-8):
    failures = 0
    for i in indices:
        orig = vec[i]
        vec[i] = orig + h
        lp = loss_fn()
        vec[i] = orig - h
        lm = loss_fn()
        vec[i] = orig
        fd = (lp - lm) / (2 * h)
        if abs(fd - gvec[i]) > atol + rtol * max(abs(fd), abs(gvec[i])):
            failures += 1
    return failures


def test_criterion_2_gradient_correctness():
    t0 = time.time()
    # the stated tiny instance: N=6, w=8, d=4, z_dim=4, 64-bit
    cfg = tiny_config(window=8, embed_dim=4, latent_dim=4, batch=4)
    train_ds, _ = synthesize_ex(
        SynthSpec(n_series=6, n_modalities=2, length=60, anomaly_fraction=0.0,
                  train_length=160),
        seed=6,
    )
    rng = np.random.default_rng(7)
    vec, params = network.pack_params(network.init_params(cfg, 6, rng))
    topo = rebuild_topology(np.asarray(params["V"], np.float64),
                            train_ds.modality, cfg.topk)
    stats = fit_norm_stats(train_ds)
    vals = (train_ds.values - stats.offset[:, None]) / stats.scale[:, None]
    ends = window_ends(vals.shape[1], cfg.window)[:4]
    windows = stack_windows(vals, ends, cfg.window)
    next_vals = vals[:, ends + 1].T
    eps = rng.standard_normal((2, 4, cfg.latent_dim))

    gvec, grads = network.zeros_like_packed(params)
    network.loss_and_grads(params, cfg, topo, windows, next_vals, eps, 0.8,
                           out_grads=grads)

    def joint():
        return network.loss_and_grads(params, cfg, topo, windows, next_vals,
                                      eps, 0.8)[0]

    n_sample = max(int(0.01 * vec.size), 40)
    idx = rng.choice(vec.size, size=n_sample, replace=False)
    e2e_failures = _sample_fd_failures(joint, vec, gvec, idx, h=1e-6, rtol=1e-3)

    # per-module: restrict sampled coordinates to each group's slice
    module_failures = {}
    pos = 0
    slices = {}
    for path, a in network.flat_items(params):
        group = path.split("/")[0]
        slices.setdefault(group, []).extend(range(pos, pos + a.size))
        pos += a.size
    for group_name, keys in (("mgat", ["mgat", "V"]), ("temporal", ["temporal"]),
                             ("heads", ["vae", "pred"])):
        coords = np.concatenate([slices[k] for k in keys if k in slices])
        chosen = rng.choice(coords, size=min(150, coords.size), replace=False)
        module_failures[group_name] = _sample_fd_failures(
            joint, vec, gvec, chosen, h=1e-6, rtol=1e-4
        )
    elapsed = time.time() - t0
    ok = e2e_failures == 0 and not any(module_failures.values()) and elapsed < 120
    report(
        "2 gradient-correctness",
        ok,
        f"end-to-end {n_sample} coords rtol 1e-3: {e2e_failures} failures; "
        f"per-module rtol 1e-4: {module_failures}; {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. POT fidelity
# ---------------------------------------------------------------------------


def test_criterion_3_pot_fidelity():
    xi, sigma, q = 0.1, 1.0, 1e-3
    samples = scipy.stats.genpareto.rvs(
        xi, scale=sigma, size=10_000, random_state=np.random.default_rng(42)
    )
    analytic = (sigma / xi) * (q**-xi - 1.0)
    thr = pot_threshold(samples, q=q, init_level=0.98)
    rel = abs(thr - analytic) / analytic

    constant = pot_threshold(np.full(100, 2.0), q=1e-3, init_level=0.98)
    degenerate_ok = constant > 2.0 and not (np.full(100, 2.0) > constant).any()
    few = np.concatenate([np.random.default_rng(3).uniform(0, 1, 59), [50.0]])
    fallback = pot_threshold(few, q=0.01, init_level=0.98)
    fallback_ok = fallback == pytest.approx(float(np.quantile(few, 0.99)))
    report(
        "3 pot-fidelity",
        rel < 0.05 and degenerate_ok and fallback_ok,
        f"gpd threshold {thr:.3f} vs analytic {analytic:.3f} ({rel * 100:.2f}%), "
        f"fallbacks covered",
    )


# ---------------------------------------------------------------------------
# 4. Formula reproduction
# ---------------------------------------------------------------------------


def test_criterion_4_formula_reproduction():
    f1 = f1_score(0.9506, 0.8910)
    f1_ok = abs(f1 - 0.9198) <= 1e-4

    s = per_sensor_scores(np.array([0.5]), np.array([0.5]), np.array([0.0]), 0.8)
    spot_ok = abs(s[0] - 0.38889) < 1e-5
    zero = per_sensor_scores(np.array([1.0]), np.array([0.3]), np.array([0.3]), 0.8)
    zero_ok = zero[0] == 0.0
    rec_only = per_sensor_scores(np.array([0.4]), np.array([1.0]), np.array([0.0]), 0.0)
    rec_ok = rec_only[0] == pytest.approx(0.6)
    report(
        "4 formula-reproduction",
        f1_ok and spot_ok and zero_ok and rec_ok,
        f"f1={f1:.5f}, score spot values match",
    )


# ---------------------------------------------------------------------------
# 5. Desk-scale end to end
# ---------------------------------------------------------------------------


def sigma_floor_holds(train, test):
    """Every injected event is visible to a per-series 3-sigma detector,
    on raw levels or on one-step differences (entry/exit transitions)."""
    mu = train.values.mean(axis=1)
    sd = train.values.std(axis=1)
    dsd = np.diff(train.values, axis=1).std(axis=1)
    for e in test.events:
        lo, hi = max(0, e.start - 1), min(test.values.shape[1] - 1, e.end + 1)
        seg = test.values[e.series, lo : hi + 1]
        z_raw = np.abs(seg - mu[e.series]) / sd[e.series]
        z_diff = np.abs(np.diff(seg)) / dsd[e.series]
        if not (z_raw.max() > 3.0 or z_diff.max() > 3.0):
            return False
    return True


def test_criterion_5_desk_scale_end_to_end(acceptance_data, default_model):
    train, test = acceptance_data
    assert test.n_timestamps == ACCEPTANCE_T_TEST
    assert train.n_timestamps == ACCEPTANCE_T_TRAIN
    assert train.n_series == ACCEPTANCE_N and train.n_modalities == ACCEPTANCE_M

    floor_ok = sigma_floor_holds(train, test)
    loss_trace = default_model["trace"]
    loss_improves = loss_trace[4].l_joint < loss_trace[0].l_joint
    trace = detect_on(default_model["state"], test)
    rep = evaluate(trace, test.labels)
    auc_val, f1_val = rep["auc"], rep["raw"]["f1"]
    train_minutes = default_model["train_seconds"] / 60.0
    ok = (
        floor_ok
        and loss_improves
        and train_minutes <= 5.0
        and auc_val >= 0.85
        and f1_val >= 0.60
    )
    report(
        "5 desk-scale-end-to-end",
        ok,
        f"seed {ACCEPTANCE_DATA_SEED}: train {train_minutes:.2f} min, "
        f"AUC {auc_val:.4f} (>=0.85), F1 {f1_val:.4f} (>=0.60), 3-sigma floor "
        f"{'ok' if floor_ok else 'VIOLATED'}",
    )


# ---------------------------------------------------------------------------
# 6. Ablation direction
# ---------------------------------------------------------------------------


def test_criterion_6_ablation_direction(acceptance_data, default_model):
    train, test = acceptance_data
    full_trace = detect_on(default_model["state"], test)
    full_auc = evaluate(full_trace, test.labels)["auc"]

    ladder = [
        ("-modal", AblationFlags(disable_modal=True)),
        ("-temp", AblationFlags(disable_modal=True, disable_temporal=True)),
        ("-topk", AblationFlags(disable_modal=True, disable_temporal=True,
                                disable_topk=True)),
        ("-att", AblationFlags(disable_modal=True, disable_temporal=True,
                               disable_topk=True, disable_attention=True)),
    ]
    aucs = {}
    for name, flags in ladder:
        cfg = DetectorConfig(seed=0, ablation=flags)
        if flags.disable_topk:
            cfg = cfg.replace(topk=train.n_series)
        state, _ = fit_detector(train, cfg)
        aucs[name] = evaluate(detect_on(state, test), test.labels)["auc"]

    bounded = all(a <= full_auc + 0.02 for a in aucs.values())
    att_worst = all(aucs["-att"] < aucs[k] for k in ("-modal", "-temp", "-topk"))
    report(
        "6 ablation-direction",
        bounded and att_worst,
        f"full {full_auc:.4f}; " + ", ".join(f"{k} {v:.4f}" for k, v in aucs.items()),
    )


# ---------------------------------------------------------------------------
# 7. Interpretation correctness
# ---------------------------------------------------------------------------


def test_criterion_7_interpretation(default_model):
    spec = SynthSpec(
        n_series=ACCEPTANCE_N, n_modalities=ACCEPTANCE_M, length=6000,
        anomaly_fraction=ACCEPTANCE_FRACTION, train_length=ACCEPTANCE_T_TRAIN,
        kinds=("decorrelation",), n_events=20,
    )
    _, interp_test = synthesize_ex(spec, ACCEPTANCE_DATA_SEED)
    assert len(interp_test.events) == 20
    trace = detect_on(default_model["state"], interp_test)
    hits = 0
    for e in interp_test.events:
        ranked = interpret(trace, (e.start, e.end))
        hits += ranked[0][0] == interp_test.names[e.series]
    report("7 interpretation", hits >= 18, f"top-1 hits {hits}/20")


# ---------------------------------------------------------------------------
# 8. Determinism through the CLI
# ---------------------------------------------------------------------------


def test_criterion_8_cli_determinism(tmp_path):
    from mmtsad.cli import main

    (tmp_path / "spec.toml").write_text(
        "n_series = 6\nn_modalities = 2\nlength = 300\n"
        "anomaly_fraction = 0.05\ntrain_length = 800\n"
    )
    (tmp_path / "config.toml").write_text(
        "window = 12\nembed_dim = 8\ntopk = 4\nheads = 2\nconv_kernel = 6\n"
        "latent_dim = 6\ntime_channels = 4\nconv_channels = 8\nenc_hidden = 16\n"
        "dec_hidden = 16\npred_hidden = 16\nepochs = 3\nbatch = 16\nseed = 21\n"
    )
    assert main(["synth", "--spec", str(tmp_path / "spec.toml"), "--seed", "13",
                 "--out-dir", str(tmp_path / "data")]) == 0
    base = ["train", "--config", str(tmp_path / "config.toml"),
            "--train-data", str(tmp_path / "data" / "train.csv"),
            "--modalities", str(tmp_path / "data" / "modalities.json")]
    assert main(base + ["--out", str(tmp_path / "m1.npz")]) == 0
    assert main(base + ["--out", str(tmp_path / "m2.npz")]) == 0
    ckpt_identical = (
        (tmp_path / "m1.npz").read_bytes() == (tmp_path / "m2.npz").read_bytes()
    )
    det = ["detect", "--model", str(tmp_path / "m1.npz"),
           "--test-data", str(tmp_path / "data" / "test.csv")]
    assert main(det + ["--out", str(tmp_path / "o1")]) == 0
    assert main(det + ["--out", str(tmp_path / "o2")]) == 0
    trace_identical = (
        (tmp_path / "o1" / "trace.csv").read_text()
        == (tmp_path / "o2" / "trace.csv").read_text()
    )
    report(
        "8 determinism",
        ckpt_identical and trace_identical,
        f"checkpoints byte-identical: {ckpt_identical}, traces identical: {trace_identical}",
    )
