"""Acceptance gate: eleven primary checks, one pass/fail line each.

Heavy multi-seed benchmark runs are shared across checks through
session-scoped fixtures.  Run with ``pytest -v tests/test_acceptance.py``
(add ``-s`` to see the per-criterion lines as they print).
"""

import numpy as np
import pytest

from asymreplay import losses as L
from asymreplay import metrics as M
from asymreplay import network as net
from asymreplay import stream as S
from asymreplay import tensor as T
from asymreplay import trainer as TR
from asymreplay.buffer import ReplayBuffer
from asymreplay.report import parse_config, run_experiment

import reference as R

SEEDS = tuple(range(1, 11))
NPC = 1000


def report(num: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line, flush=True)
    assert ok, line


# shared benchmark runs ------------------------------------------------

def _bench_dataset(num_classes):
    return S.make_synthetic(
        S.SyntheticDatasetSpec(input_dim=16, num_classes=num_classes,
                               samples_per_class=NPC, noise_sigma=0.5,
                               mean_radius=1.0),
        seed=0)


def _bench_run(dataset, num_classes, method, seed, capacity=20,
               policy=L.NegativePolicy.INCOMING_ONLY,
               hidden=(64, 32), lr=0.05, gamma=2.0):
    scfg = S.StreamConfig(num_classes=num_classes, classes_per_task=2,
                          samples_per_class=NPC, batch_size=10, seed=seed)
    tcfg = TR.TrainerConfig(
        loss=L.LossConfig(method=method, gamma=gamma, tau=0.2,
                          negative_policy=policy),
        lr=lr, buffer_capacity=capacity, hidden_sizes=hidden, seed=seed)
    return TR.run(dataset, scfg, tcfg)


def _boundary_drift(result, n_tasks=5, window=20):
    """Mean one-step drift over `window` steps after each task boundary."""
    d = np.array(result.log.drift_trace)
    n = len(d) // n_tasks
    return float(np.nanmean([np.nanmean(d[b * n:b * n + window])
                             for b in range(1, n_tasks)]))


@pytest.fixture(scope="session")
def five_task_runs():
    """10-seed runs on the 5-task stream: ER and ER-ACE at three buffer
    sizes, plus both negative policies of the metric-learning loss."""
    ds = _bench_dataset(10)
    out = {}
    for cap in (20, 100, 500):
        out[("er", cap)] = [_bench_run(ds, 10, L.Method.ER, s, cap)
                            for s in SEEDS]
        out[("er-ace", cap)] = [_bench_run(ds, 10, L.Method.ER_ACE, s, cap)
                                for s in SEEDS]
    for tag, pol in (("aml-in", L.NegativePolicy.INCOMING_ONLY),
                     ("aml-all", L.NegativePolicy.ALL_CLASSES)):
        out[(tag, 20)] = [_bench_run(ds, 10, L.Method.ER_AML_SUPCON, s, 20,
                                     policy=pol) for s in SEEDS]
    return out


def _final(runs):
    return np.array([r.final_accuracy for r in runs])


# 1. gradient correctness ---------------------------------------------

def _fd_instance(rng):
    """One random small instance of every composite loss, checked against
    central finite differences of the float64 references."""
    num_classes = 4
    while True:
        model = net.init_params([3, 4, 3], num_classes, 0.1,
                                int(rng.integers(1 << 16)))
        x_in = rng.standard_normal((4, 3)).astype(np.float32)
        y_in = rng.integers(0, 2, size=4)
        x_bf = rng.standard_normal((3, 3)).astype(np.float32)
        y_bf = rng.integers(0, num_classes, size=3)
        buffer = ReplayBuffer(6, rng=np.random.default_rng(
            rng.integers(1 << 16)))
        bx = rng.standard_normal((6, 3)).astype(np.float32)
        buffer.reservoir_update(bx, rng.integers(0, num_classes, size=6))
        ok = True
        with T.no_grad():
            for arr in (x_in, x_bf, bx):
                f = net.features(model, arr).data
                if np.linalg.norm(f, axis=1).min() < 1e-2:
                    ok = False
        if ok:
            break
    sets = L.ClassIndexSets.derive(y_in, observed=range(num_classes),
                                   num_classes=num_classes)
    toc = {0: 0, 1: 0, 2: 1, 3: 1}
    cot = {0: [0, 1], 1: [2, 3]}
    pos_neg = buffer.fetch_pos_neg(x_in, y_in, L.NegativePolicy.INCOMING_ONLY,
                                   np.random.default_rng(rng.integers(1 << 16)))
    slot_row = {s: i for i, s in enumerate(pos_neg.buffer_slots)}
    pairs = [None if p is None else tuple(
        (src, idx if src == "in" else slot_row[idx]) for src, idx in p)
        for p in pos_neg.pairs]
    bsel = (np.stack([buffer.slots[s].x for s in pos_neg.buffer_slots])
            if pos_neg.buffer_slots else np.zeros((0, 3), dtype=np.float32))
    aml_cfg = L.LossConfig(method=L.Method.ER_AML_SUPCON, gamma=1.2, tau=0.2)
    tri_cfg = L.LossConfig(method=L.Method.ER_AML_TRIPLET, gamma=1.2,
                           triplet_margin=0.3)
    tau = model.head.tau
    cases = [
        ("er",
         lambda: L.er_loss(model, x_in, y_in, x_bf, y_bf).loss,
         lambda ws, bs, wh: R.ref_er(ws, bs, wh, tau, x_in, y_in, x_bf,
                                     y_bf, num_classes)),
        ("er-ace",
         lambda: L.er_ace_loss(model, x_in, y_in, x_bf, y_bf, sets).loss,
         lambda ws, bs, wh: R.ref_er_ace(ws, bs, wh, tau, x_in, y_in, x_bf,
                                         y_bf, sets.c_curr, sets.c_old)),
        ("ssil",
         lambda: L.ssil_nodistill_loss(model, x_in, y_in, x_bf, y_bf, sets,
                                       toc, cot).loss,
         lambda ws, bs, wh: R.ref_ssil(ws, bs, wh, tau, x_in, y_in, x_bf,
                                       y_bf, sets.c_curr, toc, cot)),
        ("aml-supcon",
         lambda: L.er_aml_loss(model, x_in, y_in, x_bf, y_bf, pos_neg,
                               aml_cfg, buffer).loss,
         lambda ws, bs, wh: R.ref_er_aml(ws, bs, wh, tau, x_in, y_in, x_bf,
                                         y_bf, pairs, bsel, aml_cfg.gamma,
                                         aml_cfg.tau, num_classes)),
        ("aml-triplet",
         lambda: L.er_aml_loss(model, x_in, y_in, x_bf, y_bf, pos_neg,
                               tri_cfg, buffer).loss,
         lambda ws, bs, wh: R.ref_er_aml(ws, bs, wh, tau, x_in, y_in, x_bf,
                                         y_bf, pairs, bsel, tri_cfg.gamma,
                                         None, num_classes,
                                         triplet_margin=tri_cfg.triplet_margin)),
    ]
    params = model.parameters()
    nw = len(model.extractor.weights)
    for name, build, ref in cases:
        model.zero_grad()
        loss = build()
        if loss.requires_grad:
            loss.backward()
        numeric = R.central_diff(
            lambda arrs: ref(arrs[:nw], arrs[nw:-1], arrs[-1]),
            [p.data.copy() for p in params])
        for p, num in zip(params, numeric):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            R.assert_grads_close(grad, num, context=name)


def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(20260825)
    n_instances = 20   # x 5 composite losses = 100 checked instances
    for _ in range(n_instances):
        _fd_instance(rng)
    report(1, True, f"{5 * n_instances} finite-difference instances across "
                    "all composite losses at rtol 1e-4")


# 2. masking soundness -------------------------------------------------

def test_criterion_02_masking_soundness():
    rng = np.random.default_rng(2)
    worst = 0
    for _ in range(25):
        model = net.init_params([4, 5, 3], 6, 0.1, int(rng.integers(1 << 16)))
        x_in = rng.standard_normal((5, 4)).astype(np.float32)
        y_in = rng.integers(0, 2, size=5)
        sets = L.ClassIndexSets.derive(y_in, observed=range(4), num_classes=6)
        outside = sorted(set(range(6)) - sets.c_curr)

        def step(poke):
            if poke:
                model.head.W.data[outside] += rng.standard_normal(
                    (len(outside), 3)).astype(np.float32) * 100
            model.zero_grad()
            out = L.er_ace_loss(model, x_in, y_in,
                                np.zeros((0, 4), dtype=np.float32), [], sets)
            out.loss.backward()
            grads = tuple(p.grad.tobytes() if p.grad is not None else b""
                          for p in model.extractor.parameters())
            w_grad = model.head.W.grad
            in_rows = sorted(sets.c_curr)
            return (out.loss.data.tobytes(), grads,
                    w_grad[in_rows].tobytes(),
                    w_grad[outside].tobytes())

        base = step(poke=False)
        poked = step(poke=True)
        # value, extractor grads, in-set prototype grads all bit-identical
        assert base[:3] == poked[:3]
        # out-of-set prototypes receive exactly zero gradient
        assert poked[3] == bytes(len(poked[3]))
        worst += 1
    report(2, True, "out-of-set logits and prototypes are bit-exactly inert "
                    f"({worst} random states)")


# 3. first-task degenerate equivalence ---------------------------------

def test_criterion_03_er_equals_er_ace_on_first_task():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        num_classes = int(rng.integers(2, 5))
        model = net.init_params([4, 6, 3], num_classes, 0.1,
                                int(rng.integers(1 << 16)))
        x_in = rng.standard_normal((6, 4)).astype(np.float32)
        y_in = rng.integers(0, num_classes, size=6)
        while len(np.unique(y_in)) < num_classes:
            y_in = rng.integers(0, num_classes, size=6)  # universe == C_curr
        x_bf = rng.standard_normal((4, 4)).astype(np.float32)
        y_bf = rng.integers(0, num_classes, size=4)
        sets = L.ClassIndexSets.derive(y_in, observed=[],
                                       num_classes=num_classes)
        er = float(L.er_loss(model, x_in, y_in, x_bf, y_bf).loss.data)
        ace = float(L.er_ace_loss(model, x_in, y_in, x_bf, y_bf,
                                  sets).loss.data)
        worst = max(worst, abs(er - ace))
    report(3, worst <= 1e-7,
           f"max |ER - ER-ACE| over 50 first-task states = {worst:.2e} "
           "(tolerance 1e-7)")


# 4. reservoir correctness ---------------------------------------------

def test_criterion_04_reservoir_retention():
    trials = 10_000
    worst_sigma = 0.0
    for capacity, n in ((5, 100), (20, 200), (1, 2)):
        counts = np.zeros(n)
        xs = np.arange(n, dtype=np.float32)[:, None]
        for child in np.random.SeedSequence(42).spawn(trials):
            buf = ReplayBuffer(capacity, rng=np.random.default_rng(child))
            buf.reservoir_update(xs, np.arange(n))
            for s in buf.slots:
                counts[int(s.y)] += 1
        p = capacity / n
        sigma = np.sqrt(trials * p * (1 - p))
        dev = np.abs(counts - trials * p).max() / max(sigma, 1e-9)
        worst_sigma = max(worst_sigma, dev)
    report(4, worst_sigma <= 3.0,
           f"retention within {worst_sigma:.2f} sigma of M/N over "
           f"{trials} trials (bound 3 sigma)")


# 5. drift ordering ----------------------------------------------------

def test_criterion_05_drift_ordering(five_task_runs):
    er_d = np.array([_boundary_drift(r) for r in five_task_runs[("er", 20)]])
    ace_d = np.array([_boundary_drift(r)
                      for r in five_task_runs[("er-ace", 20)]])
    in_d = np.array([_boundary_drift(r)
                     for r in five_task_runs[("aml-in", 20)]])
    all_d = np.array([_boundary_drift(r)
                      for r in five_task_runs[("aml-all", 20)]])
    ace_wins = int((ace_d < er_d).sum())
    aml_wins = int((in_d < all_d).sum())
    ok = (ace_d.mean() < er_d.mean() and in_d.mean() < all_d.mean()
          and ace_wins >= 8 and aml_wins >= 8)
    report(5, ok,
           f"post-boundary drift ER-ACE {ace_d.mean():.4f} < ER "
           f"{er_d.mean():.4f} ({ace_wins}/10 wins); AML incoming-only "
           f"{in_d.mean():.4f} < all-classes {all_d.mean():.4f} "
           f"({aml_wins}/10 wins)")


# 6. accuracy ordering and buffer-size trend ---------------------------

def test_criterion_06_accuracy_ordering(five_task_runs):
    gaps = {}
    for cap in (20, 100, 500):
        gaps[cap] = (_final(five_task_runs[("er-ace", cap)]).mean()
                     - _final(five_task_runs[("er", cap)]).mean())
    aml_gap = (_final(five_task_runs[("aml-in", 20)]).mean()
               - _final(five_task_runs[("aml-all", 20)]).mean())
    ok = (gaps[20] >= 0.05 and aml_gap >= 0.05
          and gaps[20] > gaps[100] > gaps[500])
    report(6, ok,
           f"final-accuracy gaps at M=20: ER-ACE - ER = {gaps[20]:+.3f}, "
           f"AML(in) - AML(all) = {aml_gap:+.3f} (both >= 0.05); gap over "
           f"M grid {gaps[20]:+.3f} > {gaps[100]:+.3f} > {gaps[500]:+.3f}")


# 7. doubly-masked ablation pathology ----------------------------------

def test_criterion_07_current_task_ordering():
    ds = _bench_dataset(10)
    cur = {}
    for tag, method in (("er", L.Method.ER), ("er-ace", L.Method.ER_ACE),
                        ("ssil", L.Method.SSIL_NODISTILL)):
        runs = [_bench_run(ds, 10, method, s, hidden=(128, 128, 64),
                           lr=0.07, gamma=1.0) for s in SEEDS]
        cur[tag] = np.array([np.nanmean(r.log.current_task_accuracy)
                             for r in runs])
    gap_a = cur["er"].mean() - cur["er-ace"].mean()
    gap_b = cur["er-ace"].mean() - cur["ssil"].mean()
    ok = gap_a >= 0.05 and gap_b >= 0.05
    report(7, ok,
           f"run-averaged current-task accuracy ER {cur['er'].mean():.3f} > "
           f"ER-ACE {cur['er-ace'].mean():.3f} > doubly-masked "
           f"{cur['ssil'].mean():.3f} (gaps {gap_a:+.3f}, {gap_b:+.3f}, "
           "both >= 0.05)")


# 8. gradient-norm spike at the boundary -------------------------------

def test_criterion_08_boundary_gradient_spike():
    ds = _bench_dataset(4)

    def window_norm(method, seed):
        r = _bench_run(ds, 4, method, seed)
        g = np.array(r.log.grad_norm_trace)
        b = len(g) // 2   # the single task boundary
        return float(np.mean(g[b:b + 20]))

    ratios = np.array([window_norm(L.Method.ER, s)
                       / window_norm(L.Method.ER_ACE, s) for s in SEEDS])
    geomean = float(np.exp(np.mean(np.log(ratios))))
    report(8, geomean >= 2.0,
           f"old-feature gradient norm in the 20 steps after the boundary: "
           f"ER / ER-ACE geometric mean {geomean:.2f}x (threshold 2x, "
           f"min seed {ratios.min():.2f}x)")


# 9. blurry stream calibration -----------------------------------------

def test_criterion_09_blurry_calibration():
    ds = S.make_synthetic(
        S.SyntheticDatasetSpec(input_dim=8, num_classes=10,
                               samples_per_class=500, noise_sigma=0.5),
        seed=0)

    def measured(cfg):
        vals = []
        for seed in (0, 1, 2):
            st = S.make_stream(ds, S.StreamConfig(
                num_classes=10, classes_per_task=2, samples_per_class=500,
                batch_size=10, mode=S.StreamMode.BLURRY, seed=seed,
                target_unique_labels=cfg))
            vals.extend(len(np.unique(b.labels)) for b in st.batches)
        return float(np.mean(vals))

    default = measured(2.0)
    ok = abs(default - 2.0) <= 0.3
    sweep = {}
    for level in (1.0, 2.0, 3.0, 4.0, 5.0):
        sweep[level] = measured(level)
        ok = ok and abs(sweep[level] - level) <= 0.3
    report(9, ok,
           f"default blurry stream averages {default:.3f} unique labels "
           "per batch of 10 (target 2.0 +/- 0.3); sweep levels 1-5 measure "
           + ", ".join(f"{sweep[l]:.2f}" for l in sorted(sweep))
           + " (each +/- 0.3)")


# 10. metric arithmetic and cost ledgers -------------------------------

def test_criterion_10_metric_arithmetic():
    # hand fixtures
    aaa_ok = M.averaged_anytime_accuracy([0.8, 0.6, 0.4]) == 0.6
    aa_ok = M.anytime_accuracy_from_dict({0: 1.0, 1: 0.5, 2: 0.0}) == 0.5
    mat = np.array([[0.9, np.nan], [0.7, 0.8], [0.5, 0.6]])
    forget_ok = abs(M.forgetting(mat) - 0.4) < 1e-15

    # analytic FLOPs equal the closed-form total for a plain replay run
    ds = S.make_synthetic(
        S.SyntheticDatasetSpec(input_dim=4, num_classes=4,
                               samples_per_class=50, noise_sigma=0.3),
        seed=0)
    scfg = S.StreamConfig(num_classes=4, classes_per_task=2,
                          samples_per_class=50, batch_size=5, seed=0)
    tcfg = TR.TrainerConfig(loss=L.LossConfig(method=L.Method.ER), lr=0.05,
                            rehearsal_batch_size=5, eval_every=10,
                            buffer_capacity=8, hidden_sizes=(8, 4), seed=0)
    er = TR.run(ds, scfg, tcfg)
    per_sample = net.forward_flops_per_sample(er.model)
    stream = S.make_stream(ds, scfg)
    state = TR.build_state(ds, stream, tcfg)
    total = 0
    for batch in stream:
        _, y_bf = state.buffer.sample(tcfg.rehearsal_batch_size)
        total += len(batch.labels) + len(y_bf)
        state.buffer.reservoir_update(batch.inputs, batch.labels)
    flops_ok = er.ledger.train_flops == 3 * total * per_sample

    # the asymmetric loss adds no computational overhead: ledgers bit-equal
    from dataclasses import replace
    ace = TR.run(ds, scfg, replace(
        tcfg, loss=L.LossConfig(method=L.Method.ER_ACE)))
    ledger_ok = (er.ledger.train_flops == ace.ledger.train_flops
                 and er.ledger.eval_flops == ace.ledger.eval_flops
                 and er.ledger.mem_byte_steps == ace.ledger.mem_byte_steps)

    ok = aaa_ok and aa_ok and forget_ok and flops_ok and ledger_ok
    report(10, ok,
           "AAA/AA/forgetting fixtures exact; ER train FLOPs equal the "
           f"closed form ({er.ledger.train_flops:,}); ER and ER-ACE "
           "ledgers bit-equal")


# 11. determinism ------------------------------------------------------

def test_criterion_11_byte_identical_reports(tmp_path):
    cfg = parse_config(overrides={
        "input_dim": 4, "num_classes": 4, "samples_per_class": 30,
        "noise_sigma": 0.3, "classes_per_task": 2, "batch_size": 5,
        "rehearsal_batch_size": 5, "eval_every": 6, "buffer_capacity": 8,
        "hidden_sizes": [8, 4], "seeds": [0, 1]})
    run_experiment(cfg, out_dir=str(tmp_path / "a"), now="T0")
    run_experiment(cfg, out_dir=str(tmp_path / "b"), now="T0")
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    report(11, a == b,
           f"two identically configured runs wrote byte-identical "
           f"reports ({len(a)} bytes)")
