"""Acceptance suite: one test per criterion at its stated tolerance and time
budget. A PASS/FAIL line per criterion appears in the terminal summary."""

import itertools
import random
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from msyolo.blocks import DCFEM, DWR, LADS, MSDRM, DcfemConfig, DwrConfig, LadsConfig, MsDrmConfig
from msyolo.cli import main
from msyolo.configs import bundled_config
from msyolo.core import Rng, Tensor, load_tensor, ops, save_tensor
from msyolo.detection import IOU_SWEEP, LabelFormatError, average_precision, evaluate, load_label_file
from msyolo.detection import pr_counts_to_metrics
from msyolo.gradsuite import CASES, randomize_module, run_case
from msyolo.graph import ConfigError, ToyTask, parse_model_config, train_toy

from corpora import random_corpus
from oracles import conv2d_direct, evaluate_brute
from test_blocks import zero_weights
from test_detection import det, gt, to_boxes

criterion = pytest.mark.criterion


def conv_case(rnd):
    cin = rnd.choice([2, 4, 6, 8])
    groups = rnd.choice([1, cin // 2, cin])
    cout = groups * rnd.randint(1, max(8 // groups, 1))
    k = rnd.choice([1, 2, 3])
    stride, padding, dilation = rnd.choice([1, 2]), rnd.choice([0, 1, 2]), rnd.choice([1, 2, 3])
    span = dilation * (k - 1) + 1
    h = rnd.randint(max(span - 2 * padding, 1), 8)
    w = rnd.randint(max(span - 2 * padding, 1), 8)
    return rnd.randint(1, 2), cin, cout, groups, k, stride, padding, dilation, h, w


@criterion(1, "convolution matches the direct oracle on 200 random cases")
def test_convolution_oracle_equivalence():
    rnd = random.Random(2024)
    start = time.perf_counter()
    worst = 0.0
    for case in range(200):
        n, cin, cout, groups, k, stride, padding, dilation, h, w = conv_case(rnd)
        rng = Rng(case)
        x = rng.normal((n, cin, h, w))
        wt = rng.normal((cout, cin // groups, k, k))
        b = rng.normal((cout,)) if case % 2 else None
        got = ops.conv2d(Tensor(x, precision="single"), Tensor(wt, precision="single"),
                         None if b is None else Tensor(b, precision="single"),
                         stride=stride, padding=padding, dilation=dilation, groups=groups).data
        want = conv2d_direct(x.astype(np.float32), wt.astype(np.float32),
                             None if b is None else b.astype(np.float32), stride, padding, dilation, groups)
        assert got.shape == want.shape
        worst = max(worst, float(np.max(np.abs(got - want), initial=0.0)))
    elapsed = time.perf_counter() - start
    print(f"worst abs error {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-5
    assert elapsed < 30


@criterion(2, "gradcheck passes for every op and block on 5 seeds in double at 1e-5")
def test_gradient_suite():
    start = time.perf_counter()
    failures, worst = [], 0.0
    for name, seed in itertools.product(CASES, range(5)):
        report = run_case(name, seed, "double", tolerance=1e-5)
        worst = max(worst, report.max_rel_err)
        if not report.passed:
            failures.append(f"{name} seed {seed}\n{report.text()}")
    elapsed = time.perf_counter() - start
    print(f"{len(CASES)} cases, worst relative error {worst:.2e}, {elapsed:.1f} s")
    assert not failures, "\n".join(failures)
    assert {"cbs", "dwr", "msdrm", "dcfem", "lads"} <= set(CASES)
    assert elapsed < 120


def dcfem_parts(seed, logit_bias=None, c=8, spread=1.0):
    mod = DCFEM(DcfemConfig(c, c + 4, c, 3, 4), precision="double")
    randomize_module(mod, Rng(seed))
    if logit_bias is not None:
        mod.weight_fc2._params["weight"].data[...] = 0.0
        mod.weight_fc2._params["bias"].data[...] = logit_bias
    rng = Rng(seed + 100)
    b = Tensor(rng.normal((2, c, 6, 6)) * spread)
    n = Tensor(rng.normal((2, c + 4, 6, 6)) * spread)
    return mod.eval()(b, n, return_parts=True)[2]


@criterion(3, "DCFEM weight normalization, saturation and shape contract")
def test_dcfem_invariants():
    for seed in range(20):
        parts = dcfem_parts(seed, spread=1.0 + seed)
        wl, wg = parts["w_local"].data, parts["w_global"].data
        assert np.max(np.abs(wl + wg - 1.0)) <= 1e-6
        assert np.all((wl >= 0) & (wl <= 1) & (wg >= 0) & (wg <= 1))
    for seed in range(5):
        local = dcfem_parts(seed, [20.0, -20.0])
        np.testing.assert_allclose(local["f_fused"].data, local["f_local"].data, rtol=1e-8, atol=0)
        glob = dcfem_parts(seed, [-20.0, 20.0])
        expected = np.broadcast_to(glob["f_global"].data, glob["f_fused"].shape)
        np.testing.assert_allclose(glob["f_fused"].data, expected, rtol=1e-8, atol=0)
    for c, h in itertools.product((8, 32), (8, 16)):
        mod = DCFEM(DcfemConfig(c, 2 * c, c))
        mod.reset_parameters(Rng(c + h))
        outs = mod(Tensor(Rng(1).normal((1, c, h, h)), precision="single"),
                   Tensor(Rng(2).normal((1, 2 * c, h, h)), precision="single"))
        assert [o.shape for o in outs] == [(1, c, h, h), (1, c, h, h)]


@criterion(4, "LADS attention distribution, zeroed-attention mean and lads-report numbers")
def test_lads_invariants(capsys):
    for seed in range(20):
        mod = LADS(LadsConfig(8, 8, 4), precision="double")
        randomize_module(mod, Rng(seed))
        _, parts = mod.eval()(Tensor(Rng(seed + 1).normal((2, 8, 10, 6)) * (1 + seed)), return_parts=True)
        w = parts["weights"].data
        assert np.max(np.abs(w.sum(axis=1) - 1.0)) <= 1e-6 and np.all(w >= 0)

    for precision in ("single", "double"):
        mod = LADS(LadsConfig(8, 6, 2), precision=precision)
        randomize_module(mod, Rng(3))
        mod.attn._params["weight"].data[...] = 0.0
        mod.attn._params["bias"].data[...] = 0.0
        y, parts = mod.eval()(Tensor(Rng(4).normal((2, 8, 8, 8)), precision=precision), return_parts=True)
        s = [t.data for t in parts["sub_features"]]
        np.testing.assert_array_equal(y.data, (((s[0] + s[1]) + s[2]) + s[3]) * 0.25)

    assert main(["lads-report", "--cin", "64", "--cout", "64", "--groups", "64"]) == 0
    fields = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert fields["lads_params"] == "2820" and fields["baseline_params"] == "36928"
    assert float(fields["flop_ratio"]) < 0.1


@criterion(5, "all-point AP and mAP equal the brute-force evaluator on 500 corpora")
def test_metric_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(500):
        dets, gts = random_corpus(seed, max_images=5, max_boxes=6, n_classes=3)
        ds, gs = to_boxes(dets, gts)
        report = evaluate(ds, gs, IOU_SWEEP, "all-point")
        ap, maps = evaluate_brute(dets, gts, IOU_SWEEP, "all-point")
        assert set(ap) == set(report.ap)
        for key, want in ap.items():
            got = report.ap[key]
            assert (got is None) == (want is None), (seed, key)
            if want is not None:
                worst = max(worst, abs(got - float(want)))
        for t, want in maps.items():
            worst = max(worst, abs(report.map_at(t) - float(want)))
    elapsed = time.perf_counter() - start
    print(f"worst deviation {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert average_precision([True, False, True], 2, "all-point") == pytest.approx(5 / 6, abs=1e-9)
    assert elapsed < 60


@criterion(6, "precision, recall and two-class mAP spot checks")
def test_precision_recall_spot_checks():
    assert pr_counts_to_metrics(8, 2, 0) == {"precision": 0.8, "recall": 1.0}
    gs = [[gt(0, 0.3, 0.3, 0.2, 0.2), gt(1, 0.7, 0.7, 0.2, 0.2), gt(1, 0.2, 0.8, 0.2, 0.2),
           gt(1, 0.8, 0.2, 0.1, 0.1)]]
    ds = [[det(0, 0.9, 0.3, 0.3, 0.2, 0.2), det(0, 0.95, 0.6, 0.1, 0.1, 0.1),
           det(1, 0.8, 0.7, 0.7, 0.2, 0.2), det(1, 0.7, 0.5, 0.5, 0.1, 0.1), det(1, 0.6, 0.2, 0.8, 0.2, 0.2)]]
    for method in ("all-point", "101-point"):
        rep = evaluate(ds, gs, [0.5], method)
        a, b = rep.ap[0, 0.5], rep.ap[1, 0.5]
        assert 0 < a < 1 and 0 < b < 1 and a != b
        assert rep.map50 == (a + b) / 2


@criterion(7, "zero-weight DWR is the identity and MS-DRM preserves extents over the grid")
def test_residual_identity_and_shape_grid():
    for precision, cfg in itertools.product(("single", "double"), (DwrConfig(6), DwrConfig(5, (1, 2)),
                                                                   DwrConfig(8, (1, 3, 5, 7), (1, 2, 2, 3)))):
        mod = DWR(cfg, precision=precision)
        mod.reset_parameters(Rng(0))
        zero_weights(mod)
        x = Tensor(Rng(1).normal((2, cfg.channels, 7, 9)), precision=precision)
        assert mod.eval()(x).data.tobytes() == x.data.tobytes()

    grid = itertools.product((3, 8), (4, 16), (3, 6), (1, 2, 3), ((1, 3, 5), (1, 2), (2, 4, 6, 8)),
                             ((1, 1), (5, 7), (8, 8)))
    checked = 0
    for cin, cout, hidden, n, dilations, (h, w) in grid:
        if hidden < len(dilations):
            continue
        mod = MSDRM(MsDrmConfig(cin, cout, hidden, n, dilations))
        mod.reset_parameters(Rng(checked))
        y = mod.eval()(Tensor(Rng(1).normal((1, cin, h, w)), precision="single"))
        assert y.shape == (1, cout, h, w)
        checked += 1
    assert checked == 2 * 2 * 3 * 3 * 3 + 2 * 2 * 1 * 3 * 2 * 3


@criterion(8, "toy training through DCFEM, LADS and MS-DRM reaches a tenth of its initial loss")
def test_toy_training():
    graph = parse_model_config(bundled_config("demo_stack"))
    kinds = {layer.kind for layer in graph.layers}
    assert {"dcfem", "lads", "msdrm"} <= kinds
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        losses = train_toy(graph, ToyTask(samples=8), steps=500, seed=0)
    elapsed = time.perf_counter() - start
    ratio = losses[-1] / losses[0]
    print(f"initial {losses[0]:.4f}, final {losses[-1]:.4f}, ratio {ratio:.4f}, {elapsed:.1f} s")
    assert len(losses) == 500 and ratio < 0.1
    assert elapsed < 120
    with threadpool_limits(limits=1):
        assert train_toy(graph, ToyTask(samples=8), steps=500, seed=0) == losses
    with threadpool_limits(limits=4):
        assert train_toy(graph, ToyTask(samples=8), steps=500, seed=0) == losses


def cli_outputs(tmp, demo, eval3):
    """Run every subcommand once and return the bytes of every output."""
    tmp.mkdir()
    outputs = {}

    def call(name, *argv):
        out = tmp / f"{name}.stdout"
        assert main([str(a) for a in argv] + ["--out", str(out)]) == 0
        # summaries echo output paths, which differ between the two runs
        outputs[name] = out.read_bytes().replace(str(tmp).encode(), b"<run>")

    call("shapes", "shapes", "--model", demo)
    call("init", "init-weights", "--model", demo, "--weights", tmp / "w", "--seed", 5)
    save_tensor(tmp / "x.mst", Tensor(Rng(6).normal((2, 4, 8, 8)), precision="single"))
    call("forward", "forward", "--model", demo, "--weights", tmp / "w", "--input", tmp / "x.mst",
         "--output-dir", tmp / "fwd")
    call("gradcheck", "gradcheck", "lads", "--seed", 2)
    call("train", "train-toy", "--model", demo, "--steps", 20, "--output", tmp / "loss.tsv", "--seed", 1)
    call("eval", "eval", "--gt", eval3 / "gt", "--pred", eval3 / "pred", "--manifest", eval3 / "manifest.txt",
         "--output-dir", tmp / "eval")
    call("lads", "lads-report")
    for d in ("w", "fwd", "eval"):
        for p in sorted((tmp / d).iterdir()):
            outputs[f"{d}/{p.name}"] = p.read_bytes()
    outputs["loss.tsv"] = (tmp / "loss.tsv").read_bytes()
    return outputs


@criterion(9, "bit-identical reruns, exact tensor round trip and line-numbered errors")
def test_determinism_and_formats(tmp_path, capsys):
    from test_detection import EVAL3

    demo = tmp_path / "demo.cfg"
    demo.write_text(bundled_config("demo_stack"))
    first = cli_outputs(tmp_path / "a", demo, EVAL3)
    second = cli_outputs(tmp_path / "b", demo, EVAL3)
    assert sorted(first) == sorted(second)
    assert len([k for k in first if k.startswith("w/")]) > 10
    for key in first:
        assert first[key] == second[key], key

    rng = np.random.default_rng(0)
    for rank, dtype in itertools.product(range(5), (np.float32, np.float64)):
        shape = tuple(int(s) for s in rng.integers(1, 5, size=rank))
        data = rng.standard_normal(shape).astype(dtype)
        if data.size:
            data.flat[0] = -0.0
        save_tensor(tmp_path / "t.mst", Tensor(data))
        back = load_tensor(tmp_path / "t.mst")
        assert back.shape == shape and back.data.dtype == dtype and back.data.tobytes() == data.tobytes()

    with pytest.raises(ConfigError) as info:
        parse_model_config("input x 1 4 4 4\ncbs y from=x cout=4\nlads z from=y cout=four\n")
    assert info.value.line == 3 and "line 3:" in str(info.value)
    bad = tmp_path / "bad.cfg"
    bad.write_text("input x 1 4 4 4\n\ndcfem f from=x c=4\n")
    capsys.readouterr()
    assert main(["shapes", "--model", str(bad)]) == 1
    assert f"{bad}: line 3:" in capsys.readouterr().err
    labels = tmp_path / "l.txt"
    labels.write_text("0 0.5 0.5 0.2 0.1\n0 0.5 0.5 0.2\n")
    with pytest.raises(LabelFormatError, match=r"l\.txt:2:"):
        load_label_file(labels)
