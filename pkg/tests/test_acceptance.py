"""Acceptance suite: one check per shipped claim, one pass/fail line each.

Each test prints exactly one line of the form

    PASS criterion N: <what was checked> (<measured numbers>)

through pytest's terminal reporter, which writes to the live console even
while file-descriptor capture is active, then asserts.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dctnet import tensor as T
from dctnet.analysis import conv_macs, count_macs, count_model_params, count_params, dct_perceptron_macs
from dctnet.data import synthetic_dataset
from dctnet.dct import FAST, NAIVE, dct1d, dct2d_op, idct1d, idct2d_op, make_plan
from dctnet.filtering import kernel_to_multipliers, sym_conv_spatial
from dctnet.models import build_model
from dctnet.perceptron import DctPerceptronConfig, PodParams, init_pods, layer_forward, pod_forward
from dctnet.tensor import Parameter, Tensor, add
from dctnet.train import TrainConfig, load_checkpoint, save_checkpoint, train

from util import fd_gradcheck


_TERMINAL = None


@pytest.fixture(autouse=True)
def _grab_terminal_reporter(request):
    global _TERMINAL
    _TERMINAL = request.config.pluginmanager.get_plugin("terminalreporter")
    yield


def report(num: int, summary: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {summary}"
    if detail:
        line += f" ({detail})"
    if _TERMINAL is not None:
        _TERMINAL.ensure_newline()
        _TERMINAL.write_line(line)
    else:
        print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def test_criterion_1_transform_round_trip():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    round_trip_err = 0.0
    for n in (1, 2, 4, 7, 8, 16, 32, 56):
        x = rng.standard_normal((100, n))
        plan = make_plan(n)
        round_trip_err = max(round_trip_err, float(np.abs(idct1d(plan, dct1d(plan, x)) - x).max()))
    backend_err = 0.0
    for n in (1, 2, 4, 8, 16, 32):
        x = rng.standard_normal((100, n))
        a = dct1d(make_plan(n, NAIVE), x)
        b = dct1d(make_plan(n, FAST), x)
        backend_err = max(backend_err, float(np.abs(a - b).max()))
    elapsed = time.monotonic() - t0
    ok = round_trip_err < 1e-10 and backend_err < 1e-10 and elapsed < 10.0
    report(
        1,
        "1D round trip and backend agreement on N in {1,2,4,7,8,16,32,56}, 100 vectors each",
        ok,
        f"round-trip err {round_trip_err:.2e}, backend err {backend_err:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_convolution_theorem():
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    filter_err = 0.0
    for n in (4, 8, 16):
        plan = make_plan(n)
        for k in (1, 2, 3):
            for _ in range(100):
                x = rng.standard_normal(n)
                w = rng.standard_normal(k)
                v = kernel_to_multipliers(w, n)
                spectral = idct1d(plan, dct1d(plan, x) * v)
                filter_err = max(filter_err, float(np.abs(spectral - sym_conv_spatial(x, w)).max()))
    operator_err = 0.0
    for n in (4, 8, 16):
        plan = make_plan(n)
        eye = np.eye(n)
        for k in (1, 2, 3):
            w = rng.standard_normal(k)
            v = kernel_to_multipliers(w, n)
            spatial_mat = np.stack([sym_conv_spatial(eye[i], w) for i in range(n)], axis=1)
            spectral_mat = np.stack([idct1d(plan, dct1d(plan, eye[i]) * v) for i in range(n)], axis=1)
            operator_err = max(operator_err, float(np.abs(spatial_mat - spectral_mat).max()))
    elapsed = time.monotonic() - t0
    ok = filter_err < 1e-8 and operator_err < 1e-10 and elapsed < 30.0
    report(
        2,
        "transform-domain filtering equals symmetric convolution, N in {4,8,16}, K in {1,2,3}, 100 pairs",
        ok,
        f"filter err {filter_err:.2e}, operator err {operator_err:.2e}, {elapsed:.1f}s",
    )


def _kink_margin(x, cfg, pods):
    """Smallest |(|z| - T)| over all pods for soft thresholding on input x."""
    plan = make_plan(cfg.size)
    with T.no_grad():
        xd = dct2d_op(Tensor(x), plan, plan).data
    margin = np.inf
    for pod in pods:
        z = np.einsum("oc,bchw->bohw", pod.mix.data[0, 0], xd * pod.scale.data)
        margin = min(margin, float(np.abs(np.abs(z) - pod.threshold.data).min()))
    return margin


def test_criterion_3_gradient_checks():
    t0 = time.monotonic()
    rng = np.random.default_rng(2)
    worst = 0.0
    for pods_count in (1, 3):
        cfg = DctPerceptronConfig(8, 4, pods=pods_count)
        pods = init_pods(cfg, rng)
        for pod in pods:
            pod.scale.data[:] = rng.uniform(0.5, 1.5, pod.scale.shape)
            pod.threshold.data[:] = rng.uniform(0.05, 0.15, pod.threshold.shape)
        x = None
        for _ in range(50):
            candidate = rng.standard_normal((2, 4, 8, 8))
            if _kink_margin(candidate, cfg, pods) > 1e-3:
                x = Tensor(candidate, requires_grad=True)
                break
        assert x is not None, "could not draw an input clear of threshold kinks"
        targets = [x]
        for pod in pods:
            targets += [pod.scale, pod.mix, pod.threshold]
        scale = None

        def fn():
            nonlocal scale
            y = layer_forward(x, cfg, pods)
            if scale is None:
                scale = Tensor(np.full(y.shape, 1.0 / y.data.size))
            return T.tensor_sum(T.mul(T.mul(y, y), scale))

        worst = max(worst, fd_gradcheck(fn, targets, eps=1e-6, tol=1e-5))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    report(
        3,
        "finite differences confirm every layer parameter and input gradient, 1 and 3 pods, shape (2,4,8,8)",
        ok,
        f"worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_4_cifar_parameter_counts():
    targets = {
        "resnet20": 272_474,
        "dct_resnet20": 151_514,
        "tripod_dct_resnet20": 199_898,
        "resnet20_plus1dctp": 276_826,
    }
    mismatches = []
    for name, want in targets.items():
        by_formula = count_params(name)
        by_registry = count_model_params(build_model(name, seed=0))
        if by_formula != want or by_registry != want:
            mismatches.append(f"{name}: formula {by_formula}, registry {by_registry}, want {want}")
    report(
        4,
        "CIFAR parameter counts exact by formula and by registry enumeration",
        not mismatches,
        "; ".join(mismatches) or "all four frozen totals exact",
    )


def test_criterion_5_imagenet_parameter_counts():
    exact = {"resnet18": 11_689_512, "resnet50": 25_557_032}
    reported = {
        "dct_resnet18": 6_140_000,
        "tripod_dct_resnet18": 7_560_000,
        "dct_resnet50": 18_280_000,
        "tripod_dct_resnet50": 20_150_000,
    }
    problems = []
    for name, want in exact.items():
        got = count_params(name)
        if got != want:
            problems.append(f"{name}: {got} != {want}")
    worst_dev = 0.0
    for name, want in reported.items():
        got = count_params(name)
        dev = abs(got / want - 1.0)
        worst_dev = max(worst_dev, dev)
        if dev > 0.002:
            problems.append(f"{name}: {got} is {dev * 100:.2f}% from {want}")
    report(
        5,
        "ImageNet parameter counts: baselines exact, spectral variants within 0.2% of reported",
        not problems,
        "; ".join(problems) or f"worst deviation {worst_dev * 100:.3f}%",
    )


def test_criterion_6_mac_counts():
    layer_ok = (
        conv_macs(3, 8, 64, 64) == 2_359_296
        and dct_perceptron_macs(8, 64, 64, 1) == 329_984
        and dct_perceptron_macs(8, 64, 64, 3) == 862_464
    )
    budgets = {
        "resnet18": 1.822e9,
        "resnet50": 4.122e9,
        "dct_resnet50": 2.772e9,
        "tripod_dct_resnet50": 2.780e9,
    }
    devs = {name: count_macs(name) / want - 1.0 for name, want in budgets.items()}
    over = {name: dev for name, dev in devs.items() if abs(dev) > 0.02}
    detail = ", ".join(f"{name} {dev * 100:+.2f}%" for name, dev in devs.items())
    if not layer_ok:
        detail += "; single-layer formula values off"
    report(
        6,
        "MAC totals within 2% of reported budgets and single-layer formulas exact",
        layer_ok and not over,
        detail,
    )


def identity_pod(n, c):
    return PodParams(
        scale=Parameter(np.ones((1, 1, n, n))),
        mix=Parameter(np.eye(c)[None, None]),
        threshold=Parameter(np.zeros((1, 1, n, n)), nonneg=True),
    )


def test_criterion_7_layer_identities():
    rng = np.random.default_rng(3)
    n, c = 8, 4
    x = Tensor(rng.standard_normal((2, c, n, n)))

    cfg = DctPerceptronConfig(n, c, shortcut=True)
    doubled = layer_forward(x, cfg, [identity_pod(n, c)])
    double_err = float(np.abs(doubled.data - 2.0 * x.data).max())

    dead = identity_pod(n, c)
    dead.scale.data[:] = 0.0
    passed = layer_forward(x, cfg, [dead])
    dead_exact = np.array_equal(passed.data, x.data)

    tri_cfg = DctPerceptronConfig(n, c, pods=3)
    tri_pods = init_pods(tri_cfg, rng)
    for pod in tri_pods:
        pod.scale.data[:] = rng.standard_normal(pod.scale.shape)
        pod.threshold.data[:] = rng.uniform(0.0, 0.2, pod.threshold.shape)
    combined = layer_forward(x, tri_cfg, tri_pods)
    plan = make_plan(n)
    xd = dct2d_op(x, plan, plan)
    per_pod = None
    for pod in tri_pods:
        z = idct2d_op(pod_forward(xd, pod, tri_cfg.nonlinearity), plan, plan)
        per_pod = z if per_pod is None else add(per_pod, z)
    tri_err = float(np.abs(combined.data - per_pod.data).max())

    ok = double_err < 1e-10 and dead_exact and tri_err < 1e-10
    report(
        7,
        "identity pod doubles input, dead pod passes it through exactly, pod sum commutes with the inverse transform",
        ok,
        f"identity err {double_err:.2e}, dead exact {dead_exact}, tripod err {tri_err:.2e}",
    )


@pytest.mark.slow
def test_criterion_8_training_sanity(tmp_path):
    data_dir = os.environ.get("DCTNET_CIFAR10_DIR")
    dataset = "cifar10_bin" if data_dir else "synthetic"
    dataset_label = "CIFAR-10 binaries" if data_dir else "synthetic fallback (CIFAR-10 binaries absent)"

    def run(model, subdir):
        cfg = TrainConfig(
            model=model,
            dataset=dataset,
            data_dir=data_dir,
            checkpoint_dir=str(tmp_path / subdir),
        )
        t0 = time.monotonic()
        records, best_path, _ = train(cfg)
        elapsed = time.monotonic() - t0
        best_acc = max(r["test_acc"] for r in records)
        return best_acc, elapsed

    dct_acc, dct_minutes = run("dct_resnet20_stage1", "dct")
    base_acc, _ = run("resnet20_stage1", "baseline")
    dct_minutes /= 60.0
    gap = abs(dct_acc - base_acc) * 100
    ok = dct_acc >= 0.40 and dct_minutes <= 30.0 and gap <= 15.0
    report(
        8,
        f"reduced spectral model trains to 40% on 5,000 images in under 30 minutes, on the {dataset_label}",
        ok,
        f"spectral best {dct_acc * 100:.1f}% in {dct_minutes:.1f} min, conv baseline {base_acc * 100:.1f}%, gap {gap:.1f} points",
    )


def test_criterion_9_determinism_and_persistence(tmp_path):
    def cfg(subdir, epochs):
        return TrainConfig(
            model="dct_resnet20_stage1",
            subset=256,
            test_subset=256,
            batch_size=64,
            epochs=epochs,
            milestones=(2,),
            seed=0,
            checkpoint_dir=str(tmp_path / subdir),
        )

    train(cfg("a", 3))
    train(cfg("b", 3))
    log_a = (tmp_path / "a" / "train_log.jsonl").read_bytes()
    retrain_identical = log_a == (tmp_path / "b" / "train_log.jsonl").read_bytes()

    _, _, half_last = train(cfg("c", 2))
    train(cfg("c", 3), resume_from=str(half_last))
    resume_identical = (
        log_a == (tmp_path / "c" / "train_log.jsonl").read_bytes()
        and (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "c" / "last.ckpt").read_bytes()
    )

    ckpt_path = tmp_path / "a" / "last.ckpt"
    ckpt = load_checkpoint(ckpt_path)
    model = build_model(ckpt.spec(), seed=1, dtype=np.float32)
    from dctnet.train import SGD

    opt = SGD(list(model.named_parameters()))
    ckpt.restore(model, opt)
    rewritten = save_checkpoint(
        tmp_path / "rewrite.ckpt", model, opt, ckpt.epoch, ckpt.header["rng"]["seed"], ckpt.best_test_acc
    )
    round_trip_identical = ckpt_path.read_bytes() == Path(rewritten).read_bytes()

    ok = retrain_identical and resume_identical and round_trip_identical
    report(
        9,
        "fixed-seed retrain, checkpoint resume, and checkpoint round trip are all bit-identical",
        ok,
        f"retrain {retrain_identical}, resume {resume_identical}, round trip {round_trip_identical}",
    )
