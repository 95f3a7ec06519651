"""Acceptance experiments: one test per criterion, printing PASS/FAIL lines.

These run the headline configurations end to end at desk scale. Budget about
an hour in total on two cores (`pytest tests/test_acceptance.py -v -s`).
Data resolution is handled by the session fixtures: real MNIST when present,
otherwise the cached synthetic surrogate corpus in canonical IDX format.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

from cimsim import cli, data, nn, persist
from cimsim.crossbar import CrossbarConfig, SynapseArray, quantization_step, quantize_weight
from cimsim.device import DeviceParams, SramAdcParams, load_device_preset
from cimsim.nn import HardwareContext, TrainConfig, build_network
from cimsim.snn import SnnConfig, load_snn_preset, run_snn, stdp_delta
from cimsim.variation import VariationSpec

from oracles import loop_matmul

pytestmark = pytest.mark.acceptance

RRAM = load_device_preset("rram-ni-hfo2-tin")
FEFINFET = load_device_preset("fe-finfet-10nm")
IDEAL = DeviceParams(g_max=1e-6, g_min=1e-14, theta_ltp=100.0, theta_ltd=100.0)


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


def hardware(device, b, mode="reset_and_set", c2c=0.0, d2d=0.0, seed=0):
    return HardwareContext(
        device=device,
        crossbar=CrossbarConfig(rows=1, cols=1, bit_precision=b, update_mode=mode),
        c2c=VariationSpec("normal", 0.0, c2c),
        d2d=VariationSpec("normal", 0.0, d2d),
        seed=seed)


# pre-batch-norm baseline: plain crossbar MACs only (no bias rows, no norm)
MLP_NO_BN = nn.NetworkSpec((
    nn.LayerSpec("flatten"),
    nn.LayerSpec("dense", {"units": 200, "bias": False}),
    nn.LayerSpec("activation", {"fn": "relu"}),
    nn.LayerSpec("dense", {"units": 10, "bias": False}),
    nn.LayerSpec("activation", {"fn": "softmax"}),
), "mlp_nobn")


def test_criterion_1_binary_mlp_full_corpus(mnist_source):
    """1-bit 2D1S MLP, theta 0.2476, SGD 0.005, batch norm, no variation."""
    t0 = time.time()
    net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                        hardware=hardware(RRAM, 1), seed=0)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=30,
                      batch_size=16, seed=0)
    record = nn.train(net, mnist_source["train"], mnist_source["test"], cfg)
    acc = record.final_test_acc
    report("criterion 1 (binary MLP, 30 epochs, full corpus)",
           acc >= 0.92,
           f"test accuracy {acc:.4f} (target >= 0.92) "
           f"in {(time.time() - t0) / 60:.1f} min")


@pytest.mark.slow
def test_criterion_1_stretch_200_epochs(mnist_source):
    """Published headline: 95.18% at 200 epochs (tolerance band needs real MNIST)."""
    net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                        hardware=hardware(RRAM, 1), seed=0)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=200,
                      batch_size=16, seed=0)
    record = nn.train(net, mnist_source["train"], mnist_source["test"], cfg,
                      verbose=True)
    acc = record.final_test_acc
    lo, hi = 0.9518 - 0.015, 0.9518 + 0.015
    if mnist_source["real"]:
        ok = lo <= acc <= hi
        detail = f"accuracy {acc:.4f}, published band [{lo:.4f}, {hi:.4f}]"
    else:
        ok = acc >= lo
        detail = (f"accuracy {acc:.4f} >= {lo:.4f} (surrogate corpus: upper "
                  f"band only meaningful on real MNIST)")
    report("criterion 1 stretch (200 epochs)", ok, detail)


def test_criterion_2_bitwidth_ordering_linear_update(mnist_10k):
    """Conventional linear update on an ideal linear device: 7/8-bit learn,
    1/2/4-bit cannot."""
    train_ds, test_ds = mnist_10k
    t0 = time.time()
    accs = {}
    for b in (1, 2, 4, 7, 8):
        net = build_network(MLP_NO_BN, (28, 28, 1),
                            hardware=hardware(IDEAL, b, "linear"), seed=0)
        cfg = TrainConfig(optimizer="adam", learning_rate=0.01, epochs=20,
                          batch_size=32, seed=0)
        accs[b] = nn.train(net, train_ds, test_ds, cfg).final_test_acc
    ok = (accs[7] > 0.85 and accs[8] > 0.85
          and all(accs[b] < 0.30 for b in (1, 2, 4)))
    report("criterion 2 (bit-width ordering under linear update)", ok,
           f"{ {b: round(a, 3) for b, a in accs.items()} } "
           f"(need 7,8 > 0.85; 1,2,4 < 0.30) in {(time.time() - t0) / 60:.1f} min")


def test_criterion_3_d2d_robustness(mnist_10k):
    """Frozen device offsets barely move a binary net; 32-bit degrades."""
    train_ds, test_ds = mnist_10k
    means = {}
    for b in (1, 32):
        net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                            hardware=hardware(RRAM, b), seed=0)
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=10,
                          batch_size=16, seed=0)
        nn.train(net, train_ds, test_ds, cfg)
        container = persist.from_network(net)
        for sigma in (0.0, 0.1, 0.2):
            accs = []
            for seed in range(5):
                fresh = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                                      hardware=hardware(RRAM, b, d2d=sigma,
                                                        seed=100 + seed), seed=0)
                persist.restore_into(fresh, container)
                accs.append(nn.infer(fresh, test_ds))
            means[(b, sigma)] = float(np.mean(accs))
    binary_span = max(means[(1, s)] for s in (0.0, 0.1, 0.2)) - \
        min(means[(1, s)] for s in (0.0, 0.1, 0.2))
    high_drop = means[(32, 0.0)] - means[(32, 0.2)]
    ok = binary_span <= 0.02 and high_drop >= 0.05
    report("criterion 3 (D2D robustness, 5 seeds)", ok,
           f"binary span {binary_span * 100:.2f} pts (<= 2); "
           f"32-bit drop at sigma 0.2: {high_drop * 100:.2f} pts (>= 5); "
           f"means { {k: round(v, 4) for k, v in means.items()} }")


def test_criterion_4_nonlinearity_robustness(mnist_10k):
    """Erase-then-program training with batch norm stays above 90% across theta."""
    train_ds, test_ds = mnist_10k
    results = {}
    for b in (1, 4):
        for theta in (0.1, 1.0, 100.0):
            device = dataclasses.replace(RRAM, theta_ltp=theta, theta_ltd=theta)
            net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                                hardware=hardware(device, b), seed=0)
            cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=10,
                              batch_size=16, seed=0)
            results[(b, theta)] = nn.train(net, train_ds, test_ds,
                                           cfg).final_test_acc
    ok = all(a > 0.90 for a in results.values())
    report("criterion 4 (nonlinearity robustness)", ok,
           f"{ {k: round(v, 4) for k, v in results.items()} } (all > 0.90)")


def test_criterion_5_sram_collapse_and_recovery(mnist_10k):
    """4-bit nonlinear bitline ADC collapses a float net; retraining recovers."""
    train_ds, test_ds = mnist_10k
    net = build_network(nn.mlp_784_200_10(), (28, 28, 1), seed=3)
    nn.train(net, train_ds, test_ds,
             TrainConfig(optimizer="adam", learning_rate=0.001, epochs=10,
                         batch_size=32, seed=3))
    clean = nn.infer(net, test_ds)
    params = SramAdcParams(theta_sram=0.5, adc_bits=4, v_min=0.0, v_max=1.0)
    net.enable_sram_adc(params, train_ds.images[:256])
    collapsed = nn.infer(net, test_ds)
    record = nn.retrain(net, train_ds, test_ds,
                        TrainConfig(optimizer="adam", learning_rate=3e-4,
                                    epochs=10, batch_size=32, seed=4))
    recovered = record.final_test_acc
    ok = (clean - collapsed >= 0.30) and (clean - recovered <= 0.07)
    report("criterion 5 (SRAM ADC collapse and retrain recovery)", ok,
           f"clean {clean:.4f} -> collapsed {collapsed:.4f} "
           f"(drop {100 * (clean - collapsed):.1f} pts, need >= 30) -> "
           f"recovered {recovered:.4f} (gap {100 * (clean - recovered):.1f} pts, "
           f"need <= 7)")


def test_criterion_6_accumulated_update_benefit(mnist_10k):
    """Buffered threshold-gated writes beat plain in-situ updates under cycle
    noise: without the buffer, every sub-step weight change is lost to the
    write grid while fresh programming noise still lands on every cell."""
    train_ds, test_ds = mnist_10k
    hzo = load_device_preset("fefet-hzo")
    accs = {}
    for label, mode, resident in (("without", "reset_and_set", True),
                                  ("with", "accumulated", False)):
        ctx = HardwareContext(
            device=hzo,
            crossbar=CrossbarConfig(rows=1, cols=1, bit_precision=7,
                                    update_mode=mode),
            c2c=VariationSpec("normal", 0.0, 0.05),
            seed=0, device_resident=resident)
        net = build_network(nn.mlp_784_200_10(), (28, 28, 1), hardware=ctx, seed=0)
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.01, epochs=15,
                          batch_size=16, seed=0)
        accs[label] = nn.train(net, train_ds, test_ds, cfg).final_test_acc
    gain = accs["with"] - accs["without"]
    report("criterion 6 (accumulated update benefit at sigma_c2c 0.05)",
           gain >= 0.03,
           f"with accumulation {accs['with']:.4f} vs without "
           f"{accs['without']:.4f}: gain {gain * 100:.2f} pts (>= 3)")


def test_criterion_7_lenet5_fefinfet(mnist_10k):
    """1-bit LeNet-5 on the FeFinFET preset with its published variations."""
    train_ds, test_ds = mnist_10k
    t0 = time.time()
    ctx = HardwareContext(
        device=FEFINFET,
        crossbar=CrossbarConfig(rows=1, cols=1, bit_precision=1,
                                update_mode="reset_and_set"),
        c2c=VariationSpec("normal", 0.0, 0.01),
        d2d=VariationSpec("normal", 0.0, 0.02),
        seed=0)
    net = build_network(nn.lenet5(), (28, 28, 1), hardware=ctx, seed=0)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.01, epochs=15,
                      batch_size=16, seed=0)
    acc = nn.train(net, train_ds, test_ds, cfg).final_test_acc
    report("criterion 7 (1-bit LeNet-5, FeFinFET preset)", acc >= 0.97,
           f"test accuracy {acc:.4f} (target >= 0.97) "
           f"in {(time.time() - t0) / 60:.1f} min")


def test_criterion_8_snn(mnist_10k):
    """Unsupervised spiking network, 100 neurons, device STDP preset."""
    train_ds, test_ds = mnist_10k
    t0 = time.time()
    preset = load_snn_preset("snn-pt-hfo2-tion-tin")
    result = run_snn(train_ds, test_ds, preset, n_neurons=100,
                     cfg=SnnConfig(seed=0), assign_subset=4000)
    chance = 1.0 / train_ds.n_classes
    ok = result.accuracy >= 0.60 and result.accuracy >= 6 * chance
    report("criterion 8 (spiking network, 100 neurons)", ok,
           f"test accuracy {result.accuracy:.4f} "
           f"(targets >= 0.60 and >= 6x chance {chance:.2f}) "
           f"in {(time.time() - t0) / 60:.1f} min")


@pytest.mark.slow
def test_criterion_8_snn_400_neurons(mnist_source):
    """Optional long run at the published 400-neuron scale."""
    preset = load_snn_preset("snn-pt-hfo2-tion-tin")
    result = run_snn(mnist_source["train"], mnist_source["test"], preset,
                     n_neurons=400, cfg=SnnConfig(seed=0), assign_subset=10000,
                     verbose=True)
    report("criterion 8 stretch (400 neurons, full corpus)",
           result.accuracy >= 0.70,
           f"test accuracy {result.accuracy:.4f} (published full-scale 88.81%)")


def test_criterion_9_property_suites(tmp_path, small_digits):
    """Composite fast gate over the core invariants (< 2 min)."""
    t0 = time.time()
    checks = []

    from cimsim import device as curve

    # device curve endpoints, monotonicity, inversion (exhaustive over pulses)
    p = RRAM.with_p_max(512)
    pulses = np.arange(513)
    ltp = curve.ltp_weight(pulses, p)
    checks.append(("curve endpoints", abs(ltp[0] - p.w_min) < 1e-12
                   and abs(ltp[-1] - p.w_max) < 1e-12))
    checks.append(("curve monotone", bool(np.all(np.diff(ltp) > 0))))
    checks.append(("pulse inversion", bool(np.array_equal(
        curve.pulses_for_weight(ltp, p), pulses))))

    # MAC equals the loop oracle on ideal devices
    ok_mac = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        rows, cols = 4 + seed, 3 + seed % 4
        arr = SynapseArray.create(IDEAL, CrossbarConfig(rows=rows, cols=cols,
                                                        bit_precision=32), seed=seed)
        w = rng.uniform(-0.9, 0.9, (rows, cols))
        arr.write_weights(w)
        x = rng.random((2, rows))
        ok_mac &= bool(np.allclose(arr.mac(x), np.array(loop_matmul(
            x.tolist(), w.tolist())), rtol=1e-6, atol=1e-6 * rows))
    checks.append(("mac oracle (10 instances)", ok_mac))

    # quantizer level counts
    dense_w = np.linspace(-1, 1, 200001)
    checks.append(("quantizer counts", all(
        len(np.unique(quantize_weight(dense_w, b))) == 2 ** (b + 1) - 1
        for b in (2, 4, 6)) and len(np.unique(quantize_weight(dense_w, 1))) == 2))

    # erase-then-program round trip within half a step
    hzo = load_device_preset("fefet-hzo", p_max=512)
    arr = SynapseArray.create(hzo, CrossbarConfig(rows=16, cols=16,
                                                  bit_precision=4), seed=1)
    target = quantize_weight(np.random.default_rng(1).uniform(-1, 1, (16, 16)), 4)
    arr.write_weights(target)
    checks.append(("write round trip", bool(
        np.max(np.abs(arr.read_weights() - target)) <= quantization_step(4) / 2)))

    # ADC endpoint identities
    mac_nlop = curve.mac_nlop
    s = SramAdcParams(theta_sram=0.5, adc_bits=4, v_min=0.1, v_max=1.0)
    checks.append(("adc endpoints", mac_nlop(s.v_min, s) == 0
                   and mac_nlop(s.v_max, s) == 8))

    # batch-norm statistics
    bn = nn.BatchNorm(6)
    out = bn.forward(np.random.default_rng(2).normal(3.0, 2.0, (128, 6)), True)
    checks.append(("batch norm stats", bool(
        np.allclose(out.mean(0), 0, atol=1e-6)
        and np.allclose(out.var(0), 1, atol=1e-2))))

    # finite-difference gradient check on a dense+relu stack
    layer = nn.Dense(8, 5, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(4, 8))
    proj = np.random.default_rng(5).normal(size=(4, 5))
    layer.forward(x, True)
    analytic = layer.backward(proj)
    eps = 1e-5
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        x[idx] += eps
        up = float(np.sum(layer.forward(x, True) * proj))
        x[idx] -= 2 * eps
        down = float(np.sum(layer.forward(x, True) * proj))
        x[idx] += eps
        num[idx] = (up - down) / (2 * eps)
    layer.forward(x, True)
    checks.append(("gradient check", bool(
        np.max(np.abs(analytic - num) / np.maximum(np.abs(num), 1e-6)) < 1e-4)))

    # STDP sign antisymmetry and bounds
    pt = load_snn_preset("snn-pt-hfo2-tion-tin")
    dts = np.geomspace(1e-6, 1e-3, 20)
    checks.append(("stdp antisymmetry", bool(
        all(stdp_delta(dt, pt) * stdp_delta(-dt, pt) < 0 for dt in dts))))
    checks.append(("stdp peak bounds", stdp_delta(0.0, pt) <= pt.w_max_rel))

    # IDX fixture parsing
    train, test = small_digits
    data.write_idx(train.images[:5], train.labels[:5], str(tmp_path), "train")
    data.write_idx(test.images[:3], test.labels[:3], str(tmp_path), "test")
    loaded_train, loaded_test = data.load_mnist(str(tmp_path))
    checks.append(("idx fixtures", len(loaded_train) == 5 and len(loaded_test) == 3))

    # persist round trip is byte-exact
    net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                        hardware=hardware(IDEAL, 4), seed=0)
    c1_path, c2_path = str(tmp_path / "a.cimf"), str(tmp_path / "b.cimf")
    persist.save(persist.from_network(net), c1_path)
    persist.save(persist.load(c1_path), c2_path)
    checks.append(("persist idempotent", open(c1_path, "rb").read() ==
                   open(c2_path, "rb").read()))

    # seed determinism across sweep parallelism
    cfg = {
        "experiment": "gate", "seed": 2,
        "dataset": {"name": "mnist", "dir": None, "subset": 200},
        "network": {"preset": "mlp_784_200_10"},
        "device": {"preset": "rram-ni-hfo2-tin"},
        "crossbar": {"bit_precision": 1},
        "train": {"optimizer": "sgd", "learning_rate": 0.01, "epochs": 1,
                  "batch_size": 20},
    }
    idx_dir = tmp_path / "gate-data"
    data.write_idx(train.images[:250], train.labels[:250], str(idx_dir), "train")
    data.write_idx(test.images[:80], test.labels[:80], str(idx_dir), "test")
    cfg["dataset"]["dir"] = str(idx_dir)
    cfg_path = tmp_path / "gate.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = []
    for jobs in (1, 2):
        out = tmp_path / f"sweep-{jobs}"
        rc = cli.main(["sweep", "--config", str(cfg_path), "--axis", "d2d.sigma",
                       "--values", "0,0.05", "--jobs", str(jobs),
                       "--out", str(out)])
        outs.append((rc, (out / "sweep.csv").read_text()))
    checks.append(("sweep determinism across jobs",
                   outs[0][0] == outs[1][0] == 0 and outs[0][1] == outs[1][1]))

    elapsed = time.time() - t0
    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"  [{'ok' if ok else 'FAIL'}] {name}", flush=True)
    report("criterion 9 (property gate)", not failed and elapsed < 120,
           f"{len(checks)} checks, failures: {failed or 'none'}, "
           f"{elapsed:.0f}s (< 120)")
