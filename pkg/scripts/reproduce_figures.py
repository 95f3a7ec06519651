#!/usr/bin/env python3
"""Reproduce the headline device-nonideality studies as CSV tables.

Each study trains the 784-200-10 classifier on a seeded 10k subset and writes
one CSV per figure-style experiment into the output directory:

  bitwidth_linear_update.csv   accuracy vs bit precision, conventional linear
                               update on an ideal linear device
  d2d_robustness.csv           trained 1-bit vs 32-bit inference accuracy under
                               frozen device-to-device offsets
  theta_robustness.csv         reset-and-set training accuracy vs nonlinearity

Run: python scripts/reproduce_figures.py --mnist-dir DIR --out results/
"""

import argparse
import csv
import dataclasses
import os

import numpy as np

from cimsim import data, nn, persist
from cimsim.crossbar import CrossbarConfig
from cimsim.device import DeviceParams, load_device_preset
from cimsim.nn import HardwareContext, TrainConfig, build_network
from cimsim.variation import VariationSpec


def hardware(device, b, mode="reset_and_set", c2c=0.0, d2d=0.0, seed=0):
    return HardwareContext(
        device=device,
        crossbar=CrossbarConfig(rows=1, cols=1, bit_precision=b, update_mode=mode),
        c2c=VariationSpec("normal", 0.0, c2c),
        d2d=VariationSpec("normal", 0.0, d2d),
        seed=seed)


def bitwidth_linear_update(train_ds, test_ds, out_path):
    spec = nn.NetworkSpec((
        nn.LayerSpec("flatten"),
        nn.LayerSpec("dense", {"units": 200}),
        nn.LayerSpec("activation", {"fn": "relu"}),
        nn.LayerSpec("dense", {"units": 10}),
        nn.LayerSpec("activation", {"fn": "softmax"}),
    ), "mlp_nobn")
    ideal = DeviceParams(g_max=1e-6, g_min=1e-14, theta_ltp=100.0, theta_ltd=100.0)
    rows = []
    for b in (1, 2, 4, 7, 8):
        net = build_network(spec, (28, 28, 1), hardware=hardware(ideal, b, "linear"),
                            seed=0)
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.1, epochs=20,
                          batch_size=32, seed=0)
        rec = nn.train(net, train_ds, test_ds, cfg, verbose=True)
        rows.append((b, rec.final_test_acc))
        print(f"b={b}: {rec.final_test_acc:.4f}", flush=True)
    _write(out_path, ("bit_precision", "final_test_acc"), rows)


def d2d_robustness(train_ds, test_ds, out_path):
    device = load_device_preset("rram-ni-hfo2-tin")
    rows = []
    for b in (1, 32):
        net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                            hardware=hardware(device, b), seed=0)
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=10,
                          batch_size=16, seed=0)
        nn.train(net, train_ds, test_ds, cfg, verbose=True)
        container = persist.from_network(net)
        for sigma in (0.0, 0.1, 0.2):
            accs = []
            for seed in range(5):
                fresh = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                                      hardware=hardware(device, b, d2d=sigma,
                                                        seed=100 + seed), seed=0)
                persist.restore_into(fresh, container)
                accs.append(nn.infer(fresh, test_ds))
            rows.append((b, sigma, float(np.mean(accs))))
            print(f"b={b} sigma={sigma}: {np.mean(accs):.4f}", flush=True)
    _write(out_path, ("bit_precision", "d2d_sigma", "mean_test_acc"), rows)


def theta_robustness(train_ds, test_ds, out_path):
    base = load_device_preset("rram-ni-hfo2-tin")
    rows = []
    for b in (1, 4):
        for theta in (0.1, 1.0, 100.0):
            device = dataclasses.replace(base, theta_ltp=theta, theta_ltd=theta)
            net = build_network(nn.mlp_784_200_10(), (28, 28, 1),
                                hardware=hardware(device, b), seed=0)
            cfg = TrainConfig(optimizer="sgd", learning_rate=0.005, epochs=10,
                              batch_size=16, seed=0)
            rec = nn.train(net, train_ds, test_ds, cfg, verbose=True)
            rows.append((b, theta, rec.final_test_acc))
            print(f"b={b} theta={theta}: {rec.final_test_acc:.4f}", flush=True)
    _write(out_path, ("bit_precision", "theta", "final_test_acc"), rows)


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mnist-dir", required=True)
    ap.add_argument("--out", default="results")
    ap.add_argument("--subset", type=int, default=10000)
    ap.add_argument("--studies", default="bitwidth,d2d,theta")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    train_full, test_full = data.load_mnist(args.mnist_dir)
    train_ds = data.subset(train_full, args.subset, seed=11)
    test_ds = data.subset(test_full, 2000, seed=12)

    studies = set(args.studies.split(","))
    if "bitwidth" in studies:
        bitwidth_linear_update(train_ds, test_ds,
                               os.path.join(args.out, "bitwidth_linear_update.csv"))
    if "d2d" in studies:
        d2d_robustness(train_ds, test_ds, os.path.join(args.out, "d2d_robustness.csv"))
    if "theta" in studies:
        theta_robustness(train_ds, test_ds, os.path.join(args.out, "theta_robustness.csv"))


if __name__ == "__main__":
    main()
