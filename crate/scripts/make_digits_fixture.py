#!/usr/bin/env python3
"""Build the float MLP fixture used by the integration and acceptance tests.

Trains a 784-64-32-10 ReLU MLP on scikit-learn's bundled 8x8 handwritten
digits, upsampled to 28x28, and writes it in the float manifest format
together with a calibration set and a test set.

    python3 scripts/make_digits_fixture.py fixtures/digits
"""
import json
import os
import sys

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits
from sklearn.neural_network import MLPClassifier

SEED = 20240417
N_TEST = 1000
N_CALIB = 100


def upsample(images):
    out = np.empty((len(images), 28 * 28), dtype=np.float32)
    for i, img in enumerate(images):
        pil = Image.fromarray((img / 16.0 * 255.0).astype(np.uint8))
        big = np.asarray(pil.resize((28, 28), Image.BILINEAR), dtype=np.float32) / 255.0
        out[i] = big.reshape(-1)
    return out


def write_dataset(path, x, y):
    os.makedirs(path, exist_ok=True)
    x.astype("<f4").tofile(os.path.join(path, "images.bin"))
    y.astype("<u2").tofile(os.path.join(path, "labels.bin"))
    doc = {
        "format": "axdse-dataset",
        "version": 1,
        "dtype": "f32",
        "shape": [x.shape[1]],
        "count": int(x.shape[0]),
        "images": "images.bin",
        "labels": "labels.bin",
    }
    with open(os.path.join(path, "data.json"), "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def main(out):
    digits = load_digits()
    x = upsample(digits.images)
    y = digits.target.astype(np.uint16)
    order = np.random.default_rng(SEED).permutation(len(x))
    test, rest = order[:N_TEST], order[N_TEST:]
    calib = rest[:N_CALIB]

    clf = MLPClassifier(hidden_layer_sizes=(64, 32), activation="relu",
                        max_iter=400, random_state=SEED)
    clf.fit(x[rest], y[rest])
    print("float test accuracy:", clf.score(x[test], y[test]))

    model_dir = os.path.join(out, "mlp_f32")
    os.makedirs(model_dir, exist_ok=True)
    layers = []
    n_layers = len(clf.coefs_)
    for i, (w, b) in enumerate(zip(clf.coefs_, clf.intercepts_)):
        w = np.ascontiguousarray(w.T.astype("<f4"))
        b = b.astype("<f4")
        w.tofile(os.path.join(model_dir, f"layer{i}_weights.bin"))
        b.tofile(os.path.join(model_dir, f"layer{i}_bias.bin"))
        layer = {
            "kind": "dense",
            "in_features": int(w.shape[1]),
            "out_features": int(w.shape[0]),
            "activation": "relu" if i + 1 < n_layers else "none",
            "weights": {"blob": f"layer{i}_weights.bin", "shape": list(w.shape)},
            "bias": {"blob": f"layer{i}_bias.bin", "shape": [int(b.shape[0])]},
        }
        layers.append(layer)
    doc = {
        "format": "axdse-model",
        "version": 1,
        "dtype": "f32",
        "name": "digits-mlp",
        "input_shape": [784],
        "num_classes": 10,
        "layers": layers,
    }
    with open(os.path.join(model_dir, "model.json"), "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")

    write_dataset(os.path.join(out, "calib_f32"), x[calib], y[calib])
    write_dataset(os.path.join(out, "test_f32"), x[test], y[test])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "fixtures/digits")
