"""Train the bundled toy MLP on scikit-learn's 8x8 digits and write the fixture.

Offline helper; the package itself never trains.  Usage::

    python scripts/train_toy_mlp.py [--hidden 64] [--out src/rns_analog/data/toy_mlp.rnst]
"""

import argparse
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier

from rns_analog.model import Layer, ModelSpec, save_model

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "rns_analog" / "data" / "toy_mlp.rnst"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()

    digits = load_digits()
    x = digits.data / 16.0
    x_tr, x_te, y_tr, y_te = train_test_split(
        x, digits.target, test_size=0.5, random_state=args.seed, stratify=digits.target
    )
    clf = MLPClassifier(hidden_layer_sizes=(args.hidden,), activation="relu", alpha=1e-3,
                        max_iter=2000, random_state=args.seed)
    clf.fit(x_tr, y_tr)
    print(f"float test accuracy: {clf.score(x_te, y_te):.4f}")

    model = ModelSpec((
        Layer("dense", clf.coefs_[0].T.astype(np.float32), clf.intercepts_[0].astype(np.float32), "relu"),
        Layer("dense", clf.coefs_[1].T.astype(np.float32), clf.intercepts_[1].astype(np.float32), "softmax"),
    ))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, model, {"test_x": x_te.astype(np.float32), "test_y": y_te.astype(np.float32)})
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
