"""Regenerate the bundled tiny model/input/baselines and the golden test files.

    python3 scripts/make_assets.py

Assets land in src/wig/assets/, goldens in tests/golden/. Both are produced
from fixed seeds, so rerunning should not change any bytes.
"""

from pathlib import Path

import numpy as np

from wig.cli import main
from wig.data import generate_samples
from wig.model import attach_regression, build_architecture, save_model, train_model
from wig.tensor import make_rng, write_ntf

ROOT = Path(__file__).resolve().parents[1]
ASSETS = ROOT / "src" / "wig" / "assets"
GOLDEN = ROOT / "tests" / "golden"


def make_assets(seed: int = 11) -> None:
    samples = generate_samples(120, 6, 6, 1, 4, 0.2, 2, seed)
    x = np.stack([s.image for s in samples])
    y = np.array([s.label for s in samples])
    rng = make_rng(seed)
    layers = build_architecture("conv", x.shape[1:], 2, rng, conv_channels=4)
    model, acc = train_model(layers, x[:100], y[:100], 40, 2.0, rng)
    print(f"tiny model train accuracy {acc:.3f}")
    model = attach_regression(model, x[100])
    save_model(model, ASSETS / "tiny_model.json")
    write_ntf(ASSETS / "tiny_input.ntf", x[100])
    for k in range(5):
        write_ntf(ASSETS / f"tiny_baseline_{k}.ntf", x[k])


def make_golden() -> None:
    base = [str(ASSETS / f"tiny_baseline_{k}.ntf") for k in range(5)]
    for method in ("eg", "wg"):
        rc = main(["attribute", "--model", str(ASSETS / "tiny_model.json"),
                   "--input", str(ASSETS / "tiny_input.ntf"), "--method", method,
                   "--out", str(GOLDEN / f"tiny_{method}.ntf"), "--baselines", *base])
        assert rc == 0
    rc = main(["render", "--input", str(GOLDEN / "tiny_wg.ntf"), "--out", str(GOLDEN / "tiny_wg.pgm")])
    assert rc == 0


if __name__ == "__main__":
    make_assets()
    make_golden()
