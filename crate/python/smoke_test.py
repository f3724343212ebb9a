"""Smoke test for the bsnet_py extension.

Build and install first, e.g. `pip install maturin && maturin develop -m
crates/py/Cargo.toml`, then run `python python/smoke_test.py`.
"""

import math
import sys

import numpy as np

import bsnet_py as bs


def disk(n, cy, cx, r):
    yy, xx = np.mgrid[:n, :n]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.uint8)


def main():
    gt = disk(32, 16, 16, 8)
    pred = disk(32, 16, 18, 8)

    d = bs.dsc(pred, gt)
    inter = int((pred & gt).sum())
    assert math.isclose(d, 2 * inter / (pred.sum() + gt.sum()), rel_tol=1e-12), d
    assert bs.dsc(gt, gt) == 1.0
    assert bs.hausdorff(gt, gt) == 0.0
    assert 0.0 < bs.hausdorff(pred, gt) <= math.hypot(32, 32)

    prob = gt.astype(np.float32)
    assert bs.mae(prob, gt) == 0.0
    assert abs(bs.s_measure(prob, gt) - 1.0) < 1e-9
    assert abs(bs.e_measure(prob, gt) - 1.0) < 1e-9
    scores = bs.evaluate(pred.astype(np.float32), gt)
    assert set(scores) == {"dsc", "sen", "prec", "s_alpha", "e_phi", "mae", "hd"}, scores

    for ex in ["canny", "sobel", "roberts", "neighbor"]:
        b = bs.extract_boundary(gt, ex)
        assert b.shape == gt.shape and b.dtype == np.uint8
        assert 0 < b.sum() <= gt.sum(), ex
        assert not (b & (1 - gt)).any(), ex

    w = bs.pixel_importance(gt, 5)
    assert w.shape == gt.shape and float(w.min()) >= 0.0 and float(w.max()) <= 1.0

    try:
        bs.dsc(pred, gt[:16])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch must raise ValueError")

    model = bs.Model("tiny-backbone", seed=1, image_size=64)
    image = np.random.default_rng(0).random((48, 40), dtype=np.float32)
    out = model.predict(image)
    assert out.shape == image.shape, out.shape
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    assert model.parameter_count > 0

    print(f"bsnet_py {bs.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
