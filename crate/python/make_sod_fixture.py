"""Regenerates crates/core/tests/fixtures/sod_reference.json.

Scores random prediction/mask pairs with PySODMetrics (`pip install
pysodmetrics`), an independent implementation of the S-measure and
E-measure, for cross-checking the Rust metrics.
"""

import json
import pathlib

import numpy as np
from py_sod_metrics import Emeasure, Smeasure

OUT = pathlib.Path(__file__).resolve().parents[1] / "crates/core/tests/fixtures/sod_reference.json"


def case(rng, h, w):
    gt = np.zeros((h, w), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx, r = rng.integers(0, h), rng.integers(0, w), rng.integers(2, max(3, min(h, w) // 2))
        yy, xx = np.mgrid[:h, :w]
        gt |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    noise = rng.random((h, w))
    pred = np.clip(gt * 0.7 + noise * 0.5 - 0.1, 0, 1)
    pred = np.round(pred * 255).astype(np.uint8)
    # Pin the range so the library's min-max normalization is the identity.
    pred.flat[0], pred.flat[1] = 0, 255
    return pred, gt


def main():
    rng = np.random.default_rng(7)
    cases = []
    for i in range(40):
        h, w = [(16, 16), (24, 20), (31, 17)][i % 3]
        pred, gt = case(rng, h, w)
        sm = Smeasure()
        sm.step(pred, gt.astype(np.uint8) * 255)
        em = Emeasure()
        em.gt_fg_numel = int(gt.sum())
        em.gt_size = gt.size
        e_bin = em.cal_em_with_threshold(pred / 255.0, gt, 0.5)
        cases.append(
            {
                "height": h,
                "width": w,
                "pred": pred.flatten().tolist(),
                "gt": gt.astype(np.uint8).flatten().tolist(),
                "s_measure": float(sm.get_results()["sm"]),
                "e_measure_binarized": float(e_bin),
            }
        )
    OUT.write_text(json.dumps({"source": "pysodmetrics", "cases": cases}))
    print(f"wrote {len(cases)} cases to {OUT}")


if __name__ == "__main__":
    main()
