#!/usr/bin/env python3
"""Smoke test for the tileprune_py bindings.

Builds the cdylib with cargo, loads it, and walks a tiny network through
prune, permute, threshold, expand, retrain and simulate, checking the
invariants that matter at each step. Exits nonzero on the first failure.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module(tmp: Path) -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "tileprune-python"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "debug" / "libtileprune_py.so"
    target = tmp / "tileprune_py.so"
    shutil.copyfile(built, target)
    return tmp


def main() -> None:
    tmp = Path(tempfile.mkdtemp(prefix="tileprune-smoke-"))
    sys.path.insert(0, str(build_module(tmp)))
    import tileprune_py as tp

    dims = [12, 6, 12]
    tile, slots = "2x2", 32
    net = tp.Network(dims, seed=7)
    assert net.dims() == dims
    assert net.active_weights() == net.total_weights() == 144

    data = tp.synthetic_dataset(1, 40, 12, 0.3)
    assert len(data) == 40 and len(data[0]) == 12

    removed = net.prune("Lc/L1/Wei", 0.6, seed=3)
    assert removed == 86, f"expected floor(0.6 * 144) = 86 removed, got {removed}"
    assert net.active_weights() == 144 - 86

    before, total = net.zero_tiles(tile, slots)
    zero_after = net.permute(tile, slots, seed=3)
    after, total2 = net.zero_tiles(tile, slots)
    assert total == total2 and zero_after == after
    assert after >= before, "permutation made packing worse"

    # Permutation must preserve the function: outputs match after routing.
    reference = tp.Network(dims, seed=7)
    reference.prune("Lc/L1/Wei", 0.6, seed=3)
    p_in, p_out = net.p_in(), net.p_out()
    routed = [[row[i] for i in p_in] for row in data[:4]]
    got = net.forward(routed)
    want = reference.forward(data[:4])
    for g_row, w_row in zip(got, want):
        for j in range(len(p_out)):
            assert abs(g_row[j] - w_row[p_out[j]]) < 1e-12, "permutation changed outputs"

    net.threshold(1, tile, slots)
    active_before = net.active_weights()
    restored = net.expand(tile, slots)
    assert net.active_weights() == active_before + restored

    losses = net.train(data, epochs=3, batch_size=8, learning_rate=0.001, seed=3)
    assert len(losses) == 3 and losses[2] <= losses[0] * 1.5

    report = json.loads(net.simulate(routed, tile, slots))
    assert report["max_abs_err"] <= 1e-9, f"simulator drifted: {report['max_abs_err']}"
    assert report["counts"]["mul"] > 0

    ckpt = tmp / "net.ckpt"
    net.save(str(ckpt), seed=3)
    back = tp.Network.load(str(ckpt))
    assert back.evaluate(data) == net.evaluate(data), "checkpoint reload changed the loss"

    images = tp.synthetic_images(0, 2)
    assert len(images[0]) == 784
    assert all(v == 0.0 for v in images[0][:28]), "image border should be exact zeros"

    print("smoke test passed")


if __name__ == "__main__":
    main()
