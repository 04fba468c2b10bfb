"""Smoke test for the pidnet_py extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import math
import random
import tempfile
from pathlib import Path

import pidnet_py as pn


def matrix(rng, channels, time):
    return [[rng.gauss(0.0, 1.0) for _ in range(time)] for _ in range(channels)]


def main():
    rng = random.Random(0)

    assert pn.spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4]) == 0.8
    assert pn.spearman([2, 2, 2], [1, 2, 3]) is None
    assert pn.fisher_z_avg([0.4, 0.4]) == 0.4

    x = matrix(rng, 2, 7)
    for wavelet in ("haar", "db2"):
        low, high = pn.dwt(x, wavelet)
        back = pn.idwt(low, high, 7, wavelet)
        err = max(abs(a - b) for ra, rb in zip(x, back) for a, b in zip(ra, rb))
        assert err < 1e-10, (wavelet, err)

    cfg = pn.TrainConfig.micro()
    cfg.set("max_epochs", "2")
    cfg.set("batch_size", "4")
    assert cfg.get("channels") == "8"
    try:
        cfg.set("dropuot", "0.1")
    except ValueError as e:
        assert "dropuot" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    errs = pn.Model(cfg, [6, 5, 4]).grad_check()
    assert max(errs.values()) < 1e-4, errs

    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        sample = d / "one.pidf"
        feats = [matrix(rng, c, 9) for c in (3, 2, 4)]
        pn.write_sample(str(sample), *feats)
        back = pn.read_sample(str(sample))
        assert back["rgb"] == feats[0] and back["audio"] == feats[2]

        n = pn.gen_synth(str(d / "corpus"), 12, seed=1, dims=[4, 3, 2])
        assert n == 12
        model, history = pn.train(cfg, str(d / "corpus" / "manifest.jsonl"))
        assert [row[0] for row in history] == [1, 2]
        assert all(math.isfinite(row[1]) for row in history)

        ckpt = d / "model.pidc"
        model.save(str(ckpt))
        again = pn.Model.load(str(ckpt))
        inputs = [matrix(rng, c, 11) for c in (4, 3, 2)]
        assert model.predict(*inputs) == again.predict(*inputs)

        trace = model.gate_trace(*inputs)
        assert trace and all(0.0 < s < 1.0 for _, _, sig in trace for s in sig)

    print(f"smoke test ok: {len(history)} epochs, {model.num_parameters} parameters")


if __name__ == "__main__":
    main()
