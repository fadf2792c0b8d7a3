"""Smoke test for the fidelity_routing extension module.

Build the module first, e.g.

    cargo build --release -p fidelity-py --features extension-module
    cp target/release/libfidelity_routing.so python/fidelity_routing.so

or `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fidelity_routing as fr


def main():
    assert fr.tokenize("How many  DOGS") == ["how", "many", "dogs"]
    assert fr.pava([3.0, 1.0, 2.0]) == [2.0, 2.0, 2.0]
    assert fr.pava([1.0, 0.0], [1.0, 3.0]) == [0.25, 0.25]
    assert fr.brier([0.5, 0.5], [True, False]) == 0.25
    assert fr.ece([0.5, 0.5], [True, False]) == 0.0
    assert math.isclose(fr.voi(0.8, 0.3, 63.9, 0.004), 0.2444)

    sel, steps = fr.greedy_select([0.5, 0.52, 0.9], [9.1, 45.4, 63.9], 0.004)
    assert sel == 0 and steps[0][3] is False
    assert fr.argmax_utility([0.5, 0.52, 0.9], [9.1, 45.4, 63.9], 0.004) == 2

    profile = fr.CostProfile("edge-cloud")
    costs = profile.normalized_costs()
    assert [round(c, 1) for c in costs] == [9.1, 18.1, 45.4, 63.9, 120.0]
    assert costs[-1] == 120.0

    with tempfile.TemporaryDirectory() as tmp:
        corpus = os.path.join(tmp, "corpus.jsonl")
        truth = os.path.join(tmp, "truth.jsonl")
        n = fr.generate("heterogeneous-mix", corpus, truth, n=300, seed=1)
        assert n == 1500
        model = os.path.join(tmp, "model")
        fr.train(corpus, model, lam=0.002, tau=0.0, profile=profile)
        bank = fr.PredictorBank.load(model)
        assert bank.levels() == profile.ids()
        probs = bank.predict("how many cups are on the table")
        assert set(probs) == set(profile.ids())
        assert all(0.0 <= p <= 1.0 for p in probs.values())
        decision = bank.route("how many cups are on the table")
        assert decision["selected"] in probs
        assert list(decision["probs"]) == profile.ids()
        cheap = bank.route("how many cups", lam=1.0)
        assert cheap["selected"] == "caption"

    print("python smoke test passed")


if __name__ == "__main__":
    main()
