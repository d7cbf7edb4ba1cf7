"""Smoke test for the robord_py extension.

Build and install first:

    pip install --no-build-isolation ./crates/python
    python crates/python/python/smoke_test.py
"""

import json
import math
import os
import tempfile

import robord_py as rp


def ce_reference(g, b, y):
    value = 0.0
    for i, bi in enumerate(b):
        s = 1.0 / (1.0 + math.exp(-(g + bi)))
        z = 1.0 if i + 1 < y else 0.0
        value -= z * math.log(s) + (1.0 - z) * math.log(1.0 - s)
    return value


def check_noise_matrix():
    m = rp.NoiseMatrix.uniform(4, 0.1)
    for row in m.entries:
        assert abs(sum(row) - 1.0) < 1e-12
    for row in m.inverse:
        assert abs(sum(row) - 1.0) < 1e-9
    assert m.lipschitz_inflation() >= 1.0
    again = rp.NoiseMatrix.from_text(m.to_text())
    assert again.distance(m)[0] < 1e-15
    try:
        rp.NoiseMatrix.uniform(1, 0.1)
    except rp.RobordError as e:
        assert "SpecInvalid" in str(e)
    else:
        raise AssertionError("K=1 accepted")


def check_losses():
    b = [1.0, 0.2, -0.7]
    for y in range(1, 5):
        value, _, d_b = rp.ce_loss(0.3, b, y)
        assert abs(value - ce_reference(0.3, b, y)) < 1e-12
        assert len(d_b) == 3
    # expected corrected loss over noisy labels recovers the clean loss
    m = rp.NoiseMatrix.uniform(4, 0.1)
    for y in range(1, 5):
        expected = sum(
            m.entries[y - 1][j - 1] * rp.corrected("ce", m, 0.3, b, j)[0] for j in range(1, 5)
        )
        assert abs(expected - rp.ce_loss(0.3, b, y)[0]) < 1e-9
    assert rp.imc_loss(5.0, [-1.0, -2.0, -3.0], 2)[0] > 0.0
    assert rp.predict_from_score(0.0, [2.0, 1.0, -1.0]) == 3
    assert rp.mae_loss(0.0, [2.0, 1.0, -1.0], 1) == 2


def check_training(tmp):
    data = rp.Dataset.synth(n=600, seed=1)
    assert len(data) == 600 and data.k == 5
    noise = rp.NoiseMatrix.uniform(5, 0.1)
    noisy = data.with_labels(noise.corrupt(data.labels, 7))
    res = rp.train(noisy, loss="ce", correction=noise, epochs=40, activation="linear", seed=3)
    assert res.total_updates == 40 * math.ceil(600 / 32)
    assert res.final_ordered
    mae, zero_one = res.model.evaluate(data)
    assert zero_one <= mae < 0.5, (mae, zero_one)
    path = os.path.join(tmp, "model.txt")
    res.model.save(path)
    loaded = rp.OrdinalModel.load(path)
    assert loaded.predict_all(data) == res.model.predict_all(data)

    est = rp.estimate_noise(noisy, epochs=40, seed=2, out=os.path.join(tmp, "est.txt"))
    assert est.k == 5
    assert os.path.exists(os.path.join(tmp, "est.txt.meta"))


def check_experiment(tmp):
    noise = rp.NoiseMatrix.uniform(5, 0.1)
    kwargs = dict(trials=2, n=300, epochs=5, losses=["imc"], corrections=["none", "known"], clean=False)
    first = json.loads(rp.experiment(noise, out=os.path.join(tmp, "r.csv"), **kwargs))
    second = json.loads(rp.experiment(noise, **kwargs))
    assert len(first["completed"]) == 2
    assert {r["variant"] for r in first["summary"]} == {"imc", "imc-kr"}
    assert first["summary"] == second["summary"]
    assert os.path.exists(os.path.join(tmp, "r.csv.json"))


def main():
    check_noise_matrix()
    check_losses()
    with tempfile.TemporaryDirectory() as tmp:
        check_training(tmp)
        check_experiment(tmp)
    print("robord_py smoke test passed")


if __name__ == "__main__":
    main()
