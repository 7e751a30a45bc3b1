# Copyright 2026 The adgen Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math
import random
from collections import Counter

import pytest

import adgen

SMALL = {
    "n_items": "120",
    "n_users": "6",
    "embed_dim": "6",
    "clusters": "6",
    "sid_vocab": "6,4,4",
    "hidden": "8",
    "ffn_hidden": "12",
    "layers": "2",
    "trunk_layers": "1",
    "ecpm_buckets": "4",
    "schedule": "2,4,8",
}


def test_topk_matches_full_enumeration():
    rng = random.Random(0)
    for trial in range(200):
        b, v = rng.randint(1, 6), rng.randint(1, 12)
        k = rng.randint(1, b * v)
        grid = trial % 2 == 0
        beams = [(-0.5 * rng.randrange(4)) if grid else rng.uniform(-5, 0) for _ in range(b)]
        lp = [[(-0.25 * rng.randrange(6)) if grid else rng.uniform(-5, 0) for _ in range(v)]
              for _ in range(b)]
        expected = sorted(
            ((r, t, beams[r] + lp[r][t]) for r in range(b) for t in range(v)),
            key=lambda e: (-e[2], e[0], e[1]),
        )[:k]
        assert adgen.topk_precut(beams, lp, k) == expected
        assert adgen.topk_precut(beams, lp, k, exhaustive=True) == expected


def test_ecpm_buckets_midpoint_and_balance():
    boundaries, _, tokens = adgen.fit_ecpm_buckets([1.0, 2.0, 3.0, 4.0], 2)
    assert boundaries == [2.5]
    assert tokens == [0, 0, 1, 1]
    rng = random.Random(1)
    for _ in range(50):
        n_buckets = rng.randint(2, 12)
        values = [rng.lognormvariate(0, 1) for _ in range(rng.randint(n_buckets, 300))]
        _, _, tokens = adgen.fit_ecpm_buckets(values, n_buckets)
        counts = Counter(tokens)
        assert len(counts) == n_buckets
        assert max(counts.values()) - min(counts.values()) <= 1


def _lambda_weights(rewards):
    n = len(rewards)
    disc = lambda p: math.log2(1 + p)
    ideal = sorted(rewards, reverse=True)
    z = sum((2 ** r - 1) / disc(i + 1) for i, r in enumerate(ideal))
    m = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and z > 0:
                gap = abs(i - j)
                m[i][j] = abs(1 / disc(gap) - 1 / disc(gap + 1)) * abs(
                    (2 ** rewards[i] - 1) / z - (2 ** rewards[j] - 1) / z)
    return m


def test_rspo_terms_bound_the_weighted_misorderings():
    rng = random.Random(2)
    for _ in range(300):
        n = rng.randint(2, 8)
        rewards = sorted((rng.uniform(0, 3) for _ in range(n)), reverse=True)
        logp = [math.log(rng.uniform(0.01, 1)) for _ in range(n)]
        beta = rng.choice([0.1, 1.0, 5.0])
        terms = adgen.rspo_terms(rewards, logp, beta=beta, delta=1e9)
        m = _lambda_weights(rewards)
        g = [beta * x for x in logp]
        misordered = sum(m[i][j] for i in range(n) for j in range(n)
                         if rewards[j] < rewards[i] and g[i] < g[j])
        assert sum(terms) >= misordered - 1e-9


def test_balanced_kmeans_and_sid_metrics():
    rng = random.Random(3)
    points = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(53)]
    sizes = Counter(adgen.balanced_kmeans(points, 5, seed=1))
    assert max(sizes.values()) - min(sizes.values()) <= 1
    sids, metrics = adgen.quantize(points, [4, 3, 2], mode="mr", seed=1)
    groups = Counter(tuple(s) for s in sids)
    singles = sum(1 for c in groups.values() if c == 1)
    assert metrics["sids"] == len(groups)
    assert metrics["cpr"] == pytest.approx(len(points) / len(groups))
    assert metrics["col"] == pytest.approx(1 - singles / len(groups))
    assert metrics["util"] == pytest.approx(len(points) / 24)


def test_beam_search_flags_do_not_change_results():
    rng = random.Random(4)
    features = [[rng.uniform(-1, 1) for _ in range(6)] for _ in range(2)]
    runs = [adgen.beam_search(SMALL, features, shared_kv=s, precut=p)
            for s in (True, False) for p in (True, False)]
    for hyps, _ in runs[1:]:
        assert hyps == runs[0][0]
    assert runs[0][1]["kv_builds"] == 1
    assert runs[0][1]["hypotheses_per_level"] == [1, 2, 4]


def test_simulation_is_deterministic_and_reports_progress():
    a = adgen.simulate(3, dict(SMALL, seed="5"))
    b = adgen.simulate(3, dict(SMALL, seed="5"))
    assert a == b
    assert a["train_steps"] == 30
    assert len(a["loss_curve"]) == 30
    assert a["published_versions"] == sorted(a["published_versions"])


def test_simulation_divergence_raises():
    with pytest.raises(adgen.DivergenceError):
        adgen.simulate(3, dict(SMALL, fault_nan_step="2"))


def test_cli_and_verify():
    code, out, _ = adgen.cli(["verify", "--seed", "2"])
    assert code == 0 and "all checks passed" in out
    code, _, err = adgen.cli(["serve-sim", "--set", "unknown_key=1"])
    assert code == 1 and "unknown key" in err
    results = adgen.verify(fault="topk")
    failed = {r["name"] for r in results if not r["pass"]}
    assert failed == {"topk-precut"}
    assert "schedule" in adgen.config_keys()
