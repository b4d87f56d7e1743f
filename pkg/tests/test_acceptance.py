"""Acceptance suite: one marked group of tests per numbered criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per criterion
in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from latticegt import tree
from latticegt.halving import select, select_bha, select_op_bha
from latticegt.lattice import (
    LatticeModel,
    Outcome,
    SubjectPrior,
    Thresholds,
    build_lattice,
    classify_and_shrink,
    mass,
    subject_marginal,
    update_posterior,
)
from latticegt.response import ResponseModel
from latticegt.tree import AnalysisConfig, Scheme, homogeneous_priors, run_analysis

import oracles

NOISY = ResponseModel(0.8, 0.95, 1.0)
MODELS = {"noiseless": ResponseModel(), "noisy": NOISY}


def priors(risks):
    return [SubjectPrior(i, float(r)) for i, r in enumerate(risks)]


def statistics(report):
    out = {
        "expected_tests": report.expected_tests,
        "decisive_rate": report.decisive_rate,
        "fn": report.aggregate_fn_mass,
        "fp": report.aggregate_fp_mass,
    }
    for sid, err in report.per_subject.items():
        out[f"fn[{sid}]"] = err.fn_mass
        out[f"fp[{sid}]"] = err.fp_mass
    return out


def max_difference(a, b):
    return max(abs(a[k] - b[k]) for k in a)


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_topmost_mass_identity():
    lat = build_lattice(homogeneous_priors(20, 0.02))
    assert abs(mass(lat.top, lat) - 0.98**20) <= 1e-12
    sel = select_op_bha(lat)
    assert sel.evaluated_states == 1
    assert sel.pool == lat.top


@pytest.mark.criterion(1)
def test_topmost_mass_closed_form_n30():
    assert 0.98**30 > 0.5
    assert abs(math.prod([0.98] * 30) - 0.545) <= 5e-4


# 2 -------------------------------------------------------------------------


def random_instance(rng):
    n = int(rng.integers(2, 13))
    lat = build_lattice(priors(rng.uniform(0.01, 0.5, n)))
    model = ResponseModel(rng.uniform(0.7, 1.0), rng.uniform(0.8, 1.0), rng.uniform(0.0, 2.0))
    thresholds = Thresholds(0.001, 0.001)
    for _ in range(int(rng.integers(0, 5))):
        if lat.n_active < 2:
            break
        pool = int(rng.integers(1, 1 << lat.n_active))
        update_posterior(lat, pool, Outcome(rng.choice(["negative", "positive"])), model)
        classify_and_shrink(lat, thresholds)
    return lat


@pytest.mark.criterion(2)
def test_op_bha_gap_equals_bha_gap():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    trials = 0
    while trials < 200:
        lat = random_instance(rng)
        if lat.n_active == 0:
            continue
        bha, op = select_bha(lat), select_op_bha(lat)
        worst = max(worst, abs(bha.gap - op.gap))
        assert op.evaluated_states <= bha.evaluated_states
        trials += 1
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12
    assert elapsed < 60.0


# 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_strict_mass_monotonicity():
    rng = np.random.default_rng(3)
    violations = 0
    for trial in range(120):
        n = 1 + trial % 8
        lat = LatticeModel(oracles.random_posterior(rng, n), list(reversed(range(n))))
        m = [mass(s, lat) for s in range(1 << n)]
        for b in range(1 << n):
            for a in range(1 << n):
                if a == b:
                    continue
                if a & b == b and not m[a] < m[b]:
                    violations += 1
                if a & b == a and not m[a] > m[b]:
                    violations += 1
    assert violations == 0


# 4 -------------------------------------------------------------------------

SCHEME_RISKS = [0.1, 0.2, 0.05, 0.3]


@pytest.mark.criterion(4)
@pytest.mark.parametrize("eps", [0.001, 0.05])
@pytest.mark.parametrize("model", MODELS, ids=list(MODELS))
def test_scheme_equivalence(model, eps):
    start = time.perf_counter()
    for n in (2, 3, 4):
        for stages in (4, 6):
            reports = {
                scheme: run_analysis(
                    AnalysisConfig(
                        priors(SCHEME_RISKS[:n]),
                        model=MODELS[model],
                        thresholds=Thresholds(eps, eps),
                        max_stages=stages,
                        scheme=scheme,
                    )
                )
                for scheme in Scheme
            }
            single = statistics(reports[Scheme.SINGLE])
            assert max_difference(statistics(reports[Scheme.MULTI]), single) <= 1e-9, (n, stages)
            assert max_difference(statistics(reports[Scheme.FUSION]), single) <= 1e-9, (n, stages)
            assert reports[Scheme.MULTI].trees == 1 << n
    assert time.perf_counter() - start < 120.0


# 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5)
@pytest.mark.parametrize("model", MODELS, ids=list(MODELS))
@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_symmetry_equivalence(n, model):
    base = dict(model=MODELS[model], thresholds=Thresholds(0.05, 0.05), max_stages=6, scheme=Scheme.MULTI)
    full = run_analysis(AnalysisConfig(homogeneous_priors(n, 0.1), **base))
    reduced = run_analysis(AnalysisConfig(homogeneous_priors(n, 0.1), symmetry=True, **base))
    assert full.trees == 1 << n
    assert reduced.trees == n + 1
    aggregate = ("expected_tests", "decisive_rate", "aggregate_fn_mass", "aggregate_fp_mass")
    diffs = {k: abs(getattr(full, k) - getattr(reduced, k)) for k in aggregate}
    assert max(diffs.values()) <= 1e-9, diffs


# 6 -------------------------------------------------------------------------


# Every dropped true state can cost at most max_stages tests. At n=5, p=0.1 the
# dropped states all run to the stage limit, so the bound holds with equality
# and only summation rounding separates the two sides.
ROUNDING = 1e-12


@pytest.mark.criterion(6)
@pytest.mark.parametrize("stages", [6, 4])
def test_prior_mass_tradeoff_bound(stages):
    base = dict(max_stages=stages, scheme=Scheme.MULTI)
    full = run_analysis(AnalysisConfig(homogeneous_priors(5, 0.1), **base))
    part = run_analysis(AnalysisConfig(homogeneous_priors(5, 0.1), retained_prior_mass=0.999, **base))
    assert part.retained_mass >= 0.999
    assert part.trees < full.trees
    bound = (1 - part.retained_mass) * stages
    assert abs(part.expected_tests - full.expected_tests) <= bound + ROUNDING


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7)
@pytest.mark.parametrize("n", range(1, 7))
def test_update_matches_joint_table(n):
    rng = np.random.default_rng(70 + n)
    for _ in range(10):
        sens, spec, delta = rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.0, 3.0)
        probs = oracles.random_posterior(rng, n, zero_fraction=0.2)
        lat = LatticeModel(probs.copy(), list(reversed(range(n))))
        pool = int(rng.integers(1, 1 << n))
        negative = bool(rng.integers(2))
        update_posterior(lat, pool, "negative" if negative else "positive", ResponseModel(sens, spec, delta))
        expected = oracles.joint_table_posterior(probs, pool, negative, sens, spec, delta)
        assert np.max(np.abs(lat.probs - expected)) <= 1e-12


@pytest.mark.criterion(7)
@pytest.mark.parametrize("n", range(2, 7))
def test_shrink_preserves_marginals(n):
    rng = np.random.default_rng(700 + n)
    for _ in range(10):
        risks = rng.uniform(0.0002, 0.5, n)
        risks[rng.integers(n)] = 0.0005
        lat = build_lattice(priors(risks))
        update_posterior(lat, int(rng.integers(1, 1 << n)), Outcome.NEGATIVE, ResponseModel(0.9, 0.99, 1.0))
        before = {sid: subject_marginal(sid, lat) for sid in lat.bit_to_subject}
        size = len(lat.probs)
        while True:
            snapshot = {sid: subject_marginal(sid, lat) for sid in lat.bit_to_subject}
            commits = classify_and_shrink(lat, Thresholds(0.001, 0.001))
            if not commits:
                break
            assert len(lat.probs) == size >> len(commits)
            size = len(lat.probs)
            for c in commits:
                residual = 1 - snapshot[c.subject_id] if c.decision is Outcome.NEGATIVE else snapshot[c.subject_id]
                assert abs(c.residual_error - max(residual, 0.0)) <= 1e-12
            for sid in lat.bit_to_subject:
                assert abs(subject_marginal(sid, lat) - before[sid]) <= 1e-12


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8)
def test_hand_traced_false_negative_mass():
    config = AnalysisConfig(
        [SubjectPrior(0, 0.3)],
        model=ResponseModel(0.8, 1.0),
        thresholds=Thresholds(0.05, 0.05),
        max_stages=2,
    )
    report = run_analysis(config)
    assert abs(report.per_subject[0].fn_mass - 0.012) <= 1e-12
    assert report.per_subject[0].fp_mass == 0.0


# 9 -------------------------------------------------------------------------


def random_config(rng):
    n = int(rng.integers(1, 11))
    scheme = Scheme(rng.choice(["single", "fusion", "multi"] if n <= 6 else ["single", "fusion"]))
    model = ResponseModel(rng.uniform(0.8, 1.0), rng.uniform(0.9, 1.0), rng.uniform(0.0, 1.5))
    eps = float(rng.choice([0.001, 0.01, 0.05]))
    return AnalysisConfig(
        priors(rng.uniform(0.01, 0.4, n)),
        model=model,
        thresholds=Thresholds(eps, eps),
        max_stages=int(rng.integers(1, 9)),
        scheme=scheme,
        prune_threshold=float(rng.choice([0.0, 1e-6])) if scheme is Scheme.FUSION else 0.0,
    )


@pytest.mark.criterion(9)
@pytest.mark.parametrize("seed", range(20))
def test_parallel_determinism(seed):
    rng = np.random.default_rng(900 + seed)
    config = random_config(rng)
    lat = build_lattice(config.priors)
    update_posterior(lat, int(rng.integers(1, 1 << lat.n_active)), Outcome.NEGATIVE, config.model)
    selections = {w: select(lat, worker_count=w) for w in (1, 2, 8)}
    reports = {w: run_analysis(config, workers=w).to_dict() for w in (1, 2, 8)}
    assert len({(s.pool, s.pool_mass) for s in selections.values()}) == 1
    assert reports[2] == reports[1]
    assert reports[8] == reports[1]


# 10 ------------------------------------------------------------------------


@pytest.mark.criterion(10)
@pytest.mark.parametrize("risk", [0.01, 0.02, 0.03, 0.04])
def test_op_bha_reads_fraction(risk):
    lat = build_lattice(homogeneous_priors(16, risk))
    bha, op = select_bha(lat), select_op_bha(lat)
    assert bha.evaluated_states == (1 << 16) - 1
    assert op.mass_reads <= 0.01 * bha.mass_reads


def timed(config):
    start = time.perf_counter()
    report = run_analysis(config)
    return time.perf_counter() - start, report


@pytest.mark.criterion(10)
def test_single_tree_faster_than_multi_tree():
    base = dict(max_stages=10)
    single_time, single = timed(AnalysisConfig(homogeneous_priors(10, 0.1), scheme=Scheme.SINGLE, **base))
    multi_time, multi = timed(AnalysisConfig(homogeneous_priors(10, 0.1), scheme=Scheme.MULTI, **base))
    assert single.nodes_expanded < multi.nodes_expanded
    assert abs(single.expected_tests - multi.expected_tests) <= 1e-9
    assert multi_time >= 2 * single_time


@pytest.mark.criterion(10)
def test_fusion_expands_no_more_than_single():
    base = dict(model=ResponseModel(0.9, 1.0), max_stages=12)
    single = run_analysis(AnalysisConfig(homogeneous_priors(6, 0.1), scheme=Scheme.SINGLE, **base))
    fused = run_analysis(
        AnalysisConfig(homogeneous_priors(6, 0.1), scheme=Scheme.FUSION, prune_threshold=1e-9, **base)
    )
    assert fused.nodes_expanded <= single.nodes_expanded
    assert max_difference(statistics(fused), statistics(single)) <= 1e-4


# 11 ------------------------------------------------------------------------


@pytest.mark.criterion(11)
@pytest.mark.parametrize(
    "config",
    [
        AnalysisConfig(homogeneous_priors(6, 0.1), max_stages=8),
        AnalysisConfig(priors([0.1, 0.3, 0.2, 0.05, 0.25]), model=NOISY, max_stages=8),
        AnalysisConfig(priors([0.1, 0.3, 0.2, 0.05]), model=NOISY, max_stages=6, scheme=Scheme.MULTI),
        AnalysisConfig(priors([0.4, 0.3, 0.2]), model=ResponseModel(0.7, 0.9, 2.0), max_stages=10, scheme=Scheme.FUSION),
    ],
    ids=["single-noiseless", "single-noisy", "multi-noisy", "fusion-zero-threshold"],
)
def test_branch_cap_and_conservation(config, monkeypatch):
    calls = {"conservation": 0, "cap": 0}
    conserve, cap = tree._check_conservation, tree._check_branch_cap

    def counting_conserve(*args):
        calls["conservation"] += 1
        return conserve(*args)

    def counting_cap(*args):
        calls["cap"] += 1
        return cap(*args)

    monkeypatch.setattr(tree, "_check_conservation", counting_conserve)
    monkeypatch.setattr(tree, "_check_branch_cap", counting_cap)
    report = run_analysis(config)
    assert calls["conservation"] >= 1 and calls["cap"] >= 1
    per_tree_cap = 1 << config.max_stages
    assert report.branches_terminal <= report.trees * per_tree_cap
    accounted = report.decisive_rate + report.pruned_mass
    assert 0.0 <= accounted <= 1.0 + 1e-9


@pytest.mark.criterion(11)
def test_conservation_check_fires(monkeypatch):
    expand = tree.expand_node

    def leaky(*args, **kwargs):
        exp = expand(*args, **kwargs)
        if len(exp.children) == 2:
            exp.children.pop()
        return exp

    monkeypatch.setattr(tree, "expand_node", leaky)
    with pytest.raises(RuntimeError, match="branch weights sum"):
        run_analysis(AnalysisConfig(homogeneous_priors(3, 0.2), max_stages=4))


@pytest.mark.criterion(11)
def test_branch_cap_check_fires():
    tally = tree._Tally([0])
    tally.terminal = 17
    with pytest.raises(RuntimeError, match="exceed"):
        tree._check_branch_cap(tally, AnalysisConfig(homogeneous_priors(1, 0.2), max_stages=4))
