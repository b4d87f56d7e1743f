"""Exhaustive response-tree analysis of halving-driven pooling.

Three ways to grow the tree of test/response sequences:

* multi-tree: one depth-first tree per true state, branches weighted by
  P(response | true state), then averaged under the prior;
* single-tree: one breadth-first tree, branches weighted by the posterior
  predictive probability of each response;
* fusion-tree: the single tree with low-weight branches pruned after every
  stage.

With no pruning all three give the same statistics (law of total probability).
"""

import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import ConfigError, ImpossibleResponseError, ScaleGuardError
from .halving import _resolve_workers, select, select_op_bha
from .lattice import (
    Outcome,
    SubjectPrior,
    Thresholds,
    build_lattice,
    classify_and_shrink,
    decode_state,
    update_posterior,
)
from .response import ResponseModel, likelihood_negative, predictive_negative

log = logging.getLogger(__name__)

MAX_STAGES_GUARD = 16
MULTI_ENUMERATION_GUARD = 20
BRANCH_WARNING = 1 << 20
INTRA_LATTICE_MIN_N = 12
CONSERVATION_TOL = 1e-9


class Scheme(enum.Enum):
    MULTI = "multi"
    SINGLE = "single"
    FUSION = "fusion"


@dataclass(frozen=True)
class AnalysisConfig:
    priors: tuple
    model: ResponseModel = ResponseModel()
    thresholds: Thresholds = Thresholds()
    max_stages: int = 6
    scheme: Scheme = Scheme.SINGLE
    prune_threshold: float = 0.0
    symmetry: bool = False
    retained_prior_mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(self.priors))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.priors:
            raise ConfigError("at least one subject is required")
        if not isinstance(self.max_stages, int) or self.max_stages < 1:
            raise ConfigError(f"max_stages must be a positive integer, got {self.max_stages!r}")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ConfigError(f"prune_threshold must lie in [0, 1), got {self.prune_threshold}")
        if not 0.0 < self.retained_prior_mass <= 1.0:
            raise ConfigError(f"retained_prior_mass must lie in (0, 1], got {self.retained_prior_mass}")
        if self.symmetry and not self.homogeneous:
            raise ConfigError("symmetry requires homogeneous risks")

    @property
    def homogeneous(self):
        return len({p.risk for p in self.priors}) == 1

    @property
    def n_subjects(self):
        return len(self.priors)


@dataclass
class TreeNode:
    lattice: object
    path: tuple
    weight: float
    commits: tuple = ()

    @property
    def depth(self):
        return len(self.path)


@dataclass
class Expansion:
    children: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    terminal: bool = False
    decisive: bool = False


@dataclass(frozen=True)
class SubjectErrors:
    fn_mass: float
    fp_mass: float
    fn_rate: float
    fp_rate: float


@dataclass
class AnalysisReport:
    scheme: Scheme
    expected_tests: float
    decisive_rate: float
    per_subject: dict
    aggregate_fn_mass: float
    aggregate_fp_mass: float
    aggregate_fn_rate: float
    aggregate_fp_rate: float
    branches_terminal: int
    branches_pruned: int
    nodes_expanded: int
    trees: int
    retained_mass: float = 1.0
    pruned_mass: float = 0.0

    STATISTICS = (
        "expected_tests",
        "decisive_rate",
        "aggregate_fn_mass",
        "aggregate_fp_mass",
        "aggregate_fn_rate",
        "aggregate_fp_rate",
    )

    def to_dict(self):
        out = {
            "scheme": self.scheme.value,
            **{name: getattr(self, name) for name in self.STATISTICS},
            "per_subject": {
                str(sid): {
                    "fn_mass": e.fn_mass,
                    "fp_mass": e.fp_mass,
                    "fn_rate": e.fn_rate,
                    "fp_rate": e.fp_rate,
                }
                for sid, e in self.per_subject.items()
            },
            "branches_terminal": self.branches_terminal,
            "branches_pruned": self.branches_pruned,
            "nodes_expanded": self.nodes_expanded,
            "trees": self.trees,
            "retained_mass": self.retained_mass,
            "pruned_mass": self.pruned_mass,
        }
        return out


class _Tally:
    """Additive statistics of one tree (or a weighted sum of trees)."""

    def __init__(self, subject_ids):
        self.expected_tests = 0.0
        self.decisive = 0.0
        self.terminal_mass = 0.0
        self.pruned_mass = 0.0
        self.fn = dict.fromkeys(subject_ids, 0.0)
        self.fp = dict.fromkeys(subject_ids, 0.0)
        self.terminal = 0
        self.pruned = 0
        self.expanded = 0
        self.trees = 1

    def add_terminal(self, node, decisive):
        self.terminal += 1
        self.terminal_mass += node.weight
        self.expected_tests += node.weight * node.depth
        if decisive:
            self.decisive += node.weight

    def add_pruned(self, weight):
        self.pruned += 1
        self.pruned_mass += weight

    def add_commits(self, commits, weight, truth):
        # truth=None: charge the commit-time posterior error;
        # otherwise charge the full weight when the commit contradicts the true state
        for ev in commits:
            if truth is None:
                err = weight * ev.residual_error
            else:
                wrong = (ev.subject_id in truth) != (ev.decision is Outcome.NEGATIVE)
                err = weight if wrong else 0.0
            if ev.decision is Outcome.NEGATIVE:
                self.fn[ev.subject_id] += err
            else:
                self.fp[ev.subject_id] += err

    def absorb(self, other, factor):
        self.expected_tests += factor * other.expected_tests
        self.decisive += factor * other.decisive
        self.terminal_mass += factor * other.terminal_mass
        self.pruned_mass += factor * other.pruned_mass
        for sid in self.fn:
            self.fn[sid] += factor * other.fn[sid]
            self.fp[sid] += factor * other.fp[sid]
        self.terminal += other.terminal
        self.pruned += other.pruned
        self.expanded += other.expanded

    def report(self, config, trees=1, retained_mass=1.0):
        per_subject = {}
        for p in config.priors:
            fn, fp = self.fn[p.subject_id], self.fp[p.subject_id]
            per_subject[p.subject_id] = SubjectErrors(fn, fp, fn / p.risk, fp / (1.0 - p.risk))
        agg_fn = math.fsum(self.fn.values())
        agg_fp = math.fsum(self.fp.values())
        expected_pos = math.fsum(p.risk for p in config.priors)
        return AnalysisReport(
            scheme=config.scheme,
            expected_tests=self.expected_tests,
            decisive_rate=self.decisive,
            per_subject=per_subject,
            aggregate_fn_mass=agg_fn,
            aggregate_fp_mass=agg_fp,
            aggregate_fn_rate=agg_fn / expected_pos,
            aggregate_fp_rate=agg_fp / (config.n_subjects - expected_pos),
            branches_terminal=self.terminal,
            branches_pruned=self.pruned,
            nodes_expanded=self.expanded,
            trees=trees,
            retained_mass=retained_mass,
            pruned_mass=self.pruned_mass,
        )


def check_scale(config):
    """Refuse jobs beyond the desk-scale guards; warn on very large trees."""
    if config.max_stages > MAX_STAGES_GUARD:
        raise ScaleGuardError(
            f"max_stages {config.max_stages} exceeds the guard of {MAX_STAGES_GUARD} "
            f"(up to 2^{config.max_stages} branches per tree)"
        )
    trees = 1
    if config.scheme is Scheme.MULTI:
        n = config.n_subjects
        if config.symmetry:
            trees = n + 1
        elif n > MULTI_ENUMERATION_GUARD:
            raise ScaleGuardError(
                f"true-state enumeration too large: 2^{n} trees (guard 2^{MULTI_ENUMERATION_GUARD}); "
                "enable symmetry or reduce subjects"
            )
        else:
            trees = 1 << n
    projected = trees << config.max_stages
    if projected > BRANCH_WARNING:
        warnings.warn(f"projected branch count {projected} exceeds {BRANCH_WARNING}", RuntimeWarning, stacklevel=2)
    return projected


def _root(config):
    lattice = build_lattice(config.priors)
    commits = classify_and_shrink(lattice, config.thresholds)
    return TreeNode(lattice, (), 1.0, tuple(commits))


def _local_truth(truth, lattice):
    state = 0
    for b, sid in enumerate(lattice.bit_to_subject):
        if sid in truth:
            state |= 1 << b
    return state


def expand_node(node, config, threshold=0.0, truth=None, selector=select_op_bha):
    """Grow one node by a halving-selected test.

    ``truth`` is the set of truly negative subject ids for multi-tree nodes
    (children weighted by P(response | truth)); ``None`` weights children by
    the posterior predictive. Children with weight <= ``threshold`` come back
    in ``pruned`` as bare weights, without a lattice.
    """
    lattice = node.lattice
    if lattice.n_active == 0:
        return Expansion(terminal=True, decisive=True)
    if node.depth >= config.max_stages:
        return Expansion(terminal=True, decisive=False)
    chosen = selector(lattice)
    if truth is None:
        p_neg = predictive_negative(lattice, chosen.pool, config.model)
    else:
        p_neg = likelihood_negative(_local_truth(truth, lattice), chosen.pool, config.model)
    pool_ids = tuple(sorted(decode_state(chosen.pool, lattice)))
    out = Expansion()
    for outcome, factor in ((Outcome.NEGATIVE, p_neg), (Outcome.POSITIVE, 1.0 - p_neg)):
        weight = node.weight * factor
        if weight <= threshold:
            out.pruned.append(weight)
            continue
        child = lattice.copy()
        try:
            update_posterior(child, chosen.pool, outcome, config.model)
        except ImpossibleResponseError:
            out.pruned.append(weight)
            continue
        commits = classify_and_shrink(child, config.thresholds)
        out.children.append(TreeNode(child, node.path + ((pool_ids, outcome),), weight, tuple(commits)))
    return out


def _check_conservation(tally, frontier, where):
    total = tally.terminal_mass + tally.pruned_mass + math.fsum(n.weight for n in frontier)
    if abs(total - 1.0) > CONSERVATION_TOL:
        raise RuntimeError(f"branch weights sum to {total!r} at {where}")


def _check_branch_cap(tally, config):
    if tally.terminal > 1 << config.max_stages:
        raise RuntimeError(f"{tally.terminal} terminal branches exceed 2^{config.max_stages}")


class _Workers:
    """Thread pool wrapper; inline execution for a single worker."""

    def __init__(self, worker_count):
        self.count = _resolve_workers(worker_count)
        self.pool = ThreadPoolExecutor(max_workers=self.count) if self.count > 1 else None

    def map(self, fn, items):
        if self.pool is None or len(items) < 2:
            return [fn(item) for item in items]
        return list(self.pool.map(fn, items))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()


def _expand_frontier(frontier, config, threshold, workers):
    """Expand one breadth-first stage with task alignment.

    Nodes are grouped by lattice size, largest first, and each group is
    dispatched as a unit. A group too small to occupy every worker with big
    lattices is run node by node with the selection itself split across the
    workers instead.
    """
    results = [None] * len(frontier)
    groups = {}
    for i, node in enumerate(frontier):
        groups.setdefault(node.lattice.n_active, []).append(i)
    for size in sorted(groups, reverse=True):
        members = groups[size]
        nodes = [frontier[i] for i in members]
        if workers.count > 1 and len(nodes) < workers.count and size >= INTRA_LATTICE_MIN_N:

            def intra(lattice):
                return select(lattice, worker_count=workers.count, executor=workers.pool)

            done = [expand_node(node, config, threshold, selector=intra) for node in nodes]
        else:
            done = workers.map(lambda node: expand_node(node, config, threshold), nodes)
        for i, exp in zip(members, done):
            results[i] = exp
    return results


def _run_breadth_first(config, threshold, workers):
    check_scale(config)
    tally = _Tally([p.subject_id for p in config.priors])
    root = _root(config)
    tally.add_commits(root.commits, 1.0, None)
    frontier = [root]
    stage = 0
    with _Workers(workers) as pool:
        while frontier:
            expansions = _expand_frontier(frontier, config, threshold, pool)
            upcoming = []
            for node, exp in zip(frontier, expansions):
                if exp.terminal:
                    tally.add_terminal(node, exp.decisive)
                    continue
                tally.expanded += 1
                for weight in exp.pruned:
                    tally.add_pruned(weight)
                for child in exp.children:
                    tally.add_commits(child.commits, child.weight, None)
                    upcoming.append(child)
            _check_conservation(tally, upcoming, f"stage {stage}")
            frontier = upcoming
            stage += 1
            log.debug("stage %d: %d open branches", stage, len(frontier))
    _check_branch_cap(tally, config)
    return tally.report(config)


def run_single_tree(config, workers=1):
    """Breadth-first marginal tree; only zero-probability branches are dropped."""
    return _run_breadth_first(config, 0.0, workers)


def run_fusion_tree(config, workers=1):
    """Single tree with branches of marginal weight <= prune_threshold cut at every stage."""
    return _run_breadth_first(config, config.prune_threshold, workers)


def apply_symmetry(config):
    """One representative true state per number of positives.

    For k = 0..N the representative has the k lowest-indexed subjects positive
    and carries weight C(N, k) p^k (1-p)^(N-k). Returns a list of
    ``(negative subject ids, weight)``.
    """
    if not config.homogeneous:
        raise ConfigError("symmetry requires homogeneous risks")
    n = config.n_subjects
    p = config.priors[0].risk
    ids = [prior.subject_id for prior in config.priors]
    return [(frozenset(ids[k:]), math.comb(n, k) * p**k * (1.0 - p) ** (n - k)) for k in range(n + 1)]


def enumerate_true_states(config):
    """Every true state with its prior, indexed like the initial lattice."""
    lattice = build_lattice(config.priors)
    probs = lattice.probs.tolist()
    return [(frozenset(decode_state(state, lattice)), probs[state]) for state in range(1 << lattice.n_active)]


def apply_prior_mass_tradeoff(config, truths=None):
    """Keep the most probable true states until ``retained_prior_mass`` is covered.

    Returns ``(kept, retained_mass)``; the kept weights are not renormalized.
    """
    if truths is None:
        truths = enumerate_true_states(config)
    target = config.retained_prior_mass
    ranked = sorted(range(len(truths)), key=lambda i: (-truths[i][1], i))
    kept, cumulative = [], 0.0
    for i in ranked:
        kept.append(truths[i])
        cumulative += truths[i][1]
        if cumulative >= target - 1e-12:
            break
    return kept, cumulative


def _true_state_plan(config):
    truths = apply_symmetry(config) if config.symmetry else enumerate_true_states(config)
    if config.retained_prior_mass < 1.0:
        return apply_prior_mass_tradeoff(config, truths)
    return truths, 1.0


def _grow_truth_tree(root, truth, config):
    tally = _Tally([p.subject_id for p in config.priors])
    tally.add_commits(root.commits, 1.0, truth)
    stack = [TreeNode(root.lattice.copy(), (), 1.0)]
    while stack:
        node = stack.pop()
        exp = expand_node(node, config, config.prune_threshold, truth=truth)
        if exp.terminal:
            tally.add_terminal(node, exp.decisive)
            continue
        tally.expanded += 1
        for weight in exp.pruned:
            tally.add_pruned(weight)
        for child in exp.children:
            tally.add_commits(child.commits, child.weight, truth)
        stack.extend(reversed(exp.children))
    _check_conservation(tally, (), f"true state {sorted(truth)}")
    _check_branch_cap(tally, config)
    return tally


def run_multi_tree(config, workers=1):
    """One depth-first tree per true state, aggregated under the prior."""
    check_scale(config)
    truths, retained = _true_state_plan(config)
    root = _root(config)
    with _Workers(workers) as pool:
        tallies = pool.map(lambda item: _grow_truth_tree(root, item[0], config), truths)
    total = _Tally([p.subject_id for p in config.priors])
    for (_, weight), tally in zip(truths, tallies):
        total.absorb(tally, weight)
    return total.report(config, trees=len(truths), retained_mass=retained)


def run_analysis(config, workers=1):
    runner = {
        Scheme.MULTI: run_multi_tree,
        Scheme.SINGLE: run_single_tree,
        Scheme.FUSION: run_fusion_tree,
    }[config.scheme]
    return runner(config, workers=workers)


def homogeneous_priors(n, risk):
    return [SubjectPrior(i, risk) for i in range(n)]
