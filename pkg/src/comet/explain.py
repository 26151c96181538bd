"""Precision/coverage estimation and the beam-search explanation loop.

A candidate feature set's precision is the probability that a perturbation
preserving it keeps the model's prediction inside the target interval;
coverage is the probability that an unconstrained perturbation still shows
all its features. Candidates are screened level by level (singletons first,
then one-feature extensions of the survivors) with a KL-LUCB best-arm loop;
the first level producing a candidate whose precision lower confidence bound
clears the threshold wins, and the accepted candidate with maximum coverage
is returned.
"""

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng as rngmod
from .graph import FeatureSet, build_graph, extract_features, present_keys
from .models import TargetInterval
from .perturb import PerturbConfig, make_plan, sample_from_plan, enumerate_space

# Anchors-style exploration rate constants for the KL-LUCB screening loop
_LUCB_ALPHA = 1.1
_LUCB_K = 405.5


@dataclass(frozen=True)
class ExplainConfig:
    precision_threshold: float = 0.7
    epsilon_cycles: float = 0.25
    beam_width: int = 10
    lucb_confidence: float = 0.05
    lucb_tolerance: float = 0.1
    batch_size: int = 16
    min_samples: int = 100
    max_samples_per_candidate: int = 10000
    coverage_pool: int = 1000
    master_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.precision_threshold < 1.0:
            raise ValueError("precision_threshold must be in (0, 1)")
        if not 0.0 < self.lucb_confidence < 1.0:
            raise ValueError("lucb_confidence must be in (0, 1)")
        for name in ("beam_width", "batch_size", "min_samples",
                     "max_samples_per_candidate", "coverage_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class Explanation:
    features: FeatureSet
    est_precision: float
    precision_lcb: float
    est_coverage: float
    samples_used: int
    wall_time: float
    model_name: str
    prediction: float
    interval: TargetInterval
    seed: int
    converged: bool = True
    config: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        feats = []
        for f in self.features:
            key = f.key()
            if key == "numinsts":
                feats.append({"type": "numinsts", "count": f.count})
            elif key.startswith("inst:"):
                feats.append({"type": "inst", "index": f.index})
            else:
                e = f.edge
                feats.append({"type": "dep", "src": e.src, "dst": e.dst,
                              "kind": e.kind, "resource": e.resource})
        return {
            "model": self.model_name,
            "prediction": self.prediction,
            "interval": {"lower": self.interval.lower, "upper": self.interval.upper,
                         "epsilon": self.interval.epsilon},
            "features": feats,
            "est_precision": round(self.est_precision, 6),
            "precision_lcb": round(self.precision_lcb, 6),
            "est_coverage": round(self.est_coverage, 6),
            "samples_used": self.samples_used,
            "wall_time": round(self.wall_time, 3) if include_timing else 0.0,
            "seed": self.seed,
            "converged": self.converged,
            "config": self.config,
        }


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q); 0*ln(0/x) = 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("kl_bernoulli arguments must lie in [0, 1]")
    if p == q:
        return 0.0
    if q <= 0.0 or q >= 1.0:
        raise ValueError("kl_bernoulli(p, q) diverges for q in {0, 1} with p != q")
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def kl_ucb(successes: int, trials: int, level: float, tol: float = 1e-6) -> float:
    """Largest q >= p-hat with trials * KL(p-hat, q) <= level, by bisection."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    if level <= 0.0:
        return p
    lo, hi = p, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if trials * kl_bernoulli(p, mid) > level:
            hi = mid
        else:
            lo = mid
    return lo


def kl_lcb(successes: int, trials: int, level: float, tol: float = 1e-6) -> float:
    """Smallest q <= p-hat with trials * KL(p-hat, q) <= level."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    if level <= 0.0:
        return p
    lo, hi = 0.0, p
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if trials * kl_bernoulli(p, mid) > level:
            lo = mid
        else:
            hi = mid
    return hi


def _beta(n_arms: int, round_t: int, confidence: float) -> float:
    temp = math.log(_LUCB_K * n_arms * (round_t ** _LUCB_ALPHA) / confidence)
    return temp + math.log(max(temp, 1.0))


def _kl_vec(p, q):
    out = np.zeros_like(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = p > 0.0
        out[lo] += (p * np.log(p / q))[lo]
        hi = p < 1.0
        out[hi] += ((1.0 - p) * np.log((1.0 - p) / (1.0 - q)))[hi]
    return out


def _bounds_vec(successes, trials, level, iters: int = 16):
    """Vectorized KL confidence bounds for the screening loop (coarser
    tolerance than the public kl_ucb/kl_lcb, which the loop does not need)."""
    p = np.asarray(successes, dtype=float) / np.asarray(trials, dtype=float)
    t = np.asarray(trials, dtype=float)
    lo, hi = p.copy(), np.ones_like(p)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = t * _kl_vec(p, np.clip(mid, 1e-12, 1 - 1e-12)) > level
        hi[over] = mid[over]
        lo[~over] = mid[~over]
    ucb = lo
    lo, hi = np.zeros_like(p), p.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = t * _kl_vec(p, np.clip(mid, 1e-12, 1 - 1e-12)) > level
        lo[over] = mid[over]
        hi[~over] = mid[~over]
    lcb = hi
    return lcb, ucb


def precision_estimate(model, kb, g, F: FeatureSet, target: TargetInterval,
                       pcfg: PerturbConfig, rng, n: int):
    """Draw n feature-preserving perturbations; count predictions inside target."""
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = make_plan(kb, g, F, pcfg)
    fast = getattr(model, "predict_graph", None)
    successes = 0
    for _ in range(n):
        result = sample_from_plan(plan, pcfg, rng)
        value = fast(result.graph) if fast else model.predict(result.block)
        if target.contains(value):
            successes += 1
    return successes, n


def coverage_estimate(g, F: FeatureSet, pool) -> float:
    """Fraction of an unconstrained-perturbation pool exhibiting all of F."""
    if not pool:
        raise ValueError("coverage pool must be non-empty")
    pool_feats = extract_features(g)
    want = frozenset(f.key() for f in F)
    hits = 0
    for r in pool:
        keys = present_keys(g, r.graph, r.vertex_map, pool_feats)
        if want <= keys:
            hits += 1
    return hits / len(pool)


def exact_faithful_check(model, kb, g, F: FeatureSet, target: TargetInterval,
                         limit: int) -> bool:
    """Whole-space faithfulness: every reachable block's prediction in target."""
    members = enumerate_space(kb, g, F, limit)
    fast = getattr(model, "predict_graph", None)
    for block in members:
        value = (fast(build_graph(kb, block)) if fast else model.predict(block))
        if not target.contains(value):
            return False
    return True


class _Arms:
    """Per-candidate sampling state for one explanation run."""

    def __init__(self, model, kb, g, pcfg: PerturbConfig, target, cfg: ExplainConfig):
        self.model = model
        self.kb = kb
        self.g = g
        self.pcfg = pcfg
        self.target = target
        self.cfg = cfg
        self.fast = getattr(model, "predict_graph", None)
        self.stats: dict = {}     # key -> [successes, trials]
        self.plans: dict = {}
        self.rounds: dict = {}
        self.total_samples = 0

    def register(self, cand: FeatureSet):
        key = cand.key()
        if key not in self.stats:
            self.stats[key] = [0, 0]
            self.plans[key] = make_plan(self.kb, self.g, cand, self.pcfg)
            self.rounds[key] = 0

    def sample(self, key: str, n: int):
        plan = self.plans[key]
        self.rounds[key] += 1
        rng = rngmod.stream(self.cfg.master_seed, "prec", key, self.rounds[key])
        s = self.stats[key]
        for _ in range(n):
            result = sample_from_plan(plan, self.pcfg, rng)
            value = (self.fast(result.graph) if self.fast
                     else self.model.predict(result.block))
            if self.target.contains(value):
                s[0] += 1
            s[1] += 1
        self.total_samples += n

    def mean(self, key: str) -> float:
        s, t = self.stats[key]
        return s / t if t else 0.0

    def bounds(self, key: str, level: float):
        s, t = self.stats[key]
        return kl_lcb(s, t, level), kl_ucb(s, t, level)


def _screen_level(arms: _Arms, keys, cfg: ExplainConfig):
    """KL-LUCB loop over one level's candidates.

    Stops when (a) the top beam_width arms are separated from the rest at
    lucb_tolerance, (b) the critical arms hit the sample cap, or (c) every arm
    is threshold-decided at the acceptance confidence with at most beam_width
    acceptances -- in that state further separation cannot change which
    candidates the level accepts, since any accepted arm's mean exceeds any
    rejected arm's. `keys` must already be in deterministic candidate order.
    """
    order = {k: i for i, k in enumerate(keys)}
    m = min(cfg.beam_width, len(keys))
    thr = cfg.precision_threshold
    acc_level = math.log(1.0 / cfg.lucb_confidence)
    for key in keys:
        if arms.stats[key][1] == 0:
            arms.sample(key, cfg.batch_size)
    round_t = 1
    while True:
        succ = [arms.stats[k][0] for k in keys]
        tri = [arms.stats[k][1] for k in keys]
        means = [s / t for s, t in zip(succ, tri)]
        ranked_idx = sorted(range(len(keys)), key=lambda i: (-means[i], i))

        lcb_a, ucb_a = _bounds_vec(succ, tri, acc_level)
        accepted = [i for i in range(len(keys))
                    if lcb_a[i] >= thr and tri[i] >= cfg.min_samples]
        undecided = [i for i in range(len(keys))
                     if ucb_a[i] >= thr and i not in accepted
                     and tri[i] < cfg.max_samples_per_candidate]
        if not undecided and len(accepted) <= m:
            return [keys[i] for i in ranked_idx]

        if m < len(keys):
            level = _beta(len(keys), round_t, cfg.lucb_confidence)
            lcb, ucb = _bounds_vec(succ, tri, level)
            top, rest = ranked_idx[:m], ranked_idx[m:]
            l_in = min(top, key=lambda i: (lcb[i], i))
            u_out = max(rest, key=lambda i: (ucb[i], -i))
            if ucb[u_out] - lcb[l_in] < cfg.lucb_tolerance:
                return [keys[i] for i in ranked_idx]
            pair = [l_in, u_out]
        elif not undecided:
            return [keys[i] for i in ranked_idx]
        else:
            pair = []

        progressed = False
        for i in sorted(set(undecided) | set(pair)):
            if arms.stats[keys[i]][1] < cfg.max_samples_per_candidate:
                arms.sample(keys[i], cfg.batch_size)
                progressed = True
        if not progressed:
            return [keys[i] for i in ranked_idx]
        round_t += 1


def _refine_acceptance(arms: _Arms, key: str, cfg: ExplainConfig) -> bool:
    """Sample until the threshold is decided: lcb >= thr accepts, ucb < thr rejects."""
    level = math.log(1.0 / cfg.lucb_confidence)
    thr = cfg.precision_threshold
    while arms.stats[key][1] < cfg.min_samples:
        arms.sample(key, cfg.batch_size)
    while arms.stats[key][1] < cfg.max_samples_per_candidate:
        lcb, ucb = arms.bounds(key, level)
        if lcb >= thr or ucb < thr:
            break
        arms.sample(key, cfg.batch_size)
    lcb, _ = arms.bounds(key, level)
    return lcb >= thr


def explain(model, kb, bb, cfg: ExplainConfig,
            pcfg: PerturbConfig | None = None) -> Explanation:
    """Maximum-coverage feature set whose precision clears the threshold.

    Falls back to the full feature pool (flagged converged=False) when no
    candidate reaches the threshold at any level.
    """
    t0 = time.perf_counter()
    pcfg = pcfg or PerturbConfig()
    g = build_graph(kb, bb)
    fast = getattr(model, "predict_graph", None)
    prediction = fast(g) if fast else model.predict(bb)
    target = TargetInterval(prediction, cfg.epsilon_cycles)
    pool_feats = extract_features(g)
    all_features = list(pool_feats)

    # shared unconstrained pool: one sample of the perturbation distribution,
    # reused for every candidate's coverage so the ordering is consistent
    pool_plan = make_plan(kb, g, FeatureSet(), pcfg)
    present_sets = []
    for i in range(cfg.coverage_pool):
        r = sample_from_plan(pool_plan, pcfg,
                             rngmod.stream(cfg.master_seed, "pool", i))
        present_sets.append(present_keys(g, r.graph, r.vertex_map, pool_feats))

    def coverage_of(cand: FeatureSet) -> float:
        want = frozenset(f.key() for f in cand)
        return sum(1 for s in present_sets if want <= s) / len(present_sets)

    # candidate ordering follows the feature pool's deterministic order
    pool_index = {f.key(): i for i, f in enumerate(pool_feats)}

    def order_key(cand: FeatureSet):
        return tuple(sorted(pool_index[f.key()] for f in cand))

    arms = _Arms(model, kb, g, pcfg, target, cfg)

    def finish(cand: FeatureSet, converged: bool) -> Explanation:
        key = cand.key()
        s, t = arms.stats[key]
        lcb = kl_lcb(s, t, math.log(1.0 / cfg.lucb_confidence))
        return Explanation(
            features=cand,
            est_precision=s / t,
            precision_lcb=lcb,
            est_coverage=coverage_of(cand),
            samples_used=arms.total_samples + cfg.coverage_pool,
            wall_time=time.perf_counter() - t0,
            model_name=model.name,
            prediction=prediction,
            interval=target,
            seed=cfg.master_seed,
            converged=converged,
            config=_config_echo(cfg, pcfg),
        )

    survivors = [FeatureSet()]
    for _level in range(1, len(all_features) + 1):
        candidates = {}
        for base in survivors:
            for f in all_features:
                if f in base:
                    continue
                cand = base.union([f])
                candidates[cand.key()] = cand
        if not candidates:
            break
        keys = sorted(candidates, key=lambda k: order_key(candidates[k]))
        for key in keys:
            arms.register(candidates[key])
        ranked = _screen_level(arms, keys, cfg)
        top = ranked[:min(cfg.beam_width, len(ranked))]

        accepted = [key for key in top if _refine_acceptance(arms, key, cfg)]
        if accepted:
            best = min(accepted,
                       key=lambda k: (-coverage_of(candidates[k]), len(candidates[k]),
                                      order_key(candidates[k])))
            return finish(candidates[best], converged=True)
        survivors = [candidates[k] for k in top]

    # nothing reached the threshold: the full pool is trivially faithful
    arms.register(pool_feats)
    arms.sample(pool_feats.key(), cfg.min_samples)
    return finish(pool_feats, converged=False)


def _config_echo(cfg: ExplainConfig, pcfg: PerturbConfig) -> dict:
    echo = asdict(cfg)
    echo.update({f"perturb_{k}": v for k, v in asdict(pcfg).items()})
    return echo
