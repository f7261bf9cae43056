"""Monte-Carlo laboratory: truth generation, replicated fitting, and
coverage/error aggregation.

A :class:`Scenario` pins everything a study needs: sizes, the linear
truth profile, the coefficient truth, the covariate scheme, the
replication count, and a master seed.  Replications are deterministic
functions of ``(master seed, replication index)``, so summaries are
bit-for-bit reproducible regardless of how many workers execute them.

Tracked quantities mirror the usual reporting conventions for this model
class: mean absolute errors at the first, middle, and last parameter of
each side, coverage and interval length for neighbouring-parameter
contrasts, coverage for the coefficients with and without bias
correction, and normalized per-replication statistics for QQ-style
normality checks.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import norm

from .data import BipartiteGraph, CovariateTensor
from .errors import ConfigError, FitError, IllPosedError
from .families import ModelFamily, get_family
from .fitter import FitOptions, FitResult, ParameterSet, fit
from .inference import coefficient_inference, node_standard_errors

Z_95 = float(norm.ppf(0.975))

COVARIATE_SCHEMES = ("sign-product-2d", "none")


@dataclass(frozen=True)
class Scenario:
    """One simulation design point."""

    m: int
    n: int
    L: float
    gamma_star: tuple
    family: str = "logistic"
    scheme: str = "sign-product-2d"
    replications: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma_star", tuple(float(g) for g in self.gamma_star))
        if self.m < 2 or self.n < 2:
            raise ConfigError("scenario needs m >= 2 and n >= 2")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.scheme not in COVARIATE_SCHEMES:
            raise ConfigError(
                f"unknown covariate scheme {self.scheme!r}; "
                f"known: {', '.join(COVARIATE_SCHEMES)}"
            )
        get_family(self.family)  # validate eagerly

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Scenario":
        """Build from a parsed config mapping.  The density level may be
        given directly (``L``) or as a multiple of ``log m``
        (``L_factor``)."""
        d = dict(raw)
        if "L_factor" in d:
            if "L" in d:
                raise ConfigError("give either L or L_factor, not both")
            d["L"] = float(d.pop("L_factor")) * math.log(float(d["m"]))
        unknown = set(d) - {
            "m", "n", "L", "gamma_star", "family", "scheme", "replications", "seed",
        }
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad scenario: {exc}") from None


def density_level_menu(m: int) -> dict:
    """The four standard density regimes, keyed by their log-m factor."""
    return {c: c * math.log(m) for c in (-0.2, 0.0, 0.2, 0.4)}


def generate_truth(m: int, n: int, L: float, gamma_star) -> ParameterSet:
    """Linear truth profiles: the degree parameters decay linearly from
    ``L`` down to 0 across each side (the last event parameter lands on
    the identifiability pin exactly)."""
    if m < 2 or n < 2:
        raise ConfigError("linear truth profiles need m >= 2 and n >= 2")
    alpha = (m - 1.0 - np.arange(m)) * L / (m - 1.0)
    beta = (n - 1.0 - np.arange(n)) * L / (n - 1.0)
    beta[-1] = 0.0
    return ParameterSet(alpha=alpha, beta=beta, gamma=np.asarray(gamma_star, dtype=float))


def generate_covariates(
    m: int, n: int, scheme: str, rng: np.random.Generator
) -> CovariateTensor:
    """Draw edge covariates for a scheme.

    ``sign-product-2d``: two coordinates, each the product of an actor-level and
    an event-level sign.  The first pair of signs is +1 with probability
    0.3 (actors) and 0.6 (events); the second pair is balanced.  All
    draws are independent.
    """
    if scheme == "none":
        return CovariateTensor.empty(m, n)
    if scheme != "sign-product-2d":
        raise ConfigError(f"unknown covariate scheme {scheme!r}")

    def sign(count, prob_plus):
        return np.where(rng.random(count) < prob_plus, 1.0, -1.0)

    a1 = sign(m, 0.3)
    e1 = sign(n, 0.6)
    a2 = sign(m, 0.5)
    e2 = sign(n, 0.5)
    values = np.stack([np.outer(a1, e1), np.outer(a2, e2)], axis=2)
    return CovariateTensor(values=values, bound=1.0, names=("z1", "z2"))


def simulate_network(
    truth: ParameterSet,
    covariates: CovariateTensor,
    family: ModelFamily,
    rng: np.random.Generator,
) -> BipartiteGraph:
    """Draw one graph from the model at the given truth."""
    pi = truth.linear_predictor(covariates)
    weights = family.sample(pi, rng)
    return BipartiteGraph(
        weights=weights,
        actor_labels=tuple(f"a{i + 1}" for i in range(truth.m)),
        event_labels=tuple(f"e{j + 1}" for j in range(truth.n)),
    )


def tracked_indices(m: int, n: int) -> dict:
    """1-based tracked parameter indices and neighbouring contrasts."""
    return {
        "alpha": (1, m // 2, m),
        "beta": (1, n // 2, n - 1),
        "alpha_pairs": ((1, 2), (m // 2, m // 2 + 1), (m - 1, m)),
    }


@dataclass(frozen=True)
class ReplicationRecord:
    """Everything retained from one replication."""

    replication: int
    converged: bool
    abs_errors: dict = field(default_factory=dict)
    zeta: dict = field(default_factory=dict)
    ci_hits: dict = field(default_factory=dict)
    ci_lengths: dict = field(default_factory=dict)


def run_replication(scenario: Scenario, replication: int) -> ReplicationRecord:
    """Simulate, fit, and score one replication (deterministic in
    ``(scenario.seed, replication)``)."""
    rng = np.random.default_rng([scenario.seed, replication])
    family = get_family(scenario.family)
    truth = generate_truth(scenario.m, scenario.n, scenario.L, scenario.gamma_star)
    covariates = generate_covariates(scenario.m, scenario.n, scenario.scheme, rng)
    graph = simulate_network(truth, covariates, family, rng)
    try:
        result = fit(graph, covariates, family, FitOptions())
    except (FitError, IllPosedError):
        return ReplicationRecord(replication=replication, converged=False)
    if not result.converged:
        return ReplicationRecord(replication=replication, converged=False)
    return _score_replication(scenario, replication, truth, result)


def _score_replication(
    scenario: Scenario, replication: int, truth: ParameterSet, result: FitResult
) -> ReplicationRecord:
    m, n = scenario.m, scenario.n
    jac = result.jacobian
    node_se = node_standard_errors(result)
    tracked = tracked_indices(m, n)

    abs_errors = {}
    zeta = {}
    ci_hits = {}
    ci_lengths = {}

    for i in tracked["alpha"]:
        err = result.params.alpha[i - 1] - truth.alpha[i - 1]
        abs_errors[f"alpha:{i}"] = abs(float(err))
        zeta[f"alpha:{i}"] = float(err / node_se.alpha[i - 1])
    for j in tracked["beta"]:
        err = result.params.beta[j - 1] - truth.beta[j - 1]
        abs_errors[f"beta:{j}"] = abs(float(err))
        zeta[f"beta:{j}"] = float(err / node_se.beta[j - 1])

    # neighbouring-actor contrasts: shared-coupling term drops out
    var = result.family.variance(result.predictor)
    u_alpha = var.sum(axis=1)
    for i, j in tracked["alpha_pairs"]:
        se = math.sqrt(
            u_alpha[i - 1] / jac.diag_alpha[i - 1] ** 2
            + u_alpha[j - 1] / jac.diag_alpha[j - 1] ** 2
        )
        est = result.params.alpha[i - 1] - result.params.alpha[j - 1]
        true = truth.alpha[i - 1] - truth.alpha[j - 1]
        key = f"alpha:{i}-alpha:{j}"
        ci_hits[key] = bool(abs(est - true) <= Z_95 * se)
        ci_lengths[key] = 2.0 * Z_95 * se

    if scenario.gamma_star:
        coef = coefficient_inference(result, method="fisher")
        for k in range(len(scenario.gamma_star)):
            err = coef.estimate[k] - scenario.gamma_star[k]
            err_bc = coef.estimate_bc[k] - scenario.gamma_star[k]
            se = coef.standard_errors[k]
            abs_errors[f"gamma:{k + 1}"] = abs(float(err))
            ci_hits[f"gamma:{k + 1}"] = bool(abs(err) <= Z_95 * se)
            ci_hits[f"gamma_bc:{k + 1}"] = bool(abs(err_bc) <= Z_95 * se)
            ci_lengths[f"gamma:{k + 1}"] = 2.0 * Z_95 * float(se)

    return ReplicationRecord(
        replication=replication,
        converged=True,
        abs_errors=abs_errors,
        zeta=zeta,
        ci_hits=ci_hits,
        ci_lengths=ci_lengths,
    )


@dataclass(frozen=True)
class ScenarioSummary:
    """Aggregates over the converged replications of one scenario."""

    scenario: Scenario
    replications: int
    converged: int
    nonconvergence_rate: float
    mae: dict
    coverage: dict       # percent, 0..100
    ci_length: dict
    zeta_samples: dict   # key -> np.ndarray of normalized statistics

    def rows(self):
        """Flatten to (metric, key, value) rows for serialization."""
        out = [("replications", "", float(self.replications)),
               ("converged", "", float(self.converged)),
               ("nonconvergence_rate", "", self.nonconvergence_rate)]
        for key in sorted(self.mae):
            out.append(("mae", key, self.mae[key]))
        for key in sorted(self.coverage):
            out.append(("coverage", key, self.coverage[key]))
        for key in sorted(self.ci_length):
            out.append(("ci_length", key, self.ci_length[key]))
        return out


def run_scenario(scenario: Scenario, workers: int = 1) -> ScenarioSummary:
    """Run all replications and aggregate.

    Nonconverged replications are excluded from every aggregate and
    surface only through the reported nonconvergence rate.  The reduction
    is ordered by replication index, so worker count never changes the
    result.
    """
    reps = range(scenario.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_replication, [scenario] * scenario.replications,
                                    reps, chunksize=8))
    else:
        records = [run_replication(scenario, r) for r in reps]
    records.sort(key=lambda rec: rec.replication)
    good = [rec for rec in records if rec.converged]

    def mean_over(field_name):
        keys = good[0].__getattribute__(field_name).keys() if good else ()
        return {
            key: float(np.mean([rec.__getattribute__(field_name)[key] for rec in good]))
            for key in keys
        }

    mae = mean_over("abs_errors")
    coverage = {k: 100.0 * v for k, v in mean_over("ci_hits").items()}
    ci_length = mean_over("ci_lengths")
    zeta_samples = {}
    if good:
        for key in good[0].zeta:
            zeta_samples[key] = np.array([rec.zeta[key] for rec in good])
    return ScenarioSummary(
        scenario=scenario,
        replications=scenario.replications,
        converged=len(good),
        nonconvergence_rate=1.0 - len(good) / scenario.replications,
        mae=mae,
        coverage=coverage,
        ci_length=ci_length,
        zeta_samples=zeta_samples,
    )


def ks_normality(samples) -> tuple:
    """One-sample Kolmogorov-Smirnov test against the standard normal.

    Returns ``(statistic, p_value)`` with the asymptotic p-value.  Needs
    at least 30 samples for the asymptotic formula to be meaningful.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 30:
        raise ValueError(f"need at least 30 samples, got {x.size}")
    x = np.sort(x)
    k = x.size
    cdf = norm.cdf(x)
    grid = np.arange(1, k + 1) / k
    d_plus = float(np.max(grid - cdf))
    d_minus = float(np.max(cdf - (grid - 1.0 / k)))
    statistic = max(d_plus, d_minus)
    p_value = float(kolmogorov(math.sqrt(k) * statistic))
    return statistic, p_value


def write_summary_table(summary: ScenarioSummary, path):
    """Serialize a scenario summary as tab-separated (metric, key, value)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tkey\tvalue\n")
        for metric, key, value in summary.rows():
            fh.write(f"{metric}\t{key}\t{value:.10g}\n")


def write_qq_samples(summary: ScenarioSummary, out_dir):
    """Write one normalized-statistic file per tracked parameter (one
    value per line), ready for any plotting tool.  Returns the paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    paths = []
    for key in sorted(summary.zeta_samples):
        path = out_dir / f"qq_{key.replace(':', '_')}.txt"
        with open(path, "w", encoding="utf-8") as fh:
            for value in summary.zeta_samples[key]:
                fh.write(f"{value:.10g}\n")
        paths.append(path)
    return paths
