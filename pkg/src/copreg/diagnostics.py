"""Model evaluation battery.

Log-scores are reported as NEGATIVE mean log predictive densities, so
lower is better; every text output states this convention.  Cross-
validated scores refit the model on each fold complement and score the
held-out observations at posterior-mean plug-in parameters (a flag
switches to full posterior mixing).

PSRF is the Brooks-Gelman potential scale reduction factor from between-
and within-chain variances; ESS uses Geyer's initial-positive-sequence
truncation of the autocorrelation series, computed per chain and summed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .errors import NumericalError, StructuralError
from .inference import McmcConfig, PosteriorSamples, PriorSpec, run_mcmc
from .model import (
    Dataset,
    LikelihoodEvaluator,
    MarginalStructure,
    ModelSpec,
    ModelStructure,
    compute_parameters,
)
from .marginals import DagumParams, GaussianParams, dagum_cdf, gaussian_cdf

__all__ = [
    "CvPlan",
    "pit_values",
    "quantile_residuals",
    "per_observation_log_score",
    "plug_in_log_score",
    "cv_log_score",
    "dic",
    "waic",
    "psrf",
    "ess",
    "SubgroupCorrelation",
    "subgroup_rank_correlations",
    "DiagnosticsReport",
]

_PIT_EPS = 1e-10


# ---------------------------------------------------------------------------
# Cross-validation plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CvPlan:
    """Random assignment of observations to folds of equal size (+-1)."""

    n_folds: int
    seed: int
    assignment: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", assignment)
        if self.n_folds < 2:
            raise StructuralError("need at least two folds")
        counts = np.bincount(assignment, minlength=self.n_folds)
        if len(counts) != self.n_folds or counts.max() - counts.min() > 1:
            raise StructuralError("folds must partition observations with equal size +-1")

    @classmethod
    def make(cls, n: int, n_folds: int = 4, seed: int = 0) -> "CvPlan":
        rng = np.random.default_rng(np.random.SeedSequence([seed, n_folds, n]))
        assignment = np.arange(n) % n_folds
        rng.shuffle(assignment)
        return cls(n_folds, seed, assignment)

    def folds(self):
        for f in range(self.n_folds):
            yield f, self.assignment != f, self.assignment == f

    def to_dict(self):
        return {"n_folds": self.n_folds, "seed": self.seed}


# ---------------------------------------------------------------------------
# PIT and quantile residuals
# ---------------------------------------------------------------------------

def _marginal_params_for(model: ModelSpec, data: Dataset, response: int):
    structure = model.structure
    params = compute_parameters(model, data)
    if isinstance(structure, MarginalStructure):
        if structure.response != response:
            raise StructuralError(
                f"model describes response {structure.response}, not {response}"
            )
        family, keys = structure.family, structure.parameter_names
    else:
        keys1, keys2 = structure.marginal_keys
        if response == 1:
            family, keys = structure.marginal1_family, keys1
        else:
            family, keys = structure.marginal2_family, keys2
    vals = [params[k] for k in keys]
    if family == "gaussian":
        return family, GaussianParams(*vals)
    return family, DagumParams(*vals)


def pit_values(
    model: ModelSpec,
    data: Dataset,
    response: int,
    rounding: float | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Probability integral transform ``F(y_i; theta_i)`` per observation.

    Parameters are observation-specific (posterior means plugged into the
    predictors).  For rounded/tied data pass the recording accuracy as
    ``rounding``; PIT values are then drawn uniformly between the CDF at
    the half-width-shifted values (randomized PIT).  Continuous data need
    no randomization.
    """
    y = data.y1 if response == 1 else data.y2
    family, mparams = _marginal_params_for(model, data, response)
    cdf = gaussian_cdf if family == "gaussian" else dagum_cdf
    if rounding is None:
        return np.asarray(cdf(y, mparams), dtype=float)
    if rng is None:
        raise StructuralError("randomized PIT needs an rng")
    lo = np.asarray(cdf(y - rounding / 2.0, mparams), dtype=float)
    hi = np.asarray(cdf(y + rounding / 2.0, mparams), dtype=float)
    return lo + rng.uniform(size=y.shape) * (hi - lo)


def quantile_residuals(pit: np.ndarray) -> np.ndarray:
    """Standard-normal quantiles of PIT values (clamped away from 0/1)."""
    pit = np.clip(np.asarray(pit, dtype=float), _PIT_EPS, 1.0 - _PIT_EPS)
    return special.ndtri(pit)


# ---------------------------------------------------------------------------
# Log-scores
# ---------------------------------------------------------------------------

def _scope_for(structure) -> str:
    if isinstance(structure, MarginalStructure):
        return f"marginal{structure.response}"
    return "conditional"


def per_observation_log_score(model: ModelSpec, data: Dataset, scope: str) -> np.ndarray:
    """Per-observation negative log predictive density at plug-in parameters.

    Scopes: ``marginal1``/``marginal2`` score one margin; ``conditional``
    scores response 1 given response 2 (copula density times marginal 1,
    evaluated exactly).
    """
    ev = LikelihoodEvaluator(model.structure, data)
    ev.set_state(model.coefficients)
    joint = isinstance(model.structure, ModelStructure)
    if scope == "marginal1" or (not joint and scope == f"marginal{model.structure.response}"):
        return -np.asarray(ev.part("logf1"), dtype=float)
    if not joint:
        raise StructuralError(f"scope {scope!r} not available for a marginal model")
    if scope == "marginal2":
        return -np.asarray(ev.part("logf2"), dtype=float)
    if scope == "conditional":
        return -(np.asarray(ev.part("logf1")) + np.asarray(ev.part("logc")))
    raise StructuralError(f"unknown scope {scope!r}")


def plug_in_log_score(model: ModelSpec, data: Dataset, scope: str | None = None) -> float:
    scope = scope or _scope_for(model.structure)
    return float(np.mean(per_observation_log_score(model, data, scope)))


def _mixed_log_score(samples, structure, data, scope, max_draws=200) -> np.ndarray:
    """Full posterior mixing: -log of the posterior-mean predictive density."""
    pooled = samples.pooled()
    stride = max(1, pooled.shape[0] // max_draws)
    idx = np.arange(0, pooled.shape[0], stride)
    acc = None
    for i in idx:
        model = ModelSpec(structure, samples.coefficients_at(structure, int(i)))
        logf = -per_observation_log_score(model, data, scope)
        acc = logf[None, :] if acc is None else np.vstack([acc, logf[None, :]])
    return -(special.logsumexp(acc, axis=0) - np.log(acc.shape[0]))


def cv_log_score(
    structure,
    data: Dataset,
    prior: PriorSpec | None = None,
    config: McmcConfig | None = None,
    plan: CvPlan | None = None,
    scope: str | None = None,
    full_mixing: bool = False,
) -> float:
    """Cross-validated negative mean log predictive density (lower = better).

    Each fold is scored with a model fitted on the complement; the average
    runs over every observation once.
    """
    config = config or McmcConfig()
    plan = plan or CvPlan.make(data.n)
    if plan.assignment.shape[0] != data.n:
        raise StructuralError("cross-validation plan does not cover the dataset")
    scope = scope or _scope_for(structure)
    scores = np.empty(data.n)
    for f, train, test in plan.folds():
        fold_seed = int(np.random.SeedSequence([config.seed, 97, f]).generate_state(1)[0])
        try:
            samples = run_mcmc(structure, data.subset(train), prior, replace(config, seed=fold_seed))
        except NumericalError as exc:
            raise NumericalError(f"fold {f}: {exc}") from exc
        test_data = data.subset(test)
        if full_mixing:
            scores[test] = _mixed_log_score(samples, structure, test_data, scope)
        else:
            model = samples.mean_model(structure)
            scores[test] = per_observation_log_score(model, test_data, scope)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Information criteria
# ---------------------------------------------------------------------------

def _deviances(samples: PosteriorSamples, structure, data: Dataset, max_draws=None):
    ev = LikelihoodEvaluator(structure, data)
    pooled = samples.pooled()
    stride = 1 if max_draws is None else max(1, pooled.shape[0] // max_draws)
    idx = range(0, pooled.shape[0], stride)
    for i in idx:
        coeffs = samples.coefficients_at(structure, int(i))
        loglik = ev.set_state(coeffs)
        yield loglik, ev


def dic(samples: PosteriorSamples, structure, data: Dataset, max_draws: int | None = None) -> float:
    """Deviance information criterion, ``mean(D) + p_D`` with the
    posterior-mean plug-in effective parameter count."""
    if samples.pooled().shape[0] < 100:
        raise StructuralError("need at least 100 pooled draws")
    dev_sum = 0.0
    count = 0
    for loglik, _ev in _deviances(samples, structure, data, max_draws):
        d = -2.0 * loglik
        if not np.isfinite(d):
            raise NumericalError(f"non-finite deviance at pooled draw {count}")
        dev_sum += d
        count += 1
    dev_mean = dev_sum / count
    model = samples.mean_model(structure)
    ev = LikelihoodEvaluator(structure, data)
    d_at_mean = -2.0 * ev.set_state(model.coefficients)
    p_d = dev_mean - d_at_mean
    return float(dev_mean + p_d)


def waic(samples: PosteriorSamples, structure, data: Dataset, max_draws: int | None = None) -> float:
    """Widely applicable information criterion over pooled draws:
    ``-2 * sum_i (log mean_s f(y_i | theta_s) - var_s log f(y_i | theta_s))``.
    """
    if samples.pooled().shape[0] < 100:
        raise StructuralError("need at least 100 pooled draws")
    n = data.n
    run_max = np.full(n, -np.inf)
    run_sum = np.zeros(n)  # sum of exp(logf - run_max)
    mean = np.zeros(n)
    m2 = np.zeros(n)
    count = 0
    for loglik, ev in _deviances(samples, structure, data, max_draws):
        logf = ev.per_observation()
        if not np.all(np.isfinite(logf)):
            raise NumericalError(f"non-finite per-observation likelihood at draw {count}")
        new_max = np.maximum(run_max, logf)
        with np.errstate(invalid="ignore"):
            scale = np.where(np.isfinite(run_max), np.exp(run_max - new_max), 0.0)
        run_sum = run_sum * scale + np.exp(logf - new_max)
        run_max = new_max
        count += 1
        delta = logf - mean
        mean += delta / count
        m2 += delta * (logf - mean)
    lppd = np.log(run_sum) + run_max - np.log(count)
    p_waic = m2 / (count - 1)
    return float(-2.0 * np.sum(lppd - p_waic))


# ---------------------------------------------------------------------------
# Chain convergence
# ---------------------------------------------------------------------------

def psrf(samples: PosteriorSamples, coefficient: str) -> float:
    """Brooks-Gelman potential scale reduction factor (multi-chain)."""
    chains = samples.chain_column(coefficient)
    m, n = chains.shape
    if m < 2:
        raise StructuralError("PSRF needs at least two chains")
    w = float(np.mean(np.var(chains, axis=1, ddof=1)))
    b_over_n = float(np.var(chains.mean(axis=1), ddof=1))
    if w == 0.0:
        return 1.0  # identical constant chains; 0/0 guarded by convention
    v = (n - 1) / n * w + b_over_n * (m + 1) / m
    return float(np.sqrt(v / w))


def _ess_single_chain(x: np.ndarray) -> float:
    n = x.shape[0]
    x = x - x.mean()
    var0 = float(np.dot(x, x)) / n
    if var0 == 0.0:
        warnings.warn("constant chain: ESS defined as the number of draws")
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer initial positive sequence with the monotone refinement: pair
    # sums Gamma_m = rho_2m + rho_2m+1 accumulate while positive, forced
    # nonincreasing; tau = -1 + 2*sum(Gamma) = 1 + 2*sum_k rho_k
    total = 0.0
    prev = np.inf
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        m += 1
    tau = max(-1.0 + 2.0 * total, 1.0 / n)
    return float(n / tau)


def ess(samples: PosteriorSamples, coefficient: str) -> float:
    """Effective sample size ``N / (1 + 2 sum_k rho_k)``, computed per
    chain and summed across chains."""
    chains = samples.chain_column(coefficient)
    if chains.size < 100:
        raise StructuralError("ESS needs at least 100 draws")
    return float(sum(_ess_single_chain(chains[c]) for c in range(chains.shape[0])))


def ess_per_chain_average(samples: PosteriorSamples, coefficient: str) -> float:
    return ess(samples, coefficient) / samples.n_chains


# ---------------------------------------------------------------------------
# Subgroup rank correlations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubgroupCorrelation:
    group: str
    size: int
    spearman_rho: float
    ci80: tuple[float, float] | None
    ci95: tuple[float, float] | None
    too_small: bool = False


def _bootstrap_spearman(y1, y2, n_boot, rng) -> tuple[tuple[float, float], tuple[float, float]]:
    n = y1.shape[0]
    stats_boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        stats_boot[b] = stats.spearmanr(y1[idx], y2[idx]).statistic
    lo80, hi80 = np.nanquantile(stats_boot, [0.10, 0.90])
    lo95, hi95 = np.nanquantile(stats_boot, [0.025, 0.975])
    return (float(lo80), float(hi80)), (float(lo95), float(hi95))


def subgroup_rank_correlations(
    data: Dataset,
    covariate: str,
    n_groups: int = 4,
    n_boot: int = 2000,
    seed: int = 0,
    discrete: bool | None = None,
) -> list[SubgroupCorrelation]:
    """Spearman correlation of the two responses per covariate subgroup.

    Discrete covariates split by level; continuous ones are ordered and cut
    into ``n_groups`` equal-size groups.  Percentile-bootstrap intervals at
    80% and 95%; groups smaller than 10 are flagged and get no intervals.
    """
    x = data.covariate(covariate)
    if discrete is None:
        uniq = np.unique(x)
        discrete = len(uniq) <= max(n_groups, 12) and np.allclose(uniq, np.round(uniq))
    if discrete:
        groups = [(f"{covariate}={v:g}", x == v) for v in np.unique(x)]
    else:
        order = np.argsort(x, kind="stable")
        splits = np.array_split(order, n_groups)
        groups = []
        for g, idx in enumerate(splits):
            mask = np.zeros(data.n, dtype=bool)
            mask[idx] = True
            lo, hi = x[idx].min(), x[idx].max()
            groups.append((f"{covariate} in [{lo:g}, {hi:g}]", mask))
    out = []
    for g, (label, mask) in enumerate(groups):
        y1, y2 = data.y1[mask], data.y2[mask]
        size = int(mask.sum())
        if size < 2:
            out.append(SubgroupCorrelation(label, size, float("nan"), None, None, True))
            continue
        rho = float(stats.spearmanr(y1, y2).statistic)
        if size < 10:
            out.append(SubgroupCorrelation(label, size, rho, None, None, True))
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, 131, g]))
        ci80, ci95 = _bootstrap_spearman(y1, y2, n_boot, rng)
        out.append(SubgroupCorrelation(label, size, rho, ci80, ci95))
    return out


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    """Aggregated evaluation results with JSON/text serialisation."""

    log_scores: dict[str, float] = field(default_factory=dict)
    dic: float | None = None
    waic: float | None = None
    psrf_table: dict[str, float] = field(default_factory=dict)
    ess_table: dict[str, float] = field(default_factory=dict)
    pit: dict[str, list[float]] = field(default_factory=dict)
    quantile_residuals: dict[str, list[float]] = field(default_factory=dict)
    subgroup_correlations: dict[str, list[SubgroupCorrelation]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    HEADER = "log-scores are negative mean log predictive densities (lower is better)"

    def to_dict(self) -> dict:
        return {
            "header": self.HEADER,
            "log_scores": self.log_scores,
            "dic": self.dic,
            "waic": self.waic,
            "psrf": self.psrf_table,
            "ess": self.ess_table,
            "pit": self.pit,
            "quantile_residuals": self.quantile_residuals,
            "subgroup_correlations": {
                cov: [
                    {
                        "group": r.group,
                        "size": r.size,
                        "spearman_rho": r.spearman_rho,
                        "ci80": list(r.ci80) if r.ci80 else None,
                        "ci95": list(r.ci95) if r.ci95 else None,
                        "too_small": r.too_small,
                    }
                    for r in rows
                ]
                for cov, rows in self.subgroup_correlations.items()
            },
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [self.HEADER, ""]
        if self.log_scores:
            lines.append("log-scores:")
            for k, v in self.log_scores.items():
                lines.append(f"  {k:40s} {v:10.4f}")
        if self.dic is not None:
            lines.append(f"DIC  {self.dic:12.3f}")
        if self.waic is not None:
            lines.append(f"WAIC {self.waic:12.3f}")
        if self.psrf_table:
            lines.append("")
            lines.append(f"{'coefficient':32s} {'PSRF':>8s} {'ESS':>8s}")
            for label in self.psrf_table:
                e = self.ess_table.get(label, float("nan"))
                lines.append(f"{label:32s} {self.psrf_table[label]:8.4f} {e:8.0f}")
        for cov, rows in self.subgroup_correlations.items():
            lines.append("")
            lines.append(f"rank correlations by {cov}:")
            for r in rows:
                ci = "" if not r.ci95 else f"  80%: [{r.ci80[0]:+.3f}, {r.ci80[1]:+.3f}]  95%: [{r.ci95[0]:+.3f}, {r.ci95[1]:+.3f}]"
                flag = "  (too small)" if r.too_small else ""
                lines.append(f"  {r.group:28s} n={r.size:<6d} rho={r.spearman_rho:+.3f}{ci}{flag}")
        for note in self.notes:
            lines.append("")
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"
