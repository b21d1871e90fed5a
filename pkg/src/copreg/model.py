"""Distributional regression core.

Every parameter of the joint distribution (two marginal families plus the
copula dependence parameter) gets its own linear predictor

    eta = beta_0 + beta_1 * x_1 + ... ,

mapped into the parameter's legal range by a link inverse.  Parameter keys
are ``mu``/``sigma2`` for a Gaussian marginal, ``p``/``a``/``b`` for a
Dagum marginal and ``rho`` for the copula.  If both responses use the same
family, response-2 keys get an ``_2`` suffix to stay unique.

Responses live on an affine standardized scale recorded in
``StandardizationSpec`` so results can be reported in raw units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from . import copulas
from .errors import DomainError, NumericalError, StructuralError

__all__ = [
    "MARGINAL_FAMILIES",
    "PARAMETERS_BY_FAMILY",
    "StandardizationSpec",
    "IDENTITY_STANDARDIZATION",
    "BIRTHWEIGHT_GAUSSIAN",
    "BIRTHWEIGHT_POSITIVE",
    "GESTAGE_GAUSSIAN",
    "GESTAGE_INVERTED",
    "standardization_for",
    "Dataset",
    "PredictorSpec",
    "default_link",
    "apply_link_inverse",
    "eval_predictor",
    "MarginalStructure",
    "ModelStructure",
    "ModelSpec",
    "compute_parameters",
    "joint_log_likelihood",
    "per_observation_loglik",
    "joint_log_likelihood_gradient",
    "LikelihoodEvaluator",
]

MARGINAL_FAMILIES = ("gaussian", "dagum")
PARAMETERS_BY_FAMILY = {"gaussian": ("mu", "sigma2"), "dagum": ("p", "a", "b")}

_ETA_CLAMP = 700.0  # exp() overflow guard


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationSpec:
    """Affine response map ``std = (raw - offset) / scale`` (or
    ``(offset - raw) / scale`` when ``inverted``)."""

    offset: float
    scale: float
    inverted: bool = False

    def __post_init__(self):
        if self.scale == 0:
            raise DomainError("standardization scale must be nonzero")

    def standardize(self, raw):
        raw = np.asarray(raw, dtype=float)
        if self.inverted:
            return (self.offset - raw) / self.scale
        return (raw - self.offset) / self.scale

    def unstandardize(self, std):
        std = np.asarray(std, dtype=float)
        if self.inverted:
            return self.offset - self.scale * std
        return self.offset + self.scale * std

    @property
    def density_jacobian(self) -> float:
        """|d std / d raw|: multiply standardized densities by this to get
        raw-scale densities."""
        return 1.0 / abs(self.scale)

    def to_dict(self):
        return {"offset": self.offset, "scale": self.scale, "inverted": self.inverted}

    @classmethod
    def from_dict(cls, d):
        return cls(d["offset"], d["scale"], bool(d.get("inverted", False)))


IDENTITY_STANDARDIZATION = StandardizationSpec(0.0, 1.0)

# Data-independent maps for birth-weight-like (response 1, grams) and
# gestational-age-like (response 2, days) responses.  The inverted map puts
# the long left tail of gestational age on the right, with positive support
# (322 days exceeds the maximum observable duration).
BIRTHWEIGHT_GAUSSIAN = StandardizationSpec(3500.0, 500.0)
BIRTHWEIGHT_POSITIVE = StandardizationSpec(0.0, 500.0)
GESTAGE_GAUSSIAN = StandardizationSpec(280.0, 14.0)
GESTAGE_INVERTED = StandardizationSpec(322.0, 14.0, inverted=True)


def standardization_for(response: int, family: str) -> StandardizationSpec:
    """Canonical standardization for response slot 1 or 2 under a family."""
    if response == 1:
        return BIRTHWEIGHT_GAUSSIAN if family == "gaussian" else BIRTHWEIGHT_POSITIVE
    if response == 2:
        return GESTAGE_GAUSSIAN if family == "gaussian" else GESTAGE_INVERTED
    raise StructuralError("response must be 1 or 2")


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Bivariate responses on the standardized scale plus covariates."""

    y1: np.ndarray
    y2: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]
    standardization: tuple[StandardizationSpec, StandardizationSpec] = (
        IDENTITY_STANDARDIZATION,
        IDENTITY_STANDARDIZATION,
    )

    def __post_init__(self):
        self.y1 = np.asarray(self.y1, dtype=float)
        self.y2 = np.asarray(self.y2, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.covariate_names = tuple(self.covariate_names)
        n = self.y1.shape[0]
        if n < 1:
            raise StructuralError("dataset must contain at least one observation")
        if self.y2.shape[0] != n or self.X.shape[0] != n:
            raise StructuralError("responses and covariates disagree on n")
        if self.X.shape[1] != len(self.covariate_names):
            raise StructuralError("covariate count does not match names")
        for label, arr in (("y1", self.y1), ("y2", self.y2), ("X", self.X)):
            if not np.all(np.isfinite(arr)):
                raise StructuralError(f"non-finite values in {label}")

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def covariate(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError as exc:
            raise StructuralError(f"unknown covariate {name!r}") from exc
        return self.X[:, j]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.y1[rows], self.y2[rows], self.X[rows], self.covariate_names, self.standardization
        )

    def raw_responses(self) -> tuple[np.ndarray, np.ndarray]:
        s1, s2 = self.standardization
        return s1.unstandardize(self.y1), s2.unstandardize(self.y2)

    def restandardized(self, std1: StandardizationSpec, std2: StandardizationSpec) -> "Dataset":
        """Exact affine re-expression of the responses under new maps."""
        raw1, raw2 = self.raw_responses()
        return Dataset(
            std1.standardize(raw1),
            std2.standardize(raw2),
            self.X,
            self.covariate_names,
            (std1, std2),
        )

    def center_covariates(self) -> tuple["Dataset", np.ndarray]:
        """Optional covariate centering (off by default everywhere)."""
        means = self.X.mean(axis=0)
        out = Dataset(self.y1, self.y2, self.X - means, self.covariate_names, self.standardization)
        return out, means


# ---------------------------------------------------------------------------
# Links and predictors
# ---------------------------------------------------------------------------

_RHO_LINKS = {"gaussian": "correlation", "clayton": "log", "gumbel": "log_shift"}


def default_link(parameter: str, copula_family: str | None = None) -> str:
    if parameter == "rho":
        if copula_family is None:
            raise StructuralError("rho link requires the copula family")
        return _RHO_LINKS[copula_family]
    if parameter.startswith("mu"):
        return "identity"
    if parameter.startswith(("sigma2", "p", "a", "b")):
        return "log"
    raise StructuralError(f"unknown parameter {parameter!r}")


def apply_link_inverse(link: str, eta):
    """Map a linear predictor into the parameter's legal range.

    ``identity``: mu; ``log``: exp(eta) for positive parameters (and the
    Clayton rho); ``correlation``: eta/sqrt(1+eta^2) into (-1, 1);
    ``log_shift``: exp(eta)+1 into (1, inf).  eta is clamped to +-700
    before exponentiation to avoid overflow.
    """
    eta = np.asarray(eta, dtype=float)
    if link == "identity":
        return eta
    if link == "log":
        return np.exp(np.clip(eta, -_ETA_CLAMP, _ETA_CLAMP))
    if link == "correlation":
        return eta / np.sqrt(1.0 + eta**2)
    if link == "log_shift":
        return np.exp(np.clip(eta, -_ETA_CLAMP, _ETA_CLAMP)) + 1.0
    raise StructuralError(f"unknown link {link!r}")


def link_forward(link: str, value):
    """Inverse of ``apply_link_inverse`` (used for initialisation)."""
    value = np.asarray(value, dtype=float)
    if link == "identity":
        return value
    if link == "log":
        return np.log(value)
    if link == "correlation":
        return value / np.sqrt(1.0 - value**2)
    if link == "log_shift":
        return np.log(value - 1.0)
    raise StructuralError(f"unknown link {link!r}")


@dataclass(frozen=True)
class PredictorSpec:
    """Covariate subset and link for one model parameter."""

    parameter: str
    covariates: tuple[str, ...] = ()
    link: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))

    @property
    def n_coefficients(self) -> int:
        return 1 + len(self.covariates)

    def labels(self) -> list[str]:
        return [f"{self.parameter}:intercept"] + [
            f"{self.parameter}:{c}" for c in self.covariates
        ]


def eval_predictor(spec: PredictorSpec, beta, x_row, covariate_names) -> float:
    """Single-row predictor value ``beta_0 + sum_j beta_j x_j``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[0] != spec.n_coefficients:
        raise StructuralError(
            f"{spec.parameter}: expected {spec.n_coefficients} coefficients, got {beta.shape[0]}"
        )
    x_row = np.asarray(x_row, dtype=float)
    names = list(covariate_names)
    eta = beta[0]
    for k, cov in enumerate(spec.covariates):
        try:
            j = names.index(cov)
        except ValueError as exc:
            raise StructuralError(f"unknown covariate {cov!r}") from exc
        eta += beta[1 + k] * x_row[j]
    return float(eta)


def design_matrix(spec: PredictorSpec, data: Dataset) -> np.ndarray:
    cols = [np.ones(data.n)]
    cols.extend(data.covariate(c) for c in spec.covariates)
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Model structures
# ---------------------------------------------------------------------------

def _check_family(family: str) -> str:
    if family not in MARGINAL_FAMILIES:
        raise StructuralError(f"unknown marginal family {family!r}")
    return family


def _marginal_keys(fam1: str, fam2: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    keys1 = PARAMETERS_BY_FAMILY[fam1]
    keys2 = PARAMETERS_BY_FAMILY[fam2]
    if fam1 == fam2:
        keys2 = tuple(k + "_2" for k in keys2)
    return keys1, keys2


@dataclass(frozen=True)
class MarginalStructure:
    """Univariate distributional regression of one response."""

    response: int
    family: str
    predictors: dict[str, PredictorSpec] = field(default_factory=dict)

    def __post_init__(self):
        if self.response not in (1, 2):
            raise StructuralError("response must be 1 or 2")
        _check_family(self.family)
        wanted = PARAMETERS_BY_FAMILY[self.family]
        preds = dict(self.predictors)
        for key in wanted:
            preds.setdefault(key, PredictorSpec(key, (), default_link(key)))
        if set(preds) != set(wanted):
            raise StructuralError(f"predictors must cover exactly {wanted}")
        object.__setattr__(self, "predictors", preds)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return PARAMETERS_BY_FAMILY[self.family]

    def with_predictor(self, key: str, covariates) -> "MarginalStructure":
        preds = dict(self.predictors)
        preds[key] = replace(preds[key], covariates=tuple(covariates))
        return MarginalStructure(self.response, self.family, preds)

    def to_dict(self):
        return {
            "type": "marginal",
            "response": self.response,
            "family": self.family,
            "predictors": {
                k: {"covariates": list(v.covariates), "link": v.link}
                for k, v in self.predictors.items()
            },
        }


@dataclass(frozen=True)
class ModelStructure:
    """Joint bivariate copula regression structure (no coefficients)."""

    marginal1_family: str
    marginal2_family: str
    copula_family: str
    copula_rotation: int = 0
    predictors: dict[str, PredictorSpec] = field(default_factory=dict)

    def __post_init__(self):
        _check_family(self.marginal1_family)
        _check_family(self.marginal2_family)
        if self.copula_family not in copulas.FAMILIES:
            raise StructuralError(f"unknown copula family {self.copula_family!r}")
        if self.copula_rotation not in copulas.ROTATIONS:
            raise StructuralError(f"rotation must be one of {copulas.ROTATIONS}")
        if self.copula_family == "gaussian" and self.copula_rotation != 0:
            raise StructuralError("gaussian copula only admits rotation 0")
        keys1, keys2 = _marginal_keys(self.marginal1_family, self.marginal2_family)
        wanted = keys1 + keys2 + ("rho",)
        preds = dict(self.predictors)
        for key in wanted:
            link = default_link(key if key != "rho" else "rho", self.copula_family)
            preds.setdefault(key, PredictorSpec(key, (), link))
        if set(preds) != set(wanted):
            raise StructuralError(f"predictors must cover exactly {wanted}")
        object.__setattr__(self, "predictors", preds)

    @property
    def marginal_keys(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return _marginal_keys(self.marginal1_family, self.marginal2_family)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        keys1, keys2 = self.marginal_keys
        return keys1 + keys2 + ("rho",)

    def with_predictor(self, key: str, covariates) -> "ModelStructure":
        preds = dict(self.predictors)
        preds[key] = replace(preds[key], covariates=tuple(covariates))
        return ModelStructure(
            self.marginal1_family,
            self.marginal2_family,
            self.copula_family,
            self.copula_rotation,
            preds,
        )

    def to_dict(self):
        return {
            "type": "joint",
            "marginal1_family": self.marginal1_family,
            "marginal2_family": self.marginal2_family,
            "copula_family": self.copula_family,
            "copula_rotation": self.copula_rotation,
            "predictors": {
                k: {"covariates": list(v.covariates), "link": v.link}
                for k, v in self.predictors.items()
            },
        }


def structure_from_dict(d) -> "ModelStructure | MarginalStructure":
    preds = {
        k: PredictorSpec(k, tuple(v["covariates"]), v["link"])
        for k, v in d["predictors"].items()
    }
    if d["type"] == "marginal":
        return MarginalStructure(d["response"], d["family"], preds)
    return ModelStructure(
        d["marginal1_family"],
        d["marginal2_family"],
        d["copula_family"],
        d.get("copula_rotation", 0),
        preds,
    )


@dataclass
class ModelSpec:
    """A structure plus fitted coefficient vectors, one per parameter."""

    structure: "ModelStructure | MarginalStructure"
    coefficients: dict[str, np.ndarray]

    def __post_init__(self):
        coeffs = {}
        for key, spec in self.structure.predictors.items():
            if key not in self.coefficients:
                raise StructuralError(f"missing coefficients for parameter {key!r}")
            beta = np.asarray(self.coefficients[key], dtype=float)
            if beta.shape != (spec.n_coefficients,):
                raise StructuralError(
                    f"{key}: coefficient length {beta.shape} does not match predictor "
                    f"({spec.n_coefficients},)"
                )
            coeffs[key] = beta
        extra = set(self.coefficients) - set(coeffs)
        if extra:
            raise StructuralError(f"coefficients for unknown parameters: {sorted(extra)}")
        self.coefficients = coeffs

    def coefficient_labels(self) -> list[str]:
        labels = []
        for key in self.structure.parameter_names:
            labels.extend(self.structure.predictors[key].labels())
        return labels

    def to_dict(self):
        return {
            "structure": self.structure.to_dict(),
            "coefficients": {k: list(map(float, v)) for k, v in self.coefficients.items()},
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        structure = structure_from_dict(d["structure"])
        coeffs = {k: np.asarray(v, dtype=float) for k, v in d["coefficients"].items()}
        return cls(structure, coeffs)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def compute_parameters(model: ModelSpec, data: Dataset) -> dict[str, np.ndarray]:
    """Observation-specific natural-scale parameter arrays."""
    out = {}
    for key, spec in model.structure.predictors.items():
        eta = design_matrix(spec, data) @ model.coefficients[key]
        out[key] = apply_link_inverse(spec.link, eta)
    return out


_LOG_EPS = np.log(copulas.CLAMP_EPS)
_ZMAX = 7.034484239986059  # -ndtri(CLAMP_EPS): normal score of the clamp bound
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class LikelihoodEvaluator:
    """Blockwise log-likelihood with cached terms.

    The likelihood splits into three parts: log f1, log f2 and the log
    copula density (plus the marginal CDF values feeding it).  A proposal
    for one parameter block only recomputes the parts that block touches,
    which is what makes blockwise Metropolis affordable at n in the
    thousands.  Non-finite proposals evaluate to -inf instead of raising,
    so the sampler can simply reject them.

    Internally the marginal parts carry the representation the copula
    density actually consumes (normal scores for Gaussian margins, log-CDF
    values for Dagum margins), and linear predictors double as the log of
    log-linked parameters, which removes most transcendental calls from
    the sampler's inner loop.  The plain public functions in ``marginals``
    and ``copulas`` serve as the independent oracle for this path.
    """

    def __init__(self, structure, data: Dataset):
        self.structure = structure
        self.data = data
        self.joint = isinstance(structure, ModelStructure)
        self.design = {k: design_matrix(s, data) for k, s in structure.predictors.items()}
        self.links = {k: s.link for k, s in structure.predictors.items()}
        if self.joint:
            self._keys1, self._keys2 = structure.marginal_keys
            fams = (structure.marginal1_family, structure.marginal2_family)
            ys = (data.y1, data.y2)
        else:
            self._keys1 = tuple(structure.parameter_names)
            self._keys2 = ()
            fams = (structure.family,)
            ys = (data.y1 if structure.response == 1 else data.y2,)
        self._fams = fams
        self._ys = ys
        self._log_ys = []
        for fam, y in zip(fams, ys):
            if fam == "dagum":
                if np.any(y <= 0):
                    raise DomainError(
                        "Dagum marginal requires strictly positive standardized responses"
                    )
                self._log_ys.append(np.log(y))
            else:
                self._log_ys.append(None)
        self._params: dict[str, np.ndarray] = {}
        self._etas: dict[str, np.ndarray] = {}
        self._parts: dict[str, np.ndarray] = {}
        self._pending = None

    # -- part computations ---------------------------------------------------

    def _marginal_parts(self, slot: int, params, etas):
        """Returns (logf, u, score) where score is the copula-facing
        representation: ndtri(u) for Gaussian, log(u) for Dagum margins."""
        keys = self._keys1 if slot == 0 else self._keys2
        y = self._ys[slot]
        if self._fams[slot] == "gaussian":
            mu_key, s2_key = keys
            eta_s2 = etas[s2_key]
            z = (y - params[mu_key]) * np.exp(-0.5 * eta_s2)
            logf = -0.5 * z**2 - 0.5 * eta_s2 - _HALF_LOG_2PI
            return logf, ndtr(z), z
        p_key, a_key, b_key = keys
        p, a = params[p_key], params[a_key]
        log_y = self._log_ys[slot]
        t = a * (log_y - etas[b_key])
        sp = np.logaddexp(0.0, t)  # softplus(t); softplus(-t) = sp - t
        logf = etas[a_key] + etas[p_key] - log_y + p * t - (p + 1.0) * sp
        log_u = -p * (sp - t)
        return logf, np.exp(log_u), log_u

    def _copula_part(self, parts):
        family = self.structure.copula_family
        rotation = self.structure.copula_rotation
        rho = parts["rho"] if "rho" in parts else self._params["rho"]
        if family == "gaussian":  # rotation 0 enforced by the structure
            scores = []
            for slot, tag in enumerate(("1", "2")):
                if self._fams[slot] == "gaussian":
                    scores.append(np.clip(parts[f"score{tag}"], -_ZMAX, _ZMAX))
                else:
                    u = np.clip(parts[f"u{tag}"], copulas.CLAMP_EPS, 1.0 - copulas.CLAMP_EPS)
                    scores.append(ndtri(u))
            return copulas._gaussian_logpdf_scores(scores[0], scores[1], rho)
        logs = []
        for slot, (tag, reflect) in enumerate(
            zip(("1", "2"), (rotation in (90, 180), rotation in (180, 270)))
        ):
            if reflect:
                u = np.clip(parts[f"u{tag}"], copulas.CLAMP_EPS, 1.0 - copulas.CLAMP_EPS)
                logs.append(np.log1p(-u))
            elif self._fams[slot] == "gaussian":
                u = np.clip(parts[f"u{tag}"], copulas.CLAMP_EPS, 1.0 - copulas.CLAMP_EPS)
                logs.append(np.log(u))
            else:
                logs.append(np.clip(parts[f"score{tag}"], _LOG_EPS, -copulas.CLAMP_EPS))
        if family == "clayton":
            return copulas._clayton_logpdf_logs(logs[0], logs[1], rho)
        return copulas._gumbel_logpdf_logs(logs[0], logs[1], rho)

    # -- state management ------------------------------------------------------

    def _compute(self, betas: dict[str, np.ndarray], keys=None):
        """Parts affected by the given blocks (all parts if keys is None)."""
        new_params, new_etas = {}, {}
        for key, beta in betas.items():
            eta = self.design[key] @ np.asarray(beta, dtype=float)
            new_etas[key] = eta
            new_params[key] = apply_link_inverse(self.links[key], eta)
        params = {**self._params, **new_params}
        etas = {**self._etas, **new_etas}
        touched = set(betas) if keys is None else set(keys)
        new_parts = {}
        with np.errstate(all="ignore"):
            if touched & set(self._keys1):
                logf, u, score = self._marginal_parts(0, params, etas)
                new_parts.update(logf1=logf, u1=u, score1=score)
            if self.joint and touched & set(self._keys2):
                logf, u, score = self._marginal_parts(1, params, etas)
                new_parts.update(logf2=logf, u2=u, score2=score)
            if self.joint and ("rho" in touched or new_parts):
                merged = {**self._parts, **new_parts, "rho": params["rho"]}
                new_parts["logc"] = self._copula_part(merged)
        return new_params, new_etas, new_parts

    def _pending_total(self, new_parts) -> float:
        total = 0.0
        for part in ("logf1", "logf2", "logc") if self.joint else ("logf1",):
            arr = new_parts.get(part, self._parts.get(part))
            total += float(np.sum(arr))
        return total if np.isfinite(total) else -np.inf

    def set_state(self, betas: dict[str, np.ndarray]) -> float:
        self._params, self._etas, self._parts = {}, {}, {}
        new_params, new_etas, new_parts = self._compute(dict(betas))
        self._params, self._etas, self._parts = new_params, new_etas, new_parts
        self._pending = None
        return self.total()

    def total(self) -> float:
        s = float(np.sum(self._parts["logf1"]))
        if self.joint:
            s += float(np.sum(self._parts["logf2"])) + float(np.sum(self._parts["logc"]))
        return s if np.isfinite(s) else -np.inf

    def propose(self, key: str, beta: np.ndarray) -> float:
        """Log-likelihood with block ``key`` replaced; -inf if invalid."""
        self._pending = self._compute({key: beta})
        return self._pending_total(self._pending[2])

    def propose_full(self, betas: dict[str, np.ndarray]) -> float:
        """Log-likelihood with every block replaced; -inf if invalid."""
        self._pending = self._compute(dict(betas))
        return self._pending_total(self._pending[2])

    def accept(self) -> None:
        new_params, new_etas, new_parts = self._pending
        self._params.update(new_params)
        self._etas.update(new_etas)
        self._parts.update(new_parts)
        self._pending = None

    def reject(self) -> None:
        self._pending = None

    def per_observation(self) -> np.ndarray:
        out = np.array(self._parts["logf1"], dtype=float, copy=True)
        if self.joint:
            out += self._parts["logf2"] + self._parts["logc"]
        return out

    def part(self, name: str) -> np.ndarray:
        """Current likelihood term array: logf1, logf2, logc, u1 or u2."""
        return self._parts[name]

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self._params)


def _loglik_and_parts(model: ModelSpec, data: Dataset):
    ev = LikelihoodEvaluator(model.structure, data)
    ev.set_state(model.coefficients)
    return ev


def joint_log_likelihood(model: ModelSpec, data: Dataset) -> float:
    """Sum of log copula density and marginal log densities.

    Raises ``NumericalError`` naming the first offending observation and
    likelihood term if anything is non-finite.
    """
    ev = _loglik_and_parts(model, data)
    for part_name, arr in ev._parts.items():
        if part_name.startswith("u"):
            continue
        bad = ~np.isfinite(arr)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise NumericalError(
                f"non-finite log-likelihood term {part_name!r} at observation {idx}"
            )
    return ev.total()


def per_observation_loglik(model: ModelSpec, data: Dataset) -> np.ndarray:
    return _loglik_and_parts(model, data).per_observation()


def joint_log_likelihood_gradient(
    model: ModelSpec, data: Dataset, rel_step: float = 1e-5
) -> dict[str, np.ndarray]:
    """Gradient with respect to every coefficient.

    Computed by fourth-order (Richardson-extrapolated) central differences;
    the random-walk sampler does not need gradients, this exists for
    optional sanity checks against plain finite differences.
    """
    grads = {}
    for key in model.structure.parameter_names:
        beta = model.coefficients[key]
        g = np.empty_like(beta)
        for j in range(beta.shape[0]):
            h = rel_step * max(1.0, abs(beta[j]))

            def f(val):
                coeffs = {k: v.copy() for k, v in model.coefficients.items()}
                coeffs[key][j] = val
                return joint_log_likelihood(ModelSpec(model.structure, coeffs), data)

            b = beta[j]
            g[j] = (8.0 * (f(b + h) - f(b - h)) - (f(b + 2 * h) - f(b - 2 * h))) / (12.0 * h)
        grads[key] = g
    return grads
