"""Exact inference on small discrete structural causal models.

A model is a set of latent variables with a known prior, a set of observable
variables, and one deterministic lookup-table function per observable. Every
query is answered by exhaustive enumeration over the latent joint space, so
results are exact up to floating point summation.

Counterfactuals are available through two independent routes:
:func:`counterfactual_prob` (posterior over latents, then propagation in the
mutilated model) and :func:`twin_query` (ordinary conditioning on the joint
distribution of a twin model that holds a factual and a counterfactual copy of
every observable).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, NamedTuple

MAX_DOMAIN_SIZE = 8
DEFAULT_STATE_CAP = 10**7
PROB_TOL = 1e-12
TWIN_SUFFIX = "*"


class ScmError(ValueError):
    """Base class for malformed models and queries."""


class UnknownVariableError(ScmError):
    pass


class DomainValueError(ScmError):
    pass


class InvalidModelError(ScmError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations))


class ModelTooLargeError(ScmError):
    pass


class ZeroProbabilityEvidenceError(ScmError):
    pass


@dataclass(frozen=True)
class LatentSpec:
    name: str
    domain: tuple
    probs: tuple[float, ...]


@dataclass(frozen=True)
class StructuralFunction:
    """Lookup table ``output = table[(parent_values, latent_value)]``.

    ``latent`` is ``None`` only for constant functions created by
    :func:`apply_do`; their table has the single key ``((), None)``.
    """

    output: str
    parents: tuple[str, ...]
    latent: str | None
    table: Mapping[tuple, Any] = field(hash=False)

    @property
    def is_constant(self) -> bool:
        return self.latent is None and not self.parents


@dataclass(frozen=True)
class ScmModel:
    latents: tuple[LatentSpec, ...]
    observables: tuple[tuple[str, tuple], ...]
    functions: tuple[StructuralFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "latents", tuple(self.latents))
        object.__setattr__(
            self, "observables", tuple((n, tuple(d)) for n, d in self.observables)
        )
        object.__setattr__(self, "functions", tuple(self.functions))

    @property
    def observable_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.observables)

    @property
    def latent_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.latents)

    def domain(self, name: str) -> tuple:
        for obs, dom in self.observables:
            if obs == name:
                return dom
        for spec in self.latents:
            if spec.name == name:
                return spec.domain
        raise UnknownVariableError(f"unknown variable {name!r}")

    def function(self, name: str) -> StructuralFunction:
        for fn in self.functions:
            if fn.output == name:
                return fn
        raise UnknownVariableError(f"no structural function for {name!r}")


class Violation(NamedTuple):
    kind: str
    message: str


@dataclass(frozen=True)
class TwinModel:
    """Factual and counterfactual copies of ``base`` sharing its latents.

    ``model`` is itself an :class:`ScmModel`; counterfactual observables carry
    the ``*`` suffix (``Y`` becomes ``Y*``).
    """

    base: ScmModel
    model: ScmModel
    intervention: Mapping[str, Any] = field(hash=False)

    def counterfactual_name(self, name: str) -> str:
        return name + TWIN_SUFFIX


# ---------------------------------------------------------------------------
# validation


def validate_model(model: ScmModel, *, require_latent_use: bool = True) -> list[Violation]:
    """Return every structural problem found in ``model``; empty when well formed."""
    out: list[Violation] = []
    names = [spec.name for spec in model.latents] + list(model.observable_names)
    if any(not n for n in names):
        out.append(Violation("name", "empty variable name"))
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        out.append(Violation("name", f"duplicate variable names: {dupes}"))

    domains: dict[str, tuple] = {}
    for spec in model.latents:
        domains[spec.name] = spec.domain
        out.extend(_check_domain(spec.name, spec.domain))
        if len(spec.probs) != len(spec.domain):
            out.append(
                Violation("probability", f"{spec.name}: {len(spec.probs)} probs for "
                          f"{len(spec.domain)} values")
            )
        if any(p < 0 for p in spec.probs):
            out.append(Violation("probability", f"{spec.name}: negative probability"))
        total = sum(spec.probs)
        if abs(total - 1.0) > PROB_TOL:
            out.append(Violation("probability", f"{spec.name}: probabilities sum to {total!r}"))
    for name, dom in model.observables:
        domains[name] = dom
        out.extend(_check_domain(name, dom))

    observable_set = set(model.observable_names)
    latent_set = set(model.latent_names)
    outputs = [fn.output for fn in model.functions]
    for name in model.observable_names:
        n = outputs.count(name)
        if n != 1:
            out.append(Violation("function", f"{name}: {n} structural functions (need 1)"))
    for fn in model.functions:
        if fn.output not in observable_set:
            out.append(Violation("function", f"function output {fn.output!r} is not observable"))
            continue
        bad = [p for p in fn.parents if p not in observable_set]
        if bad:
            out.append(Violation("function", f"{fn.output}: unknown observed parents {bad}"))
            continue
        if fn.latent is not None and fn.latent not in latent_set:
            out.append(Violation("function", f"{fn.output}: unknown latent {fn.latent!r}"))
            continue
        out.extend(_check_table(fn, domains))

    if require_latent_use:
        used = {fn.latent for fn in model.functions}
        for name in model.latent_names:
            if name not in used:
                out.append(Violation("latent", f"latent {name!r} feeds no function"))

    if _topological_order(model) is None:
        out.append(Violation("cycle", "observed parent graph contains a cycle"))
    return out


def _check_domain(name, dom) -> list[Violation]:
    if not 1 <= len(dom) <= MAX_DOMAIN_SIZE:
        return [Violation("domain", f"{name}: domain size {len(dom)} outside [1, {MAX_DOMAIN_SIZE}]")]
    if len(set(dom)) != len(dom):
        return [Violation("domain", f"{name}: duplicate domain values")]
    return []


def _check_table(fn: StructuralFunction, domains) -> list[Violation]:
    parent_doms = [domains[p] for p in fn.parents]
    latent_dom = (None,) if fn.latent is None else domains[fn.latent]
    expected = {
        (pv, u) for pv in itertools.product(*parent_doms) for u in latent_dom
    }
    keys = set(fn.table)
    out = []
    if keys != expected:
        missing = len(expected - keys)
        extra = len(keys - expected)
        out.append(
            Violation("table", f"{fn.output}: table incomplete ({missing} missing, {extra} extra keys)")
        )
    out_dom = set(domains[fn.output])
    if any(v not in out_dom for v in fn.table.values()):
        out.append(Violation("table", f"{fn.output}: table value outside domain"))
    return out


def _topological_order(model: ScmModel) -> list[StructuralFunction] | None:
    by_output = {fn.output: fn for fn in model.functions}
    order: list[StructuralFunction] = []
    state: dict[str, int] = {}

    def visit(name) -> bool:
        mark = state.get(name, 0)
        if mark == 1:
            return False
        if mark == 2:
            return True
        state[name] = 1
        fn = by_output.get(name)
        if fn is not None:
            for parent in fn.parents:
                if parent in by_output and not visit(parent):
                    return False
            order.append(fn)
        state[name] = 2
        return True

    for name in model.observable_names:
        if not visit(name):
            return None
    return order


def _require_valid(model: ScmModel, *, require_latent_use=False) -> list[StructuralFunction]:
    violations = validate_model(model, require_latent_use=require_latent_use)
    if violations:
        raise InvalidModelError(violations)
    return _topological_order(model)


def _check_assignment(model: ScmModel, assignment: Mapping[str, Any], *, observables_only=True):
    observable_set = set(model.observable_names)
    for name, value in assignment.items():
        if observables_only and name not in observable_set:
            raise UnknownVariableError(f"{name!r} is not an observable of the model")
        if value not in model.domain(name):
            raise DomainValueError(f"{value!r} is not in the domain of {name!r}")


# ---------------------------------------------------------------------------
# enumeration


def _latent_states(model: ScmModel, cap: int) -> Iterator[tuple[dict, float]]:
    """Yield ``(latent assignment, prior probability)`` in lexicographic index order.

    Zero-probability states are skipped; they never contribute to any sum.
    """
    size = 1
    for spec in model.latents:
        size *= len(spec.domain)
    if size > cap:
        raise ModelTooLargeError(f"latent joint space has {size} states (cap {cap})")
    names = model.latent_names
    per_latent = [list(zip(spec.domain, spec.probs)) for spec in model.latents]
    for combo in itertools.product(*per_latent):
        p = 1.0
        for _, q in combo:
            p *= q
        if p > 0.0:
            yield dict(zip(names, (v for v, _ in combo))), p


def _propagate(order, latent_values: Mapping[str, Any]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for fn in order:
        key = (tuple(values[p] for p in fn.parents),
               None if fn.latent is None else latent_values[fn.latent])
        values[fn.output] = fn.table[key]
    return values


def _holds(values: Mapping[str, Any], event: Mapping[str, Any]) -> bool:
    return all(values[k] == v for k, v in event.items())


def enumerate_joint(model: ScmModel, *, cap: int = DEFAULT_STATE_CAP) -> dict[tuple, float]:
    """Distribution over complete observable assignments.

    Keys are value tuples in ``model.observable_names`` order. Summation runs
    over latent states in fixed lexicographic order, so repeated calls are
    bitwise identical.
    """
    order = _require_valid(model)
    names = model.observable_names
    joint: dict[tuple, float] = {}
    for latent_values, p in _latent_states(model, cap):
        values = _propagate(order, latent_values)
        key = tuple(values[n] for n in names)
        joint[key] = joint.get(key, 0.0) + p
    return joint


def marginal(model: ScmModel, event: Mapping[str, Any], *, cap: int = DEFAULT_STATE_CAP) -> float:
    _check_assignment(model, event)
    names = model.observable_names
    idx = [(names.index(k), v) for k, v in event.items()]
    return sum(p for key, p in enumerate_joint(model, cap=cap).items()
               if all(key[i] == v for i, v in idx))


def apply_do(model: ScmModel, intervention: Mapping[str, Any]) -> ScmModel:
    """Submodel in which each intervened observable is forced to a constant.

    Observed and latent edges into intervened variables are removed. All
    other functions and the latent prior are left untouched.
    """
    _check_assignment(model, intervention)
    if not intervention:
        return model
    functions = []
    for fn in model.functions:
        if fn.output in intervention:
            value = intervention[fn.output]
            fn = StructuralFunction(fn.output, (), None, {((), None): value})
        functions.append(fn)
    return ScmModel(model.latents, model.observables, tuple(functions))


def interventional_prob(model: ScmModel, intervention: Mapping[str, Any],
                        event: Mapping[str, Any], *, cap: int = DEFAULT_STATE_CAP) -> float:
    """``P(event | do(intervention))``, i.e. the marginal of ``event`` in the submodel."""
    return marginal(apply_do(model, intervention), event, cap=cap)


def counterfactual_prob(model: ScmModel, intervention: Mapping[str, Any],
                        target: Mapping[str, Any], evidence: Mapping[str, Any],
                        *, cap: int = DEFAULT_STATE_CAP) -> float:
    """Abduction-action-prediction estimate of ``P(target_{do(intervention)} | evidence)``.

    Raises
    ------
    ZeroProbabilityEvidenceError
        If no latent state with positive prior reproduces ``evidence``.
    """
    order = _require_valid(model)
    _check_assignment(model, target)
    _check_assignment(model, evidence)
    sub_order = _require_valid(apply_do(model, intervention))

    # abduction: unnormalized posterior over latent states
    posterior = []
    for latent_values, p in _latent_states(model, cap):
        if _holds(_propagate(order, latent_values), evidence):
            posterior.append((latent_values, p))
    z = sum(p for _, p in posterior)
    if z <= 0.0:
        raise ZeroProbabilityEvidenceError(f"evidence {dict(evidence)} has probability zero")

    # action + prediction
    hit = sum(p for latent_values, p in posterior
              if _holds(_propagate(sub_order, latent_values), target))
    return hit / z


def joint_counterfactual_prob(model: ScmModel,
                              intervention_a: Mapping[str, Any], target_a: Mapping[str, Any],
                              intervention_b: Mapping[str, Any], target_b: Mapping[str, Any],
                              *, cap: int = DEFAULT_STATE_CAP) -> float:
    """``P(target_a under do(a), target_b under do(b))`` over the latent prior."""
    _require_valid(model)
    _check_assignment(model, target_a)
    _check_assignment(model, target_b)
    order_a = _require_valid(apply_do(model, intervention_a))
    order_b = _require_valid(apply_do(model, intervention_b))
    total = 0.0
    for latent_values, p in _latent_states(model, cap):
        if (_holds(_propagate(order_a, latent_values), target_a)
                and _holds(_propagate(order_b, latent_values), target_b)):
            total += p
    return total


# ---------------------------------------------------------------------------
# twin network


def build_twin(model: ScmModel, intervention: Mapping[str, Any]) -> TwinModel:
    _require_valid(model)
    _check_assignment(model, intervention)
    names = set(model.observable_names) | set(model.latent_names)
    for name in model.observable_names:
        if name + TWIN_SUFFIX in names:
            raise ScmError(f"cannot build twin: {name + TWIN_SUFFIX!r} already exists")

    def star(name):
        return name + TWIN_SUFFIX

    cf_observables = [(star(n), d) for n, d in model.observables]
    cf_functions = []
    for fn in model.functions:
        if fn.output in intervention:
            cf_functions.append(
                StructuralFunction(star(fn.output), (), None, {((), None): intervention[fn.output]})
            )
        else:
            cf_functions.append(
                StructuralFunction(star(fn.output), tuple(star(p) for p in fn.parents),
                                   fn.latent, fn.table)
            )
    twin = ScmModel(
        model.latents,
        tuple(model.observables) + tuple(cf_observables),
        tuple(model.functions) + tuple(cf_functions),
    )
    return TwinModel(model, twin, dict(intervention))


def twin_query(twin: TwinModel, target: Mapping[str, Any], evidence: Mapping[str, Any],
               *, cap: int = DEFAULT_STATE_CAP) -> float:
    """``P(target* | evidence)`` by plain conditioning on the twin joint.

    ``target`` names base observables; they are read from the counterfactual
    copy. ``evidence`` is read from the factual copy.
    """
    _check_assignment(twin.base, target)
    _check_assignment(twin.base, evidence)
    joint = enumerate_joint(twin.model, cap=cap)
    names = twin.model.observable_names
    ev_idx = [(names.index(k), v) for k, v in evidence.items()]
    tg_idx = [(names.index(twin.counterfactual_name(k)), v) for k, v in target.items()]
    p_evidence = 0.0
    p_both = 0.0
    for key, p in joint.items():
        if all(key[i] == v for i, v in ev_idx):
            p_evidence += p
            if all(key[i] == v for i, v in tg_idx):
                p_both += p
    if p_evidence <= 0.0:
        raise ZeroProbabilityEvidenceError(f"evidence {dict(evidence)} has probability zero")
    return p_both / p_evidence


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: ScmModel) -> dict:
    domains = {n: d for n, d in model.observables}
    domains.update({s.name: s.domain for s in model.latents})

    def nest(fn, prefix, remaining):
        if not remaining:
            if fn.latent is None:
                return fn.table[(tuple(prefix), None)]
            return [fn.table[(tuple(prefix), u)] for u in domains[fn.latent]]
        return [nest(fn, prefix + [v], remaining[1:]) for v in domains[remaining[0]]]

    return {
        "latents": [
            {"name": s.name, "domain": list(s.domain), "probs": list(s.probs)}
            for s in model.latents
        ],
        "observables": [{"name": n, "domain": list(d)} for n, d in model.observables],
        "functions": [
            {"output": fn.output, "parents": list(fn.parents), "latent": fn.latent,
             "table": nest(fn, [], list(fn.parents))}
            for fn in model.functions
        ],
    }


def model_from_dict(data: Mapping[str, Any]) -> ScmModel:
    """Build a model from the JSON layout documented in ``docs/scm_format.md``."""
    try:
        latents = tuple(
            LatentSpec(d["name"], tuple(d["domain"]), tuple(float(p) for p in d["probs"]))
            for d in data["latents"]
        )
        observables = tuple((d["name"], tuple(d["domain"])) for d in data["observables"])
        domains = {n: dom for n, dom in observables}
        domains.update({s.name: s.domain for s in latents})
        functions = []
        for d in data["functions"]:
            parents = tuple(d.get("parents", ()))
            latent = d.get("latent")
            table: dict[tuple, Any] = {}
            _flatten(d["table"], [], parents, latent, domains, table)
            functions.append(StructuralFunction(d["output"], parents, latent, table))
    except (KeyError, TypeError, IndexError) as exc:
        raise ScmError(f"malformed model description: {exc!r}") from exc
    return ScmModel(latents, observables, tuple(functions))


def _flatten(node, prefix, parents, latent, domains, table):
    depth = len(prefix)
    if depth < len(parents):
        dom = domains[parents[depth]]
        if not isinstance(node, list) or len(node) != len(dom):
            raise ScmError(f"table level for parent {parents[depth]!r} must have {len(dom)} entries")
        for value, child in zip(dom, node):
            _flatten(child, prefix + [value], parents, latent, domains, table)
        return
    if latent is None:
        table[(tuple(prefix), None)] = node
        return
    dom = domains[latent]
    if not isinstance(node, list) or len(node) != len(dom):
        raise ScmError(f"table level for latent {latent!r} must have {len(dom)} entries")
    for u, out in zip(dom, node):
        table[(tuple(prefix), u)] = out


def load_model(path: str | Path) -> ScmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: ScmModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def parse_binding(text: str, model: ScmModel) -> tuple[str, Any]:
    """Parse ``VAR=value``, matching ``value`` against the string form of the domain."""
    if "=" not in text:
        raise ScmError(f"expected VAR=value, got {text!r}")
    name, raw = text.split("=", 1)
    name = name.strip()
    raw = raw.strip()
    dom = model.domain(name)
    for value in dom:
        if str(value) == raw:
            return name, value
    raise DomainValueError(f"{raw!r} is not in the domain of {name!r} ({list(dom)})")
