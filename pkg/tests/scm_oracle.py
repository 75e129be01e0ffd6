"""Independent brute-force oracle and random model generator for SCM tests.

Nothing here calls into the enumeration code of ``datacf.scm``; values are
recomputed by recursive evaluation straight from the lookup tables.
"""

import itertools

import numpy as np

from datacf.scm import LatentSpec, ScmModel, StructuralFunction


def random_scm(rng, max_observables=5, max_latents=5, max_domain=3):
    n_obs = int(rng.integers(1, max_observables + 1))
    n_lat = int(rng.integers(1, min(max_latents, n_obs) + 1))
    latents = []
    for j in range(n_lat):
        size = int(rng.integers(1, max_domain + 1))
        w = rng.random(size) + 0.05
        # occasionally zero out a state to exercise skipping of impossible latents
        if size > 1 and rng.random() < 0.2:
            w[int(rng.integers(size))] = 0.0
        probs = w / w.sum()
        probs[-1] = 1.0 - probs[:-1].sum()
        latents.append(LatentSpec(f"U{j}", tuple(range(size)), tuple(float(p) for p in probs)))

    observables = []
    for i in range(n_obs):
        size = int(rng.integers(1, max_domain + 1))
        observables.append((f"V{i}", tuple(range(size))))

    # every latent feeds at least one observable, the rest are chosen at random
    latent_of = list(range(n_lat)) + [int(rng.integers(n_lat)) for _ in range(n_obs - n_lat)]
    rng.shuffle(latent_of)

    functions = []
    for i, (name, dom) in enumerate(observables):
        # parents only among earlier variables keeps the graph acyclic
        parents = tuple(observables[k][0] for k in range(i) if rng.random() < 0.5)
        lat = latents[latent_of[i]]
        parent_doms = [dict(observables)[p] for p in parents]
        table = {}
        for pv in itertools.product(*parent_doms):
            for u in lat.domain:
                table[(pv, u)] = dom[int(rng.integers(len(dom)))]
        functions.append(StructuralFunction(name, parents, lat.name, table))
    order = rng.permutation(n_obs)
    functions = [functions[k] for k in order]
    return ScmModel(tuple(latents), tuple(observables), tuple(functions))


def random_assignment(rng, model, k):
    names = list(model.observable_names)
    rng.shuffle(names)
    return {n: model.domain(n)[int(rng.integers(len(model.domain(n))))] for n in names[:k]}


def evaluate(model, latent_values, forced):
    by_output = {fn.output: fn for fn in model.functions}
    cache = {}

    def value(name):
        if name in forced:
            return forced[name]
        if name not in cache:
            fn = by_output[name]
            pv = tuple(value(p) for p in fn.parents)
            cache[name] = fn.table[(pv, latent_values[fn.latent])]
        return cache[name]

    return {name: value(name) for name in model.observable_names}


def latent_joint(model):
    for combo in itertools.product(*[range(len(s.domain)) for s in model.latents]):
        p = 1.0
        vals = {}
        for spec, idx in zip(model.latents, combo):
            p *= spec.probs[idx]
            vals[spec.name] = spec.domain[idx]
        yield vals, p


def brute_counterfactual(model, intervention, target, evidence):
    num = 0.0
    den = 0.0
    for u, p in latent_joint(model):
        factual = evaluate(model, u, {})
        if all(factual[k] == v for k, v in evidence.items()):
            den += p
            cf = evaluate(model, u, intervention)
            if all(cf[k] == v for k, v in target.items()):
                num += p
    if den == 0.0:
        return None
    return num / den


def brute_marginal(model, event, intervention=None):
    total = 0.0
    for u, p in latent_joint(model):
        vals = evaluate(model, u, intervention or {})
        if all(vals[k] == v for k, v in event.items()):
            total += p
    return total


def rng_for(seed):
    return np.random.default_rng(seed)
