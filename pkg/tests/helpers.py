"""Independent oracles shared by the test modules."""
from __future__ import annotations

import numpy as np

from litkg.ingest import build_kg
from litkg.ingest.records import EmrRecord
from litkg.numerics import Tape, backward


def central_difference(f, arrays, h=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic(f_tensor, tensors):
    """Tape gradients of the scalar tensor built by ``f_tensor()``."""
    with Tape():
        loss = f_tensor()
        grads = backward(loss)
    return [grads.get(t, np.zeros_like(t.data)) for t in tensors]


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def max_rel_error(analytic_grads, numeric_grads, atol=1e-7):
    """Worst relative error, ignoring entries where both sides are ~0."""
    worst = 0.0
    for ga, gn in zip(analytic_grads, numeric_grads):
        diff = np.abs(ga - gn)
        scale = np.abs(ga) + np.abs(gn)
        mask = diff > atol
        if mask.any():
            worst = max(worst, float(np.max(diff[mask] / scale[mask])))
    return worst


def record(i, animal="A0", **overrides):
    base = dict(record_id=f"M{i}", animal_id=animal, species="Canine", breed="Poodle",
                gender="spayed female", age=5.0, weight=4.2, symptom="vomiting, lethargy",
                disease="gastroenteritis", disease_category="digestive system",
                prescription="1 time 50mg, 2 times a day Famotidine Inj.",
                drug_code="ANB003", treatment="Blood test", treatment_code="L001",
                comment="Vital signs stable")
    base.update(overrides)
    return EmrRecord(**base)


def small_kg():
    records = [
        record(0),
        record(1, animal="A1", species="Feline", breed="Persian", age=12.0, weight=3.1,
               symptom="coughing, sneezing", disease="tracheal collapse",
               disease_category="respiratory system", treatment="Nebulization",
               treatment_code="A040"),
        record(2, animal="A1", species="Feline", breed="Persian", age=13.0, weight=3.3,
               symptom="itching, alopecia", disease="atopic dermatitis",
               disease_category="skin"),
    ]
    return build_kg(records)


# -- naive message passing --------------------------------------------------

def _lrelu(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def naive_fuse(e, n, t, p):
    """Gate fusion one entity row at a time."""
    out = np.zeros_like(e)
    for i in range(e.shape[0]):
        mu = _sig(e[i] @ p["gate.W_E"] + n[i] @ p["gate.W_N"] + t[i] @ p["gate.W_T"] + p["gate.b"])
        nu = np.tanh(np.concatenate([e[i], n[i], t[i]]) @ p["gate.W"])
        out[i] = mu * nu + (1 - mu) * e[i]
    return out


def naive_layer(triples, n_entities, H, R, W_att, kind, lp, n_relations, eps=0.0):
    """One attentive propagation layer as a plain loop over (h, r, t) triples.

    Every triple contributes a forward edge h <- t under slot r and an
    inverse edge t <- h under slot r + n_relations.
    """
    edges = []
    for h, r, t in triples:
        edges.append((h, r, t))
        edges.append((t, r + n_relations, h))
    scores = {}
    for j, (h, r, t) in enumerate(edges):
        scores[j] = float((H[t] @ W_att) @ np.tanh(H[h] @ W_att + R[r]))
    h_n = np.zeros_like(H)
    for i in range(n_entities):
        mine = [j for j, e in enumerate(edges) if e[0] == i]
        if not mine:
            continue
        top = max(scores[j] for j in mine)
        z = sum(np.exp(scores[j] - top) for j in mine)
        for j in mine:
            h_n[i] += np.exp(scores[j] - top) / z * H[edges[j][2]]
    out = []
    for i in range(n_entities):
        h, hn = H[i], h_n[i]
        if kind == "gcn":
            out.append(_lrelu((h + hn) @ lp["W"]))
        elif kind == "sage":
            out.append(_lrelu(np.concatenate([h, hn]) @ lp["W"]))
        elif kind == "bi":
            out.append(_lrelu((h + hn) @ lp["W1"]) + _lrelu((h * hn) @ lp["W2"]))
        elif kind == "gin":
            x = (1 + eps) * h + hn
            out.append(_lrelu(_lrelu(x @ lp["fc1"] + lp["fc1_b"]) @ lp["fc2"] + lp["fc2_b"]))
    return np.array(out)


def random_graph(rng, n_entities, n_triples, n_relations=15):
    """Random triple list (no self loops, no duplicates) over ``n_entities``."""
    seen = set()
    for _ in range(n_triples * 4):
        if len(seen) >= n_triples:
            break
        h, t = rng.choice(n_entities, size=2, replace=False)
        seen.add((int(h), int(rng.integers(n_relations)), int(t)))
    return sorted(seen)


def edge_graph(triples, n_entities, n_relations=15):
    """PropagationGraph straight from (head, relation index, tail) tuples."""
    from litkg.kg import PropagationGraph
    if triples:
        h, r, t = (np.array(c, dtype=np.int64) for c in zip(*triples))
    else:
        h = r = t = np.zeros(0, dtype=np.int64)
    return PropagationGraph(n_entities=n_entities, src=np.concatenate([h, t]),
                            rel=np.concatenate([r, r + n_relations]),
                            dst=np.concatenate([t, h]), n_relations=n_relations)


FIVE_TRIPLES = [(0, 0, 1), (0, 1, 2), (1, 2, 3), (3, 3, 4), (2, 4, 4)]


def five_entity_problem(kind, residual=False, n_layers=2, seed=0):
    """A 5-entity graph with literals, parameters and both kinds of batch."""
    from litkg.config import LayerConfig
    from litkg.model import init_params
    from litkg.training import FinetunePair, PretrainBatch

    cfg = LayerConfig(aggregator=kind, n_layers=n_layers, embed_dim=4, hidden_dim=4,
                      dropout=0.0, residual_identity=residual)
    params = init_params(cfg, 5, 3, 5, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.items():
        # move biases off zero so no unit sits exactly on a kink
        if name.endswith("b") or name.endswith("_b") or name.endswith(".b1") or name.endswith(".b2"):
            t.data[...] = rng.normal(scale=0.1, size=t.shape)
    numeric, text = rng.normal(size=(5, 3)), rng.normal(size=(5, 5))
    batch = PretrainBatch(heads=np.array([0, 0, 1, 3]), rels=np.array([0, 1, 2, 3]),
                          pos_tails=np.array([1, 2, 3, 4]), neg_tails=np.array([3, 4, 0, 2]))
    pairs = [FinetunePair(0, 1, 1), FinetunePair(0, 2, 0), FinetunePair(3, 4, 1),
             FinetunePair(3, 1, 0)]
    return cfg, params, edge_graph(FIVE_TRIPLES, 5), numeric, text, batch, pairs


def norm_rel_error(analytic_grads, numeric_grads):
    """Worst per-tensor ||a - n|| / (||a|| + ||n||); all-zero tensors are skipped."""
    worst = 0.0
    for ga, gn in zip(analytic_grads, numeric_grads):
        scale = np.linalg.norm(ga) + np.linalg.norm(gn)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(ga - gn) / scale))
    return worst


def fd_check_full_model(kind, residual, loss_kind, lambda_reg=1e-3, seed=0):
    """Worst relative gap between tape and central-difference gradients of the
    full forward pass plus loss, over every parameter tensor."""
    from litkg.model import forward
    from litkg.training import finetune_loss, pretrain_loss

    cfg, params, graph, numeric, text, batch, pairs = five_entity_problem(kind, residual,
                                                                          seed=seed)

    def build():
        reps = forward(graph, numeric, text, params, cfg)
        if loss_kind == "pretrain":
            return pretrain_loss(reps, params, batch, lambda_reg)
        return finetune_loss(reps, params, pairs, lambda_reg)

    names = params.names()
    tensors = [params[n] for n in names]
    ga = analytic(build, tensors)
    gn = central_difference(lambda: build().item(), [t.data for t in tensors])
    return norm_rel_error(ga, gn)
