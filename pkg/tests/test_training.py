import math

import numpy as np
import pytest

from helpers import analytic, central_difference, five_entity_problem, fd_check_full_model, \
    norm_rel_error, small_kg

from litkg.config import LayerConfig, TrainRunConfig
from litkg.ingest.numeric import AttributeVectors
from litkg.kg import RELATION_INDEX, EntityKind as K, KnowledgeGraph, PropagationGraph, \
    RelationKind as R, SamplingError, Text, Triple
from litkg.model import forward, init_params
from litkg.numerics import AdamState, ContractError, Tape, Tensor, adam_step, backward
from litkg.training import (
    FinetunePair,
    Model,
    TrainingDivergence,
    bce_loss,
    build_finetune_pairs,
    finetune_loss,
    finetune_score,
    holdout_triples,
    make_pretrain_batch,
    phase_param_names,
    pretrain_loss,
    ranking_loss,
    run_phase,
    score_triples,
    triplet_score,
)

AGGREGATORS = ["gcn", "sage", "bi", "gin"]
LN2 = math.log(2.0)


# -- scores and losses ------------------------------------------------------

def test_triplet_score_same_head_and_tail():
    rng = np.random.default_rng(0)
    h, r, W = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=(3, 3))
    assert triplet_score(h, r, h, W).data[0] == pytest.approx(float(np.sum(r * r)), rel=1e-12)


def test_triplet_score_exact_translation():
    h, t = np.array([[1.0, 2.0]]), np.array([[0.5, -1.0]])
    assert triplet_score(h, t - h, t, np.eye(2)).data[0] == 0.0


def test_triplet_score_three_dim_oracle():
    rng = np.random.default_rng(1)
    h, r, t, W = (rng.normal(size=s) for s in [(1, 3), (1, 3), (1, 3), (3, 3)])
    hw = [sum(h[0, k] * W[k, j] for k in range(3)) for j in range(3)]
    tw = [sum(t[0, k] * W[k, j] for k in range(3)) for j in range(3)]
    expected = sum((hw[j] + r[0, j] - tw[j]) ** 2 for j in range(3))
    assert triplet_score(h, r, t, W).data[0] == pytest.approx(expected, abs=1e-12)


def test_ranking_loss_parity_and_saturation():
    assert ranking_loss([1.3, -0.2], [1.3, -0.2]).item() == pytest.approx(LN2, abs=1e-12)
    assert ranking_loss([0.0], [1e4]).item() < 1e-12


def test_pretrain_loss_two_pairs_with_reg():
    cfg, params, graph, num, txt, batch, _ = five_entity_problem("gcn", n_layers=1)
    reps = forward(graph, num, txt, params, cfg)
    small = type(batch)(batch.heads[:2], batch.rels[:2], batch.pos_tails[:2], batch.neg_tails[:2])
    got = pretrain_loss(reps, params, small, 0.01).item()
    R_ = reps.data
    terms = []
    for h, r, tp, tn in zip(small.heads, small.rels, small.pos_tails, small.neg_tails):
        name = list(R)[int(r)].value
        W, rv = params[f"proj.{name}"].data, params["relation"].data[r]
        sp = np.sum((R_[h] @ W + rv - R_[tp] @ W) ** 2)
        sn = np.sum((R_[h] @ W + rv - R_[tn] @ W) ** 2)
        terms.append(math.log1p(math.exp(-(sn - sp))))
    reg = sum(np.sum(params[n].data ** 2) for n in phase_param_names(params, "pretrain"))
    assert got == pytest.approx(np.mean(terms) + 0.01 * reg, rel=1e-12)


def _head(params, zero=False):
    if zero:
        for n in ("clf.W1", "clf.b1", "clf.W2", "clf.b2"):
            params[n].data[...] = 0.0
    return params


def test_zero_classifier_gives_one_half():
    cfg, params, graph, num, txt, _, pairs = five_entity_problem("bi", n_layers=1)
    reps = forward(graph, num, txt, _head(params, zero=True), cfg)
    out = finetune_score(reps, [0, 3], [1, 4], params).data
    assert np.array_equal(out, [0.5, 0.5])


def test_finetune_score_range():
    rng = np.random.default_rng(2)
    cfg, params, *_ = five_entity_problem("gcn", n_layers=1)
    reps = rng.normal(scale=3.0, size=(1000, 4))
    out = finetune_score(reps, np.arange(500), np.arange(500, 1000), params).data
    assert np.all((out > 0) & (out < 1))


def test_finetune_score_two_dim_oracle():
    p = {"proj.r_D": np.array([[1.0, 0.5], [0.0, -1.0]]),
         "clf.W1": np.array([[1.0, 0.0], [0.5, 1.0], [-1.0, 0.2], [0.0, 1.0]]),
         "clf.b1": np.array([0.1, -0.3]), "clf.W2": np.array([[2.0], [-1.0]]),
         "clf.b2": np.array([0.05])}
    from litkg.model import ModelParams
    params = ModelParams({k: Tensor(v) for k, v in p.items()})
    reps = np.array([[1.0, 2.0], [-0.5, 1.0]])
    out = finetune_score(reps, [0], [1], params).data[0]
    hw = [1.0 * 1.0 + 2.0 * 0.0, 1.0 * 0.5 + 2.0 * -1.0]
    tw = [-0.5 * 1.0 + 1.0 * 0.0, -0.5 * 0.5 + 1.0 * -1.0]
    x = hw + tw
    pre = [sum(x[k] * p["clf.W1"][k, j] for k in range(4)) + p["clf.b1"][j] for j in range(2)]
    hid = [v if v > 0 else 0.01 * v for v in pre]
    logit = hid[0] * 2.0 - hid[1] + 0.05
    assert out == pytest.approx(1 / (1 + math.exp(-logit)), abs=1e-14)


def test_bce_examples():
    assert bce_loss([1.0, 0.0, 1.0], [1, 0, 1]).item() <= 1e-11
    assert bce_loss([0.5] * 4, [1, 0, 0, 1]).item() == pytest.approx(LN2, abs=1e-12)
    probs, labels = [0.9, 0.2, 0.6, 0.3], [1, 0, 0, 1]
    expected = -(math.log(0.9) + math.log(0.8) + math.log(0.4) + math.log(0.3)) / 4
    assert bce_loss(probs, labels).item() == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ContractError):
        bce_loss([0.5], [2])


def test_classifier_gradients_match_finite_differences():
    assert fd_check_full_model("bi", False, "finetune") < 1e-4


def test_classifier_head_only_gradients():
    cfg, params, graph, num, txt, _, pairs = five_entity_problem("gcn", n_layers=1)
    reps = forward(graph, num, txt, params, cfg).data
    names = ["proj.r_D", "clf.W1", "clf.b1", "clf.W2", "clf.b2"]
    tensors = [params[n] for n in names]
    ga = analytic(lambda: finetune_loss(reps, params, pairs), tensors)
    gn = central_difference(lambda: finetune_loss(reps, params, pairs).item(),
                            [t.data for t in tensors])
    assert norm_rel_error(ga, gn) < 1e-6


@pytest.mark.parametrize("kind", AGGREGATORS)
def test_one_adam_step_decreases_pretrain_loss(kind):
    cfg, params, graph, num, txt, batch, _ = five_entity_problem(kind)

    def loss():
        return pretrain_loss(forward(graph, num, txt, params, cfg), params, batch, 0.0)

    with Tape():
        l0 = loss()
        grads = backward(l0)
    named = {n: grads[t] for n, t in params.items() if t in grads}
    adam_step(params.tensors, named, AdamState(lr=1e-3))
    assert loss().item() < l0.item()


def test_phase_param_names():
    cfg = LayerConfig(embed_dim=4, hidden_dim=4)
    params = init_params(cfg, 3, 2, 2)
    pre = phase_param_names(params, "pretrain")
    assert not any(n.startswith("clf.") for n in pre)
    assert "proj.r_D" not in pre and "proj.r_Y" in pre and "entity" in pre
    only_a = phase_param_names(params, "pretrain", [R.r_A])
    assert [n for n in only_a if n.startswith("proj.")] == ["proj.r_A"]
    ft = phase_param_names(params, "finetune")
    assert [n for n in ft if n.startswith("proj.")] == ["proj.r_D"]
    assert "clf.W1" in ft
    with pytest.raises(ValueError):
        phase_param_names(params, "warmup")


# -- fine-tune pairs --------------------------------------------------------

def _two_diagnoses_kg(n_diseases=4):
    kg = KnowledgeGraph()
    recs = [kg.add_entity(K.MEDICAL_RECORD, f"M{i}") for i in range(2)]
    ds = [kg.add_entity(K.DISEASE, f"d{i}", Text(f"d{i}")) for i in range(n_diseases)]
    kg.add_triple(recs[0], R.r_D, ds[0])
    kg.add_triple(recs[1], R.r_D, ds[1])
    return kg


def test_finetune_pair_counts():
    pairs = build_finetune_pairs(_two_diagnoses_kg(), 1, np.random.default_rng(0))
    assert len(pairs) == 4 and sum(p.label for p in pairs) == 2
    pairs = build_finetune_pairs(_two_diagnoses_kg(), 3, np.random.default_rng(0))
    assert sum(p.label == 0 for p in pairs) == 3 * sum(p.label for p in pairs)
    with pytest.raises(SamplingError):
        build_finetune_pairs(_two_diagnoses_kg(), 4, np.random.default_rng(0))


def test_finetune_negatives_never_duplicate_positives():
    kg = _two_diagnoses_kg(6)
    for seed in range(1000):
        for p in build_finetune_pairs(kg, 2, np.random.default_rng(seed)):
            assert p.label == int(kg.has_triple(Triple(p.record, R.r_D, p.disease)))


def test_pretrain_batch_shapes():
    kg = small_kg()
    triples = [t for t in kg.triples if t.relation == R.r_D]
    batch = make_pretrain_batch(kg, triples, 2, np.random.default_rng(0))
    assert len(batch) == 2 * len(triples)
    for h, r, tp, tn in zip(batch.heads, batch.rels, batch.pos_tails, batch.neg_tails):
        assert r == RELATION_INDEX[R.r_D] and tp != tn
        assert not kg.has_triple(Triple(int(h), R.r_D, int(tn)))


def test_holdout_fraction():
    kept, held = holdout_triples(list(range(20)), 0.1, np.random.default_rng(0))
    assert len(held) == 2 and sorted(kept + held) == list(range(20))


# -- epoch loop -------------------------------------------------------------

def _five_entity_kg():
    kg = KnowledgeGraph()
    m1, m2 = kg.add_entity(K.MEDICAL_RECORD, "M1"), kg.add_entity(K.MEDICAL_RECORD, "M2")
    a = kg.add_entity(K.ANIMAL, "A1")
    d1 = kg.add_entity(K.DISEASE, "d1", Text("d1"))
    d2 = kg.add_entity(K.DISEASE, "d2", Text("d2"))
    for m in (m1, m2):
        kg.add_triple(m, R.r_A, a)
    kg.add_triple(m1, R.r_D, d1)
    kg.add_triple(m2, R.r_D, d2)
    kg.freeze()
    return kg


def _loop_setup(kind="bi", dropout=0.0):
    kg = _five_entity_kg()
    cfg = LayerConfig(aggregator=kind, embed_dim=8, hidden_dim=8, dropout=dropout)
    rng = np.random.default_rng(0)
    attrs = AttributeVectors(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)))
    model = Model(PropagationGraph.from_kg(kg, exclude=[R.r_D]), attrs, cfg)
    return kg, model, init_params(cfg, 5, 3, 4, seed=0)


def test_pretraining_ranks_positives_first():
    kg, model, params = _loop_setup()
    pos = [t for t in kg.triples if t.relation == R.r_D]
    run = TrainRunConfig(phase="pretrain", batch_size=2, epochs=50, patience=50, lr=0.01,
                         lambda_reg=0.0, negatives=1)
    run_phase(model, params, run, train=pos, kg=kg)
    heads = [t.head for t in pos]
    rels = [RELATION_INDEX[R.r_D]] * 2
    good = score_triples(model, params, heads, rels, [t.tail for t in pos])
    bad = score_triples(model, params, heads, rels, [pos[1].tail, pos[0].tail])
    assert np.all(good < bad)


def _pairs():
    return [FinetunePair(0, 3, 1), FinetunePair(0, 4, 0), FinetunePair(1, 4, 1),
            FinetunePair(1, 3, 0)]


def test_lr_zero_leaves_everything_fixed():
    kg, model, params = _loop_setup()
    before = params.copy()
    run = TrainRunConfig(phase="finetune", batch_size=4, epochs=3, patience=5, lr=0.0)
    res = run_phase(model, params, run, train=_pairs(), valid=_pairs())
    assert all(np.array_equal(params[n].data, before[n].data) for n in params)
    losses = [h["loss"] for h in res.history]
    # equal up to the summation order of the shuffled batch
    assert max(losses) - min(losses) <= 1e-12 * abs(losses[0])


def test_history_is_deterministic():
    hist = []
    for _ in range(2):
        kg, model, params = _loop_setup(dropout=0.2)
        run = TrainRunConfig(phase="finetune", batch_size=2, epochs=4, patience=5, lr=0.01,
                             seed=3)
        res = run_phase(model, params, run, train=_pairs(), valid=_pairs())
        hist.append([{k: v for k, v in h.items() if k != "wall_ms"} for h in res.history])
    assert hist[0] == hist[1]


def test_early_stopping_keeps_best_epoch():
    kg, model, params = _loop_setup()
    run = TrainRunConfig(phase="finetune", batch_size=2, epochs=30, patience=2, lr=0.05)
    res = run_phase(model, params, run, train=_pairs()[:2], valid=_pairs()[2:])
    assert len(res.history) <= 30
    keys = [(h["f1"], -h["valid_loss"]) for h in res.history]
    best = keys[res.best_epoch - 1]
    assert all(best >= k for k in keys[res.best_epoch:])
    assert len(res.history) - res.best_epoch <= run.patience


def test_divergence_keeps_last_good_params():
    kg, model, params = _loop_setup()
    params["clf.b2"].data[...] = np.nan
    run = TrainRunConfig(phase="finetune", batch_size=4, epochs=2, lr=0.01)
    with pytest.raises(TrainingDivergence) as err:
        run_phase(model, params, run, train=_pairs(), valid=_pairs())
    assert err.value.epoch == 1 and err.value.batch == 0


def test_phase_input_checks():
    kg, model, params = _loop_setup()
    with pytest.raises(ValueError):
        run_phase(model, params, TrainRunConfig(phase="pretrain"), train=list(kg.triples))
    with pytest.raises(ValueError):
        run_phase(model, params, TrainRunConfig(phase="finetune"), train=list(kg.triples))
