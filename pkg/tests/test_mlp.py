import json
from importlib import resources

import numpy as np
import pytest

from tmeta.core import DataError, MetaTaskTable, load_corpus
from tmeta.ltr import RankerModel, RankingInstance
from tmeta.mlp import Mlp, MlpParams, TrainingDiverged, train_mlp
from tmeta.selectors import ranking_instances


def central_difference(net, X, y, h=1e-5):
    out_w, out_b = [], []
    for params, out in ((net.weights, out_w), (net.biases, out_b)):
        for P in params:
            G = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + h
                up = net.loss_and_gradients(X, y)[0]
                P[idx] = old - h
                down = net.loss_and_gradients(X, y)[0]
                P[idx] = old
                G[idx] = (up - down) / (2 * h)
            out.append(G)
    return out_w, out_b


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(5, 6)), rng.normal(size=5)
    net = Mlp.initialize(6, (8, 4), seed=seed)
    _, gw, gb = net.loss_and_gradients(X, y)
    nw, nb = central_difference(net, X, y)
    assert max_relative_error(gw + gb, nw + nb) <= 1e-4


def test_zero_epochs_returns_initialisation():
    rng = np.random.default_rng(0)
    inst = [RankingInstance("q", str(i), rng.normal(size=5), float(i)) for i in range(6)]
    model = train_mlp(inst, MlpParams(epochs=0, seed=3))
    X = np.array([i.feature for i in inst])
    assert np.array_equal(model.predict(X), Mlp.initialize(5, (64, 32), seed=3).predict(X))


@pytest.mark.parametrize("value", [0.7, -0.3])
def test_constant_target_converges(value):
    # the meta-predictor's real inputs: unit-norm dataset and metric embeddings side by side
    corpus = load_corpus(resources.files("tmeta") / "data" / "paper_embeddings.jsonl")
    datasets, metrics = corpus.names("dataset"), corpus.names("metric")
    table = MetaTaskTable(datasets, metrics, np.full((len(datasets), len(metrics)), value))
    hist = []
    model = train_mlp(ranking_instances(table, corpus), MlpParams(), history=hist)
    assert len(hist) == 500
    assert model.training_meta["final_loss"] <= 1e-4


def test_divergence_is_reported():
    rng = np.random.default_rng(2)
    inst = [RankingInstance("q", str(i), rng.normal(size=4) * 100, float(i)) for i in range(8)]
    with pytest.raises(TrainingDiverged) as exc:
        train_mlp(inst, MlpParams(step_size=1.0, momentum=0.0, epochs=50))
    assert exc.value.epoch >= 0 and "step_size" in str(exc.value)


def test_json_round_trip_bitwise():
    rng = np.random.default_rng(3)
    inst = [RankingInstance("q", str(i), rng.normal(size=4), float(rng.normal())) for i in range(10)]
    model = train_mlp(inst, MlpParams(hidden_dims=(5, 3), epochs=20))
    back = RankerModel.from_dict(json.loads(model.to_json()))
    X = rng.normal(size=(7, 4))
    assert back.kind == "mlp"
    assert back.predict(X).tobytes() == model.predict(X).tobytes()


def test_training_deterministic_per_seed():
    rng = np.random.default_rng(4)
    inst = [RankingInstance("q", str(i), rng.normal(size=4), float(rng.normal())) for i in range(10)]
    a = train_mlp(inst, MlpParams(hidden_dims=(5, 3), epochs=30, seed=1)).to_json()
    b = train_mlp(inst, MlpParams(hidden_dims=(5, 3), epochs=30, seed=1)).to_json()
    c = train_mlp(inst, MlpParams(hidden_dims=(5, 3), epochs=30, seed=2)).to_json()
    assert a == b and a != c


@pytest.mark.parametrize("bad", [dict(hidden_dims=(4,)), dict(hidden_dims=(0, 3)), dict(epochs=-1),
                                 dict(step_size=0.0), dict(momentum=1.0)])
def test_invalid_params(bad):
    with pytest.raises(DataError):
        MlpParams(**bad)
