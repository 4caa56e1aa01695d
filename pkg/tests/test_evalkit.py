import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braingraphs import designspace as ds
from braingraphs import evalkit as ek
from braingraphs.dataio import Coupling, synth_lagged_dataset
from braingraphs.errors import MisalignedSettings, ValidationError

from .oracles import naive_average_ranks


def _blobs(rng, m=60, p=5, sep=4.0):
    y = np.arange(m) % 2
    x = rng.normal(size=(m, p)) + sep * y[:, None]
    return x, y


@pytest.mark.parametrize("kind", [ek.CENTROID, ek.RIDGE])
def test_separable_gives_perfect_accuracy(rng, kind):
    x, y = _blobs(rng)
    model = ek.SurrogateModel(kind)
    assert ek.fit_predict(model, (x[:40], y[:40]), (x[40:], y[40:])) == 1.0


def test_shuffled_labels_near_chance():
    accs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(200, 10))
        y = rng.permutation(np.arange(200) % 2)
        accs.append(ek.fit_predict(ek.SurrogateModel(), (x[:140], y[:140]), (x[140:], y[140:])))
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_train_equals_test_is_optimistic(rng):
    # scoring on the training set itself beats scoring on held-out data, on average over splits
    x = rng.normal(size=(80, 6))
    y = (x[:, 0] + rng.normal(scale=1.5, size=80) > 0).astype(int)
    model = ek.SurrogateModel()
    resub, held = [], []
    for seed in range(20):
        perm = np.random.default_rng(seed).permutation(80)
        tr, te = perm[:50], perm[50:]
        resub.append(ek.fit_predict(model, (x[tr], y[tr]), (x[tr], y[tr])))
        held.append(ek.fit_predict(model, (x[tr], y[tr]), (x[te], y[te])))
    assert np.mean(resub) >= np.mean(held)


def test_fit_predict_preconditions(rng):
    x = rng.normal(size=(10, 3))
    with pytest.raises(ValidationError):
        ek.fit_predict(ek.SurrogateModel(), (x, np.zeros(10)), (x, np.zeros(10)))
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        ek.fit_predict(ek.SurrogateModel(), (bad, np.arange(10) % 2), (x, np.arange(10) % 2))


def test_ridge_singular_falls_back(rng, monkeypatch):
    x, y = _blobs(rng)

    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(np.linalg, "solve", boom)
    with pytest.warns(UserWarning, match="falling back"):
        acc = ek.fit_predict(ek.SurrogateModel(ek.RIDGE), (x[:40], y[:40]), (x[40:], y[40:]))
    assert acc == 1.0


def test_ridge_primal_and_dual_agree(rng):
    x, y = _blobs(rng, m=50, p=8, sep=0.7)
    wide = np.hstack([x, np.zeros((50, 60))])
    model = ek.SurrogateModel(ek.RIDGE, lam=2.0)
    a = ek.fit_predict(model, (x[:35], y[:35]), (x[35:], y[35:]))
    b = ek.fit_predict(model, (wide[:35], y[:35]), (wide[35:], y[35:]))
    assert a == b


def test_rank_examples():
    out = ek.rank_configs({"d": {"a": 0.9, "b": 0.8, "c": 0.7}})
    assert out["per_setting"]["d"] == {"a": 1.0, "b": 2.0, "c": 3.0}
    out = ek.rank_configs({"d": {"a": 0.8, "b": 0.8, "c": 0.7}})
    assert out["per_setting"]["d"] == {"a": 1.5, "b": 1.5, "c": 3.0}


def test_rank_misaligned():
    with pytest.raises(MisalignedSettings):
        ek.rank_configs({"d1": {"a": 0.9}, "d2": {"b": 0.8}})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(50, 60).map(lambda v: v / 100), min_size=5, max_size=5), min_size=1, max_size=4))
def test_rank_matches_oracle_and_monotone_relabel(rows):
    configs = [f"c{k}" for k in range(5)]
    table = {f"s{i}": dict(zip(configs, r)) for i, r in enumerate(rows)}
    out = ek.rank_configs(table)
    for s, r in zip(table, rows):
        assert [out["per_setting"][s][c] for c in configs] == naive_average_ranks(r, descending=True)
        assert sum(out["per_setting"][s].values()) == 15
    relabeled = {s: {c: np.sqrt(v) * 3 - 1 for c, v in row.items()} for s, row in table.items()}
    assert ek.rank_configs(relabeled) == out


def test_outperformance_examples():
    base = [0.5] * 8
    assert ek.outperformance_rate([0.6] * 6 + [0.4] * 2, base) == 0.75
    assert ek.outperformance_rate(base, base) == 0.0
    assert ek.outperformance_rate([0.9] * 8, base) == 1.0
    with pytest.raises(MisalignedSettings):
        ek.outperformance_rate([0.5] * 7, base)
    with pytest.raises(MisalignedSettings):
        ek.outperformance_rate({"a": 0.5}, {"b": 0.4})


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=10),
    st.floats(0.1, 10),
    st.floats(-5, 5),
)
def test_outperformance_affine_invariance(pairs, a, b):
    x = np.array([p[0] for p in pairs]) / 20
    y = np.array([p[1] for p in pairs]) / 20
    assert ek.outperformance_rate(a * x + b, a * y + b) == ek.outperformance_rate(x, y)


@pytest.fixture(scope="module")
def lag_graphs():
    subjects = synth_lagged_dataset(40, 8, 150, [[Coupling(0, 1, 3)], [Coupling(0, 1, 0, 0.05)]], seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {
            name: [ds.build_graph(s, ds.preset(name)) for s in subjects]
            for name in ("baseline", "edgefeat", "lag1")
        }


def test_graph_features_shapes(lag_graphs):
    g = lag_graphs["edgefeat"][0]
    v = ek.graph_features(g)
    pairs = 8 * 7 // 2
    assert v.shape == (pairs + 3 * pairs,)
    assert ek.graph_features(lag_graphs["lag1"][0]).shape == (3 * pairs,)
    assert ek.graph_features(g, ek.MEAN_POOL).shape == (8,)


def test_evaluate_is_deterministic_and_reports(lag_graphs):
    a = ek.evaluate_graphs(lag_graphs["baseline"], seed=4)
    b = ek.evaluate_graphs(list(reversed(lag_graphs["baseline"])), seed=4)
    assert a == b
    assert len(a["per_split"]) == 5
    report = ek.evaluate_settings({"synthetic": lag_graphs}, n_splits=3)
    assert report["surrogate_evaluation"] is True
    assert set(report["outperformance"]) == {"edgefeat", "lag1"}
    text = ek.format_ranking_table(report)
    assert text.startswith(ek.SURROGATE_MARKER)
    tsv = ek.format_ranking_table(report, sep="\t")
    assert tsv.splitlines()[0] == "setting\tbaseline\tedgefeat\tlag1"
    assert ek.format_outperformance(report, sep="\t").startswith("config\toutperformance_rate\n")


def test_plots_written(tmp_path, lag_graphs):
    from braingraphs.plotting import plot_outperformance, plot_ranking

    report = ek.evaluate_settings({"s1": lag_graphs, "s2": lag_graphs}, n_splits=2)
    for fn, name in ((plot_ranking, "r.png"), (plot_outperformance, "o.png")):
        path = fn(report, tmp_path / name)
        assert path.stat().st_size > 1000
        assert path.read_bytes()[:4] == b"\x89PNG"
