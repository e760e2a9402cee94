import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import weighted_mean_oracle
from shelterfl import fedsim, nnet
from shelterfl.domain import AgencyDataset, ClientHistory, FedConfig, ModelParameters, TrainConfig, WindowConfig
from shelterfl.synthgen import CohortSpec, gen_cohort

FAST = TrainConfig(epochs=2, batch_size=128)


def params(rng, shapes=((3, 4), (4, 2))):
    return ModelParameters([(rng.normal(size=s), rng.normal(size=s[1])) for s in shapes])


@pytest.fixture(scope="module")
def exp():
    coh = gen_cohort(CohortSpec(n_clients=1200, seed=21))
    return fedsim.prepare_experiment(coh, WindowConfig(), seed=3)


@pytest.fixture(scope="module")
def single_agency_exp():
    coh = gen_cohort(CohortSpec(n_clients=400, agency_weights={"k": 1.0}, seed=2))
    return fedsim.prepare_experiment(coh, WindowConfig(), seed=1)


# -- aggregation ------------------------------------------------------------------


def test_fedavg_single_agency_identity():
    p = params(np.random.default_rng(0))
    assert fedsim.fedavg_aggregate({"a": (p, 17)}) == p


def test_fedavg_quarter_weights():
    rng = np.random.default_rng(1)
    a, b = params(rng), params(rng)
    g = fedsim.fedavg_aggregate({"a": (a, 1), "b": (b, 3)})
    for got, x, y in zip(g.arrays(), a.arrays(), b.arrays()):
        assert np.allclose(got, (x + 3 * y) / 4, rtol=1e-15, atol=1e-15)


def test_fedavg_opposite_parameters_cancel():
    p = params(np.random.default_rng(2))
    neg = ModelParameters([(-w, -b) for w, b in p.layers])
    g = fedsim.fedavg_aggregate({"a": (p, 5), "b": (neg, 5)})
    assert all(not arr.any() for arr in g.arrays())


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_fedavg_matches_oracle_and_ignores_input_order(seed, k):
    rng = np.random.default_rng(seed)
    local = {f"a{i}": (params(rng), int(rng.integers(1, 5000))) for i in range(k)}
    g = fedsim.fedavg_aggregate(local)
    keys = list(local)
    sizes = [local[key][1] for key in keys]
    flat = [local[key][0].flat().tolist() for key in keys]
    oracle = np.array(weighted_mean_oracle(flat, sizes, random.Random(seed)))
    scale = np.abs(np.array(flat)).T @ (np.array(sizes) / sum(sizes))
    assert (np.abs(g.flat() - oracle) <= 1e-12 * scale).all()
    shuffled = dict(reversed(list(local.items())))
    assert fedsim.fedavg_aggregate(shuffled).flat().tobytes() == g.flat().tobytes()


def test_fedavg_errors():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        fedsim.fedavg_aggregate({})
    with pytest.raises(ValueError):
        fedsim.fedavg_aggregate({"a": (params(rng), 1), "b": (params(rng, ((3, 5), (5, 2))), 1)})
    with pytest.raises(ValueError):
        fedsim.fedavg_aggregate({"a": (params(rng), 0)})


# -- experiment preparation -------------------------------------------------------


def test_test_set_is_person_level_and_labelled_centrally(exp):
    train_people = exp.linked_train_ids
    assert 0.75 < len(train_people) / len(exp.linked) < 0.85
    for a, view in exp.agencies.items():
        held = [h.client_id for h in view.data if h.client_id not in view.train_ids]
        assert exp.test.agency_slice(a).size == len(held)
    assert exp.test.x.shape == (len(exp.test), exp.window.n_features)
    assert set(np.unique(exp.test.labels).tolist()) <= {0, 1, 2}
    assert not exp.test.x.flags.writeable


def test_agency_views_hold_no_global_ids(exp):
    global_ids = {h.client_id for h in exp.linked}
    for view in exp.agencies.values():
        assert not {h.client_id for h in view.data} & global_ids
        assert view.train_ids <= {h.client_id for h in view.data}


def test_federated_and_isolated_never_see_linked_data():
    import inspect

    for fn in (fedsim.run_federated, fedsim.run_isolated):
        params_ = set(inspect.signature(fn).parameters)
        assert not params_ & {"linked", "linked_view", "provenance", "truth"}
        assert not set(fn.__code__.co_names) & {"merge_linked", "unlink", "primary_agency", "provenance"}


def test_federation_runs_on_unlinked_view_alone(exp):
    # rebuild the views from raw agency data only; no provenance anywhere in reach
    views = {a: fedsim.AgencyView(AgencyDataset(a, v.data.clients), v.train_ids) for a, v in exp.agencies.items()}
    r = fedsim.run_federated(views, exp.test, exp.window, FAST, FedConfig(1, 1))
    assert r.confusion.sum() == len(exp.test)


# -- scenarios --------------------------------------------------------------------


def test_all_scenarios_share_the_test_set(exp):
    digests = {fedsim.run_scenario(sc, exp, FAST, FedConfig(2, 1)).test_digest for sc in fedsim.SCENARIOS}
    assert digests == {exp.test.digest()}


def test_single_agency_federation_equals_central_training(single_agency_exp):
    e = single_agency_exp
    rounds, local = 4, 3
    cfg = TrainConfig(batch_size=64, seed=5)
    fed = fedsim.run_federated(e.agencies, e.test, e.window, cfg, FedConfig(rounds, local), e.label_seed)
    central_cfg = replace(cfg, epochs=rounds * local, optimizer_reset_every=local)
    cen = fedsim.run_centralized(e.linked, e.linked_train_ids, e.test, e.window, central_cfg, e.label_seed)
    a, b = fed.models["global"].params.flat(), cen.models["global"].params.flat()
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_zero_rounds_returns_initial_model(exp):
    r = fedsim.run_federated(exp.agencies, exp.test, exp.window, FAST, FedConfig(0, 5))
    init = fedsim._fresh_model(FAST, exp.window.n_features)
    assert r.models["global"].params == init.params
    assert r.round_logs == []


def test_zero_epochs_central_is_untrained(exp):
    cfg = replace(FAST, epochs=0)
    r = fedsim.run_centralized(exp.linked, exp.linked_train_ids, exp.test, exp.window, cfg)
    assert r.models["global"].params == fedsim._fresh_model(cfg, exp.window.n_features).params


def test_zero_learning_rate_keeps_initial_metrics(exp):
    frozen = fedsim.run_centralized(exp.linked, exp.linked_train_ids, exp.test, exp.window, replace(FAST, learning_rate=0.0))
    untrained = fedsim.run_centralized(exp.linked, exp.linked_train_ids, exp.test, exp.window, replace(FAST, epochs=0))
    assert np.array_equal(frozen.confusion, untrained.confusion)


def test_round_logs(exp):
    seen = []
    r = fedsim.run_federated(exp.agencies, exp.test, exp.window, FAST, FedConfig(3, 1), on_round=seen.append)
    assert [log.round for log in r.round_logs] == [1, 2, 3] and seen == r.round_logs
    for log in r.round_logs:
        assert set(log.local_loss) == set(exp.agencies)
        assert all(0 <= v <= 1 for v in log.test_metrics.values())
        assert list(log.record()) == ["round", "local_loss", "test_macro"]


def test_local_normalization_option(exp):
    r = fedsim.run_federated(exp.agencies, exp.test, exp.window, FAST, FedConfig(1, 1, normalization="local"))
    norms = list(r.normalization.values())
    assert not np.array_equal(norms[0].means, norms[1].means)
    assert r.confusion.sum() == len(exp.test)


def test_isolated_has_one_model_per_agency_and_pools_confusions(exp):
    r = fedsim.run_isolated(exp.agencies, exp.test, exp.window, FAST, exp.label_seed)
    assert set(r.models) | set(r.excluded) == set(exp.agencies)
    assert np.array_equal(r.confusion, sum(r.agency_confusions.values()))


def test_isolated_on_replicated_data_matches_central(single_agency_exp):
    e = single_agency_exp
    view = e.agencies["k"]
    cfg = replace(FAST, epochs=3)
    iso = fedsim.run_isolated({"a": view, "b": view}, e.test, e.window, cfg, e.label_seed)
    cen = fedsim.run_centralized(e.linked, e.linked_train_ids, e.test, e.window, cfg, e.label_seed)
    for m in iso.models.values():
        assert m.params == cen.models["global"].params


def test_degenerate_agency_excluded_from_isolated():
    coh = gen_cohort(CohortSpec(n_clients=300, agency_weights={"k": 1.0}, seed=4))
    odd = AgencyDataset("z", (ClientHistory("zz1", np.array([20000])), ClientHistory("zz2", np.array([20001]))))
    exp = fedsim.prepare_experiment({"k": coh["k"], "z": odd}, WindowConfig(), seed=0)
    r = fedsim.run_isolated(exp.agencies, exp.test, exp.window, FAST, exp.label_seed)
    assert r.excluded == ["z"] and set(r.models) == {"k"}
    fed = fedsim.run_federated(exp.agencies, exp.test, exp.window, FAST, FedConfig(1, 1), exp.label_seed)
    assert fed.confusion.sum() == len(exp.test)


def test_unknown_scenario(exp):
    with pytest.raises(ValueError):
        fedsim.run_scenario("hybrid", exp, FAST)


def test_learns_easy_cohort():
    from shelterfl.synthgen import ClassParams

    # single-agency clients, no late returns, tight chronic spread and
    # closely spaced episodes so the first 120 days reveal the class
    easy = ClassParams(
        relapse_per_year=0.0,
        agencies_per_client=(1.0, 0.0, 0.0),
        agency_intensity={},
        agency_affinity={},
        episodic_mean_run=4.0,
        episodic_mean_extra_gap=5.0,
        chronic_sd_stays=5.0,
        chronic_max_episodes=1,
    )
    coh = gen_cohort(CohortSpec(n_clients=1500, class_mix=(0.5, 0.3, 0.2), class_params=easy, seed=8))
    e = fedsim.prepare_experiment(coh, WindowConfig(120, 10, 548), seed=0)
    r = fedsim.run_centralized(e.linked, e.linked_train_ids, e.test, e.window, TrainConfig(epochs=60, batch_size=64))
    assert r.macro["recall"] >= 0.9


# -- repeats ----------------------------------------------------------------------


def test_repeat_once_equals_single_run(exp):
    def run(seed):
        return fedsim.run_scenario("centralized", exp, replace(FAST, seed=seed))

    avg = fedsim.repeat_and_average(run, 1, seed_base=4)
    single = run(4).summary()
    assert avg.seeds == [4] and avg.runs == [single]
    assert avg.mean["macro"] == single["macro"]
    assert all(v == 0 for v in avg.std["macro"].values())


def test_averaging_identical_runs_is_identity(exp):
    result = fedsim.run_scenario("centralized", exp, FAST)
    avg = fedsim.repeat_and_average(lambda seed: result, 3)
    assert avg.mean["macro"] == pytest.approx(result.summary()["macro"], rel=1e-15)
    assert avg.mean["per_agency"].keys() == result.summary()["per_agency"].keys()
    with pytest.raises(ValueError):
        fedsim.repeat_and_average(lambda seed: result, 0)
