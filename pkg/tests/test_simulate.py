import math

import numpy as np
import pytest

from cvqa.core import InputError, Outcome, TiePolicy, build_comparison_matrix
from cvqa.bench import srcc
from cvqa.ranker import DEFAULT_BETA, bt_fit
from cvqa.simulate import (
    SimConfig,
    item_ids,
    latent_quality,
    recovery_experiment,
    simulate_catalog,
    simulate_pairwise,
    simulate_ratings,
)


def win_rate(cfg):
    votes = simulate_pairwise(cfg)
    ids = item_ids(cfg)
    wins = sum(v.winner == ids[0] for v in votes.votes)
    return wins / len(votes)


def test_equal_quality_pair_is_a_coin_flip():
    n = 10_000
    p = win_rate(SimConfig(n_items=2, q_true=(0.7, 0.7), votes_per_pair=n))
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_one_unit_gap_wins_three_quarters():
    n = 10_000
    p = win_rate(SimConfig(n_items=2, q_true=(1.0, 0.0), votes_per_pair=n, rng_seed=5))
    assert abs(p - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / n)


def test_config_validation():
    with pytest.raises(InputError, match="BAD_CONFIG"):
        SimConfig(votes_per_pair=0)
    with pytest.raises(InputError, match="BAD_CONFIG"):
        SimConfig(rating_noise_sd=-1)
    with pytest.raises(InputError, match="BAD_CONFIG"):
        SimConfig(n_items=3, q_true=(1.0, 2.0))
    with pytest.raises(InputError, match="BAD_CONFIG"):
        SimConfig.from_dict({"n_items": 4, "colour": "red"})
    cfg = SimConfig(n_items=5, q_true=(0, 1, 2, 3, 4), bitrates_kbps=(500, 900))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_noise_free_ratings_are_identical_across_observers():
    cfg = SimConfig(n_items=6, n_observers=8, rating_noise_sd=0.0, observer_bias_sd=0.0)
    by_item = simulate_ratings(cfg).by_item()
    for rs in by_item.values():
        assert len({r.score for r in rs}) == 1


def test_latent_max_clamps_to_top_of_scale():
    cfg = SimConfig(n_items=2, q_true=(10.0, 0.0), rating_noise_sd=0.0, n_observers=3)
    scores = {r.item_id: r.score for r in simulate_ratings(cfg).scores}
    assert scores[item_ids(cfg)[0]] == 20


def test_population_mean_rating():
    cfg = SimConfig(n_items=3, q_true=(1.0, 2.0, 2.5), n_observers=10_000, rating_noise_sd=1.0, rng_seed=2)
    mos = simulate_ratings(cfg).mos()
    for i, q in zip(item_ids(cfg), cfg.q_true):
        expected = (q - cfg.b_true) / cfg.a_true
        # rounding adds no bias on average; sampling sd of the mean is 4/sqrt(1e4) = 0.04
        assert abs(mos[i] - expected) <= 0.2


def test_partial_designs_and_ties():
    cfg = SimConfig(n_items=12, ratings_per_observer=4, n_observers=30, items_per_source=4, tie_margin=0.3)
    ratings = simulate_ratings(cfg)
    assert all(len(v) == 4 for v in ratings.by_observer().values())
    votes = simulate_pairwise(cfg)
    assert votes.groups == ["src00", "src01", "src02"]
    assert any(v.outcome is Outcome.TIE for v in votes.votes)


def test_catalog_layout():
    cfg = SimConfig(n_items=7, items_per_source=None)
    cat = simulate_catalog(cfg)
    q = dict(zip(item_ids(cfg), latent_quality(cfg)))
    groups = {}
    for it in cat.items:
        groups.setdefault(it.codec, []).append(it)
    assert sorted(len(v) for v in groups.values()) == [1, 3, 3]
    for members in groups.values():
        members.sort(key=lambda it: it.target_bitrate_kbps)
        assert [q[it.item_id] for it in members] == sorted(q[it.item_id] for it in members)
        for it in members:
            assert abs(it.actual_bitrate_kbps / it.target_bitrate_kbps - 1) <= 0.05 + 1e-9


def test_seeded_outputs_are_identical():
    cfg = SimConfig(n_items=8, rng_seed=123, observer_bias_sd=0.3)
    assert simulate_pairwise(cfg) == simulate_pairwise(cfg)
    assert simulate_ratings(cfg) == simulate_ratings(cfg)
    assert simulate_ratings(cfg) != simulate_ratings(SimConfig(n_items=8, rng_seed=124, observer_bias_sd=0.3))


@pytest.mark.parametrize("seed", range(5))
def test_bt_consistent_with_many_votes(seed):
    # evenly spaced qualities: uniform draws can put two items 0.03 apart, inside the sampling error
    cfg = SimConfig(n_items=10, q_true=tuple(np.linspace(0, 4, 10)), votes_per_pair=1000, rng_seed=seed)
    votes = simulate_pairwise(cfg)
    q = bt_fit(build_comparison_matrix(votes, "src00", TiePolicy.HALF_WIN), DEFAULT_BETA)
    assert srcc(q.vector(item_ids(cfg)), latent_quality(cfg)).r >= 0.99


def test_recovery_noise_free_limit():
    cfg = SimConfig(votes_per_pair=1000, rating_noise_sd=0.0)
    rep = recovery_experiment(cfg, run_elo=False)
    assert rep.srcc_fused == 1.0
    assert rep.converged


def test_recovery_default_config():
    rep = recovery_experiment(SimConfig(rng_seed=0), run_elo=False)
    assert rep.srcc_fused >= 0.95
    assert rep.srcc_elo is None
    assert set(rep.param_errors) == {"a", "b", "c"}


def test_ratings_help_when_votes_are_scarce():
    # model-matched Gumbel rating noise; see the decisions ledger for the Normal-noise count
    better = 0
    for seed in range(20):
        cfg = SimConfig(votes_per_pair=5, rating_noise_sd=0.5, rating_noise="gumbel", rng_seed=seed)
        rep = recovery_experiment(cfg, run_elo=False)
        better += rep.srcc_fused >= rep.srcc_bt
    assert better >= 16
