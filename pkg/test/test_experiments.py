import numpy as np
import pytest

from esnet import experiments
from esnet.network import ESNET, ESNET_M, NetworkConfig, StereoNetwork


def test_trainer_cycles_through_samples():
    samples = experiments.synthetic_samples(0, count=3)
    trainer = experiments.Trainer(StereoNetwork(NetworkConfig(ESNET, 'tiny'), seed=0), samples, seed=1)
    seen = [i for _ in range(3) for i in trainer._next_ids()]
    # two full passes of three samples in batches of two
    assert sorted(seen) == [0, 0, 1, 1, 2, 2]


def test_band_at_scale_covers_band():
    assert experiments._band_at_scale((4, 20, 10, 16), 2) == (1, 5, 2, 4)
    assert experiments._band_at_scale((4, 20, 10, 16), 0) == (4, 20, 10, 16)


def test_occlusion_diagnostic_rows():
    table = experiments.occlusion_diagnostic(seed=0, count=1)
    assert list(table['scale']) == [2, 1, 0]
    assert table['occluded_mean'].between(0, 1).all()


@pytest.mark.slow
def test_schedule_orders_runs_in_declared_order(tmpdir):
    log = experiments.schedule_orders(('SF+K', 'DS+SF+K'), seed=0, epochs=1, output_dir=str(tmpdir))
    first = log[log['order'] == 'SF+K']
    assert list(first['stage'].drop_duplicates()) == ['SF:supervised', 'K:supervised']
    second = log[log['order'] == 'DS+SF+K']
    assert list(second['stage'].drop_duplicates()) == ['DS:supervised', 'SF:supervised', 'K:supervised']
    assert np.isfinite(log['loss']).all()


@pytest.mark.slow
@pytest.mark.parametrize('variant', [ESNET, ESNET_M])
def test_overfit_synthetic_pairs(variant):
    result = experiments.overfit(variant, steps=1000, seed=0)
    assert result['reached'], result['epe']


@pytest.mark.slow
def test_unsupervised_descent():
    result = experiments.unsupervised_descent(steps=200, seed=0)
    assert result['finite']
    assert result['ratio'] <= 0.5


@pytest.mark.slow
def test_pretraining_benefit_across_seeds():
    results = [experiments.pretraining_benefit(seed) for seed in range(5)]
    assert sum(r['reached'] for r in results) >= 4
