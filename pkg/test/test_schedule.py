import os

import numpy as np
import pandas as pd
import pytest

from conftest import load_cases
from esnet import checkpoint, schedule, utils
from esnet.datasets import SynthSpec, synth_generate
from esnet.exceptions import ConfigError, DataError
from esnet.network import NetworkConfig, StereoNetwork

cases = load_cases('test_schedule_cases.json')


@pytest.mark.parametrize('case', cases['valid'], ids=[c['text'].strip() for c in cases['valid']])
def test_parse_schedule(case):
    dsched = schedule.parse_schedule(case['text'])
    assert dsched.labels == case['labels']
    assert [len(s.rounds) for s in dsched.stages] == case['rounds']
    assert dsched.dataset_ids() == case['datasets']


@pytest.mark.parametrize('text', cases['invalid'])
def test_parse_schedule_rejects(text):
    with pytest.raises(ConfigError):
        schedule.parse_schedule(text)


def test_sceneflow_lr_halves_every_ten_epochs():
    sf = schedule.parse_schedule('SF').stages[0]
    assert [r.epochs for r in sf.rounds] == [20, 20, 20, 30]
    trace = schedule.lr_trace(sf.rounds[3])
    assert trace[0] == trace[9] == pytest.approx(1e-4)
    assert trace[10] == trace[19] == pytest.approx(5e-5)
    assert trace[29] == pytest.approx(2.5e-5)


def test_kitti_milestone():
    k = schedule.parse_schedule('K').stages[0]
    assert [r.epochs for r in k.rounds] == [1200, 1200, 1200]
    policy = k.rounds[0].lr_policy
    assert policy.lr(599) == pytest.approx(1e-5)
    assert policy.lr(600) == pytest.approx(1e-6)
    assert policy.lr(1199) == pytest.approx(1e-6)


def test_stage_crops_and_round_weights():
    dsched = schedule.parse_schedule('SF*+DS+K')
    assert [s.crop for s in dsched.stages] == [(384, 768), (256, 768), (256, 512)]
    assert dsched.stages[0].rounds[0].omega is None
    assert dsched.stages[2].rounds[0].omega == dsched.stages[1].rounds[1].omega


def test_overrides():
    dsched = schedule.parse_schedule('SF*+SF', epochs=2, lr=0.01, unsupervised_epochs=5)
    assert all(r.epochs == 2 for s in dsched.stages for r in s.rounds)
    assert dsched.stages[1].rounds[0].lr_policy.lr(0) == pytest.approx(0.01)
    # decay rule survives a new base rate
    assert dsched.stages[1].rounds[0].lr_policy.lr(10) == pytest.approx(0.005)
    assert schedule.parse_schedule('SF*', unsupervised_epochs=5).stages[0].rounds[0].epochs == 5


def test_lr_policy_validation():
    with pytest.raises(ConfigError):
        schedule.LRPolicy(0.0)
    with pytest.raises(ConfigError):
        schedule.Round(-1, schedule.LRPolicy(1e-3))
    with pytest.raises(ConfigError):
        schedule.DatasetSchedule([])


def synthetic(count=4, seed=0):
    return synth_generate(SynthSpec(count=count, height=64, width=128), rng=seed)


def quick_options(seed=0):
    return schedule.TrainOptions(batch_size=2, steps_per_epoch=1, seed=seed, val_ratio=0.5)


def test_run_schedule_on_synthetic(tmpdir):
    dsched = schedule.parse_schedule('SYN*+SYN', epochs=1)
    result = schedule.run_schedule(dsched, NetworkConfig('ESNet', 'tiny'),
                                   {'datasets': {'SYN': synthetic()}, 'output_dir': str(tmpdir)}, quick_options())
    log = result['log']
    assert list(log.columns) == schedule.LOG_COLUMNS
    assert list(log['stage']) == ['SYN:unsupervised', 'SYN:supervised']
    assert np.isnan(log['val_epe'].iloc[0])
    assert np.isfinite(log['val_epe'].iloc[1]) and np.isfinite(log['loss']).all()
    assert os.path.isfile(result['log_path']) and os.path.isfile(result['checkpoint'])
    on_disk = pd.read_csv(result['log_path'])
    assert list(on_disk['epoch']) == list(log['epoch'])
    saved = checkpoint.load_checkpoint(result['checkpoint'])
    for name, arr in checkpoint.params_to_arrays(result['params']).items():
        np.testing.assert_array_equal(saved[name], arr)


def test_run_schedule_is_deterministic(tmpdir):
    dsched = schedule.parse_schedule('SYN', epochs=2)
    runs = [schedule.run_schedule(dsched, NetworkConfig('ESNet', 'tiny'),
                                  {'datasets': {'SYN': synthetic()}, 'output_dir': str(tmpdir.join(str(i)))},
                                  quick_options(seed=3))
            for i in range(2)]
    pd.testing.assert_frame_equal(runs[0]['log'], runs[1]['log'])


def test_zero_epochs_keeps_initialization(tmpdir):
    config = NetworkConfig('ESNet', 'tiny')
    result = schedule.run_schedule(schedule.parse_schedule('SYN', epochs=0), config,
                                   {'datasets': {'SYN': synthetic()}, 'output_dir': str(tmpdir)}, quick_options(5))
    fresh = StereoNetwork(config, seed=utils.child_seed(utils.make_rng(5)))
    assert len(result['log']) == 0
    for name, t in fresh.params.items():
        np.testing.assert_array_equal(result['params'][name].data, t.data)


def test_run_schedule_data_errors(tmpdir):
    io_paths = {'datasets': {'SF': synthetic()}, 'output_dir': str(tmpdir)}
    with pytest.raises(DataError):
        schedule.run_schedule(schedule.parse_schedule('SF+K', epochs=1), NetworkConfig('ESNet', 'tiny'), io_paths)
    with pytest.raises(DataError):
        schedule.run_schedule(schedule.parse_schedule('SF', epochs=1), NetworkConfig('ESNet', 'tiny'),
                              {'datasets': {'SF': str(tmpdir.join('nowhere'))}})
    stripped = {'datasets': {'SF': [s.strip_ground_truth() for s in synthetic()]}, 'output_dir': str(tmpdir)}
    with pytest.raises(DataError):
        schedule.run_schedule(schedule.parse_schedule('SF', epochs=1), NetworkConfig('ESNet', 'tiny'), stripped)
    # unsupervised stages never need ground truth
    schedule.run_schedule(schedule.parse_schedule('SF*', epochs=1), NetworkConfig('ESNet', 'tiny'), stripped,
                          quick_options())


@pytest.mark.slow
@pytest.mark.parametrize('order', [c['text'] for c in cases['valid'][:4]])
def test_dataset_orders_with_synthetic_stand_ins(tmpdir, order):
    sources = {'SF': synthetic(4, 0), 'DS': synthetic(4, 1), 'K': synthetic(4, 2)}
    result = schedule.run_schedule(schedule.parse_schedule(order, epochs=1), NetworkConfig('ESNet', 'tiny'),
                                   {'datasets': sources, 'output_dir': str(tmpdir)}, quick_options())
    expected = sum(len(s.rounds) for s in schedule.parse_schedule(order).stages)
    assert len(result['log']) == expected
    assert np.isfinite(result['log']['loss']).all()
