import os

import numpy as np
import pytest

from esnet import cli, formats
from esnet.exceptions import (ConfigError, DataError, ESNetError, EvaluationError, GraphError,
                              GroundTruthAccessError, NumericalError, ShapeError)

FAST = ['--set', 'synth.count=2', '--set', 'schedule.epochs=0']


@pytest.mark.parametrize('error,code', [(ConfigError('x'), 2), (ShapeError('x'), 2), (DataError('x'), 3),
                                        (GroundTruthAccessError('x'), 3), (EvaluationError('x'), 3),
                                        (NumericalError('x'), 4), (GraphError('x'), 1), (ESNetError('x'), 1)])
def test_exit_codes(error, code):
    assert cli.exit_code(error) == code


def test_command_is_required():
    with pytest.raises(SystemExit):
        cli.dispatch([])


def test_synth_then_eval_identity(tmpdir, capsys):
    data = str(tmpdir.join('synth'))
    assert cli.dispatch(['synth', '--output-dir', data, '--set', 'synth.count=2']) == 0
    assert os.path.isfile(os.path.join(data, 'metadata.json'))
    gt_dir = os.path.join(data, 'disparity')
    out = str(tmpdir.join('report'))
    assert cli.dispatch(['eval', gt_dir, gt_dir, '--output-dir', out]) == 0
    printed = capsys.readouterr().out
    assert 'EPE: 0.0000 px' in printed
    assert os.path.isfile(os.path.join(out, cli.REPORT_FILE))


def test_config_errors_exit_2(tmpdir, capsys):
    assert cli.dispatch(['inspect', '--set', 'model.variant=ResNet']) == 2
    assert cli.dispatch(['inspect', '--set', 'nosuch.key=1']) == 2
    assert cli.dispatch(['inspect', '--config', str(tmpdir.join('missing.ini'))]) == 2
    assert cli.dispatch(['inspect', '--input-size', '64', '100']) == 2
    assert 'ConfigError' in capsys.readouterr().err


def test_data_errors_exit_3(tmpdir):
    assert cli.dispatch(['eval', str(tmpdir.join('a')), str(tmpdir.join('b'))]) == 3
    out = str(tmpdir.join('train'))
    assert cli.dispatch(['train', '--order', 'SF', '--output-dir', out] + FAST) == 3
    assert cli.dispatch(['infer', '--checkpoint', str(tmpdir.join('none.esnet')), '--dataset',
                         str(tmpdir.join('nowhere'))]) == 3


def test_inspect(capsys):
    assert cli.dispatch(['inspect', '--set', 'model.variant=ESNetM', '--input-size', '64', '128']) == 0
    printed = capsys.readouterr().out
    assert 'parameters: ' in printed
    assert 'd0 1x1x64x128' in printed and 'd6 1x1x1x2' in printed
    assert sum(line.startswith('theta ') for line in printed.splitlines()) == 3


def test_train_then_infer(tmpdir):
    out = str(tmpdir.join('run'))
    assert cli.dispatch(['train', '--output-dir', out] + FAST) == 0
    ckpt = os.path.join(out, 'checkpoint.esnet')
    assert os.path.isfile(ckpt)
    assert os.path.isfile(os.path.join(out, cli.CONFIG_DUMP))

    data = str(tmpdir.join('synth'))
    assert cli.dispatch(['synth', '--output-dir', data, '--set', 'synth.count=1']) == 0
    pred = str(tmpdir.join('pred'))
    assert cli.dispatch(['infer', '--checkpoint', ckpt, '--dataset', data, '--output-dir', pred]) == 0
    assert os.path.isfile(os.path.join(pred, '000000.pfm'))
    assert os.path.isfile(os.path.join(pred, cli.ARTIFACT_DIR, '000000_error.png'))
    assert sorted(os.listdir(pred)) == ['000000.pfm', cli.ARTIFACT_DIR]
    assert formats.read_pfm(os.path.join(pred, '000000.pfm')).shape == (1, 1, 64, 128)

    # the exported PNGs must not be mistaken for predictions
    report = str(tmpdir.join('report'))
    assert cli.dispatch(['eval', pred, os.path.join(data, 'disparity'), '--output-dir', report]) == 0
    assert os.path.isfile(os.path.join(report, cli.REPORT_FILE))

    single = str(tmpdir.join('single'))
    left, right = os.path.join(data, 'left', '000000.png'), os.path.join(data, 'right', '000000.png')
    assert cli.dispatch(['infer', '--checkpoint', ckpt, '--left', left, '--right', right, '--no-export',
                         '--output-dir', single]) == 0
    assert os.listdir(single) == ['000000.pfm']
    np.testing.assert_array_equal(formats.read_pfm(os.path.join(single, '000000.pfm')).data,
                                  formats.read_pfm(os.path.join(pred, '000000.pfm')).data)

    assert cli.dispatch(['infer', '--checkpoint', ckpt, '--left', left]) == 2
    assert cli.dispatch(['infer', '--checkpoint', ckpt, '--dataset', data, '--output-dir', pred,
                         '--set', 'model.variant=ESNetM']) == 3


def test_pretrain_then_train_from_it(tmpdir):
    pre = str(tmpdir.join('pre'))
    assert cli.dispatch(['pretrain', '--output-dir', pre] + FAST) == 0
    post = str(tmpdir.join('post'))
    assert cli.dispatch(['train', '--output-dir', post, '--init', os.path.join(pre, 'checkpoint.esnet')] + FAST) == 0


def test_gradcheck_without_network(capsys):
    assert cli.dispatch(['gradcheck', '--skip-network', '--max-coords', '4']) == 0
    printed = capsys.readouterr().out
    assert 'correlate' in printed and 'FAIL' not in printed
