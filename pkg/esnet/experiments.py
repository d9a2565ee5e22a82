'''Desk-scale experiments on synthetic data.

Each experiment is a plain function returning a dict (or a DataFrame for the
schedule comparison) so the scripts in ``experiments/`` and the slow tests
share one implementation. Seeds fully determine every run.
'''
import os

import numpy as np
import pandas as pd

from esnet import datasets, losses, matching, metrics, schedule, utils
from esnet.exceptions import NumericalError
from esnet.network import ESNET, ESNET_M, NetworkConfig, StereoNetwork
from esnet.optim import Adam

OVERFIT_THRESHOLD = 1.0
EVAL_EVERY = 50
LOSS_WINDOW = 10
SCHEDULE_ORDERS = ('SF+K', 'DS+K', 'DS+SF+K', 'SF+DS+K')

# full-resolution weights, so the scale-0 EPE is what the loss drives down
OVERFIT_OMEGA = losses.DEFAULT_ROUNDS[-1]


def synthetic_samples(seed, count=4, height=64, width=128, style='uniform-shift', **kwargs):
    spec = datasets.SynthSpec(count=count, height=height, width=width, style=style, **kwargs)
    return datasets.synth_generate(spec, utils.make_rng(seed))


class Trainer(object):
    '''Fixed-step training on a small in-memory sample list

    Batches cycle through reshuffled passes over ``samples``; no crops, no
    validation split.
    '''
    def __init__(self, network, samples, lr=1e-3, batch_size=2, seed=None):
        self.network = network
        self.samples = list(samples)
        self.batch_size = batch_size
        self.optimizer = Adam(network.params, lr=lr)
        self.rng = utils.make_rng(seed)
        self._queue = []

    def _next_ids(self):
        if len(self._queue) < self.batch_size:
            self._queue.extend(int(i) for i in self.rng.permutation(len(self.samples)))
        ids, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return ids

    def step(self, mode, sup_cfg=None, unsup_cfg=None):
        batch = datasets.collate([self.samples[i] for i in self._next_ids()])
        unsup_cfg = unsup_cfg or losses.UnsupLossConfig()
        value = schedule.train_step(self.network, batch, mode, self.optimizer, sup_cfg, unsup_cfg)
        if not np.isfinite(value):
            raise NumericalError('training loss became {} after {} steps'.format(value,
                                                                                  self.optimizer.step_count))
        return value

    def run(self, steps, mode, sup_cfg=None, unsup_cfg=None):
        return [self.step(mode, sup_cfg, unsup_cfg) for _ in range(steps)]


def training_epe(network, samples):
    '''Full-resolution EPE over ``samples`` (with ground truth)'''
    preds, gts, valids = [], [], []
    for s in samples:
        batch = datasets.collate([s])
        pyramid, _ = schedule.predict(network, batch['left'], batch['right'])
        preds.append(pyramid[0].data)
        gts.append(batch['gt'].data)
        valids.append(batch['valid'].data)
    return metrics.evaluate_arrays(preds, gts, valids).epe


def overfit(variant=ESNET, steps=1000, seed=0, count=4, lr=1e-3, batch_size=2, threshold=OVERFIT_THRESHOLD,
            size_preset='tiny', eval_every=EVAL_EVERY):
    '''Supervised training on a handful of pairs until the training EPE drops below ``threshold``

    Returns:
        dict: variant, seed, steps taken, final training EPE, whether the
            threshold was reached, and the per-step losses
    '''
    samples = synthetic_samples(seed, count)
    network = StereoNetwork(NetworkConfig(variant, size_preset), seed=seed)
    trainer = Trainer(network, samples, lr, batch_size, seed=seed + 1)
    sup_cfg = losses.SupervisedLossConfig(omega=OVERFIT_OMEGA)
    history = []
    epe = training_epe(network, samples)
    taken = 0
    while taken < steps and epe >= threshold:
        chunk = min(eval_every, steps - taken)
        history.extend(trainer.run(chunk, schedule.SUPERVISED, sup_cfg))
        taken += chunk
        epe = training_epe(network, samples)
        if utils.PLEVEL >= 1: utils.vprint(1, 'overfit {} seed {} step {}: EPE {:.3f}', variant, seed, taken, epe)
    return {'variant': variant, 'seed': seed, 'steps': taken, 'epe': epe, 'reached': epe < threshold,
            'losses': history}


def unsupervised_objective(network, samples, cfg):
    batch = datasets.collate(samples)
    pyramid, _ = schedule.predict(network, batch['left'], batch['right'])
    return losses.unsupervised_total(pyramid, batch['left_raw'], batch['right_raw'], cfg).item()


def unsupervised_descent(steps=200, seed=0, count=4, lr=1e-3, batch_size=2, variant=ESNET):
    '''Photometric pretraining; reports the objective over all samples before and after'''
    samples = [s.strip_ground_truth() for s in synthetic_samples(seed, count)]
    network = StereoNetwork(NetworkConfig(variant, 'tiny'), seed=seed)
    cfg = losses.UnsupLossConfig()
    initial = unsupervised_objective(network, samples, cfg)
    history = Trainer(network, samples, lr, batch_size, seed=seed + 1).run(steps, schedule.UNSUPERVISED,
                                                                          unsup_cfg=cfg)
    final = unsupervised_objective(network, samples, cfg)
    return {'seed': seed, 'initial': initial, 'final': final, 'ratio': final / initial,
            'finite': bool(np.all(np.isfinite(history))), 'losses': history}


def _smoothed(values, window=LOSS_WINDOW):
    return pd.Series(values).rolling(window, min_periods=1).mean().to_numpy()


def pretraining_benefit(seed, pretrain_steps=200, train_steps=300, lr=1e-3, batch_size=2, count=4):
    '''Steps a pretrained initialization needs to match the random-init loss

    The target L* is the smoothed supervised loss of a randomly initialized
    network after ``train_steps``. Both runs see the same batches.

    Returns:
        dict: seed, target loss, steps for the pretrained run to reach it
            (None if it never does), and whether it did so within ``train_steps``
    '''
    samples = synthetic_samples(seed, count)
    config = NetworkConfig(ESNET, 'tiny')
    sup_cfg = losses.SupervisedLossConfig(omega=OVERFIT_OMEGA)

    scratch = StereoNetwork(config, seed=seed)
    baseline = _smoothed(Trainer(scratch, samples, lr, batch_size, seed=seed + 1).run(
        train_steps, schedule.SUPERVISED, sup_cfg))
    target = float(baseline[-1])

    pretrained = StereoNetwork(config, seed=seed)
    stripped = [s.strip_ground_truth() for s in samples]
    Trainer(pretrained, stripped, lr, batch_size, seed=seed + 2).run(pretrain_steps, schedule.UNSUPERVISED)
    curve = _smoothed(Trainer(pretrained, samples, lr, batch_size, seed=seed + 1).run(
        train_steps, schedule.SUPERVISED, sup_cfg))
    hits = np.nonzero(curve <= target)[0]
    steps = int(hits[0]) + 1 if hits.size else None
    if utils.PLEVEL >= 1: utils.vprint(1, 'pretraining seed {}: L* {:.4f}, reached after {}', seed, target, steps)
    return {'seed': seed, 'target_loss': target, 'steps_to_target': steps,
            'reached': steps is not None and steps <= train_steps}


def schedule_orders(orders=SCHEDULE_ORDERS, seed=0, epochs=1, output_dir='.', variant=ESNET):
    '''Run every dataset order with synthetic stand-ins; one log row per epoch

    The stand-ins differ in style so the stages are distinguishable: SF is
    uniform shift, DS a smooth ramp and K the two-layer occlusion scene.

    Returns:
        pandas.DataFrame: the concatenated training logs with an ``order`` column
    '''
    sources = {
        'SF': synthetic_samples(seed, 4, style='uniform-shift'),
        'DS': synthetic_samples(seed + 1, 4, style='smooth-ramp'),
        'K': synthetic_samples(seed + 2, 4, style='two-layer-occlusion'),
    }
    options = schedule.TrainOptions(batch_size=2, steps_per_epoch=1, seed=seed, val_ratio=0.5)
    frames = []
    for order in orders:
        out = os.path.join(output_dir, order.replace('+', '_').replace('*', 'u'))
        result = schedule.run_schedule(schedule.parse_schedule(order, epochs=epochs), NetworkConfig(variant, 'tiny'),
                                       {'datasets': sources, 'output_dir': out}, options)
        log = result['log']
        log.insert(0, 'order', order)
        frames.append(log)
    return pd.concat(frames, ignore_index=True)


def _band_at_scale(band, scale_s):
    f = 2 ** scale_s
    y0, y1, x0, x1 = band
    return y0 // f, -(-y1 // f), x0 // f, -(-x1 // f)


def occlusion_diagnostic(network=None, seed=0, count=2, train_steps=0, lr=1e-3):
    '''Mean ESNet-M mask value inside vs outside the known occluded band

    Args:
        network (StereoNetwork, optional): an ESNetM network; a fresh one
            (optionally trained ``train_steps`` on the same scene type) otherwise

    Returns:
        pandas.DataFrame: one row per sample and mask scale
    '''
    samples = synthetic_samples(seed, count, style='two-layer-occlusion')
    if network is None:
        network = StereoNetwork(NetworkConfig(ESNET_M, 'tiny'), seed=seed)
        if train_steps:
            Trainer(network, samples, lr, seed=seed + 1).run(train_steps, schedule.SUPERVISED,
                                                             losses.SupervisedLossConfig(omega=OVERFIT_OMEGA))
    rows = []
    for index, sample in enumerate(samples):
        batch = datasets.collate([sample])
        _, masks = schedule.predict(network, batch['left'], batch['right'])
        for mask in masks:
            s = int(round(np.log2(sample.shape[1] / mask.shape[-1])))
            summary = matching.occlusion_summary(mask, _band_at_scale(sample.metadata['occluded_band'], s))
            rows.append(dict(sample=index, scale=s, **summary))
    return pd.DataFrame(rows, columns=['sample', 'scale', 'occluded_mean', 'visible_mean'])
