'''Dataset-scheduled training.

A schedule string such as ``SF*+SF+DS+K`` lists datasets in training order;
``*`` marks an unsupervised (photometric) pretraining stage. Every stage runs
the multi-round protocol of its dataset preset: each round restarts the
learning-rate policy and the Adam moments with its own scale weights, and
parameters carry over from round to round and stage to stage.
'''
import os

import numpy as np
import pandas as pd

from esnet import checkpoint, datasets, losses, metrics, utils
from esnet.exceptions import ConfigError, DataError
from esnet.network import StereoNetwork
from esnet.datasets import IMAGENET_MEAN, IMAGENET_STD
from esnet.optim import BETA1, BETA2, EPS, Adam
from esnet.tensor import backward, no_grad, recording

SUPERVISED = 'supervised'
UNSUPERVISED = 'unsupervised_pretrain'
LOG_COLUMNS = ['stage', 'round', 'epoch', 'lr', 'loss', 'val_epe', 'val_d1']
LOG_FILE = 'train_log.csv'
CHECKPOINT_FILE = 'checkpoint.esnet'
UNSUPERVISED_EPOCHS = 30


class LRPolicy(object):
    '''Learning rate as a function of the epoch inside a round

    Args:
        base_lr (float): rate at epoch 0
        gamma (float): multiplicative decay
        every (int, optional): decay every ``every`` epochs
        milestones (tuple of int): decay at each of these epochs
    '''
    def __init__(self, base_lr, gamma=1.0, every=None, milestones=()):
        if base_lr <= 0:
            raise ConfigError('learning rate must be positive, got {}'.format(base_lr))
        self.base_lr = float(base_lr)
        self.gamma = float(gamma)
        self.every = int(every) if every else None
        self.milestones = tuple(int(m) for m in milestones)

    def lr(self, epoch):
        decays = 0
        if self.every:
            decays += epoch // self.every
        decays += sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.gamma ** decays

    def with_base(self, base_lr):
        return LRPolicy(base_lr, self.gamma, self.every, self.milestones)


class Round(object):
    def __init__(self, epochs, lr_policy, omega=None):
        if epochs < 0:
            raise ConfigError('round epochs must be >= 0, got {}'.format(epochs))
        self.epochs = int(epochs)
        self.lr_policy = lr_policy
        self.omega = tuple(omega) if omega is not None else None


class Stage(object):
    '''One dataset in the schedule

    Attributes:
        dataset_id (str): key into the dataset table
        mode (str): `SUPERVISED` or `UNSUPERVISED`
        rounds (list of Round): the multi-round protocol
        crop (tuple, optional): (height, width) random crop, None for full images
    '''
    def __init__(self, dataset_id, mode, rounds, crop=None):
        if mode not in (SUPERVISED, UNSUPERVISED):
            raise ConfigError('unknown stage mode {!r}'.format(mode))
        self.dataset_id = dataset_id
        self.mode = mode
        self.rounds = list(rounds)
        self.crop = tuple(crop) if crop else None

    @property
    def label(self):
        return '{}:{}'.format(self.dataset_id, 'unsupervised' if self.mode == UNSUPERVISED else 'supervised')

    def __repr__(self):
        return 'Stage({}, {} rounds)'.format(self.label, len(self.rounds))


class DatasetSchedule(object):
    def __init__(self, stages, text=None):
        if not stages:
            raise ConfigError('a schedule needs at least one stage')
        self.stages = list(stages)
        self.text = text

    @property
    def labels(self):
        return [s.label for s in self.stages]

    def dataset_ids(self):
        seen = []
        for s in self.stages:
            if s.dataset_id not in seen:
                seen.append(s.dataset_id)
        return seen


class DatasetPreset(object):
    '''Training protocol of one dataset: crop size and supervised rounds'''
    def __init__(self, crop, epochs, lr_policy, omegas):
        self.crop = crop
        self.rounds = [Round(e, lr_policy, w) for e, w in zip(epochs, omegas)]


DATASET_PRESETS = {
    'SF': DatasetPreset((384, 768), (20, 20, 20, 30), LRPolicy(1e-4, gamma=0.5, every=10), losses.DEFAULT_ROUNDS),
    'DS': DatasetPreset((256, 768), (7, 7, 7, 10), LRPolicy(1e-4), losses.DEFAULT_ROUNDS),
    'K': DatasetPreset((256, 512), (1200, 1200, 1200), LRPolicy(1e-5, gamma=0.1, milestones=(600,)),
                       losses.DEFAULT_ROUNDS[1:]),
    'SYN': DatasetPreset(None, (10,), LRPolicy(1e-3), losses.DEFAULT_ROUNDS[-1:]),
}
UNSUPERVISED_POLICY = LRPolicy(1e-4)


def parse_schedule(text, presets=None, epochs=None, lr=None, unsupervised_epochs=UNSUPERVISED_EPOCHS):
    '''Parse ``A*+B+C`` into a `DatasetSchedule`

    Args:
        text (str): ``+``-separated dataset ids, ``*`` suffix = unsupervised
        presets (dict, optional): id -> DatasetPreset, defaults to `DATASET_PRESETS`
        epochs (int, optional): replace every round's epoch count
        lr (float, optional): replace every round's base learning rate
        unsupervised_epochs (int): length of the single unsupervised round
    '''
    presets = DATASET_PRESETS if presets is None else presets
    tokens = [t.strip() for t in text.split('+')]
    if not text.strip() or any(not t for t in tokens):
        raise ConfigError('malformed schedule string {!r}'.format(text))
    stages = []
    for token in tokens:
        unsupervised = token.endswith('*')
        dataset_id = token.rstrip('*').strip()
        if dataset_id not in presets:
            raise ConfigError('unknown dataset {!r} in schedule {!r}, known: {}'.format(
                dataset_id, text, sorted(presets)))
        preset = presets[dataset_id]
        if unsupervised:
            policy = UNSUPERVISED_POLICY if lr is None else UNSUPERVISED_POLICY.with_base(lr)
            rounds = [Round(unsupervised_epochs if epochs is None else epochs, policy)]
            stages.append(Stage(dataset_id, UNSUPERVISED, rounds, preset.crop))
        else:
            rounds = [Round(r.epochs if epochs is None else epochs,
                            r.lr_policy if lr is None else r.lr_policy.with_base(lr), r.omega)
                      for r in preset.rounds]
            stages.append(Stage(dataset_id, SUPERVISED, rounds, preset.crop))
    return DatasetSchedule(stages, text)


class TrainOptions(object):
    '''Harness knobs that are not part of the protocol

    Args:
        batch_size (int): samples per step
        steps_per_epoch (int, optional): cap on batches per epoch
        seed (int): drives initialization, shuffling and crops
        crop (tuple, optional): override every stage's crop
        val_ratio (float): train share of each dataset
        unsup (UnsupLossConfig, optional): pretraining loss weights
        mixed_weight (float): unsupervised share added to supervised stages
        n_jobs (int): joblib workers for dataset decoding
        betas (tuple): Adam moment decays
        eps (float): Adam denominator guard
        mean (tuple): per-channel normalization mean
        std (tuple): per-channel normalization std
    '''
    def __init__(self, batch_size=16, steps_per_epoch=None, seed=utils.DEFAULT_SEED, crop=None, val_ratio=0.9,
                 unsup=None, mixed_weight=0.0, n_jobs=1, betas=(BETA1, BETA2), eps=EPS, mean=IMAGENET_MEAN,
                 std=IMAGENET_STD):
        if batch_size < 1:
            raise ConfigError('batch_size must be >= 1')
        self.batch_size = int(batch_size)
        self.steps_per_epoch = int(steps_per_epoch) if steps_per_epoch else None
        self.seed = seed
        self.crop = tuple(crop) if crop else None
        self.val_ratio = float(val_ratio)
        self.unsup = unsup or losses.UnsupLossConfig()
        self.mixed_weight = float(mixed_weight)
        self.n_jobs = int(n_jobs)
        self.betas = tuple(float(b) for b in betas)
        self.eps = float(eps)
        self.mean = tuple(mean)
        self.std = tuple(std)


def _resolve(dataset_id, source, n_jobs):
    if isinstance(source, (list, tuple)):
        if not source:
            raise DataError('dataset {} is empty'.format(dataset_id))
        return list(source)
    if not source or not os.path.isdir(source):
        raise DataError('dataset {} not found at {!r}'.format(dataset_id, source))
    return datasets.load_dataset(source, with_ground_truth=True, n_jobs=n_jobs)


def resolve_datasets(schedule, sources, n_jobs=1):
    '''Load every dataset of ``schedule`` up front; any missing one aborts'''
    missing = [d for d in schedule.dataset_ids() if d not in sources]
    if missing:
        raise DataError('no data configured for dataset(s) {}'.format(', '.join(missing)))
    return {d: _resolve(d, sources[d], n_jobs) for d in schedule.dataset_ids()}


def _effective_crop(crop, image_shape):
    '''Clamp a crop to the image, keeping both sides multiples of 64'''
    h, w = image_shape
    if crop is None:
        crop = (h, w)
    ch = min(crop[0], h) // 64 * 64
    cw = min(crop[1], w) // 64 * 64
    utils.check_divisible(ch or 1, cw or 1, 64, what='training crop')
    return ch, cw


def train_step(network, batch, mode, optimizer, sup_cfg=None, unsup_cfg=None, mixed_weight=0.0):
    '''One forward/backward/Adam update; returns the loss value'''
    optimizer.zero_grad()
    left = network.as_input(batch['left'])
    right = network.as_input(batch['right'])
    with recording():
        pyramid, _ = network(left, right)
        if mode == UNSUPERVISED:
            loss = losses.unsupervised_total(pyramid, batch['left_raw'], batch['right_raw'], unsup_cfg)
        elif mixed_weight > 0:
            loss = losses.mixed_total(pyramid, batch['gt'], batch['valid'], batch['left_raw'], batch['right_raw'],
                                      sup_cfg, unsup_cfg, mixed_weight)
        else:
            loss = losses.supervised_total(pyramid, batch['gt'], batch['valid'], sup_cfg)
        value = loss.item()
        backward(loss)
    optimizer.step()
    return value


def predict(network, left, right):
    '''Full-resolution disparity for already-normalized inputs, no graph'''
    with no_grad():
        pyramid, masks = network(network.as_input(left), network.as_input(right))
    return pyramid, masks


def validate(network, samples, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    '''(EPE, D1) over ``samples`` at full resolution, NaN when there is nothing to score'''
    scored = [s for s in samples if s.has_ground_truth]
    if not scored:
        return float('nan'), float('nan')
    preds, gts, valids = [], [], []
    for s in scored:
        batch = datasets.collate([s], mean=mean, std=std)
        pyramid, _ = predict(network, batch['left'], batch['right'])
        preds.append(pyramid[0].data)
        gts.append(batch['gt'].data)
        valids.append(batch['valid'].data)
    report = metrics.evaluate_arrays(preds, gts, valids)
    return report.epe, report.d1_all


def _batches(order, batch_size, limit):
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return batches[:limit] if limit else batches


def _write_log(rows, path):
    pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(path, index=False)


def run_schedule(schedule, model_config, io_paths, options=None, params=None):
    '''Train through every stage of ``schedule``

    Args:
        schedule (DatasetSchedule): stages in order
        model_config (NetworkConfig): architecture
        io_paths (dict): 'datasets' maps dataset ids to a directory or a list
            of StereoSample; 'output_dir' receives the log and checkpoints
        options (TrainOptions, optional): harness knobs
        params (dict, optional): start from these parameters instead of a
            fresh initialization

    Returns:
        dict: 'params', 'log' (pandas.DataFrame), 'checkpoint' and 'log_path'
    '''
    options = options or TrainOptions()
    out_dir = io_paths.get('output_dir') or '.'
    data = resolve_datasets(schedule, io_paths.get('datasets', {}), options.n_jobs)
    splits = {d: datasets.split_samples(samples, options.val_ratio) for d, samples in data.items()}
    crops = {}
    for stage in schedule.stages:
        crops[stage.label] = _effective_crop(options.crop or stage.crop, data[stage.dataset_id][0].shape)
        if stage.mode == SUPERVISED and not all(s.has_ground_truth for s in splits[stage.dataset_id][0]):
            raise DataError('supervised stage {} needs ground truth for every training sample'.format(stage.label))

    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    log_path = os.path.join(out_dir, LOG_FILE)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_FILE)

    rng = utils.make_rng(options.seed)
    network = StereoNetwork(model_config, params=params, seed=utils.child_seed(rng))
    rows = []
    for stage_index, stage in enumerate(schedule.stages):
        train, val = splits[stage.dataset_id]
        if stage.mode == UNSUPERVISED:
            train = [s.strip_ground_truth() for s in train]
            val = []
        crop_h, crop_w = crops[stage.label]
        stage_rng = utils.make_rng(utils.child_seed(rng))
        if utils.PLEVEL >= 1:
            utils.vprint(1, 'stage {} ({}): {} train / {} val samples, crop {}x{}', stage_index, stage.label,
                         len(train), len(val), crop_h, crop_w)

        for round_index, rnd in enumerate(stage.rounds):
            sup_cfg = losses.SupervisedLossConfig(omega=rnd.omega) if rnd.omega is not None else None
            optimizer = Adam(network.params, lr=rnd.lr_policy.lr(0), beta1=options.betas[0], beta2=options.betas[1],
                             eps=options.eps)
            for epoch in range(rnd.epochs):
                optimizer.lr = rnd.lr_policy.lr(epoch)
                order = list(stage_rng.permutation(len(train)))
                epoch_losses = []
                for batch_ids in _batches(order, options.batch_size, options.steps_per_epoch):
                    cropped = [datasets.random_crop(train[i], crop_h, crop_w, stage_rng) for i in batch_ids]
                    batch = datasets.collate(cropped, mean=options.mean, std=options.std)
                    epoch_losses.append(train_step(network, batch, stage.mode, optimizer, sup_cfg, options.unsup,
                                                   options.mixed_weight))
                val_epe, val_d1 = validate(network, val, options.mean, options.std)
                loss = float(np.mean(epoch_losses)) if epoch_losses else float('nan')
                rows.append([stage.label, round_index, epoch, optimizer.lr, loss, val_epe, val_d1])
                _write_log(rows, log_path)
                if utils.PLEVEL >= 1:
                    utils.vprint(1, '{} round {} epoch {} lr {:.2e} loss {:.4f} val_epe {:.3f}', stage.label,
                                 round_index, epoch, optimizer.lr, loss, val_epe)
            checkpoint.save_checkpoint(ckpt_path, checkpoint.params_to_arrays(network.params))

    _write_log(rows, log_path)
    return {'params': network.params, 'log': pd.DataFrame(rows, columns=LOG_COLUMNS),
            'checkpoint': ckpt_path, 'log_path': log_path}


def lr_trace(rnd):
    '''Learning rate of every epoch in a round'''
    return [rnd.lr_policy.lr(e) for e in range(rnd.epochs)]
