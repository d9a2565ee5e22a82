'''Experiment configuration.

An INI file with sections [model], [schedule], [data], [loss], [synth] and
[eval]. Every key has a typed default in `DEFAULTS`; values in the file and
``section.key=value`` overrides are coerced to the default's type. Unknown
sections or keys are errors, so a typo never silently falls back to a
default.

List values are comma-separated; the per-round scale weights in
``loss.omega_rounds`` separate rounds with ``;``.
'''
import configparser
import copy
import os

from esnet import losses, network, schedule
from esnet.datasets import IMAGENET_MEAN, IMAGENET_STD, SynthSpec
from esnet.exceptions import ConfigError
from esnet.matching import CameraRig


def _join(values):
    return ','.join(str(v) for v in values)


DEFAULTS = {
    'model': {
        'variant': network.ESNET,
        'size_preset': 'tiny',
        'channel_schedule': '',
        'blocks_per_scale': -1,
        'd_max_base': 40,
        'fmm_offsets': '-2,-1,0,1,2',
        'dtype': 'float32',
    },
    'schedule': {
        'order': 'SYN',
        'epochs': -1,
        'lr': 0.0,
        'unsupervised_epochs': 30,
        'unsupervised_lr': 1e-4,
        'batch_size': 16,
        'steps_per_epoch': 0,
        'adam_beta1': 0.9,
        'adam_beta2': 0.999,
        'adam_eps': 1e-8,
        'sf_epochs': '20,20,20,30',
        'sf_lr': 1e-4,
        'sf_lr_halve_every': 10,
        'ds_epochs': '7,7,7,10',
        'ds_lr': 1e-4,
        'k_epochs': '1200,1200,1200',
        'k_lr': 1e-5,
        'k_lr_decay_epoch': 600,
        'k_lr_decay': 0.1,
        'syn_epochs': '10',
        'syn_lr': 1e-3,
    },
    'data': {
        'datasets': '',
        'val_ratio': 0.9,
        'n_jobs': 1,
        'mean': _join(IMAGENET_MEAN),
        'std': _join(IMAGENET_STD),
        'sf_crop': '384,768',
        'ds_crop': '256,768',
        'k_crop': '256,512',
        'syn_crop': '',
        'crop': '',
    },
    'loss': {
        'lambda1': 5.0,
        'lambda2': 0.1,
        'alpha': 0.85,
        'num_scales': 4,
        'full_resolution': False,
        'mixed_weight': 0.0,
        'omega_rounds': ';'.join(_join(r) for r in losses.DEFAULT_ROUNDS),
    },
    'synth': {
        'count': 4,
        'height': 64,
        'width': 128,
        'style': 'uniform-shift',
        'disparity': 4.0,
        'background_disparity': 2,
        'foreground_disparity': 8,
        'ramp': '2,10',
        'components': 12,
        'focal_length_px': 720.0,
        'baseline_m': 0.54,
    },
    'eval': {
        'max_error': 3.0,
        'epsilon_d': 1e-3,
        'cmap': 'magma',
        'n_jobs': 1,
    },
}

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


def _coerce(section, key, value):
    default = DEFAULTS[section][key]
    text = str(value).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError('{}.{} expects a {} value, got {!r}'.format(section, key, type(default).__name__, text))
    return text


def _set(cfg, section, key, value):
    if section not in DEFAULTS:
        raise ConfigError('unknown config section [{}], expected one of {}'.format(section, sorted(DEFAULTS)))
    if key not in DEFAULTS[section]:
        raise ConfigError('unknown key {!r} in [{}], expected one of {}'.format(key, section,
                                                                             sorted(DEFAULTS[section])))
    cfg[section][key] = _coerce(section, key, value)


def default_config():
    return copy.deepcopy(DEFAULTS)


def apply_overrides(cfg, overrides):
    '''Apply ``section.key=value`` strings in order'''
    for item in overrides or ():
        if '=' not in item:
            raise ConfigError('override {!r} is not of the form section.key=value'.format(item))
        dotted, value = item.split('=', 1)
        if '.' not in dotted:
            raise ConfigError('override key {!r} needs a section, e.g. model.variant'.format(dotted))
        section, key = dotted.strip().split('.', 1)
        _set(cfg, section, key, value)
    return cfg


def load_config(path=None, overrides=()):
    '''Defaults, then ``path`` (if given), then ``overrides``

    Returns:
        dict: section -> key -> typed value
    '''
    cfg = default_config()
    if path:
        if not os.path.isfile(path):
            raise ConfigError('config file not found: {}'.format(path))
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError('cannot parse {}: {}'.format(path, e))
        for section in parser.sections():
            for key, value in parser.items(section):
                _set(cfg, section, key, value)
    return apply_overrides(cfg, overrides)


def dump_config(cfg, path):
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(path, 'w') as f:
        parser.write(f)


def parse_list(text, kind=float, what='list'):
    text = str(text).strip()
    if not text:
        return []
    try:
        return [kind(v.strip()) for v in text.split(',')]
    except ValueError:
        raise ConfigError('malformed {} {!r}'.format(what, text))


def _pair(text, what):
    values = parse_list(text, int, what)
    if not values:
        return None
    if len(values) != 2:
        raise ConfigError('{} needs two integers (height,width), got {!r}'.format(what, text))
    return tuple(values)


def network_config(cfg):
    m = cfg['model']
    return network.NetworkConfig(
        variant=m['variant'],
        size_preset=m['size_preset'],
        channel_schedule=parse_list(m['channel_schedule'], int, 'model.channel_schedule') or None,
        blocks_per_scale=None if m['blocks_per_scale'] < 0 else m['blocks_per_scale'],
        d_max_base=m['d_max_base'],
        fmm_offsets=parse_list(m['fmm_offsets'], int, 'model.fmm_offsets'),
        dtype=m['dtype'])


def omega_rounds(cfg):
    rounds = [parse_list(r, float, 'loss.omega_rounds') for r in cfg['loss']['omega_rounds'].split(';') if r.strip()]
    if not rounds:
        raise ConfigError('loss.omega_rounds needs at least one round')
    return rounds


def supervised_config(cfg):
    return losses.SupervisedLossConfig(rounds=omega_rounds(cfg))


def unsupervised_config(cfg):
    l = cfg['loss']
    return losses.UnsupLossConfig(l['lambda1'], l['lambda2'], l['alpha'], l['num_scales'], l['full_resolution'])


def _omegas_for(rounds, n):
    '''The last ``n`` configured rounds (KITTI's three skip the coarsest one)'''
    if len(rounds) >= n:
        return rounds[len(rounds) - n:]
    return rounds + [rounds[-1]] * (n - len(rounds))


def dataset_presets(cfg):
    '''Per-dataset protocols built from the [schedule] and [data] constants'''
    s, d = cfg['schedule'], cfg['data']
    rounds = omega_rounds(cfg)

    def preset(prefix, policy):
        epochs = parse_list(s[prefix + '_epochs'], int, 'schedule.{}_epochs'.format(prefix))
        if not epochs:
            raise ConfigError('schedule.{}_epochs needs at least one round'.format(prefix))
        return schedule.DatasetPreset(_pair(d[prefix + '_crop'], 'data.{}_crop'.format(prefix)), epochs, policy,
                                      _omegas_for(rounds, len(epochs)))

    return {
        'SF': preset('sf', schedule.LRPolicy(s['sf_lr'], gamma=0.5, every=s['sf_lr_halve_every'])),
        'DS': preset('ds', schedule.LRPolicy(s['ds_lr'])),
        'K': preset('k', schedule.LRPolicy(s['k_lr'], gamma=s['k_lr_decay'], milestones=(s['k_lr_decay_epoch'],))),
        'SYN': preset('syn', schedule.LRPolicy(s['syn_lr'])),
    }


def build_schedule(cfg, order=None):
    s = cfg['schedule']
    dsched = schedule.parse_schedule(order or s['order'], presets=dataset_presets(cfg),
                                     epochs=None if s['epochs'] < 0 else s['epochs'],
                                     lr=s['lr'] if s['lr'] > 0 else None,
                                     unsupervised_epochs=s['unsupervised_epochs'])
    for stage in dsched.stages:
        if stage.mode == schedule.UNSUPERVISED and s['lr'] <= 0:
            for rnd in stage.rounds:
                rnd.lr_policy = schedule.LRPolicy(s['unsupervised_lr'])
    return dsched


def train_options(cfg, seed):
    s, d = cfg['schedule'], cfg['data']
    return schedule.TrainOptions(
        batch_size=s['batch_size'], steps_per_epoch=s['steps_per_epoch'] or None, seed=seed,
        crop=_pair(d['crop'], 'data.crop'), val_ratio=d['val_ratio'], unsup=unsupervised_config(cfg),
        mixed_weight=cfg['loss']['mixed_weight'], n_jobs=d['n_jobs'],
        betas=(s['adam_beta1'], s['adam_beta2']), eps=s['adam_eps'],
        mean=parse_list(d['mean'], float, 'data.mean'), std=parse_list(d['std'], float, 'data.std'))


def dataset_sources(cfg):
    '''``data.datasets`` as {id: directory}; entries are ``ID=path`` pairs'''
    sources = {}
    for item in cfg['data']['datasets'].split(','):
        item = item.strip()
        if not item:
            continue
        if '=' not in item:
            raise ConfigError('data.datasets entry {!r} is not of the form ID=path'.format(item))
        key, path = item.split('=', 1)
        sources[key.strip()] = path.strip()
    return sources


def synth_spec(cfg):
    s = cfg['synth']
    ramp = parse_list(s['ramp'], float, 'synth.ramp')
    if len(ramp) != 2:
        raise ConfigError('synth.ramp needs two values (top,bottom)')
    return SynthSpec(count=s['count'], height=s['height'], width=s['width'], style=s['style'],
                     disparity=s['disparity'], background_disparity=s['background_disparity'],
                     foreground_disparity=s['foreground_disparity'], ramp=ramp, components=s['components'],
                     rig=CameraRig(s['focal_length_px'], s['baseline_m']))
