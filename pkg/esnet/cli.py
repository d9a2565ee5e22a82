'''Command-line entry point: ``esnet <command> [options]``

Commands:

    synth      write a synthetic dataset directory ([synth] section)
    pretrain   unsupervised photometric pretraining on one dataset
    train      run the dataset schedule ([schedule] order)
    infer      predict disparity for an image pair or a dataset directory
    eval       score a directory of predictions against ground truth
    gradcheck  finite-difference check of every differentiable operation
    inspect    parameter count and layer shapes of the configured model

Every command accepts ``--config``, ``--set section.key=value`` (repeatable),
``--seed``, ``--output-dir`` and ``-v``. Exit codes: 0 success, 1 other
failure, 2 configuration error, 3 data error, 4 numerical failure.
'''
import argparse
import logging
import os
import sys

from esnet import checkpoint, config, datasets, formats, gradcheck, metrics, schedule, utils
from esnet.exceptions import (ConfigError, DataError, ESNetError, EvaluationError, NumericalError,
                              ShapeError)
from esnet.network import StereoNetwork
from esnet.tensor import Tensor

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

# first match wins
EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (ShapeError, EXIT_CONFIG),
    (DataError, EXIT_DATA),
    (EvaluationError, EXIT_DATA),
    (NumericalError, EXIT_NUMERICAL),
    (ESNetError, EXIT_FAILURE),
)

SYNTH_ID = 'SYN'
CONFIG_DUMP = 'config.ini'
REPORT_FILE = 'eval_report.csv'
# infer subdirectory for PNG exports; eval only indexes the top level
ARTIFACT_DIR = 'artifacts'


def exit_code(error):
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return EXIT_FAILURE


def _common(parser):
    parser.add_argument('--config', metavar='PATH', default=None,
                        help='INI experiment config; built-in defaults when omitted')
    parser.add_argument('--set', dest='overrides', metavar='SECTION.KEY=VALUE', action='append', default=[],
                        help='override one config value after the file is read (repeatable)')
    parser.add_argument('--seed', type=int, default=utils.DEFAULT_SEED,
                        help='seed for initialization, synthesis, shuffling and crops (default: %(default)s)')
    parser.add_argument('--output-dir', metavar='DIR', default='.',
                        help='directory for every file the command writes (default: %(default)s)')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='progress logging; repeat for more detail')


def build_parser():
    parser = argparse.ArgumentParser(prog='esnet', description='Efficient stereo matching networks on numpy.')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('synth', help='write a synthetic stereo dataset')
    _common(p)

    p = sub.add_parser('pretrain', help='unsupervised pretraining on a single dataset')
    _common(p)
    p.add_argument('--dataset', default=SYNTH_ID,
                   help='dataset id from data.datasets; SYN is generated from [synth] (default: %(default)s)')

    p = sub.add_parser('train', help='train through the dataset schedule')
    _common(p)
    p.add_argument('--order', default=None, help='schedule string such as "SF*+SF+DS+K" (default: schedule.order)')
    p.add_argument('--init', metavar='CHECKPOINT', default=None,
                   help='start from these parameters (e.g. a pretrain checkpoint)')

    p = sub.add_parser('infer', help='predict disparity and export diagnostics')
    _common(p)
    p.add_argument('--checkpoint', required=True, help='trained parameters')
    p.add_argument('--left', default=None, help='left image (.png/.ppm)')
    p.add_argument('--right', default=None, help='right image (.png/.ppm)')
    p.add_argument('--gt', default=None, help='ground truth (.pfm or KITTI .png) for the error map')
    p.add_argument('--dataset', default=None, help='dataset directory; predicts every sample instead of one pair')
    p.add_argument('--no-export', action='store_true', help='write only the PFM disparity maps')

    p = sub.add_parser('eval', help='EPE / D1 report over (prediction, ground truth) pairs')
    _common(p)
    p.add_argument('pred_dir', help='directory of predicted .pfm/.png disparities')
    p.add_argument('gt_dir', help='directory of same-named ground-truth files')

    p = sub.add_parser('gradcheck', help='finite-difference gradient check of every operation')
    _common(p)
    p.add_argument('--epsilon', type=float, default=gradcheck.EPSILON,
                   help='central difference step (default: %(default)s)')
    p.add_argument('--max-coords', type=int, default=16,
                   help='coordinates sampled per input tensor (default: %(default)s)')
    p.add_argument('--tolerance', type=float, default=gradcheck.TOLERANCE,
                   help='largest accepted relative error (default: %(default)s)')
    p.add_argument('--skip-network', action='store_true', help='leave out the whole-network check')

    p = sub.add_parser('inspect', help='parameter count and layer shapes')
    _common(p)
    p.add_argument('--input-size', type=int, nargs=2, metavar=('H', 'W'), default=None,
                   help='also run a forward pass and print the disparity pyramid shapes')
    return parser


def _output_dir(args):
    if not os.path.isdir(args.output_dir):
        os.makedirs(args.output_dir)
    return args.output_dir


def _training_sources(cfg, order_ids, seed):
    '''data.datasets, plus the generated SYN dataset when it is scheduled without a path'''
    sources = config.dataset_sources(cfg)
    if SYNTH_ID in order_ids and SYNTH_ID not in sources:
        spec = config.synth_spec(cfg)
        spec.source_tag = SYNTH_ID
        sources[SYNTH_ID] = datasets.synth_generate(spec, utils.make_rng(seed))
    return sources


def _train(args, cfg, order, params=None):
    dsched = config.build_schedule(cfg, order)
    model_config = config.network_config(cfg)
    options = config.train_options(cfg, args.seed)
    out_dir = _output_dir(args)
    sources = _training_sources(cfg, dsched.dataset_ids(), args.seed)
    config.dump_config(cfg, os.path.join(out_dir, CONFIG_DUMP))
    result = schedule.run_schedule(dsched, model_config, {'datasets': sources, 'output_dir': out_dir}, options,
                                   params=params)
    print('stages: {}'.format(' -> '.join(dsched.labels)))
    print('checkpoint: {}'.format(result['checkpoint']))
    print('log: {}'.format(result['log_path']))
    return EXIT_OK


def cmd_synth(args, cfg):
    spec = config.synth_spec(cfg)
    samples = datasets.synth_generate(spec, utils.make_rng(args.seed))
    datasets.save_dataset(_output_dir(args), samples)
    print('wrote {} {} pairs ({}x{}) to {}'.format(len(samples), spec.style, spec.height, spec.width,
                                                    args.output_dir))
    return EXIT_OK


def cmd_pretrain(args, cfg):
    return _train(args, cfg, args.dataset + '*')


def cmd_train(args, cfg):
    params = _load_network(cfg, args.init).params if args.init else None
    return _train(args, cfg, args.order, params)


def _load_network(cfg, path):
    network = StereoNetwork(config.network_config(cfg), seed=0)
    checkpoint.restore_params(network.params, checkpoint.load_checkpoint(path))
    return network


def _read_gt(path):
    if path.endswith('.png'):
        return formats.read_kitti_disparity(path)
    return formats.read_pfm(path), None


def _infer_one(network, left, right, gt, valid, name, out_dir, cfg, export):
    mean = config.parse_list(cfg['data']['mean'], float, 'data.mean')
    std = config.parse_list(cfg['data']['std'], float, 'data.std')
    pyramid, masks = schedule.predict(network, datasets.normalize(left, mean, std),
                                      datasets.normalize(right, mean, std))
    disparity = Tensor(pyramid[0].data.astype('float32'))
    formats.write_pfm(os.path.join(out_dir, name + '.pfm'), disparity)
    if export:
        metrics.export_artifacts(disparity, gt, masks, os.path.join(out_dir, ARTIFACT_DIR), name=name,
                                 max_error=cfg['eval']['max_error'], valid=valid, cmap=cfg['eval']['cmap'])
    return disparity


def cmd_infer(args, cfg):
    if args.dataset is None and not (args.left and args.right):
        raise ConfigError('infer needs --left and --right, or --dataset')
    if args.dataset is not None:
        samples = datasets.load_dataset(args.dataset, with_ground_truth=True, n_jobs=cfg['data']['n_jobs'])
        names = [e['name'] for e in datasets.read_metadata(args.dataset)]
    else:
        left, right = formats.read_image(args.left), formats.read_image(args.right)
        gt = valid = None
        if args.gt:
            gt, valid = _read_gt(args.gt)
        samples = [datasets.StereoSample(left, right, gt, valid, source_tag='infer')]
        names = [os.path.splitext(os.path.basename(args.left))[0]]
    for s in samples:
        utils.check_divisible(s.shape[0], s.shape[1], 64, what='inference image')
    network = _load_network(cfg, args.checkpoint)
    out_dir = _output_dir(args)
    for sample, name in zip(samples, names):
        gt = sample.gt_disparity if sample.has_ground_truth else None
        valid = sample.valid_mask if sample.has_ground_truth else None
        _infer_one(network, sample.left, sample.right, gt, valid, name, out_dir, cfg, not args.no_export)
        if utils.PLEVEL >= 1: utils.vprint(1, 'predicted {}', name)
    print('wrote {} disparity map(s) to {}'.format(len(samples), out_dir))
    return EXIT_OK


def cmd_eval(args, cfg):
    report = metrics.evaluate_pairs(args.pred_dir, args.gt_dir, n_jobs=cfg['eval']['n_jobs'])
    path = os.path.join(_output_dir(args), REPORT_FILE)
    report.to_csv(path)
    print(report.summary())
    print('report: {}'.format(path))
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = gradcheck.run_suite(seed=args.seed, epsilon=args.epsilon, max_coords=args.max_coords,
                                  include_network=not args.skip_network)
    failed = [op for op, error in results.items() if not error <= args.tolerance]
    for op, error in results.items():
        print('{:<32s} {:.3e} {}'.format(op, error, 'FAIL' if op in failed else 'ok'))
    if failed:
        print('{} of {} checks above {:.0e}: {}'.format(len(failed), len(results), args.tolerance,
                                                        ', '.join(failed)), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_inspect(args, cfg):
    network = StereoNetwork(config.network_config(cfg), seed=args.seed)
    print(network.config)
    for name, shape in network.layer_shapes():
        print('{:<40s} {}'.format(name, 'x'.join(str(n) for n in shape)))
    print('parameters: {}'.format(network.parameter_count()))
    if args.input_size:
        h, w = args.input_size
        utils.check_divisible(h, w, 64, what='--input-size')
        zeros = Tensor.zeros((1, 3, h, w), dtype=network.config.dtype)
        pyramid, masks = schedule.predict(network, zeros, zeros)
        for s, shape in enumerate(pyramid.shapes()):
            print('d{} {}'.format(s, 'x'.join(str(n) for n in shape)))
        for mask in masks:
            print('theta {}'.format('x'.join(str(n) for n in mask.shape)))
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'pretrain': cmd_pretrain,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'inspect': cmd_inspect,
}


def _install_handler(verbosity):
    if verbosity <= 0:
        return None
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    utils.logger.addHandler(handler)
    utils.logger.setLevel(logging.INFO)
    return handler


def dispatch(argv=None):
    '''Parse ``argv`` and run one command

    Returns:
        int: process exit code
    '''
    args = build_parser().parse_args(argv)
    previous = utils.set_verbosity(args.verbose)
    handler = _install_handler(args.verbose)
    try:
        cfg = config.load_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except ESNetError as e:
        print('esnet {}: {}: {}'.format(args.command, type(e).__name__, e), file=sys.stderr)
        return exit_code(e)
    finally:
        utils.set_verbosity(previous)
        if handler is not None:
            utils.logger.removeHandler(handler)


def main():
    sys.exit(dispatch())


if __name__ == '__main__':
    main()
