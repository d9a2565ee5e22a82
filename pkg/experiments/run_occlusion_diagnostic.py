import argparse
import os

from esnet import datasets, experiments, losses, metrics, schedule, utils
from esnet.network import ESNET_M, NetworkConfig, StereoNetwork

parser = argparse.ArgumentParser(description='ESNet-M occlusion masks on the two-layer synthetic scene.')
parser.add_argument('--seed', type=int, default=0)
parser.add_argument('--train-steps', type=int, default=300)
parser.add_argument('--output-dir', default='occlusion')
parser.add_argument('-v', '--verbose', action='count', default=0)
args = parser.parse_args()
utils.set_verbosity(args.verbose)

network = StereoNetwork(NetworkConfig(ESNET_M, 'tiny'), seed=args.seed)
samples = experiments.synthetic_samples(args.seed, 2, style='two-layer-occlusion')
experiments.Trainer(network, samples, seed=args.seed + 1).run(
    args.train_steps, schedule.SUPERVISED, losses.SupervisedLossConfig(omega=experiments.OVERFIT_OMEGA))

table = experiments.occlusion_diagnostic(network, seed=args.seed)
if not os.path.isdir(args.output_dir):
    os.makedirs(args.output_dir)
table.to_csv(os.path.join(args.output_dir, 'occlusion.csv'), index=False)
print(table.groupby('scale')[['occluded_mean', 'visible_mean']].mean().to_string())

for i, sample in enumerate(samples):
    batch = datasets.collate([sample])
    pyramid, masks = schedule.predict(network, batch['left'], batch['right'])
    metrics.export_artifacts(pyramid[0], sample.gt_disparity, masks, args.output_dir, name='{:06d}'.format(i))
print('wrote masks and error maps to {}'.format(args.output_dir))
