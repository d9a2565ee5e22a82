import argparse
from time import time

from esnet import experiments, utils

parser = argparse.ArgumentParser(description='Train through each dataset order with synthetic stand-ins.')
parser.add_argument('--orders', nargs='+', default=list(experiments.SCHEDULE_ORDERS))
parser.add_argument('--epochs', type=int, default=1)
parser.add_argument('--seed', type=int, default=0)
parser.add_argument('--output-dir', default='schedule_runs')
parser.add_argument('--out', default='schedule_orders.csv')
parser.add_argument('-v', '--verbose', action='count', default=0)
args = parser.parse_args()
utils.set_verbosity(args.verbose)

t0 = time()
log = experiments.schedule_orders(args.orders, seed=args.seed, epochs=args.epochs, output_dir=args.output_dir)
log.to_csv(args.out, index=False)

final = log.groupby('order', sort=False).tail(1)
print(final[['order', 'stage', 'loss', 'val_epe', 'val_d1']].to_string(index=False))
print('elapsed {:.1f} s'.format(time() - t0))
