import argparse
from time import time

import pandas as pd
from joblib import Parallel, delayed

from esnet import experiments, utils

parser = argparse.ArgumentParser(description='Overfit ESNet / ESNet-M on four synthetic pairs.')
parser.add_argument('--seeds', type=int, default=1)
parser.add_argument('--steps', type=int, default=1000)
parser.add_argument('--n-jobs', type=int, default=1)
parser.add_argument('--out', default='overfit.csv')
parser.add_argument('-v', '--verbose', action='count', default=0)
args = parser.parse_args()
utils.set_verbosity(args.verbose)

t0 = time()
jobs = [(variant, seed) for variant in ('ESNet', 'ESNetM') for seed in range(args.seeds)]
results = Parallel(n_jobs=args.n_jobs, verbose=1)(
    delayed(experiments.overfit)(variant, steps=args.steps, seed=seed) for variant, seed in jobs)

table = pd.DataFrame([{k: v for k, v in r.items() if k != 'losses'} for r in results])
table.to_csv(args.out, index=False)
print(table.to_string(index=False))
print('reached EPE < {}: {}/{}'.format(experiments.OVERFIT_THRESHOLD, int(table['reached'].sum()), len(table)))
print('elapsed {:.1f} s'.format(time() - t0))
