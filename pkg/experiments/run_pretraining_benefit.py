import argparse
from time import time

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from esnet import experiments, utils

parser = argparse.ArgumentParser(description='Does photometric pretraining speed up supervised training?')
parser.add_argument('--seeds', type=int, default=5)
parser.add_argument('--pretrain-steps', type=int, default=200)
parser.add_argument('--train-steps', type=int, default=300)
parser.add_argument('--n-jobs', type=int, default=1)
parser.add_argument('--out', default='pretraining_benefit.csv')
parser.add_argument('-v', '--verbose', action='count', default=0)
args = parser.parse_args()
utils.set_verbosity(args.verbose)

t0 = time()
descent = experiments.unsupervised_descent(steps=args.pretrain_steps, seed=0)
print('unsupervised objective {:.4f} -> {:.4f} ({:.0%} of initial), finite: {}'.format(
    descent['initial'], descent['final'], descent['ratio'], descent['finite']))

results = Parallel(n_jobs=args.n_jobs, verbose=1)(
    delayed(experiments.pretraining_benefit)(seed, args.pretrain_steps, args.train_steps)
    for seed in range(args.seeds))
table = pd.DataFrame(results)
table.to_csv(args.out, index=False)
print(table.to_string(index=False))
print('pretrained init reached L* within {} steps in {}/{} seeds (median {} steps)'.format(
    args.train_steps, int(table['reached'].sum()), len(table),
    np.nanmedian(table['steps_to_target'].astype(float))))
print('elapsed {:.1f} s'.format(time() - t0))
