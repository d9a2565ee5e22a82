'''Disparity metrics (EPE, D1 outlier rate), evaluation reports and
diagnostic image exports.

Two outlier rules exist side by side:

    paper_or   |err| >= 3 px  OR  |err| / gt >= 5 %
    kitti_and  |err| >  3 px  AND |err| / gt >  5 %   (KITTI benchmark)

Every report carries both; ``paper_or`` is the headline ``d1_all``.
'''
import os

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from esnet import formats, utils
from esnet.exceptions import DataError, EvaluationError, ShapeError
from esnet.tensor import to_array

PAPER_OR = 'paper_or'
KITTI_AND = 'kitti_and'
D1_RULES = (PAPER_OR, KITTI_AND)
ABS_THRESHOLD = 3.0
REL_THRESHOLD = 0.05
MAX_ERROR = 3.0
REPORT_COLUMNS = ['name', 'pixel_count', 'epe', 'd1_paper_or', 'd1_kitti_and']


def _arrays(pred, gt, valid):
    pred = np.asarray(to_array(pred), dtype=np.float64)
    gt = np.asarray(to_array(gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError('prediction {} and ground truth {} differ in shape'.format(pred.shape, gt.shape))
    if valid is None:
        mask = np.ones(gt.shape, dtype=bool)
    else:
        mask = to_array(valid) > 0
        if mask.shape != gt.shape:
            raise ShapeError('valid mask {} does not match ground truth {}'.format(mask.shape, gt.shape))
    return pred[mask], gt[mask]


def _require_pixels(values):
    if values.size == 0:
        raise EvaluationError('no valid ground-truth pixels to evaluate')


def epe(pred, gt, valid=None):
    '''Mean |pred - gt| over valid pixels'''
    p, g = _arrays(pred, gt, valid)
    _require_pixels(g)
    return float(np.mean(np.abs(p - g)))


def _outliers(p, g, rule):
    err = np.abs(p - g)
    with np.errstate(divide='ignore', invalid='ignore'):
        rel = np.where(g > 0, err / np.where(g > 0, g, 1.0), np.where(err > 0, np.inf, 0.0))
    if rule == PAPER_OR:
        return (err >= ABS_THRESHOLD) | (rel >= REL_THRESHOLD)
    if rule == KITTI_AND:
        return (err > ABS_THRESHOLD) & (rel > REL_THRESHOLD)
    raise EvaluationError('unknown D1 rule {!r}, expected one of {}'.format(rule, D1_RULES))


def d1_rate(pred, gt, valid=None, rule=PAPER_OR):
    '''Fraction of valid pixels that are outliers under ``rule``'''
    p, g = _arrays(pred, gt, valid)
    _require_pixels(g)
    return float(np.mean(_outliers(p, g, rule)))


def image_stats(pred, gt, valid=None, name=''):
    '''Per-image row of an `EvalReport`; empty images get NaN metrics'''
    p, g = _arrays(pred, gt, valid)
    row = {'name': name, 'pixel_count': int(g.size)}
    if g.size == 0:
        row.update(epe=float('nan'), d1_paper_or=float('nan'), d1_kitti_and=float('nan'))
    else:
        row.update(epe=float(np.mean(np.abs(p - g))),
                   d1_paper_or=float(np.mean(_outliers(p, g, PAPER_OR))),
                   d1_kitti_and=float(np.mean(_outliers(p, g, KITTI_AND))))
    return row


class EvalReport(object):
    '''Pixel-weighted aggregate over images

    Attributes:
        epe (float): end-point error in pixels
        d1_all (float): outlier fraction under the ``paper_or`` rule
        d1_kitti (float): outlier fraction under the ``kitti_and`` rule
        pixel_count (int): valid pixels evaluated
        per_image (list of dict): one row per image, `REPORT_COLUMNS`
    '''
    def __init__(self, per_image):
        self.per_image = list(per_image)
        counts = np.array([r['pixel_count'] for r in self.per_image], dtype=np.float64)
        self.pixel_count = int(counts.sum())
        if self.pixel_count == 0:
            raise EvaluationError('no valid ground-truth pixels in any image')
        scored = counts > 0

        def weighted(key):
            values = np.array([r[key] for r in self.per_image], dtype=np.float64)
            return float(np.sum(values[scored] * counts[scored]) / self.pixel_count)

        self.epe = weighted('epe')
        self.d1_all = weighted('d1_paper_or')
        self.d1_kitti = weighted('d1_kitti_and')

    def to_frame(self):
        frame = pd.DataFrame(self.per_image, columns=REPORT_COLUMNS)
        total = pd.DataFrame([['ALL', self.pixel_count, self.epe, self.d1_all, self.d1_kitti]],
                             columns=REPORT_COLUMNS)
        return pd.concat([frame, total], ignore_index=True)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def summary(self):
        return ('images: {}  valid pixels: {}\n'
                'EPE: {:.4f} px\n'
                'D1 (paper_or, >=3px or >=5%): {:.4%}\n'
                'D1 (kitti_and, >3px and >5%): {:.4%}').format(
                    len(self.per_image), self.pixel_count, self.epe, self.d1_all, self.d1_kitti)


def evaluate_arrays(preds, gts, valids=None, names=None, n_jobs=1):
    '''EvalReport over parallel lists of per-image arrays (joblib, ordered)'''
    if not len(preds) == len(gts):
        raise ShapeError('{} predictions for {} ground-truth maps'.format(len(preds), len(gts)))
    valids = valids if valids is not None else [None] * len(gts)
    names = names if names is not None else ['{:06d}'.format(i) for i in range(len(gts))]
    rows = Parallel(n_jobs=n_jobs)(delayed(image_stats)(p, g, v, n) for p, g, v, n in zip(preds, gts, valids, names))
    return EvalReport(rows)


def _read_disparity(path):
    if path.endswith('.png'):
        return formats.read_kitti_disparity(path)
    gt = formats.read_pfm(path)
    return gt, None


def _evaluate_file(pred_path, gt_path, name):
    pred, _ = _read_disparity(pred_path)
    gt, valid = _read_disparity(gt_path)
    return image_stats(pred, gt, valid, name)


def _index(directory):
    if not os.path.isdir(directory):
        raise DataError('directory not found: {}'.format(directory))
    files = {}
    for fname in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(fname)
        if ext.lower() in ('.pfm', '.png'):
            files[stem] = os.path.join(directory, fname)
    return files


def evaluate_pairs(pred_dir, gt_dir, n_jobs=1):
    '''Evaluate every prediction in ``pred_dir`` against the same-named file in ``gt_dir``

    PFM files are dense ground truth; PNG files follow the KITTI convention
    (0 = no measurement).
    '''
    preds = _index(pred_dir)
    gts = _index(gt_dir)
    if not preds:
        raise DataError('no .pfm/.png predictions in {}'.format(pred_dir))
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise DataError('no ground truth for {} prediction(s), e.g. {}'.format(len(missing), missing[0]))
    names = sorted(preds)
    rows = Parallel(n_jobs=n_jobs)(delayed(_evaluate_file)(preds[n], gts[n], n) for n in names)
    report = EvalReport(rows)
    if utils.PLEVEL >= 1: utils.vprint(1, 'evaluated {} pairs: EPE {:.4f}', len(names), report.epe)
    return report


def _mask_scale(full_width, mask_width):
    return int(round(np.log2(float(full_width) / mask_width)))


def export_artifacts(pred, gt, occlusion_masks, out_dir, name='000000', max_error=MAX_ERROR, max_disparity=None,
                     valid=None, cmap='magma', error_cmap='inferno'):
    '''Write disparity, error-map and occlusion-mask PNGs (gray + colormapped)

    File names depend only on ``name`` and the mask scales, and identical
    inputs give byte-identical files.

    Args:
        pred (Tensor): (1, 1, H, W) predicted disparity
        gt (Tensor, optional): ground truth; no error map without it
        occlusion_masks (list of OcclusionMask): may be empty
        out_dir (str): destination directory
        name (str): file name prefix
        max_error (float): error map saturates at this many pixels
        max_disparity (float, optional): disparity map scale, defaults to the
            largest predicted / ground-truth value
        valid (Tensor, optional): pixels without ground truth are black in the error map

    Returns:
        list of str: written paths
    '''
    pred_plane = np.asarray(to_array(pred), dtype=np.float64)
    written = []

    def path(suffix):
        p = os.path.join(out_dir, '{}_{}.png'.format(name, suffix))
        written.append(p)
        return p

    if max_disparity is None:
        max_disparity = float(pred_plane.max())
        if gt is not None:
            max_disparity = max(max_disparity, float(to_array(gt).max()))
    formats.write_gray(path('disparity'), pred_plane, vmax=max_disparity)
    formats.write_colormap(path('disparity_color'), pred_plane, vmax=max_disparity, cmap=cmap)

    if gt is not None:
        gt_plane = np.asarray(to_array(gt), dtype=np.float64)
        if gt_plane.shape != pred_plane.shape:
            raise ShapeError('ground truth {} does not match prediction {}'.format(gt_plane.shape, pred_plane.shape))
        error = np.minimum(np.abs(pred_plane - gt_plane), max_error)
        if valid is not None:
            error = np.where(to_array(valid) > 0, error, 0.0)
        formats.write_gray(path('error'), error, vmax=max_error)
        formats.write_colormap(path('error_color'), error, vmax=max_error, cmap=error_cmap)

    for mask in occlusion_masks:
        theta = mask.theta.data
        s = _mask_scale(pred_plane.shape[-1], theta.shape[-1])
        formats.write_gray(path('occlusion_s{}'.format(s)), theta, vmax=1.0)
        formats.write_colormap(path('occlusion_s{}_color'.format(s)), theta, vmax=1.0, cmap='gray')
    if utils.PLEVEL >= 2: utils.vprint(2, 'exported {} files to {}', len(written), out_dir)
    return written
