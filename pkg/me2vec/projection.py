import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.template.loader import render_to_string

from .sampling import seeded_rng

logger = logging.getLogger(__name__)

CANVAS = 600
MARGIN = 30


@dataclass(eq=False)
class Projection:
    ids: list
    coords: np.ndarray
    components: np.ndarray
    variances: np.ndarray


def _leading_eigenpair(matrix, start, max_iter, tol):
    vector = start / np.linalg.norm(start)
    for _ in range(max_iter):
        image = matrix @ vector
        norm = np.linalg.norm(image)
        if norm < 1e-300:
            return 0.0, vector
        image /= norm
        if np.linalg.norm(image - vector) < tol:
            vector = image
            break
        vector = image
    return float(vector @ matrix @ vector), vector


def pca_project(ids, vectors, components=2, seed=0, max_iter=20000, tol=1e-13):
    """
    Project rows onto their top principal components.

    Eigenpairs of the covariance matrix come from power iteration with
    deflation. Each component is signed so that its largest-magnitude entry is
    positive.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or len(vectors) < 2 or vectors.shape[1] < components:
        raise ValidationError('projection needs at least two rows of dimension >= %d' % components)

    centered = vectors - vectors.mean(axis=0)
    covariance = centered.T @ centered / len(centered)
    if np.trace(covariance) <= 1e-12 * max(1.0, np.abs(vectors).max() ** 2):
        raise ValidationError('cannot project rank-0 data: all vectors are identical')

    rng = seeded_rng(seed)
    deflated = covariance.copy()
    axes, variances = [], []
    for _ in range(components):
        start = rng.standard_normal(covariance.shape[0])
        for axis in axes:
            start -= (start @ axis) * axis
        value, axis = _leading_eigenpair(deflated, start, max_iter, tol)
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        axes.append(axis)
        variances.append(value)
        deflated -= value * np.outer(axis, axis)

    axes = np.array(axes)
    logger.info('projected %d rows; explained variance %s', len(vectors), ', '.join('%.4g' % v for v in variances))
    return Projection(list(ids), centered @ axes.T, axes, np.array(variances))


def save_projection_csv(projection, path):
    frame = pd.DataFrame({'id': projection.ids, 'x': projection.coords[:, 0], 'y': projection.coords[:, 1]})
    frame.to_csv(path, index=False, float_format='%.17g')


# Canvas positions with y pointing up
def _canvas_points(coords):
    low, high = coords.min(axis=0), coords.max(axis=0)
    span = np.where(high - low > 0, high - low, 1.0)
    scaled = (coords - low) / span * (CANVAS - 2 * MARGIN) + MARGIN
    scaled[:, 1] = CANVAS - scaled[:, 1]
    return scaled


def render_scatter_svg(projection, groups=None, edges=None, title=''):
    """
    SVG scatter of a projection.

    groups maps id -> category and colours the points; edges is an iterable of
    (id, id, weight) drawn as lines under the points.
    """
    points = _canvas_points(projection.coords)
    index = {entity_id: i for i, entity_id in enumerate(projection.ids)}
    categories = sorted(set(groups.values())) if groups else []

    dots = []
    for entity_id, (x, y) in zip(projection.ids, points):
        category = groups.get(entity_id) if groups else None
        dots.append({
            'id': entity_id, 'x': x, 'y': y,
            'colour': categories.index(category) if category in categories else -1,
        })

    lines = []
    if edges:
        top = max((weight for _, _, weight in edges), default=1) or 1
        for first, second, weight in edges:
            if first in index and second in index:
                (x1, y1), (x2, y2) = points[index[first]], points[index[second]]
                lines.append({'x1': x1, 'y1': y1, 'x2': x2, 'y2': y2, 'opacity': 0.05 + 0.45 * weight / top})

    return render_to_string('me2vec/scatter.svg', {
        'size': CANVAS, 'title': title, 'dots': dots, 'lines': lines,
        'legend': [{'name': name, 'colour': i, 'y': MARGIN + 16 * i} for i, name in enumerate(categories)],
    })


def save_scatter_svg(projection, path, **kwargs):
    with open(path, 'w') as out:
        out.write(render_scatter_svg(projection, **kwargs))
