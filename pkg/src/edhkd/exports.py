"""Analysis exports: decision-boundary grids and per-generator PCA projections."""
import numpy as np

from edhkd import tensor as T
from edhkd.fileio import write_csv
from edhkd.networks import ensemble_predict

BOUNDARY_HEADER = ("x", "y", "voted_class", "avg_prob_class1")
PROJECTION_HEADER = ("generator", "domain", "label", "pc1", "pc2")


def decision_grid(bounds=((-2.0, 3.0), (-2.0, 2.0)), resolution=100):
    (x0, x1), (y0, y1) = bounds
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def export_decision_boundary(model, path=None, bounds=((-2.0, 3.0), (-2.0, 2.0)), resolution=100):
    """Voted class and mean class-1 probability over a ``resolution`` x ``resolution`` grid.

    Returns the rows as an array with columns ``BOUNDARY_HEADER`` and writes a
    CSV when ``path`` is given.
    """
    if model.gcfg.input_dim != 2:
        raise ValueError(f"decision boundaries need a 2-D input model, got input_dim={model.gcfg.input_dim}")
    pts = decision_grid(bounds, resolution)
    avg, vote = ensemble_predict(model, pts)
    p1 = avg[:, 1] if avg.shape[1] > 1 else np.zeros(len(pts))
    table = np.column_stack([pts, vote.astype(np.float64), p1])
    if path is not None:
        write_csv(path, BOUNDARY_HEADER,
                  ([float(r[0]), float(r[1]), int(r[2]), float(r[3])] for r in table))
    return table


def pca_2d(x):
    """Project rows of ``x`` onto their two leading principal axes.

    Axis signs are fixed so the largest-magnitude loading is positive, which
    makes the output deterministic. Missing dimensions are padded with zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    vt = vt[:2]
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(len(vt)), idx])
    signs[signs == 0] = 1.0
    proj = xc @ (vt * signs[:, None]).T
    if proj.shape[1] < 2:
        proj = np.column_stack([proj, np.zeros((len(x), 2 - proj.shape[1]))])
    return proj


def export_projection(model, datasets, path=None):
    """PCA of each generator's features over the union of ``datasets``.

    ``datasets`` maps a domain name to a DomainDataset. Labels come from
    ``evaluation_labels`` since this is an analysis artifact.
    Returns a list of rows ``(generator, domain, label, pc1, pc2)``.
    """
    names = list(datasets)
    if not names:
        raise ValueError("no datasets to project")
    x = np.concatenate([datasets[n].features for n in names])
    domains = np.concatenate([[n] * len(datasets[n]) for n in names])
    labels = np.concatenate([datasets[n].evaluation_labels() for n in names])
    model.eval()
    with T.no_grad():
        feats = model.features(x, update_stats=False).data
    rows = []
    for g in range(feats.shape[0]):
        proj = pca_2d(feats[g])
        rows.extend([g, str(d), int(lab), float(p[0]), float(p[1])] for d, lab, p in zip(domains, labels, proj))
    if path is not None:
        write_csv(path, PROJECTION_HEADER, rows)
    return rows
