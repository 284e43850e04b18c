import numpy as np

from riemgrf.fem import build_bundle
from riemgrf.mesh import build_grid


def small_bundle(cells=8, h=1.0, p=20, seed=0, d=2, field=None):
    rng = np.random.default_rng(seed)
    mesh = build_grid(d, (cells,) * d, sizes=h)
    obs = rng.random((p, d)) * cells * h if p else None
    return build_bundle(mesh, field, observations=obs)


ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)
