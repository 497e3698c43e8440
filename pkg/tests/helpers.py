import numpy as np

from ksns.grid import BoxDomain


def random_noslip(domain: BoxDomain, rng) -> tuple[np.ndarray, ...]:
    comps = []
    for a in range(domain.dim):
        c = rng.standard_normal(domain.face_shape(a))
        idx = [slice(None)] * domain.dim
        idx[a] = [0, -1]
        c[tuple(idx)] = 0.0
        comps.append(c)
    return tuple(comps)


def smooth_field(domain: BoxDomain, rng, modes: int = 3) -> np.ndarray:
    x = domain.cell_centers()
    out = np.zeros(domain.shape)
    for _ in range(modes):
        k = rng.integers(0, 4, size=domain.dim)
        term = rng.standard_normal()
        for xi, ki, L in zip(x, k, domain.lengths):
            term = term * np.cos(np.pi * ki * xi / L)
        out = out + term
    return out
