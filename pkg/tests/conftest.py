import numpy as np
import pytest

from synaptik.synth import PhantomConfig, generate_phantom

SMALL = PhantomConfig(dims_zyx=(16, 96, 96), n_cells=8, n_synapses=3, seed=7)


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom(SMALL)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bfs_components(mask, connectivity):
    """Plain flood fill; returns a sorted list of frozensets of linear indices."""
    from collections import deque
    from itertools import product

    offs = [o for o in product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
    if connectivity == 6:
        offs = [o for o in offs if sum(map(abs, o)) == 1]
    elif connectivity == 18:
        offs = [o for o in offs if sum(map(abs, o)) <= 2]
    Z, Y, X = mask.shape
    seen = np.zeros(mask.shape, bool)
    out = []
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        seen[start] = True
        q = deque([start])
        comp = []
        while q:
            z, y, x = q.popleft()
            comp.append((z * Y + y) * X + x)
            for dz, dy, dx in offs:
                n = (z + dz, y + dy, x + dx)
                if 0 <= n[0] < Z and 0 <= n[1] < Y and 0 <= n[2] < X and mask[n] and not seen[n]:
                    seen[n] = True
                    q.append(n)
        out.append(frozenset(comp))
    return sorted(out, key=min)


def make_candidate(cid, pre_voxels, post_voxels, pre_seg, post_seg, score=None):
    from synaptik.candidates import Candidate, SiteCandidate
    from synaptik.labeling import POST, PRE, Component

    pre_v = np.unique(np.asarray(pre_voxels, np.int64))
    post_v = np.unique(np.asarray(post_voxels, np.int64))
    pre = SiteCandidate(Component(int(pre_v[0]), pre_v, PRE), pre_seg, pre_v.size)
    post = SiteCandidate(Component(int(post_v[0]), post_v, POST), post_seg, post_v.size)
    return Candidate(cid, pre, post, (0, 0, 0), 0.0, score)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
