import numpy as np
import pytest
import torch


def central_diff_check(fn, tensor, n_coords=10, h=1e-6, seed=0):
    """Compare autograd to central finite differences on random coordinates.

    ``fn`` maps nothing to a scalar tensor and must read ``tensor`` in place.
    Returns the worst relative error ``|a - n| / max(|a|, |n|, 1e-4)``; the
    floor keeps structurally-zero gradients from dividing round-off by zero.
    """
    assert tensor.dtype == torch.float64
    tensor.grad = None
    out = fn()
    (analytic,) = torch.autograd.grad(out, tensor)
    rng = np.random.default_rng(seed)
    flat = tensor.detach().view(-1)
    idx = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)
    worst = 0.0
    for k in idx:
        orig = float(flat[k])
        with torch.no_grad():
            flat[k] = orig + h
            up = float(fn())
            flat[k] = orig - h
            down = float(fn())
            flat[k] = orig
        numeric = (up - down) / (2 * h)
        a = float(analytic.reshape(-1)[k])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
        worst = max(worst, err)
    return worst


@pytest.fixture
def fd_check():
    return central_diff_check


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    """Six small in-memory bags (two per grade) and their grades."""
    from mreg.dataio import crop_and_resize, make_bag
    from mreg.synthgen import grade_params, render_video

    bags, grades = [], []
    for grade in (0, 1, 2):
        for k in range(2):
            r = np.random.default_rng([7, grade, k])
            s = render_video(grade_params(grade, r), grade, (48, 64, 64), r)
            bags.append(make_bag(crop_and_resize(s.frames, s.roi, (16, 16))).clips)
            grades.append(grade)
    return np.stack(bags), np.array(grades)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
