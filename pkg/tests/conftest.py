import numpy as np
import pytest

from lbbnn import autodiff as ad


def rel_err(a, b) -> float:
    """Norm-based relative error, safe when both sides are tiny."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def analytic_grad(loss_fn, params):
    with ad.Tape() as tape:
        loss = loss_fn()
        return tape.gradient(loss, params)


def gradcheck(loss_fn, params, step=1e-5):
    """Full analytic gradient against full central differences."""
    ga = analytic_grad(loss_fn, params)
    gn = ad.numerical_gradient(lambda: float(loss_fn().data), params, step)
    return max(rel_err(a, n) for a, n in zip(ga, gn))


def directional_gradcheck(loss_fn, params, rng, directions=3, step=1e-5, tensors=None):
    """Directional derivatives along random directions, checked for the whole
    parameter vector and for each parameter tensor on its own (or for a
    random sample of ``tensors`` of them).

    Cheap enough for objectives with thousands of parameters. The relative
    error is floored at the rounding noise of the loss itself.
    """
    ga = analytic_grad(loss_fn, params)
    loss0 = abs(float(loss_fn().data))
    floor = 1e-7 * max(1.0, loss0)

    def along(vs):
        for p, v in zip(params, vs):
            p.data += step * v
        up = float(loss_fn().data)
        for p, v in zip(params, vs):
            p.data -= 2 * step * v
        down = float(loss_fn().data)
        for p, v in zip(params, vs):
            p.data += step * v
        return (up - down) / (2 * step)

    def check(vs):
        fd = along(vs)
        an = sum(float(np.sum(g * v)) for g, v in zip(ga, vs))
        return abs(fd - an) / max(abs(fd), abs(an), floor)

    worst = 0.0
    for _ in range(directions):
        worst = max(worst, check([rng.standard_normal(p.data.shape) for p in params]))
    picks = range(len(params))
    if tensors is not None and tensors < len(params):
        picks = sorted(rng.choice(len(params), tensors, replace=False))
    for k in picks:
        vs = [np.zeros_like(q.data) for q in params]
        vs[k] = rng.standard_normal(params[k].data.shape)
        worst = max(worst, check(vs))
    return worst


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is not None and module.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.REPORT):
            terminalreporter.write_line(line)
