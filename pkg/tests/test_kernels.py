"""Compiled and pure-Python kernels must agree with each other and with the per-draw path."""
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import kink_free_net
from fdfa import kernels
from fdfa.core import RngStream
from fdfa.metrics import draw_moments, make_sampler
from fdfa.network import activate_prime, forward, loss_and_error

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


def moment_args(net, x, target, mode, perturb_output, n, seed):
    trace = forward(net, x)
    _, e = loss_and_error(trace.output, target)
    spec, L = net.spec, net.depth
    widths = np.asarray(spec.widths, dtype=np.int64)
    wflat = np.concatenate([w.ravel() for w in net.weights])
    yflat = np.concatenate(trace.post[:L])
    sflat = np.concatenate([activate_prime(spec.activation(l), trace.pre[l - 1]) for l in range(1, L + 1)])
    if mode == 0:
        width = sum(w.size for w in net.weights[:L - 1]) + (net.weights[-1].size if perturb_output else 0)
    else:
        width = sum(spec.widths[1:L])
    noise = RngStream(seed).normal((n, width))
    size = sum(w.size for w in net.weights)
    shift = RngStream(seed, 1).normal(size)
    bufs = [np.zeros(size) for _ in range(4)]
    return (mode, widths, wflat, yflat, sflat, e, noise, perturb_output, shift, *bufs)


def test_compiled_backend_is_built():
    # the package is installed with its extension; a silent fallback would hide build problems
    assert kernels.BACKEND == "compiled"


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("mode,perturb_output", [(0, True), (0, False), (1, False)])
def test_fg_moments_backends_agree(backend, mode, perturb_output):
    net, x = kink_free_net((6, 5, 4, 3), 1)
    ref = moment_args(net, x, 2, mode, perturb_output, 300, 7)
    kernels.implementation("python").fg_moments(*ref)
    got = moment_args(net, x, 2, mode, perturb_output, 300, 7)
    kernels.implementation(backend).fg_moments(*got)
    # compare the running sums; the compensation buffers only hold rounding residue
    for i in (-4, -2):
        np.testing.assert_allclose(ref[i] - ref[i + 1], got[i] - got[i + 1], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adam_backends_agree(backend):
    rng = np.random.default_rng(0)
    p0, g = rng.normal(size=50), rng.normal(size=50)
    m0, v0 = rng.normal(size=50), rng.random(50)
    ref = [p0.copy(), m0.copy(), v0.copy()]
    kernels.implementation("python").adam_update(ref[0], g, ref[1], ref[2], 1e-3, 0.9, 0.999, 1e-8, 0.19, 0.002)
    out = [p0.copy(), m0.copy(), v0.copy()]
    kernels.implementation(backend).adam_update(out[0], g, out[1], out[2], 1e-3, 0.9, 0.999, 1e-8, 0.19, 0.002)
    for a, b in zip(ref, out):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", ["fgw", "fga"])
def test_kernel_path_matches_per_draw_path(kind):
    net, x = kink_free_net((5, 4, 4, 3), 2)
    sampler = make_sampler(kind, net)
    fast = draw_moments(sampler, x, 1, 2000, RngStream(3), use_kernel=True, chunk=333)
    slow = draw_moments(sampler, x, 1, 2000, RngStream(3), use_kernel=False)
    for a, b in zip(fast.mean + fast.variance, slow.mean + slow.variance):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-13)
    assert fast.mean_sq_norm == pytest.approx(slow.mean_sq_norm, rel=1e-10)


def test_pure_python_selected_by_environment():
    code = "import fdfa.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, FDFA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.implementation("fortran")
