"""Backend parity: the numba kernels and the numpy fallback must agree.

The backend is frozen at import time from COOPNETS_BACKEND, so the numpy
side runs in a subprocess with the flag set.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from coopnets import kernels

CASES = [
    dict(n=2, cin=1, cout=4, k=5, stride=3, pad=0, h=16),
    dict(n=2, cin=3, cout=4, k=4, stride=2, pad=1, h=12),
    dict(n=1, cin=2, cout=2, k=3, stride=1, pad=2, h=7),
]

_CHILD = """
import json, sys
import numpy as np
from coopnets import kernels
assert kernels.BACKEND == "numpy"
case = json.loads(sys.argv[1])
rng = np.random.default_rng(case.pop("seed"))
n, cin, cout, k, stride, pad, h = (case[x] for x in
                                   ("n", "cin", "cout", "k", "stride", "pad", "h"))
x = rng.standard_normal((n, cin, h, h))
f = rng.standard_normal((cout, cin, k, k))
y = kernels.conv2d_forward(x, f, stride, pad)
gy = rng.standard_normal(y.shape)
gx = kernels.conv2d_backward_input(gy, f, stride, pad, h, h)
gf = kernels.conv2d_backward_filters(x, gy, stride, pad, k, k)
np.save(sys.argv[2], np.concatenate([y.ravel(), gx.ravel(), gf.ravel()]))
"""


@pytest.mark.parametrize("i", range(len(CASES)))
def test_backends_agree(i, tmp_path):
    case = dict(CASES[i], seed=100 + i)
    rng = np.random.default_rng(case["seed"])
    n, cin, cout, k = case["n"], case["cin"], case["cout"], case["k"]
    stride, pad, h = case["stride"], case["pad"], case["h"]
    x = rng.standard_normal((n, cin, h, h))
    f = rng.standard_normal((cout, cin, k, k))
    y = kernels.conv2d_forward(x, f, stride, pad)
    gy = rng.standard_normal(y.shape)
    gx = kernels.conv2d_backward_input(gy, f, stride, pad, h, h)
    gf = kernels.conv2d_backward_filters(x, gy, stride, pad, k, k)
    mine = np.concatenate([y.ravel(), gx.ravel(), gf.ravel()])

    out = tmp_path / "ref.npy"
    env = dict(os.environ, COOPNETS_BACKEND="numpy")
    subprocess.run([sys.executable, "-c", _CHILD, json.dumps(case), str(out)],
                   check=True, env=env)
    ref = np.load(out)
    np.testing.assert_allclose(mine, ref, rtol=1e-12, atol=1e-12)


def test_backend_flag_validation():
    code = ("import coopnets.kernels")
    env = dict(os.environ, COOPNETS_BACKEND="cuda")
    r = subprocess.run([sys.executable, "-c", code], env=env,
                       capture_output=True, text=True)
    assert r.returncode != 0
    assert "COOPNETS_BACKEND" in r.stderr
