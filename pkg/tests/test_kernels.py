from __future__ import annotations

import math
import os
import random
import subprocess
import sys

import pytest

from orchestra import _kernels_py, kernels


def _inputs(rng: random.Random, n: int):
    new = [rng.uniform(-4, 0) for _ in range(n)]
    old = [x + rng.uniform(-1, 1) for x in new]
    ref = [x + rng.uniform(-1, 1) for x in new]
    adv = [rng.uniform(-2, 2) for _ in range(n)]
    return new, old, ref, adv


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
def test_compiled_matches_python_clipped_terms():
    rng = random.Random(0)
    for n in (0, 1, 7, 500):
        args = _inputs(rng, n)
        fast = kernels.clipped_terms(*args, 0.2)
        slow = _kernels_py.clipped_terms(*args, 0.2)
        for a, b in zip(fast, slow):
            assert a == pytest.approx(b, rel=1e-14, abs=1e-15)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
def test_compiled_matches_python_standardize():
    rng = random.Random(1)
    for _ in range(50):
        n = rng.randint(1, 300)
        k = rng.randint(1, 12)
        values = [rng.choice([0.0, 1.0, rng.random()]) for _ in range(n)]
        ids = [rng.randrange(k) for _ in range(n)]
        for eps in (0.0, 1e-8):
            assert kernels.standardize_groups(values, ids, k, eps) == pytest.approx(
                _kernels_py.standardize_groups(values, ids, k, eps), rel=1e-12, abs=1e-12
            )


@pytest.mark.parametrize("impl", [kernels, _kernels_py])
def test_non_finite_and_length_checks(impl):
    with pytest.raises(ValueError):
        impl.clipped_terms([math.inf], [0.0], [0.0], [1.0], 0.2)
    with pytest.raises(ValueError):
        impl.clipped_terms([0.0, 0.0], [0.0], [0.0], [1.0], 0.2)
    with pytest.raises(ValueError):
        impl.standardize_groups([1.0, 2.0], [0], 1, 0.0)


@pytest.mark.parametrize("impl", [kernels, _kernels_py])
def test_hand_values(impl):
    c, r, k = impl.clipped_terms([math.log(2)], [0.0], [0.0], [1.0], 0.2)
    assert c[0] == pytest.approx(-1.2) and r[0] == pytest.approx(2.0)
    assert k[0] == pytest.approx(0.5 + math.log(2) - 1)
    assert impl.standardize_groups([1.0, 0.0, 3.0], [0, 0, 1], 2, 0.0) == [1.0, -1.0, 0.0]


def test_env_var_forces_python_fallback():
    env = {**os.environ, "ORCHESTRA_PURE_PYTHON": "1"}
    out = subprocess.run(
        [sys.executable, "-c", "import orchestra.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
