"""The ``QUENCHLAB_NUMBA`` flag selects kernels without changing results."""

import json
import os
import subprocess
import sys

import numpy as np

SCRIPT = """
import json, sys
import numpy as np
from quenchlab import cases
from quenchlab._backend import backend_name
from quenchlab.potentials import LogQuench
from quenchlab.state import solve_state
prob = cases.interface_problem(16, 8, 1.0)
tr = solve_state(prob, prob.zero_control(), LogQuench(0.05))
np.save(sys.argv[1], tr.phi)
print(json.dumps({"backend": backend_name()}))
"""


def run(flag, path):
    env = {**os.environ, "QUENCHLAB_NUMBA": flag}
    out = subprocess.run([sys.executable, "-c", SCRIPT, str(path)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])["backend"]


def test_backends_agree(tmp_path):
    assert run("1", tmp_path / "a.npy") == "numba"
    assert run("0", tmp_path / "b.npy") == "numpy"
    np.testing.assert_allclose(np.load(tmp_path / "a.npy"), np.load(tmp_path / "b.npy"), rtol=0, atol=1e-12)
