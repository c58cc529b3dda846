"""Reference power flow for the bundled cases, computed with PYPOWER.

The magnitudes and angles frozen in test_powerflow.cpp come from this script:

    pip install pypower
    python tests/oracles/pypower_reference.py
"""
import re
import sys
from pathlib import Path

import numpy as np
from pypower.api import ppoption, runpf

DATA = Path(__file__).resolve().parents[2] / "data"


def load_case(path):
    text = path.read_text()

    def matrix(name):
        body = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S).group(1)
        rows = []
        for line in body.split("\n"):
            line = line.split("%")[0].strip().rstrip(";").strip()
            if line:
                rows.append([float(x) for x in line.split()])
        return np.array(rows)

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", text).group(1))
    return {"version": "2", "baseMVA": base, "bus": matrix("bus"), "gen": matrix("gen"),
            "branch": matrix("branch")}


def main():
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12)
    for name in ("case14", "case30"):
        res, ok = runpf(load_case(DATA / f"{name}.m"), opt)
        if not ok:
            sys.exit(f"{name}: power flow failed")
        print(name)
        print("  v   =", ", ".join(f"{v:.10f}" for v in res["bus"][:, 7]))
        print("  deg =", ", ".join(f"{a:.10f}" for a in res["bus"][:, 8]))


if __name__ == "__main__":
    main()
