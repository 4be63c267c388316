"""
Command-line walkthrough
========================

Writes a CSV and a config to a temporary directory and drives every
``bctm`` subcommand through ``bctm.cli.main``; the same calls work from a
shell as ``bctm fit data.csv config.json --out fit.json`` and so on.
"""

import json
import math
import tempfile
from pathlib import Path

from bctm.cli import main
from bctm.simulation import SimScenario, generate_dataset

work = Path(tempfile.mkdtemp(prefix="bctm_demo_"))
data = generate_dataset(SimScenario(alpha_true=1.0, n=200), 0)
rows = ["Timept1,Timept2,Relapse,arm,dose"]
for i in range(len(data)):
    right = "" if math.isinf(data.right[i]) else repr(float(data.right[i]))
    rows.append(f"{float(data.left[i])!r},{right},{int(data.delta[i])},{int(data.X[i, 0])},{float(data.X[i, 1])!r}")
(work / "data.csv").write_text("\n".join(rows) + "\n")
config = {
    "columns": {"left": "Timept1", "right": "Timept2", "event": "Relapse", "z": ["arm", "dose"], "x": ["arm", "dose"]},
    "B": 1,
    "optimizer": "quasi-newton-with-bounds",
    "seed": 1,
}
(work / "config.json").write_text(json.dumps(config, indent=2))
cols = ["--left", "Timept1", "--right", "Timept2", "--event", "Relapse"]


def run(*argv):
    code = main([str(a) for a in argv])
    print(f"$ bctm {' '.join(str(a) for a in argv)}  -> exit {code}")
    return code


run("summary", work / "data.csv", "--group", "arm", *cols, "--out", work / "summary.json")
cells = json.loads((work / "summary.json").read_text())["cells"]
for key, cell in cells.items():
    print(f"   {key:8s} n={cell['Total']['n']:4d}  event%={cell['Total']['event_pct']:.2f}")

run("npmle", work / "data.csv", *cols, "--out", work / "npmle.json")
run("init", work / "data.csv", work / "config.json", "--out", work / "init.json")
run("fit", work / "data.csv", work / "config.json", "--sweep-B", "1..3", "--out", work / "sweep.json")
for row in json.loads((work / "sweep.json").read_text())["sweep"]:
    print(f"   B={row['B']}  loglik={row['loglik']:.4f}  AIC={row['aic']:.4f}")

run("fit", work / "data.csv", work / "config.json", "--out", work / "fit.json")
profiles = {"profiles": [{"name": "arm 0", "covariates": {"arm": 0, "dose": 10.0}},
                         {"name": "arm 1", "covariates": {"arm": 1, "dose": 10.0}}]}
(work / "profiles.json").write_text(json.dumps(profiles))
run("curves", work / "fit.json", work / "profiles.json", "--out", work / "curves")
print("   curve files:", sorted(p.name for p in (work / "curves").iterdir()))

(work / "scenario.json").write_text(json.dumps({"alpha_true": 0.5, "n": 200, "reps": 3,
                                                "optimizer": "quasi-newton-with-bounds"}))
run("simulate", work / "scenario.json", "--seed", 7, "--out", work / "mc.json")

# input errors exit with 2
run("fit", work / "missing.csv", work / "config.json")
print("outputs in", work)
