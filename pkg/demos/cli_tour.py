"""
A tour of the command line
==========================

Runs each subcommand on a shipped scenario through ``gla.cli.main`` and prints
the exit code with a one-line digest of the JSON report.
"""
import contextlib
import io
import json
import tempfile
from pathlib import Path

from gla import cli


def run(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
        code = cli.main(list(argv))
    return code, buf.getvalue()


for cmd, scenario in [("validate", "so3"), ("tensors", "sphere"), ("identities", "curved_h"),
                      ("legendre", "quartic"), ("all", "flat2d")]:
    code, out = run(cmd, scenario, "--no-timestamp")
    rep = json.loads(out)
    worst = max((e["max_residual"] for s in rep["suites"] for e in s["entries"]), default=0.0)
    print(f"gla {cmd:<10} {scenario:<9} exit {code}  suites={len(rep['suites'])}  worst residual {worst:.1e}")

# %% Trajectories go to CSV
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "sphere.csv"
    code, out = run("integrate", "sphere", "--steps", "2000", "--out", str(path))
    lines = path.read_text().splitlines()
    print(f"integrate exit {code}: {len(lines) - 1} rows, columns {lines[0]}")

# %% Configuration errors exit with 3
with tempfile.TemporaryDirectory() as d:
    bad = Path(d) / "bad.json"
    doc = json.loads((cli.SCENARIO_DIR / "flat2d.json").read_text())
    doc["metric"] = {"g_h": [["1", "x[1]"], ["0", "1"]]}
    bad.write_text(json.dumps(doc))
    print("asymmetric metric exit", run("validate", str(bad))[0])
