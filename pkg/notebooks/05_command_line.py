"""
Command line round trip
=======================

``lcmdiv fit`` writes a JSON result; ``lcmdiv se`` reads parameters back.
"""

# %%
import json
import tempfile
from pathlib import Path

from lcmdiv.cli import main
from lcmdiv.io import bundled_path

work = Path(tempfile.mkdtemp())
model, data = str(bundled_path("coleman.json")), str(bundled_path("coleman.csv"))
code = main(["fit", "--model", model, "--data", data, "--a", "2/3", "--starts", "100",
             "--out", str(work / "fit.json")])
doc = json.loads((work / "fit.json").read_text())
print(code, doc["family"], doc["objective"])
print(doc["theta"])

# %%
code = main(["se", "--model", model, "--theta", str(work / "fit.json"), "--n", "6658",
             "--out", str(work / "se.json")])
print(code, json.loads((work / "se.json").read_text())["asymptotics"]["se"])

# %%
main(["validate", "--model", model])
