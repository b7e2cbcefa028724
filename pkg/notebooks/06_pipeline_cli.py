# %% [markdown]
# # The whole pipeline from the command line
#
# `serpsplit pipeline` runs ingest, projection, the k sweep, partitioning
# and assignment, writing one artifact per stage plus a manifest with
# checksums. Without an input it uses the bundled toy report.

# %%
import json
import tempfile
from pathlib import Path

from serpsplit.cli import main

out = Path(tempfile.mkdtemp())
main(["pipeline", "--out-dir", str(out), "--seed", "1", "--no-timings"])

# %%
for path in sorted(out.rglob("*")):
    if path.is_file():
        print(path.relative_to(out))
print((out / "plan.csv").read_text())
manifest = json.loads((out / "manifest.pipeline.json").read_text())
print(json.dumps(manifest["results"], indent=2))
