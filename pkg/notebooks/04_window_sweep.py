# %% [markdown]
# # How much spatial context helps
#
# Train the reduced network once per window size and compare overall
# accuracy.  On the synthetic scene the effect is modest; the interesting
# part is the harness, which mirrors the window-size study done on real data.

# %%
import tempfile
from pathlib import Path

from hssnb.cli import main

work = Path(tempfile.mkdtemp())
main(["synth", "--out", str(work / "scene"), "--size", "32x32x16", "--classes", "3", "--seed", "7"])

# %%
main(["sweep", "--dataset", str(work / "scene"), "--out", str(work / "sweep"), "--preset", "reduced",
      "--epochs", "3", "--windows", "13,15,17,19"])

# %% [markdown]
# Each window gets its own run directory holding the checkpoint, history
# and metrics; `sweep.json` gathers the rows for plotting elsewhere.

# %%
print(sorted(p.name for p in (work / "sweep").iterdir()))
