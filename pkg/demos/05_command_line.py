"""The whole pipeline through the ``annocalib`` command line.

Runs in a temporary directory: simulate a dataset with distorted
predictions, cluster it, evaluate, fit and apply calibrators, evaluate
again.
"""

# %%
import json
import tempfile
from pathlib import Path

from annocalib.cli import main
from annocalib.simulate import SimulationConfig, voc_mix_profiles

work = Path(tempfile.mkdtemp(prefix="annocalib-demo-"))
config = SimulationConfig(seed=5, num_images=200, num_classes=4,
                          profiles=voc_mix_profiles(5, 1))
(work / "sim.json").write_text(json.dumps(
    {**config.to_dict(), "predictions": {"beta": 0.5, "var_scale": 4.0}}))


def run(*argv):
    print("$ annocalib", " ".join(str(a).replace(str(work) + "/", "") for a in argv))
    code = main([str(a) for a in argv])
    assert code == 0, code


# %%
run("simulate", work / "sim.json", "--out", work / "data")
run("cluster", work / "data" / "annotations.json", "--out", work / "clusters")
run("evaluate", work / "data" / "annotations.json", work / "data" / "predictions.json",
    "--out", work / "before")

# %% [markdown]
# Fitting and evaluating on the same images only to keep the demo short;
# a real run fits on a held-out split.

# %%
run("fit-calib", work / "data" / "annotations.json", work / "data" / "predictions.json",
    "--out", work / "bank")
run("apply-calib", work / "bank" / "calibrator.json", work / "data" / "predictions.json",
    "--out", work / "calibrated")
run("evaluate", work / "data" / "annotations.json",
    work / "calibrated" / "predictions.json", "--out", work / "after")
print("outputs in", work)
