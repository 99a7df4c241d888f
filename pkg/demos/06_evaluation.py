"""
Identification and verification
===============================

Train on a preset-shaped synthetic set, hold out fresh identities, enroll
the first sample of each as gallery and score the rest as probes.
"""

from attrloss.attribute_loss import LossCombo
from attrloss.experiments import UnevenSetup, evaluate_model
from attrloss.trainer import train

setup = UnevenSetup(iterations=1000)
train_ds, test_ds = setup.datasets("set1", seed=0)
spec = setup.mlp()
params, log = train(train_ds, spec, setup.train_config(LossCombo.SOFTMAX_ATTR, seed=0))
print(f"final batch loss {log.records[-1].loss:.4f}, pairs in last batch {log.records[-1].pairs}")

report = evaluate_model(params, spec, test_ds)
print(report.summary())
print("CMC, first five ranks:", [round(report.rank(k), 4) for k in range(1, 6)])
