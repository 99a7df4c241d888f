"""
Two-dimensional toy embedding
=============================

Nine identities of one gender and ethnicity, three at each of ages 28, 50
and 70. Train a small network with 2-D features twice, once with softmax
alone and once with the attribute-aware term added, and compare how tightly
identities cluster and whether same-age identities sit closer together.
"""

from pathlib import Path

from attrloss.trainer import toy_experiment

result = toy_experiment(seed=0)
print(result.summary())

soft, attr = result.softmax, result.attribute_aware
print(f"span ratio (attr / softmax): {attr.span / soft.span:.3f}")
print(f"age ratio  (attr / softmax): {attr.age_ratio / soft.age_ratio:.3f}")

# Features for plotting with any tool: model, sample, label, age code, f0, f1.
out = Path("toy_features.csv")
out.write_text(result.features_csv(), encoding="utf-8")
print("wrote", out)
