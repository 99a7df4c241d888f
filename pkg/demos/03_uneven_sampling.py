"""
Balanced vs skewed training sets
================================

Synthetic identities follow the gender/age proportions of two presets: one
balanced (set1) and one skewed toward some groups (set2). For each preset,
train softmax only (combo a) and softmax plus the attribute-aware term
(combo b), then measure rank-1 identification on a held-out set.
"""

from attrloss.experiments import UnevenSetup, compare_combos
from attrloss.synth import load_preset

setup = UnevenSetup()
for preset in ("set1", "set2"):
    groups = load_preset(preset).groups(setup.scale)
    print(f"{preset}: {sum(groups.values())} training identities")

print(f"\n{'preset':<6} {'seed':>4} {'rank1 a':>8} {'rank1 b':>8}")
for preset in ("set1", "set2"):
    for seed in range(3):
        row = compare_combos(preset, seed, setup=setup)
        print(f"{preset:<6} {seed:>4} {row.rank1['a']:>8.4f} {row.rank1['b']:>8.4f}")
