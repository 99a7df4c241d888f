"""
Losses and their gradients
==========================

Evaluate the four losses on a tiny batch and confirm each analytic gradient
against central differences.
"""

import numpy as np

from attrloss.attribute_loss import attribute_loss, select_pairs
from attrloss.core import encode_attributes
from attrloss.gradcheck import numerical_gradient, relative_error
from attrloss.losses import BatchFeatures, angular_softmax_loss, center_loss, softmax_loss

rng = np.random.default_rng(0)

# Six samples, three identities. Identities 0 and 1 share gender, ethnicity
# and (almost) age, so their cross pairs fall under the attribute threshold.
attrs = np.array([
    encode_attributes("male", "caucasian", 30),
    encode_attributes("male", "caucasian", 30),
    encode_attributes("male", "caucasian", 30.2),
    encode_attributes("male", "caucasian", 30.2),
    encode_attributes("female", "asian", 60),
    encode_attributes("female", "asian", 60),
])
batch = BatchFeatures(rng.normal(size=(6, 4)), np.array([0, 0, 1, 1, 2, 2]), attrs)
W, b = rng.normal(size=(4, 3)), np.zeros(3)
centers = rng.normal(size=(3, 4))
G = rng.normal(size=(4, 3))

pairs = select_pairs(batch, tau=0.01)
print("pairs under tau=0.01:", sorted(pairs.as_set()))

for name, out in [
    ("softmax", softmax_loss(batch, W, b)),
    ("center", center_loss(batch, centers)),
    ("angular m=4", angular_softmax_loss(batch, W, 4)),
    ("attribute", attribute_loss(batch, pairs, G)),
]:
    print(f"{name:<12} value {out.value:.6f}")

# The attribute loss is zero exactly when feature differences are the
# linear image of attribute differences.
aligned = batch.with_features(attrs @ G.T)
print("attribute loss on aligned features:", attribute_loss(aligned, pairs, G).value)

# Gradient check of the attribute loss w.r.t. the features.
analytic = attribute_loss(batch, pairs, G).grad_features
numeric = numerical_gradient(lambda f: attribute_loss(batch.with_features(f), pairs, G).value, batch.features)
print("relative error, attribute grad:", relative_error(analytic, numeric))
