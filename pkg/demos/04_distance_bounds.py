"""
Feature-distance bounds on a trained model
==========================================

Once trained, the largest residual eps of the linear attribute relation and
the spectral norm of G bound how far apart samples of one identity, and the
centroids of attribute-similar identities, can lie. Compute the report for
a toy model and list the per-class numbers.
"""

from attrloss.evaluation import verify_distance_bounds
from attrloss.trainer import toy_experiment

result = toy_experiment(seed=1, iterations=1500)
ds, run = result.dataset, result.attribute_aware
report = verify_distance_bounds(run.features, ds.labels, ds.attributes, run.params.G, tau=0.01)
print(report.summary())

for k in report.qualifying_classes:
    print(f"class {k}: max intra distance {report.intra_class_max[k]:.4f} <= {report.intra_bound:.4f}")
for k1, k2, d, bound, ok in report.centroid_pairs:
    print(f"centroids {k1}-{k2}: {d:.4f} <= {bound:.4f} {'ok' if ok else 'VIOLATED'}")
