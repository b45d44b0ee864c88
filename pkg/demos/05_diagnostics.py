"""Feature-distribution diagnostics: diversity and discriminability.

Intra-class standard deviation measures feature diversity inside a class;
inter-class centroid separation, Mahalanobis distance and diagonal-Gaussian
KL measure how well classes stay apart.  Features are read at a chosen block
tap and can be exported as CSV for external embedding tools.

Run from the repository root:  python demos/05_diagnostics.py
"""
import os

import dfmlab as dl

data_dir = os.environ.get("DFMLAB_DATA", "./data")
_, test = dl.load_mnist(os.path.join(data_dir, "mnist"))
subset = test.subset(range(1000))

model = dl.build_model(dl.ArchitectureSpec("lenet", (1, 28, 28), 10), seed=0)
dl.insert_dfm(model, {1, 2}, r1=0.01, r2=0.1, seed=0)

for stochastic in (False, True):
    stats = dl.feature_stats(model, subset, tap=2, stochastic=stochastic)
    mode = "stochastic" if stochastic else "masks off "
    print(f"[{mode}] intra-class std {stats.intra_class_std:.4f} | "
          f"separation {stats.separation:.4f} | mahalanobis {stats.mahalanobis:.4f} | "
          f"mean off-diagonal KL {stats.kl[stats.kl > 0].mean():.4f}")

out = "features_tap2.csv"
dl.export_features(model, test.subset(range(200)), tap=2, path=out)
with open(out) as fh:
    header = fh.readline().split(",")
print(f"exported {out}: {len(header) - 1} feature dims per row "
      f"(raw material for t-SNE or similar)")
os.remove(out)
