"""
Label transfer between two shifted Gaussian mixtures
====================================================

Source and target are labelled 3-class mixtures; the target is rotated and
shifted.  Target points become atoms, source points are mapped onto them,
and each source point takes the label of its atom.  The partial runs train
on a fraction of the target atoms and then predict heights for the rest.

The full-size run (4000 points, 512-wide net) takes a few minutes on one
core; pass a smaller count for a quick look.

Run:  python demos/domain_adaptation.py [count]
"""

import sys

from neural_sdot.apps import domain_adapt, domain_adapt_partial
from neural_sdot.synth import make_da_dataset

count = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
source, target = make_da_dataset(count, classes=3, seed=0)

full = domain_adapt(source, target)
print(f"all atoms trained: accuracy {100 * full.accuracy:.2f}% "
      f"({full.train.iterations} iterations, |grad| = {full.train.grad_norm:.4f})")

for ratio in (0.7, 0.8, 0.9):
    p = domain_adapt_partial(source, target, ratio)
    print(f"r={ratio}: part-data {100 * p.accuracy_part:.2f}%, all-data {100 * p.accuracy_all:.2f}%, "
          f"prediction {1e3 * p.predict_time:.1f}ms")
