"""Tour of the bounded buffer strategies on a small 2-D stream.

Feeds the same 60-point stream (two drifting class clusters) into every
strategy at a per-class capacity of 4 and prints what each one kept.
Run: python demos/01_buffer_strategies.py
"""

import numpy as np

from protostream import BOUNDED_STRATEGIES, BufferManager

rng = np.random.default_rng(7)

# two classes, the second one drifts to the right halfway through
points, labels = [], []
for t in range(30):
    points.append(rng.normal([0.0, 0.0], 0.3))
    labels.append(0)
    center = [4.0, 0.0] if t < 15 else [8.0, 0.0]
    points.append(rng.normal(center, 0.3))
    labels.append(1)

for strategy in BOUNDED_STRATEGIES:
    manager = BufferManager(strategy, capacity=4, num_classes=2, seed=0)
    for t, (x, y) in enumerate(zip(points, labels), start=1):
        manager.insert(x, y, t)
    vectors, kept_labels = manager.contents()
    print(f"\n{strategy}: {len(vectors)} prototypes, "
          f"memory cost {manager.memory_cost()} units")
    for v, y in zip(vectors, kept_labels):
        print(f"  class {y}: [{v[0]:7.3f}, {v[1]:7.3f}]")

# the merging strategy never loses mass: prototype counts still sum to
# the number of inserted points
from protostream.buffers import ExStreamBuffer

buf = ExStreamBuffer(capacity=4)
class0 = [x for x, y in zip(points, labels) if y == 0]
for x in class0:
    buf.insert(x)
print(f"\nexstream count conservation: counts {buf.counts().tolist()} "
      f"sum to {int(buf.counts().sum())} ({len(class0)} points inserted)")

# reservoir contents depend on the seed, nothing else does
for seed in (0, 1):
    manager = BufferManager("reservoir", capacity=4, num_classes=2, seed=seed)
    for t, (x, y) in enumerate(zip(points, labels), start=1):
        manager.insert(x, y, t)
    vectors, _ = manager.contents()
    print(f"reservoir seed {seed}: first kept point "
          f"[{vectors[0][0]:.3f}, {vectors[0][1]:.3f}]")
