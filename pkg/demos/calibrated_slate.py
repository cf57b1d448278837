"""How the calibration weight trades relevance for a matched content mix.

One request with 20 candidate shelves (mostly music, some podcasts) and a
user whose history is 40% podcasts. As the weight on the calibration term
grows, the greedy slate shifts from the top-relevance shelves toward a mix
that tracks the target.
"""
import numpy as np

from calband.calibration import CalibrationConfig, empirical_distribution, greedy_construct
from calband.domain import ContentDistribution, Shelf

rng = np.random.default_rng(4)
candidates = []
for i in range(20):
    podcast = rng.random() < 0.3
    rel = float(np.clip(rng.normal(0.45 if podcast else 0.6, 0.15), 0, 1))
    dist = ContentDistribution([0.0, 1.0] if podcast else [1.0, 0.0])
    candidates.append(Shelf(f"{'pod' if podcast else 'mus'}{i:02d}", rel, dist))

target = ContentDistribution([0.6, 0.4])
print(f"target mix: music {target[0]:.2f}, podcast {target[1]:.2f}\n")
for lam in (0.0, 0.3, 0.6, 0.9, 1.0):
    slate = greedy_construct(candidates, target, CalibrationConfig(lam=lam, slate_size=5))
    q = empirical_distribution(slate)
    print(f"lam={lam:.1f}  podcast share {q[1]:.2f}  relevance {slate.relevance:.2f}  "
          f"{' '.join(slate.shelf_ids)}")
