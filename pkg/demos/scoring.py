"""DER, main-speaker DER and macro F1 on small hand-made examples.

Run: python3 demos/scoring.py
"""

import numpy as np

from msvad import metrics

ref = np.zeros((10, 2), dtype=np.uint8)
ref[:, 0] = 1
hyp = ref.copy()
hyp[0, 0] = 0          # one missed main frame
hyp[3:5, 1] = 1        # two false-alarm background frames
d = metrics.der(ref, hyp)
print(f"miss {d.n_miss}, false alarm {d.n_fa}, confusion {d.n_confusion}, total {d.n_total} -> DER {d.der:.2f}")
print(f"DER_main {metrics.der_main(ref, hyp):.2f} (background errors do not count)")

swap = np.array([[1, 0], [1, 0]]), np.array([[0, 1], [0, 1]])
print(f"main speech scored as background: DER {metrics.der(*swap).der:.1f} (all confusion)")

samples = [(ref, ref), (np.array([[1, 0]] * 4 + [[0, 0]] * 4), np.array([[1, 0]] * 2 + [[0, 0]] * 4 + [[1, 0]] * 2))]
print(f"macro F1 over samples with F1 1.0 and 0.5: {metrics.macro_f1(samples):.2f}")

print("\nRTTM for the hypothesis:")
for line in metrics.to_rttm("demo", hyp, 0.03):
    print(" ", line)
