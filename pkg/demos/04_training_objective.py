"""The training objective as a value and gradient oracle.

There is no network here. A single prediction is moved by subgradient
descent until it reproduces its cluster: mean box, target variance and
soft label.
"""

# %%
import numpy as np

from annocalib.core import Annotation, DatasetMeta, ImageAnnotations, Prediction
from annocalib.losses import descend, image_loss, loss_gradient
from annocalib.preprocess import cluster_annotations

np.set_printoptions(precision=4, suppress=True)

meta = DatasetMeta(num_classes=3, num_annotators=4)
image = ImageAnnotations("img", 300, 300, [
    Annotation([50, 60, 150, 170], 1, 1),
    Annotation([54, 58, 152, 166], 1, 2),
    Annotation([48, 63, 149, 171], 2, 3),
])
[cluster] = cluster_annotations(image, meta)
start = Prediction("img", [40, 40, 160, 160], [30, 30, 30, 30], [0.1, 0.3, 0.3, 0.3], 0.9)

# %%
loss = image_loss([cluster], [start], [(0, 0)], lam=0.1)
print(f"start: l_cls {loss.l_cls:.4f}  l_reg {loss.l_reg:.4f}  total {loss.l_total:.4f}")
print("d/d logits:", loss_gradient([cluster], [start], [(0, 0)], "class_logits")[0])

# %%
final = descend(cluster, start)
loss = image_loss([cluster], [final], [(0, 0)], lam=0.1)
print(f"after: l_cls {loss.l_cls:.4f}  l_reg {loss.l_reg:.6f}")
print("mean      ", final.mean, "target", cluster.mean_box)
print("variance  ", final.var, "target", cluster.target_var)
print("probs     ", final.class_probs, "target", cluster.soft_label)
