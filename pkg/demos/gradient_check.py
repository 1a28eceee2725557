"""
Checking gradients against finite differences
=============================================

Every model is built from a handful of differentiable numpy ops. Here we
compare the analytic gradient of a Set Transformer loss with central
differences at a few random parameter coordinates.
"""

import numpy as np

from setloc import autograd as ag
from setloc.data import Scan
from setloc.models import ModelConfig, build_model
from setloc.training import total_loss

rng = np.random.default_rng(0)
bssids = [f"02:00:00:00:00:{i:02x}" for i in range(6)]
scan = Scan([(b, float(rng.uniform(-90, -40))) for b in bssids[:4]], (0.0, 0.0))

# a small model keeps the demo quick
model = build_model(ModelConfig("set_transformer", width=8, heads=2, hidden=8, multi_task=True, num_classes=3),
                    [scan])
target = np.array([0.3, -0.7])


def loss():
    return total_loss(model(scan), target, 2).total


ag.backward(loss())

h = 1e-5
for name, p in model.named_parameters()[:6]:
    idx = tuple(int(rng.integers(s)) for s in p.shape)
    old = p.data[idx]
    p.data[idx] = old + h
    up = loss().item()
    p.data[idx] = old - h
    down = loss().item()
    p.data[idx] = old
    numeric = (up - down) / (2 * h)
    print(f"{name:<22} {str(idx):<10} analytic {p.grad[idx]: .6e}  numeric {numeric: .6e}")
