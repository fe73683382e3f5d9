# %% [markdown]
# # Walking the network one layer at a time
#
# Build the full-size model (25x25 window, 30 principal components, 16
# classes) and push a single random patch through it.  Every intermediate
# shape and every trainable-parameter count is printed next to its layer
# name, so the table can be read against the published layer summary.

# %%
import numpy as np

from hssnb import build_model, make_rng

model = build_model(rng=make_rng(0))
patch = make_rng(1).normal(size=(1,) + model.input_shape)
probs, cache = model.forward(patch, training=False)

# %%
counts = model.parameter_counts()
print(f"{'layer':<18}{'output shape':<20}{'params':>10}")
for name, shape in model.shape_chain():
    print(f"{name:<18}{str(shape):<20}{counts.get(name, 0):>10,}")
print(f"{'total':<38}{model.parameter_count:>10,}")

# %% [markdown]
# The two reshapes are where the architecture changes dimensionality: the
# spectral axis of the last 3D feature map is folded into channels
# (18 * 32 = 576), and later each row of the 2D feature map becomes one
# LSTM time step (15 * 128 = 1920 features per step).

# %%
print("class probabilities sum to", float(probs.sum()))
print("most likely class:", int(np.argmax(probs)) + 1)
