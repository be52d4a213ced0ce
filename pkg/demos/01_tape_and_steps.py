# %% [markdown]
# Two building blocks before any training: the little reverse-mode tape and
# the deterministic DDIM step pair.

# %%
import numpy as np

from toydiff import numerics as nx
from toydiff.schedule import ddim_invert_step, ddim_sample_step, make_schedule

# %% Gradients come from replaying the tape backwards.
g = nx.Graph()
x = g.leaf([1.0, 2.0, -0.5])
w = g.leaf(np.eye(3) * 2.0)
y = nx.silu(nx.matmul(nx.reshape(x, (1, 3)), w))
loss = nx.sq_l2(y)
grads = g.backward(loss)
print("loss", loss.value)
print("d loss / dx", grads[x.id])

# %% ...and they agree with central differences.
def f(v):
    return float(nx.sq_l2(nx.silu(nx.matmul(v.reshape(1, 3), np.eye(3) * 2.0))))

print("finite differences", nx.finite_difference(f, np.array([1.0, 2.0, -0.5])))

# %% Only scalar broadcasting is allowed, anything else fails loudly.
try:
    nx.add(np.ones((2, 3)), np.ones(3))
except nx.ShapeError as exc:
    print("ShapeError:", exc)

# %% The schedule: 1000 training levels, 60 visited at inference.
s = make_schedule()
print("first levels", s.levels()[:5], "... last", s.levels()[-1])
print("alpha_bar at 0 / 500 / 983:", s.alpha_bar(0), s.alpha_bar(500), s.alpha_bar(983))

# %% A sample step and an invert step with the same noise estimate undo each other.
rng = np.random.default_rng(0)
z, eps = rng.standard_normal(256), rng.standard_normal(256)
down = ddim_sample_step(s, z, eps, 600, 300)
up = ddim_invert_step(s, down, eps, 300, 600)
print("round-trip error", np.abs(up - z).max())
# In a real inversion the two legs query the model at different points, so
# the noise estimates differ slightly; that gap is what accumulates into a
# reconstruction that drifts from the input.
