# Dense layers, Adam, and the finite-difference gradient checker.
import numpy as np

from acmr.ndcore import MLP, AdamState, adam_step, gradient_check

rng = np.random.default_rng(0)

# a 3 -> 8 -> 2 network; hidden relu, linear output
mlp = MLP.init([3, 8, 2], rng)
x = rng.normal(size=(5, 3))
target = rng.normal(size=(5, 2))


def loss_and_grads():
    mlp.zero_grad()
    out, caches = mlp.forward(x)
    diff = out - target
    mlp.backward(diff / len(x), caches)  # d/dout of 0.5 * mean squared error
    return 0.5 * float(np.sum(diff ** 2)) / len(x), mlp.named_gradients("mlp")


# backward pass against central differences
res = gradient_check(loss_and_grads, mlp.named_parameters("mlp"))
print("worst relative error:", res.max_relative_error, "at", res.worst_parameter, res.worst_index)

# a few Adam steps
state = AdamState(lr=0.05)
params = mlp.named_parameters("mlp")
for step in range(200):
    loss, grads = loss_and_grads()
    adam_step(params, grads, state)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss:.4f}")
print("final loss", loss_and_grads()[0])
