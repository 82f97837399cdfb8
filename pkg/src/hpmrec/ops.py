"""Small numeric helpers shared by the model, graphs and optimizer."""
import numpy as np


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = np.exp(z - z.max())
    return z / z.sum()


def softmax_vjp(weights, grad_weights):
    """Gradient w.r.t. logits given the gradient w.r.t. ``softmax(logits)``."""
    return weights * (grad_weights - np.dot(weights, grad_weights))


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_uniform(rng, shape, dtype=np.float64):
    fan_out, fan_in = shape[0], shape[1]
    bound = xavier_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
