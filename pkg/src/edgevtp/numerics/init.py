import numpy as np

from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape, name=None) -> Tensor:
    # U(-1/sqrt(fan_in), 1/sqrt(fan_in)): kaiming_uniform with a=sqrt(5)
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
