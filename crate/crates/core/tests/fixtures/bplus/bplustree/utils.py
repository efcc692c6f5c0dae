import itertools
from typing import Iterable


def pairwise(iterable: Iterable):
    a, b = itertools.tee(iterable)
    next(b, None)
    return zip(a, b)
