def add(a, b):
    return a + b


def sub(a, b):
    return add(a, -b)


def mul(a, b):
    return a * b


def div(a, b):
    if b == 0:
        raise ZeroDivisionError("b must be non-zero")
    return mul(a, 1 / b)
