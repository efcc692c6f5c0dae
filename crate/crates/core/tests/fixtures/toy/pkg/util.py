import os


def helper(x):
    return os.path.join("a", str(x))


class Box:
    def __init__(self, value):
        self.value = helper(value)

    def get(self):
        return self.value
