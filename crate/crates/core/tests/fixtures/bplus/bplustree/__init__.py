from .tree import BPlusTree
