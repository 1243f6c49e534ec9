"""Dense tensor with a reverse-mode differentiation record."""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError, DimensionError

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        dtype = np.dtype(dtype)
        if dtype not in DTYPES:
            raise ContractError(f"unsupported dtype {dtype}; expected float32 or float64")
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype not in DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Node:
    """One recorded primitive application: its inputs and the rule mapping the
    output gradient to input gradients."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A dense float32/float64 array, optionally linked into a differentiation tape.

    Leaves created with ``requires_grad=True`` accumulate ``grad`` when
    :func:`backward` is run on a scalar that depends on them. Tensors created with
    ``requires_grad=False`` never accumulate gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._node: Optional[Node] = None
        self.name = name

    # -- construction -------------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._node = Node(op, parents, backward_fn) if out.requires_grad else None
        return out

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        from . import ops

        return ops.astype(self, dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> Dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


class Tape:
    """Ordered record of the primitive applications reachable from a root.

    The order is a topological sort (parents before children); replaying it in
    reverse gives a valid order for propagating gradients.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = []
        seen = set()
        # iterative DFS; recursion depth would overflow on long scans
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.nodes.append(t)
                continue
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p in t._node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> List[Tensor]:
        return [t for t in self.nodes if t._node is None]

    def replay(self, seed: np.ndarray) -> Dict[Tensor, np.ndarray]:
        grads: Dict[int, np.ndarray] = {id(self.root): seed}
        out: Dict[Tensor, np.ndarray] = {}
        for t in reversed(self.nodes):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                out[t] = g
                continue
            parent_grads = t._node.backward_fn(g)
            for p, pg in zip(t._node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise DimensionError(
                        f"gradient shape {pg.shape} does not match tensor shape {p.shape} in op {t._node.op!r}"
                    )
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return out


def backward(root: Tensor) -> Dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(leaf) to every reachable leaf and accumulate into ``.grad``.

    Returns the map from leaf tensor to the gradient contributed by this call.
    """
    if root.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward root is not linked to a tape (requires_grad=False)")
    tape = Tape(root)
    leaf_grads = tape.replay(np.ones_like(root.data))
    for leaf, g in leaf_grads.items():
        g = g.astype(leaf.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaf_grads
