"""Обратный режим автоматического дифференцирования с градиентом от градиента.

Граф хранит упорядоченный список операций. Обратный проход сам строит новые
узлы графа, поэтому полученный градиент можно дифференцировать повторно
(двойной backprop для штрафа на градиент критика).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .config import NORM_EPS
from .schemas import NumericError


class AutodiffError(NumericError):
    """Ошибка вычислительного графа."""
    pass


class ShapeMismatchError(AutodiffError):
    """Несогласованные формы операндов."""
    pass


class UnboundLeafError(AutodiffError):
    """Лист графа без значения."""
    pass


class NonScalarRootError(AutodiffError):
    """Градиент берется только от скаляра."""
    pass


class UnsupportedOpError(AutodiffError):
    """Операция не поддерживает дифференцирование."""
    pass


class LeafKind(str, Enum):
    """Виды листьев графа."""
    PARAMETER = "parameter"
    INPUT = "input"
    CONSTANT = "constant"


@dataclass(frozen=True)
class Node:
    """Запись операции: вид, индексы родителей, атрибуты."""
    op: str
    parents: Tuple[int, ...] = ()
    attrs: Mapping[str, object] = field(default_factory=dict)
    leaf: Optional[LeafKind] = None
    name: Optional[str] = None


class Gradient(Mapping[str, np.ndarray]):
    """Градиенты по параметрам, по одному массиву на параметр."""

    def __init__(self, values: Mapping[str, np.ndarray]):
        self._values = {name: np.asarray(value, dtype=np.float64) for name, value in values.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def scaled(self, factor: float) -> "Gradient":
        return Gradient({name: factor * value for name, value in self._values.items()})

    def __add__(self, other: "Gradient") -> "Gradient":
        if set(self) != set(other):
            raise ShapeMismatchError("градиенты по разным наборам параметров")
        return Gradient({name: self[name] + other[name] for name in self})

    def check_congruent(self, params: Mapping[str, np.ndarray]):
        """Проверить совпадение форм с параметрами."""
        for name, value in params.items():
            if name not in self._values:
                raise ShapeMismatchError(f"нет градиента для параметра '{name}'")
            if self._values[name].shape != np.shape(value):
                raise ShapeMismatchError(
                    f"форма градиента '{name}' {self._values[name].shape} "
                    f"не совпадает с параметром {np.shape(value)}"
                )


# --- прямые вычисления --------------------------------------------------------

def _same_shape(op: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: формы {a.shape} и {b.shape} не совпадают")


def _fwd_add(vals, attrs):
    _same_shape("add", vals[0], vals[1])
    return vals[0] + vals[1]


def _fwd_mul(vals, attrs):
    _same_shape("mul", vals[0], vals[1])
    return vals[0] * vals[1]


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: формы {a.shape} и {b.shape} несовместимы")
    return a @ b


def _fwd_transpose(vals, attrs):
    if vals[0].ndim != 2:
        raise ShapeMismatchError(f"transpose: ожидается матрица, получено {vals[0].shape}")
    return vals[0].T.copy()


def _fwd_add_row(vals, attrs):
    m, v = vals
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeMismatchError(f"add_row: формы {m.shape} и {v.shape} несовместимы")
    return m + v


def _fwd_sum_rows(vals, attrs):
    if vals[0].ndim != 2:
        raise ShapeMismatchError(f"sum_rows: ожидается матрица, получено {vals[0].shape}")
    return vals[0].sum(axis=0)


def _fwd_broadcast_rows(vals, attrs):
    v, like = vals
    return np.broadcast_to(v, like.shape).copy()


def _fwd_sum_cols(vals, attrs):
    if vals[0].ndim != 2:
        raise ShapeMismatchError(f"sum_cols: ожидается матрица, получено {vals[0].shape}")
    return vals[0].sum(axis=1)


def _fwd_broadcast_cols(vals, attrs):
    v, like = vals
    if like.ndim != 2 or v.shape != (like.shape[0],):
        raise ShapeMismatchError(f"broadcast_cols: формы {v.shape} и {like.shape} несовместимы")
    return np.broadcast_to(v[:, None], like.shape).copy()


def _fwd_relu(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _fwd_step(vals, attrs):
    return (vals[0] > 0.0).astype(np.float64)


def _fwd_square(vals, attrs):
    return vals[0] * vals[0]


def _fwd_affine(vals, attrs):
    return attrs["scale"] * vals[0] + attrs["shift"]


def _fwd_reciprocal(vals, attrs):
    return 1.0 / vals[0]


def _fwd_mean(vals, attrs):
    return np.asarray(vals[0].mean())


def _fwd_sum(vals, attrs):
    return np.asarray(vals[0].sum())


def _fwd_fill(vals, attrs):
    g, like = vals
    return np.full(like.shape, np.asarray(g).item())


def _fwd_spread_mean(vals, attrs):
    g, like = vals
    return np.full(like.shape, np.asarray(g).item() / like.size)


def _fwd_norm(vals, attrs):
    total = sum(float(np.sum(v * v)) for v in vals)
    return np.asarray(np.sqrt(total + attrs["eps"]))


def _fwd_row_norm(vals, attrs):
    if vals[0].ndim != 2:
        raise ShapeMismatchError(f"row_norm: ожидается матрица, получено {vals[0].shape}")
    return np.sqrt(np.sum(vals[0] * vals[0], axis=1) + attrs["eps"])


def _fwd_concat_cols(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeMismatchError(f"concat_cols: формы {a.shape} и {b.shape} несовместимы")
    return np.concatenate([a, b], axis=1)


def _fwd_split(vals, attrs):
    g, like = vals
    width = like.shape[1]
    if attrs["side"] == "left":
        return g[:, :width].copy()
    return g[:, g.shape[1] - width:].copy()


def _fwd_pad_into(vals, attrs):
    v, like = vals
    out = np.zeros(like.shape)
    width = v.shape[1]
    if attrs["side"] == "left":
        out[:, :width] = v
    else:
        out[:, like.shape[1] - width:] = v
    return out


# --- обратные шаги, выраженные узлами графа -----------------------------------

def _vjp_add(graph, idx, g, needs):
    return [g, g]


def _vjp_mul(graph, idx, g, needs):
    a, b = graph.node(idx).parents
    return [
        graph.mul(g, b) if needs[0] else None,
        graph.mul(g, a) if needs[1] else None,
    ]


def _vjp_matmul(graph, idx, g, needs):
    a, b = graph.node(idx).parents
    return [
        graph.matmul(g, graph.transpose(b)) if needs[0] else None,
        graph.matmul(graph.transpose(a), g) if needs[1] else None,
    ]


def _vjp_transpose(graph, idx, g, needs):
    return [graph.transpose(g)]


def _vjp_add_row(graph, idx, g, needs):
    return [g, graph.sum_rows(g) if needs[1] else None]


def _vjp_sum_rows(graph, idx, g, needs):
    (m,) = graph.node(idx).parents
    return [graph.broadcast_rows(g, m)]


def _vjp_broadcast_rows(graph, idx, g, needs):
    return [graph.sum_rows(g), None]


def _vjp_sum_cols(graph, idx, g, needs):
    (m,) = graph.node(idx).parents
    return [graph.broadcast_cols(g, m)]


def _vjp_broadcast_cols(graph, idx, g, needs):
    return [graph.sum_cols(g), None]


def _vjp_relu(graph, idx, g, needs):
    (x,) = graph.node(idx).parents
    return [graph.mul(g, graph.step(x))]


def _vjp_step(graph, idx, g, needs):
    # производная ступеньки равна нулю везде, где определена
    return [None]


def _vjp_square(graph, idx, g, needs):
    (x,) = graph.node(idx).parents
    return [graph.mul(g, graph.affine(x, 2.0))]


def _vjp_affine(graph, idx, g, needs):
    return [graph.affine(g, graph.node(idx).attrs["scale"])]


def _vjp_reciprocal(graph, idx, g, needs):
    # d(1/x) = -(1/x)^2
    return [graph.mul(g, graph.affine(graph.square(idx), -1.0))]


def _vjp_mean(graph, idx, g, needs):
    (x,) = graph.node(idx).parents
    return [graph.spread_mean(g, x)]


def _vjp_sum(graph, idx, g, needs):
    (x,) = graph.node(idx).parents
    return [graph.fill(g, x)]


def _vjp_fill(graph, idx, g, needs):
    return [graph.sum(g), None]


def _vjp_spread_mean(graph, idx, g, needs):
    return [graph.mean(g), None]


def _vjp_norm(graph, idx, g, needs):
    scale = graph.mul(g, graph.reciprocal(idx))
    return [
        graph.mul(graph.fill(scale, x), x) if need else None
        for x, need in zip(graph.node(idx).parents, needs)
    ]


def _vjp_row_norm(graph, idx, g, needs):
    (x,) = graph.node(idx).parents
    scale = graph.mul(g, graph.reciprocal(idx))
    return [graph.mul(graph.broadcast_cols(scale, x), x)]


def _vjp_concat_cols(graph, idx, g, needs):
    a, b = graph.node(idx).parents
    return [
        graph.split(g, a, "left") if needs[0] else None,
        graph.split(g, b, "right") if needs[1] else None,
    ]


def _vjp_split(graph, idx, g, needs):
    source = graph.node(idx).parents[0]
    return [graph.pad_into(g, source, graph.node(idx).attrs["side"]), None]


def _vjp_pad_into(graph, idx, g, needs):
    v = graph.node(idx).parents[0]
    return [graph.split(g, v, graph.node(idx).attrs["side"]), None]


@dataclass(frozen=True)
class _OpSpec:
    forward: Callable[[List[np.ndarray], Mapping[str, object]], np.ndarray]
    vjp: Optional[Callable[..., List[Optional[int]]]]


_OPS: Dict[str, _OpSpec] = {
    "add": _OpSpec(_fwd_add, _vjp_add),
    "mul": _OpSpec(_fwd_mul, _vjp_mul),
    "matmul": _OpSpec(_fwd_matmul, _vjp_matmul),
    "transpose": _OpSpec(_fwd_transpose, _vjp_transpose),
    "add_row": _OpSpec(_fwd_add_row, _vjp_add_row),
    "sum_rows": _OpSpec(_fwd_sum_rows, _vjp_sum_rows),
    "broadcast_rows": _OpSpec(_fwd_broadcast_rows, _vjp_broadcast_rows),
    "sum_cols": _OpSpec(_fwd_sum_cols, _vjp_sum_cols),
    "broadcast_cols": _OpSpec(_fwd_broadcast_cols, _vjp_broadcast_cols),
    "relu": _OpSpec(_fwd_relu, _vjp_relu),
    "step": _OpSpec(_fwd_step, _vjp_step),
    "square": _OpSpec(_fwd_square, _vjp_square),
    "affine": _OpSpec(_fwd_affine, _vjp_affine),
    "reciprocal": _OpSpec(_fwd_reciprocal, _vjp_reciprocal),
    "mean": _OpSpec(_fwd_mean, _vjp_mean),
    "sum": _OpSpec(_fwd_sum, _vjp_sum),
    "fill": _OpSpec(_fwd_fill, _vjp_fill),
    "spread_mean": _OpSpec(_fwd_spread_mean, _vjp_spread_mean),
    "norm": _OpSpec(_fwd_norm, _vjp_norm),
    "row_norm": _OpSpec(_fwd_row_norm, _vjp_row_norm),
    "concat_cols": _OpSpec(_fwd_concat_cols, _vjp_concat_cols),
    "split": _OpSpec(_fwd_split, _vjp_split),
    "pad_into": _OpSpec(_fwd_pad_into, _vjp_pad_into),
}

# Родители, через которые градиент не течет (задают только форму)
_SHAPE_ONLY_PARENTS = {
    "broadcast_rows": {1},
    "broadcast_cols": {1},
    "fill": {1},
    "spread_mean": {1},
    "split": {1},
    "pad_into": {1},
}


class ComputationGraph:
    """Вычислительный граф: листья, операции и кеш значений."""

    def __init__(self):
        self._nodes: List[Node] = []
        self._values: List[Optional[np.ndarray]] = []
        self._defaults: Dict[str, np.ndarray] = {}
        self._bindings: Dict[str, np.ndarray] = {}
        self._leaf_index: Dict[str, int] = {}
        self.root: Optional[int] = None

    # --- построение -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, index: int) -> Node:
        return self._nodes[index]

    @property
    def nodes(self) -> Tuple[Node, ...]:
        return tuple(self._nodes)

    def _leaf(self, kind: LeafKind, name: str, value) -> int:
        if name in self._leaf_index:
            raise AutodiffError(f"лист '{name}' уже существует")
        index = len(self._nodes)
        self._nodes.append(Node(op="leaf", leaf=kind, name=name))
        self._values.append(None)
        self._leaf_index[name] = index
        if value is not None:
            self._defaults[name] = np.asarray(value, dtype=np.float64)
        return index

    def parameter(self, name: str, value=None) -> int:
        """Лист-параметр (по нему берутся градиенты обучения)."""
        return self._leaf(LeafKind.PARAMETER, name, value)

    def input(self, name: str, value=None) -> int:
        """Лист-вход (данные)."""
        return self._leaf(LeafKind.INPUT, name, value)

    def const(self, value) -> int:
        """Константа, не зависящая от привязок."""
        index = len(self._nodes)
        self._nodes.append(Node(
            op="leaf",
            leaf=LeafKind.CONSTANT,
            attrs={"value": np.asarray(value, dtype=np.float64)}
        ))
        self._values.append(None)
        return index

    def _append(self, op: str, *parents: int, **attrs) -> int:
        index = len(self._nodes)
        for parent in parents:
            if not 0 <= parent < index:
                raise AutodiffError(f"{op}: родитель {parent} вне графа")
        self._nodes.append(Node(op=op, parents=tuple(parents), attrs=attrs))
        self._values.append(None)
        return index

    def add(self, a: int, b: int) -> int:
        return self._append("add", a, b)

    def mul(self, a: int, b: int) -> int:
        return self._append("mul", a, b)

    def matmul(self, a: int, b: int) -> int:
        return self._append("matmul", a, b)

    def transpose(self, a: int) -> int:
        return self._append("transpose", a)

    def add_row(self, m: int, v: int) -> int:
        return self._append("add_row", m, v)

    def sum_rows(self, m: int) -> int:
        return self._append("sum_rows", m)

    def broadcast_rows(self, v: int, like: int) -> int:
        return self._append("broadcast_rows", v, like)

    def sum_cols(self, m: int) -> int:
        return self._append("sum_cols", m)

    def broadcast_cols(self, v: int, like: int) -> int:
        return self._append("broadcast_cols", v, like)

    def relu(self, x: int) -> int:
        return self._append("relu", x)

    def step(self, x: int) -> int:
        return self._append("step", x)

    def square(self, x: int) -> int:
        return self._append("square", x)

    def affine(self, x: int, scale: float, shift: float = 0.0) -> int:
        return self._append("affine", x, scale=float(scale), shift=float(shift))

    def reciprocal(self, x: int) -> int:
        return self._append("reciprocal", x)

    def mean(self, x: int) -> int:
        return self._append("mean", x)

    def sum(self, x: int) -> int:
        return self._append("sum", x)

    def fill(self, g: int, like: int) -> int:
        return self._append("fill", g, like)

    def spread_mean(self, g: int, like: int) -> int:
        return self._append("spread_mean", g, like)

    def norm(self, *xs: int, eps: float = NORM_EPS) -> int:
        """Евклидова норма всех элементов xs, сглаженная eps."""
        return self._append("norm", *xs, eps=float(eps))

    def row_norm(self, x: int, eps: float = NORM_EPS) -> int:
        """Построчная евклидова норма матрицы."""
        return self._append("row_norm", x, eps=float(eps))

    def concat_cols(self, a: int, b: int) -> int:
        return self._append("concat_cols", a, b)

    def split(self, g: int, like: int, side: str) -> int:
        return self._append("split", g, like, side=side)

    def pad_into(self, v: int, like: int, side: str) -> int:
        return self._append("pad_into", v, like, side=side)

    # --- листья ----------------------------------------------------------------

    def leaf_index(self, name: str) -> int:
        if name not in self._leaf_index:
            raise UnboundLeafError(f"в графе нет листа '{name}'")
        return self._leaf_index[name]

    def leaves(self, kind: Optional[LeafKind] = None) -> Dict[str, int]:
        """Именованные листья, опционально одного вида."""
        return {
            name: index for name, index in self._leaf_index.items()
            if kind is None or self._nodes[index].leaf == kind
        }

    # --- вычисление --------------------------------------------------------------

    def bind(self, bindings: Optional[Mapping[str, object]] = None):
        """Задать значения листьев и сбросить кеш."""
        bindings = bindings or {}
        for name in bindings:
            if name not in self._leaf_index:
                raise UnboundLeafError(f"привязка к несуществующему листу '{name}'")
        self._bindings = {name: np.asarray(value, dtype=np.float64) for name, value in bindings.items()}
        self._values = [None] * len(self._nodes)

    def value(self, index: int) -> np.ndarray:
        """Значение узла; недостающие значения досчитываются по порядку."""
        if self._values[index] is None:
            for i in range(index + 1):
                if self._values[i] is None:
                    self._values[i] = self._compute(i)
        return self._values[index]

    def _compute(self, index: int) -> np.ndarray:
        node = self._nodes[index]
        if node.op == "leaf":
            if node.leaf == LeafKind.CONSTANT:
                return node.attrs["value"]
            if node.name in self._bindings:
                return self._bindings[node.name]
            if node.name in self._defaults:
                return self._defaults[node.name]
            raise UnboundLeafError(f"лист '{node.name}' не привязан")

        spec = _OPS[node.op]
        parent_values = [self._values[p] for p in node.parents]
        try:
            return spec.forward(parent_values, node.attrs)
        except ShapeMismatchError as e:
            raise ShapeMismatchError(f"узел {index}: {e}") from e

    def evaluate(self, bindings: Optional[Mapping[str, object]] = None, root: Optional[int] = None) -> np.ndarray:
        """Вычислить все узлы и вернуть значение корня."""
        root = self.root if root is None else root
        if root is None:
            root = len(self._nodes) - 1
        self.bind(bindings)
        for i in range(len(self._nodes)):
            self._values[i] = self._compute(i)
        return self._values[root]

    def copy(self) -> "ComputationGraph":
        """Новый граф с теми же узлами; записи узлов неизменяемы и разделяются."""
        other = ComputationGraph()
        other._nodes = list(self._nodes)
        other._values = list(self._values)
        other._defaults = dict(self._defaults)
        other._bindings = dict(self._bindings)
        other._leaf_index = dict(self._leaf_index)
        other.root = self.root
        return other

    # --- инварианты --------------------------------------------------------------

    def check_topology(self) -> bool:
        """Каждый родитель предшествует потомку."""
        return all(p < i for i, node in enumerate(self._nodes) for p in node.parents)

    def verify(self, atol: float = 0.0) -> bool:
        """Кешированные значения совпадают с повторным вычислением."""
        cached = [self.value(i) for i in range(len(self._nodes))]
        fresh = self.copy()
        fresh._values = [None] * len(self._nodes)
        for i in range(len(self._nodes)):
            fresh._values[i] = fresh._compute(i)
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(cached, fresh._values))


def evaluate(graph: ComputationGraph, inputs: Optional[Mapping[str, object]] = None) -> np.ndarray:
    """Вычислить корень графа при заданных привязках листьев."""
    return graph.evaluate(inputs)


def _requires_grad(graph: ComputationGraph, targets: Iterable[int], upto: int) -> List[bool]:
    """Какие узлы зависят от целевых листьев."""
    targets = set(targets)
    requires = [False] * (upto + 1)
    for i in range(upto + 1):
        node = graph.node(i)
        if i in targets:
            requires[i] = True
            continue
        shape_only = _SHAPE_ONLY_PARENTS.get(node.op, set())
        requires[i] = any(
            requires[p] for k, p in enumerate(node.parents) if k not in shape_only
        )
    return requires


def _backward(graph: ComputationGraph, root: int, targets: Sequence[int]) -> Dict[int, int]:
    """Достроить в graph узлы градиента корня по целевым листьям.

    Возвращает отображение индекс листа -> индекс узла градиента.
    """
    root_value = graph.value(root)
    if np.size(root_value) != 1:
        raise NonScalarRootError(f"корень имеет форму {np.shape(root_value)}, ожидается скаляр")

    requires = _requires_grad(graph, targets, root)
    grads: Dict[int, int] = {root: graph.const(np.ones_like(root_value))}

    for index in range(root, -1, -1):
        if index not in grads or not requires[index]:
            continue
        node = graph.node(index)
        if node.op == "leaf":
            continue

        spec = _OPS.get(node.op)
        if spec is None or spec.vjp is None:
            raise UnsupportedOpError(f"операция '{node.op}' не дифференцируется")

        shape_only = _SHAPE_ONLY_PARENTS.get(node.op, set())
        needs = [requires[p] and k not in shape_only for k, p in enumerate(node.parents)]
        parent_grads = spec.vjp(graph, index, grads[index], needs)

        for parent, need, grad in zip(node.parents, needs, parent_grads):
            if grad is None or not need:
                continue
            grads[parent] = grad if parent not in grads else graph.add(grads[parent], grad)

    result = {}
    for target in targets:
        if target in grads:
            result[target] = grads[target]
        else:
            result[target] = graph.const(np.zeros_like(graph.value(target)))
    return result


def gradient(graph: ComputationGraph, root: Optional[int], wrt: Iterable[str]) -> Gradient:
    """Градиент скалярного корня по именованным листьям."""
    work = graph.copy()
    root = work.root if root is None else root
    names = list(wrt)
    targets = [work.leaf_index(name) for name in names]

    grads = _backward(work, root, targets)
    values = {name: work.value(grads[index]) for name, index in zip(names, targets)}
    logger.debug(f"Градиент по {len(names)} листьям, узлов в графе: {len(work)}")
    return Gradient(values)


def gradient_as_graph(
    graph: ComputationGraph,
    root: Optional[int],
    wrt: Sequence[str],
    reducer: Optional[Callable[[ComputationGraph, List[int]], int]] = None
) -> ComputationGraph:
    """Новый граф, корень которого - скалярная функция градиента по входам.

    По умолчанию корень - евклидова норма градиента по всем листьям wrt.
    Результат дифференцируем по параметрам исходного графа.
    """
    work = graph.copy()
    root = work.root if root is None else root
    targets = []
    for name in wrt:
        index = work.leaf_index(name)
        if work.node(index).leaf != LeafKind.INPUT:
            raise AutodiffError(f"лист '{name}' не является входом")
        targets.append(index)

    grads = _backward(work, root, targets)
    grad_nodes = [grads[index] for index in targets]

    if reducer is None:
        new_root = work.norm(*grad_nodes)
    else:
        new_root = reducer(work, grad_nodes)

    if np.size(work.value(new_root)) != 1:
        raise NonScalarRootError("функция градиента должна быть скалярной")
    work.root = new_root
    return work
