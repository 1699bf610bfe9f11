"""ReLU-сети прямого распространения: инициализация, вычисление, градиент по входу, диагностика."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator

from .autodiff import ComputationGraph
from .config import NETWORK_FORMAT
from .schemas import Architecture, ConfigError, DataError, NetworkDiagnostics, NumericError


class DimensionMismatchError(NumericError):
    """Размерность входа или выхода не совпадает с архитектурой."""
    pass


class NetworkFormatError(DataError):
    """Файл сети поврежден или имеет неизвестный формат."""
    pass


class Network(BaseModel):
    """ReLU-сеть h(x) = W^(L) σ(W^(L-1) ... σ(W^(0) x + b^(1)) ... + b^(L)).

    Смещения хранятся со знаком перед активацией: b^(l) = -v^(l), где v^(l) -
    сдвиг внутри σ_v(u) = max(u - v, 0).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    arch: Architecture
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @model_validator(mode="after")
    def _check_shapes(self) -> "Network":
        widths = self.arch.widths
        if len(self.weights) != self.arch.depth + 1 or len(self.biases) != self.arch.depth:
            raise ValueError("число матриц весов или векторов смещений не совпадает с глубиной")
        for l, w in enumerate(self.weights):
            if w.shape != (widths[l + 1], widths[l]):
                raise ValueError(f"W{l}: форма {w.shape}, ожидается {(widths[l + 1], widths[l])}")
        for l, b in enumerate(self.biases, start=1):
            if b.shape != (widths[l],):
                raise ValueError(f"b{l}: форма {b.shape}, ожидается {(widths[l],)}")
        return self

    # --- параметры ------------------------------------------------------------

    def parameters(self) -> Dict[str, np.ndarray]:
        """Параметры по именам W0..WL, b1..bL."""
        params = {f"W{l}": w for l, w in enumerate(self.weights)}
        params.update({f"b{l}": b for l, b in enumerate(self.biases, start=1)})
        return params

    def with_parameters(self, params: Mapping[str, np.ndarray]) -> "Network":
        """Новая сеть с теми же архитектурой и заменой параметров."""
        current = self.parameters()
        unknown = set(params) - set(current)
        if unknown:
            raise ConfigError(f"неизвестные параметры: {sorted(unknown)}")
        merged = {**current, **params}
        return Network(
            arch=self.arch,
            weights=[np.asarray(merged[f"W{l}"], dtype=np.float64) for l in range(self.arch.depth + 1)],
            biases=[np.asarray(merged[f"b{l}"], dtype=np.float64) for l in range(1, self.arch.depth + 1)]
        )

    # --- вычисление --------------------------------------------------------------

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.arch.input_dim:
            raise DimensionMismatchError(
                f"вход формы {x.shape}, ожидается размерность {self.arch.input_dim}"
            )
        return batch, single

    def forward(self, x) -> np.ndarray:
        """Выход сети для вектора (p0,) или батча (m, p0)."""
        batch, single = self._as_batch(x)
        h = batch @ self.weights[0].T
        for l in range(1, self.arch.depth + 1):
            h = np.maximum(h + self.biases[l - 1], 0.0) @ self.weights[l].T
        if self.arch.clamp:
            h = np.clip(h, -self.arch.output_bound, self.arch.output_bound)
        return h[0] if single else h

    def input_gradient(self, x) -> np.ndarray:
        """Точный градиент скалярного выхода (без ограничения F) по входу."""
        if self.arch.output_dim != 1:
            raise DimensionMismatchError(
                f"градиент по входу только для скалярного выхода, выход {self.arch.output_dim}"
            )
        batch, single = self._as_batch(x)

        masks = []
        h = batch @ self.weights[0].T
        for l in range(1, self.arch.depth + 1):
            pre = h + self.biases[l - 1]
            masks.append((pre > 0.0).astype(np.float64))
            h = np.maximum(pre, 0.0) @ self.weights[l].T

        g = np.ones((len(batch), 1)) @ self.weights[-1]
        for l in range(self.arch.depth, 0, -1):
            g = (g * masks[l - 1]) @ self.weights[l - 1]
        return g[0] if single else g

    def bind(self, graph: ComputationGraph, prefix: str) -> Dict[str, int]:
        """Добавить параметры в граф как листья '<prefix>.<name>'."""
        return {
            name: graph.parameter(f"{prefix}.{name}", value)
            for name, value in self.parameters().items()
        }

    def apply(self, graph: ComputationGraph, x: int, nodes: Mapping[str, int]) -> int:
        """Узел выхода сети для входного узла батча."""
        h = graph.matmul(x, graph.transpose(nodes["W0"]))
        for l in range(1, self.arch.depth + 1):
            h = graph.relu(graph.add_row(h, nodes[f"b{l}"]))
            h = graph.matmul(h, graph.transpose(nodes[f"W{l}"]))
        if self.arch.clamp:
            # clip(h, -F, F) = h - relu(h - F) + relu(-h - F)
            bound = self.arch.output_bound
            upper = graph.relu(graph.affine(h, 1.0, -bound))
            lower = graph.relu(graph.affine(h, -1.0, -bound))
            h = graph.add(graph.add(h, graph.affine(upper, -1.0)), lower)
        return h

    # --- диагностика -------------------------------------------------------------

    def sparsity(self, threshold: float = 0.0) -> int:
        """Число параметров с |θ| > threshold."""
        if threshold < 0:
            raise ValueError("порог должен быть неотрицательным")
        return int(sum(np.count_nonzero(np.abs(p) > threshold) for p in self.parameters().values()))

    def max_norm(self) -> float:
        """max |θ| по всем параметрам (в теории ограничен 1)."""
        return float(max(np.max(np.abs(p)) for p in self.parameters().values()))

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def diagnostics(self, threshold: float = 0.0) -> NetworkDiagnostics:
        """max|θ|, число ненулевых параметров и сравнение с бюджетом s архитектуры."""
        budget = self.arch.sparsity_budget
        count = self.sparsity(threshold)
        return NetworkDiagnostics(
            max_norm=self.max_norm(),
            sparsity=count,
            parameter_count=self.parameter_count(),
            sparsity_budget=budget,
            within_budget=None if budget is None else count <= budget
        )


def init(arch: Architecture, rng: np.random.Generator) -> Network:
    """Веса ~ U[-sqrt(6/(p_l + p_{l+1})), +sqrt(...)], смещения нулевые."""
    widths = arch.widths
    weights = []
    for l in range(arch.depth + 1):
        limit = np.sqrt(6.0 / (widths[l] + widths[l + 1]))
        weights.append(rng.uniform(-limit, limit, size=(widths[l + 1], widths[l])))
    biases = [np.zeros(widths[l]) for l in range(1, arch.depth + 1)]
    return Network(arch=arch, weights=weights, biases=biases)


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


def input_gradient(net: Network, x) -> np.ndarray:
    return net.input_gradient(x)


def sparsity(net: Network, threshold: float = 0.0) -> int:
    return net.sparsity(threshold)


# --- сериализация ----------------------------------------------------------------

def to_document(net: Network) -> dict:
    """Документ сети: архитектура, затем веса и смещения построчно по слоям."""
    return {
        "format": NETWORK_FORMAT,
        "depth": net.arch.depth,
        "widths": list(net.arch.widths),
        "output_bound": net.arch.output_bound,
        "clamp": net.arch.clamp,
        "sparsity_budget": net.arch.sparsity_budget,
        "weights": [w.ravel(order="C").tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def from_document(document: dict) -> Network:
    """Восстановить сеть из документа to_document."""
    if document.get("format") != NETWORK_FORMAT:
        raise NetworkFormatError(f"неизвестный формат сети: {document.get('format')}")
    try:
        arch = Architecture(
            widths=document["widths"],
            output_bound=document.get("output_bound"),
            clamp=document.get("clamp", False),
            sparsity_budget=document.get("sparsity_budget")
        )
        if arch.depth != document["depth"]:
            raise NetworkFormatError("глубина не совпадает с числом ширин")
        widths = arch.widths
        weights = [
            np.asarray(flat, dtype=np.float64).reshape(widths[l + 1], widths[l])
            for l, flat in enumerate(document["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in document["biases"]]
        return Network(arch=arch, weights=weights, biases=biases)
    except (KeyError, ValueError) as e:
        raise NetworkFormatError(f"поврежденный документ сети: {e}")


def save_network(net: Network, path: Path):
    """Сохранить сеть в JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_document(net), f)
    logger.debug(f"Сеть сохранена: {path}")


def load_network(path: Path) -> Network:
    """Загрузить сеть из JSON."""
    path = Path(path)
    if not path.exists():
        raise NetworkFormatError(f"файл сети не найден: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise NetworkFormatError(f"файл сети {path} не является JSON: {e}")
    return from_document(document)
