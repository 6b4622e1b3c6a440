"""
Model Store

JSON persistence for fitted models. Every file carries a `kind` tag and a
kind-specific payload; trees are stored as nested nodes.
"""

import json
from functools import singledispatch
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import logfire
import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.errors import FaultLocatorError
from app.models.baselines import KnnModel, MeanModel, OlsModel, TreeModel
from app.models.dataset import Task
from app.models.ensemble import BoostedEnsemble, TreeNode
from app.services import baselines, gbt

FORMAT_VERSION = 1

FittedModel = Union[BoostedEnsemble, OlsModel, KnnModel, TreeModel, MeanModel]


class ModelStoreError(FaultLocatorError):
    """Raised for unsupported model types and unreadable model files."""
    pass


class TreeNodeSchema(BaseModel):
    value: float
    feature_index: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNodeSchema"] = None
    right: Optional["TreeNodeSchema"] = None


class BoostedPayload(BaseModel):
    task: Task
    gamma: float
    base_prediction: float
    n_features: int
    trees: List[TreeNodeSchema]
    train_loss: List[float] = []


class OlsPayload(BaseModel):
    weights: List[float]
    intercept: float
    jittered: bool = False


class KnnPayload(BaseModel):
    X: List[List[float]]
    y: List[float]
    k: int


class TreePayload(BaseModel):
    root: TreeNodeSchema
    n_features: int


class MeanPayload(BaseModel):
    value: float
    n_features: int


class ModelFile(BaseModel):
    kind: Literal["boosted", "ols", "knn", "dtree", "mean"]
    format_version: int = FORMAT_VERSION
    payload: Dict[str, Any]


def _node_to_schema(node: TreeNode) -> TreeNodeSchema:
    if node.is_leaf:
        return TreeNodeSchema(value=node.value)
    return TreeNodeSchema(
        value=node.value,
        feature_index=node.feature_index,
        threshold=node.threshold,
        left=_node_to_schema(node.left),  # type: ignore[arg-type]
        right=_node_to_schema(node.right),  # type: ignore[arg-type]
    )


def _schema_to_node(schema: TreeNodeSchema) -> TreeNode:
    if schema.feature_index is None:
        return TreeNode(value=schema.value)
    if schema.left is None or schema.right is None or schema.threshold is None:
        raise ModelStoreError(f"split on feature {schema.feature_index} is missing a child or threshold")
    return TreeNode(
        value=schema.value,
        feature_index=schema.feature_index,
        threshold=schema.threshold,
        left=_schema_to_node(schema.left),
        right=_schema_to_node(schema.right),
    )


@singledispatch
def _encode(model: Any) -> ModelFile:
    raise ModelStoreError(f"cannot serialize model of type {type(model).__name__}")


@_encode.register
def _(model: BoostedEnsemble) -> ModelFile:
    payload = BoostedPayload(
        task=model.task,
        gamma=model.gamma,
        base_prediction=model.base_prediction,
        n_features=model.n_features,
        trees=[_node_to_schema(t) for t in model.trees],
        train_loss=list(model.train_loss),
    )
    return ModelFile(kind="boosted", payload=payload.model_dump(mode="json"))


@_encode.register
def _(model: OlsModel) -> ModelFile:
    payload = OlsPayload(weights=model.weights.tolist(), intercept=model.intercept, jittered=model.jittered)
    return ModelFile(kind="ols", payload=payload.model_dump(mode="json"))


@_encode.register
def _(model: KnnModel) -> ModelFile:
    payload = KnnPayload(X=model.X.tolist(), y=model.y.tolist(), k=model.k)
    return ModelFile(kind="knn", payload=payload.model_dump(mode="json"))


@_encode.register
def _(model: TreeModel) -> ModelFile:
    payload = TreePayload(root=_node_to_schema(model.root), n_features=model.n_features)
    return ModelFile(kind="dtree", payload=payload.model_dump(mode="json"))


@_encode.register
def _(model: MeanModel) -> ModelFile:
    payload = MeanPayload(value=model.value, n_features=model.n_features)
    return ModelFile(kind="mean", payload=payload.model_dump(mode="json"))


def _decode(document: ModelFile) -> FittedModel:
    payload = document.payload
    if document.kind == "boosted":
        data = BoostedPayload.model_validate(payload)
        return BoostedEnsemble(
            base_prediction=data.base_prediction,
            trees=[_schema_to_node(t) for t in data.trees],
            gamma=data.gamma,
            task=data.task,
            n_features=data.n_features,
            train_loss=data.train_loss,
        )
    if document.kind == "ols":
        ols = OlsPayload.model_validate(payload)
        return OlsModel(weights=np.asarray(ols.weights), intercept=ols.intercept, jittered=ols.jittered)
    if document.kind == "knn":
        knn = KnnPayload.model_validate(payload)
        return KnnModel(X=np.asarray(knn.X, dtype=float), y=np.asarray(knn.y), k=knn.k)
    if document.kind == "dtree":
        tree = TreePayload.model_validate(payload)
        return TreeModel(root=_schema_to_node(tree.root), n_features=tree.n_features)
    mean = MeanPayload.model_validate(payload)
    return MeanModel(value=mean.value, n_features=mean.n_features)


def save_model(model: FittedModel, path: Union[str, Path]) -> Path:
    """
    Write a fitted model as JSON.

    Raises:
        ModelStoreError: For unsupported types or write failures
    """
    out = Path(path)
    document = _encode(model)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(document.model_dump_json(), encoding="utf-8")
    except OSError as e:
        raise ModelStoreError(f"cannot write model {out}: {e}")
    logfire.info("Model saved", path=str(out), kind=document.kind)
    return out


def load_model(path: Union[str, Path]) -> FittedModel:
    """
    Read a model written by save_model.

    Raises:
        ModelStoreError: For missing, malformed or unknown-version files
    """
    src = Path(path)
    try:
        document = ModelFile.model_validate(json.loads(src.read_text(encoding="utf-8")))
        if document.format_version != FORMAT_VERSION:
            raise ModelStoreError(f"{src}: unsupported format version {document.format_version}")
        return _decode(document)
    except FileNotFoundError:
        raise ModelStoreError(f"model file not found: {src}")
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise ModelStoreError(f"malformed model file {src}: {e}")


@singledispatch
def predict_model(model: Any, X) -> np.ndarray:
    """Predictions of any fitted model, as returned by load_model."""
    raise ModelStoreError(f"cannot predict with model of type {type(model).__name__}")


@predict_model.register
def _(model: BoostedEnsemble, X) -> np.ndarray:
    return gbt.predict(model, X)


@predict_model.register
def _(model: OlsModel, X) -> np.ndarray:
    return baselines.ols_predict(model, X)


@predict_model.register
def _(model: KnnModel, X) -> np.ndarray:
    return baselines.knn_predict(model, X)


@predict_model.register
def _(model: TreeModel, X) -> np.ndarray:
    return baselines.dtree_predict(model, X)


@predict_model.register
def _(model: MeanModel, X) -> np.ndarray:
    return baselines.mean_predict(model, X)
