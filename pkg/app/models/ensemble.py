"""
Ensemble Models

Tree nodes, boosting hyperparameters and the fitted additive ensemble.
"""

from dataclasses import dataclass, field
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.models.dataset import Task


class Hyperparams(BaseModel):
    """Boosting and tree-growth controls."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_rounds: int = Field(200, ge=1)
    max_depth: int = Field(4, ge=1)
    min_samples_leaf: int = Field(5, ge=1)
    gamma: float = Field(0.1, gt=0, le=1, description="Learning rate")
    lambda_leaf: float = Field(1.0, ge=0, description="L2 leaf shrinkage")


@dataclass(frozen=True)
class TreeNode:
    """Leaf when `feature_index` is None, otherwise a split sending x[feature] <= threshold left."""
    value: float = 0.0
    feature_index: Optional[int] = None
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)  # type: ignore[union-attr]

    @property
    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves + self.right.n_leaves  # type: ignore[union-attr]


@dataclass(frozen=True)
class BoostedEnsemble:
    base_prediction: float
    trees: List[TreeNode]
    gamma: float
    task: Task
    n_features: int
    train_loss: List[float] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)
