# Standard library imports

# Third party imports

# Local application imports

COMMAND = "command"

"""Command strings."""
CMD_GEN_DATA = "gen-data"
CMD_CONVERT = "convert"
CMD_TRAIN = "train"
CMD_SIMULATE = "simulate"
CMD_EXPERIMENT = "experiment"

"""Train / experiment targets."""
TARGET_EVALUATOR = "evaluator"
TARGET_GENERATOR = "generator"
TARGET_POINTWISE = "pointwise"

"""Generator training modes."""
MODE_NAIVE = "naive"
MODE_CTR = "ctr"

"""Winner source tags."""
SOURCE_MODEL = "model"
SOURCE_HEURISTIC = "heuristic"

"""Sample file keys."""
KEY_USER = "user"
KEY_CANDIDATES = "candidates"
KEY_ITEM_ID = "item_id"
KEY_CATEGORICAL = "categorical"
KEY_NUMERIC = "numeric"
KEY_PCTR = "pctr"
KEY_CLICK = "click"
KEY_EXPOSURE = "exposure"
KEY_RERANK_INDEX = "rerank_index"
NOT_SELECTED = -1

"""Converter (JDRec item-row table) columns."""
COL_SAMPLE_ID = "sample_id"

"""CSV layouts, fixed order."""
EVALUATOR_METRIC_COLUMNS = ("epoch", "loss", "auc")
GENERATOR_METRIC_COLUMNS = (
    "epoch",
    "mean_reward",
    "average_ctr",
    "selection_accuracy",
    "rank_accuracy",
    "softmax2d_loss",
)
DAY_METRIC_COLUMNS = (
    "day",
    "winning_rate",
    "item_selection_accuracy",
    "rank_accuracy",
    "realized_ctr",
    "evaluator_auc",
)
EVALUATOR_EXPERIMENT_COLUMNS = ("seed", "pointwise_auc", "evaluator_auc", "diff")
GENERATOR_EXPERIMENT_COLUMNS = ("seed", "naive_average_ctr", "ctr_average_ctr", "relative_gain")

"""Checkpoint container."""
CHECKPOINT_FORMAT = "combinatorial-recommender-checkpoint"
CHECKPOINT_VERSION = 1
SCHEMA_VERSION = 1
