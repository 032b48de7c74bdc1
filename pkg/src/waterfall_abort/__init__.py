"""Net-income-optimal auction abort policies for ad waterfalls."""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    AbortFlag,
    AuctionLog,
    AuctionObservation,
    CostModel,
    Observations,
    RequestRecord,
    UnsupportedLogError,
    ValidationError,
    net_income,
)
from .evaluate import NIReport, ReplayMode, metrics, per_publisher_histogram, replay  # noqa: E402
from .rule_simple import SimplePolicy, TagStats, decide_abort, estimate_tag_stats, train_simple  # noqa: E402
from .simulator import SimConfig, generate  # noqa: E402
from .tree import AbortTree, TreeConfig, adeni, classify, grow, split_gain  # noqa: E402
