"""Learned-filter accelerated similarity joins with LSH/LSBF baselines."""

from .data import (Dataset, Metric, SplitSpec, convert_epsilon, distance,
                   load_dataset, normalize_unit, save_dataset,
                   split_train_test, synth_gaussian_mixture)
from .errors import DataError, NumericError, SimJoinError
from .filters import (LearnedCountFilter, LSBFilter, ThresholdSelection,
                      build_filter, decision_threshold_fpr,
                      decision_threshold_mean, identify_negatives, lsbf_build)
from .groundtruth import (CardinalityTable, NeighborSet, cardinality_grid,
                          range_count, range_search)
from .join import (BruteForceSearcher, JoinResult, LSHIndex, LSHSearcher,
                   filtered_join, learned_join, lsh_build, lsh_range_search,
                   naive_join)
from .regressor import (MLPModel, OracleEstimator, TrainConfig, evaluate, fit,
                        load_model, save_model)
from .sampling import (EpsilonGrid, PreparedTrainingSet, approx_targets_for_eps,
                       build_epsilon_grid, interpolate_target,
                       prepare_training_set, select_adaptive, select_uniform)
from .bench import (ConfusionCounts, JoinMetrics, filter_confusion,
                    generalization_check, negative_query_portion, recall,
                    run_experiment, tradeoff_sweep)

__version__ = "0.1.0"
