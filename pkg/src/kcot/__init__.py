"""Region-to-label matching with knowledge-constrained optimal transport."""

from .cost import build_cost, lpd_marginal, teacher_plan, transform_cost
from .locality import TssWeights, lla_layer, saa, saa_attention, tss_forward, tss_mask
from .losses import asl_loss, mmc_loss, mmc_loss_no_batch, ranking_loss, training_objective
from .matchers import (
    STRATEGIES,
    aggregate_average,
    aggregate_plan,
    aggregate_reweight,
    final_score,
    match,
)
from .metrics import average_precision, mean_average_precision, precision_recall_f1_at_k
from .solvers import (
    RegularizationUnderflowError,
    SolveReport,
    exact_ot_oracle,
    hungarian,
    kcot_objective,
    sinkhorn,
    sinkhorn_batch,
    solve_kcot,
)
from .synth import PlantedScene, SceneSpec, generate_scene, planted_recovery_rate
from .types import (
    FeatureSet,
    LabelSet,
    SolverConfig,
    TransportPlan,
    cosine_similarity_matrix,
    row_softmax,
)

__version__ = "0.1.0"
