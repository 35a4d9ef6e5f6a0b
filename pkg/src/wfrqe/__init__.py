"""Histogram set embeddings for logical query answering on knowledge graphs.

Answer sets are embedded as bounded 1-D histograms.  Set algebra is
element-wise fuzzy logic, relations act through learned base-decomposed
projections, and candidates are ranked by an entropic unbalanced-transport
score computed with a linear-time convolution Sinkhorn over block-diagonal
kernels.
"""

from .estimator import WfrQueryEmbedding
from .evaluation import EvalReport, evaluate, rank_answer
from .fuzzy import TNormKind, complement, complement_with_dropout, intersect, union
from .kg import (
    KnowledgeGraph,
    QuerySample,
    generate_synthetic_kg,
    load_queries,
    load_triples,
    sample_queries,
    save_queries,
    split_nested,
)
from .measures import BoundedHistogram, generalized_kl, new_histogram, total_mass
from .model import ModelParams, init_model
from .projection import ProjectionParams, init_projection_params, project, project_backward
from .queries import (
    Anchor,
    Intersection,
    Negation,
    OperatorTree,
    Projection,
    Union,
    apply_de_morgan,
    parse_query,
    serialize_query,
    symbolic_answers,
    to_dnf,
)
from .training import TrainConfig, adamw_step, distance_backward, loss, negative_sample, train
from .transport import (
    SinkhornState,
    TransportConfig,
    conv_kernel,
    conv_sinkhorn,
    cost_matrix,
    dense_sinkhorn,
    dual_objective,
    kernel_matrix,
    primal_objective,
    recover_plan,
    single_dirac_wfr,
    wfr_distance,
    wfr_distance_one_to_many,
)

__version__ = "0.1.0"
