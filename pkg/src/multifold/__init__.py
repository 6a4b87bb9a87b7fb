"""Embedding toolkit for knowledge bases with multi-fold (n-ary) relations."""

__version__ = "0.1.0"

from .kb import (  # noqa: F401
    FACT_ID_ROLE,
    DataError,
    Fact,
    FactRepresentation,
    Instance,
    InstanceRepresentation,
    RelationSchema,
    Stats,
    Violation,
    intern_entity,
    intern_rel_type,
    intern_role,
    stats,
    union,
    validate,
)
from .convert import (  # noqa: F401
    LabelledGraph,
    convert_fact_rep,
    drop_fact_ids,
    fact_to_instances,
    fact_to_instances_id,
    pair_label,
    pair_rel_type,
    recover_facts,
    s2c_collision_witness,
    s2c_representation,
    s2c_type_folds,
    s2c_vertex,
    triple_edge_set,
)
from .models import (  # noqa: F401
    MTRANSH,
    TRANSH,
    CostModel,
    EmbeddingTable,
    MultiFoldRelation,
    NumericError,
    SparseGradient,
    TransHRelation,
    constraint_penalty,
    decomposed_cost,
    mtransh_cost,
    project,
    transh_pair_cost,
)
from .training import (  # noqa: F401
    EpochRecord,
    NegativeExample,
    TrainConfig,
    count_negatives,
    init_params,
    negative_budget,
    pair_loss,
    sample_negatives,
    train,
)
from .ranking import (  # noqa: F401
    FoldStats,
    QueryRecord,
    RankingReport,
    breakdown_by_fold,
    evaluate,
    export_report,
    rank_entity,
    rank_from_costs,
)
from .dataio import (  # noqa: F401
    DatasetBundle,
    SplitResult,
    filter_pipeline,
    load_model,
    parse_facts,
    parse_fold_map,
    parse_instances,
    parse_schemas,
    save_model,
    split,
    verify_counts,
    write_facts,
    write_fold_map,
    write_instances,
    write_schemas,
)
