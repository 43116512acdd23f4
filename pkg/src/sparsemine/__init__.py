"""Sparse-representation classification of synthetic GPR range profiles.

Pipeline stages: generate labeled synthetic surveys, learn an overcomplete
dictionary (batch or online), sparse-code the profiles, classify the codes
with an RBF SVM, and score the result against target halos.  Statistical
metrics over reconstruction-similarity distributions guide the choice of
learning parameters.
"""

from .classifier import (
    ClassMap,
    ConfusionMatrix,
    SvmModel,
    classify_survey,
    confusion_matrix,
    cross_validate,
    pcc,
    rbf_kernel,
    svm_train_binary,
    svm_train_multiclass,
)
from .dataio import (
    load_bundle,
    read_csv_matrix,
    read_matrix,
    save_bundle,
    write_csv_matrix,
    write_matrix,
)
from .dictionary_learning import (
    LEARNERS,
    Dictionary,
    LearnReport,
    TrainConfig,
    cbwlsu,
    dominodl,
    init_dictionary,
    ksvd,
    odl,
    prune_atoms,
    weighted_ls_update,
)
from .gpr_synth import (
    PulseParams,
    Scatterer,
    SurveyDataset,
    SurveyLayout,
    TargetSpec,
    default_layout,
    generate_survey,
    monocycle,
    range_profile,
    reduce_samples,
    target_cir,
)
from .sparse_coding import (
    SparseVector,
    StopRule,
    batch_omp,
    entropy_threshold,
    lasso_cd,
    omp,
    sparse_best_oracle,
)
from .stats_metrics import (
    Ecdf,
    SweepRecord,
    coeff_variation,
    dkw_bound,
    dkw_metric,
    ks_distance,
    parameter_sweep,
    similarity,
    similarity_epdf,
)

__version__ = "0.1.0"
