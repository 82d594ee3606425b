//! Numerical toolkit for identity-preserving layer initialization, sparse
//! superpixel logit consistency, the superpixel clustering loss, and
//! segmentation edge metrics, with seeded, reproducible experiments.

pub mod affine;
pub mod edges;
pub mod error;
pub mod expt;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod sploss;
pub mod stack;

pub use affine::{build_identity_chain, compose_chain, AffineTransform, ChainSpec};
pub use edges::{
    dilate, extract_edges, f_measure, performance_ratio, precision_recall, EdgeMask,
    PERFORMANCE_RATIO_CAP,
};
pub use error::{Error, Result, Warning};
pub use expt::{
    dense_consistency_oracle, gauss_stats, AssignmentInit, EdgeEvalConfig, ExperimentConfig,
    GaussStatsConfig, GaussStatsResults, OracleKind, Precision, RunSummary, SchemeKind,
    SpConsistencyConfig, SpConsistencyResults, SpLossConfig, SpLossResults, TiRecoveryConfig,
    TiStabilityConfig,
};
pub use io::{
    load_chain, read_json_report, read_label_map, read_logit_tensor, read_matrix, save_chain,
    write_csv_report, write_json_report, write_label_map, write_logit_tensor, write_matrix,
    ChainSidecar, JsonReport, REPORT_SCHEMA_VERSION, TOOLKIT_VERSION,
};
pub use linalg::{right_inverse, DEFAULT_COND_LIMIT};
pub use matrix::{column_stats, ColumnStats, Matrix};
pub use rng::{Distribution, RngSpec, SampleStream};
pub use scalar::Scalar;
pub use sparse::{
    argmax_labels, decode, encode, enforce_consistency, LabelMap, LogitTensor, SparseMembership,
};
pub use sploss::{
    aggregate, fd_gradient_check, loss, loss_gradient, reconstruct, Aggregates, AssignmentMap,
    DistanceKind, LossBreakdown, LossConfig, PixelField, Reconstruction, CROSS_ENTROPY_CLAMP,
};
pub use stack::{
    baseline_init, build_general_stack, build_transparent_stack, ActivationKind, BaselineKind,
    StackKind, TransparentStack,
};
