//! Nuisance models: fitting, evaluation and trial weights.

pub mod basis;
pub mod models;
pub mod table;
pub mod weights;

pub use basis::{Basis, ControlBasis, Term};
pub use models::{
    fit_affiliation, fit_outcome_control_first, fit_outcome_difference, fit_outcome_ratio, fit_propensity, fit_selection, fit_target_mean,
    fit_variance, AffiliationModel, AffiliationSpec, OutcomeFit, OutcomeModel, PropensityKind, PropensityModel, Segmentation,
    SelectionModel, TargetMeanModel, VarianceKind, VarianceModel, PROB_CLIP,
};
pub use table::{fit_nuisances, FittedNuisances, ModelSpec, NuisanceStatus, NuisanceTable, OutcomeSpec, TrialWeights};
pub use weights::{normalized_weight, weight_difference, weight_ratio, WeightChoice, WEIGHT_CAP};
