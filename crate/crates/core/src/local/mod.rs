//! Local explanations of a single prediction: SurvLIME surrogates and
//! counterfactuals.

mod counterfactual;
mod survlime;

pub use counterfactual::{
    counterfactual_explain, restricted_mean, CounterfactualResult, PsoConfig,
};
pub use survlime::{
    breslow_baseline, kernel_weight, survlime_explain, survlime_system, Neighborhood,
    SurvLimeBaseline, SurvLimeConfig, SurvLimeResult, SurvLimeSystem, SURVLIME_RIDGE,
};
