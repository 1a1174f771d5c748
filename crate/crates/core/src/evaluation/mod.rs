//! Feature-set composition, stratified cross-validation, ROC-AUC and reports.

pub mod auc;
pub mod experiment;
pub mod features;
pub mod folds;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::RepStage;

pub use auc::roc_auc;
pub use experiment::{run_experiment, EvalReport, ExperimentConfig};
pub use features::{build_feature_matrix, compose_features, FeatureMatrix, FeatureOptions};
pub use folds::stratified_folds;

/// Where in the pipeline features are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreCompression,
    PreInference,
    PostInference,
    PreProjection,
    PostProjection,
    MiddleLayer,
    LastLayer,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::PreCompression,
        Stage::PreInference,
        Stage::PostInference,
        Stage::PreProjection,
        Stage::PostProjection,
        Stage::MiddleLayer,
        Stage::LastLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PreCompression => "pre_compression",
            Stage::PreInference => "pre_inference",
            Stage::PostInference => "post_inference",
            Stage::PreProjection => "pre_projection",
            Stage::PostProjection => "post_projection",
            Stage::MiddleLayer => "middle_layer",
            Stage::LastLayer => "last_layer",
        }
    }

    /// Representation layers concatenated at this stage, in order.
    pub fn layers(self) -> &'static [RepStage] {
        match self {
            Stage::PreCompression => &[],
            Stage::PreInference => &[RepStage::PreProj, RepStage::PostProj],
            Stage::PostInference => &[RepStage::Mid, RepStage::Last],
            Stage::PreProjection => &[RepStage::PreProj],
            Stage::PostProjection => &[RepStage::PostProj],
            Stage::MiddleLayer => &[RepStage::Mid],
            Stage::LastLayer => &[RepStage::Last],
        }
    }

    /// Whether the LLM has run, i.e. hidden states and attention exist.
    pub fn is_post_inference(self) -> bool {
        matches!(self, Stage::PostInference | Stage::MiddleLayer | Stage::LastLayer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Context,
    Saturation,
    SaturationJoint,
    Attention,
    Representation,
    RepresentationJoint,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 6] = [
        FeatureSet::Context,
        FeatureSet::Saturation,
        FeatureSet::SaturationJoint,
        FeatureSet::Attention,
        FeatureSet::Representation,
        FeatureSet::RepresentationJoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Context => "context",
            FeatureSet::Saturation => "saturation",
            FeatureSet::SaturationJoint => "saturation_joint",
            FeatureSet::Attention => "attention",
            FeatureSet::Representation => "representation",
            FeatureSet::RepresentationJoint => "representation_joint",
        }
    }

    /// Low-dimensional hand-crafted sets versus raw hidden-state vectors.
    pub fn is_engineered(self) -> bool {
        matches!(
            self,
            FeatureSet::Context | FeatureSet::Saturation | FeatureSet::SaturationJoint | FeatureSet::Attention
        )
    }
}

pub fn is_valid_combination(stage: Stage, set: FeatureSet) -> bool {
    match stage {
        Stage::PreCompression => set == FeatureSet::Context,
        Stage::PreInference | Stage::PreProjection | Stage::PostProjection => matches!(
            set,
            FeatureSet::Saturation | FeatureSet::Representation | FeatureSet::RepresentationJoint
        ),
        Stage::PostInference | Stage::MiddleLayer | Stage::LastLayer => set != FeatureSet::Context,
    }
}

macro_rules! name_traits {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                <$t>::ALL
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::Config(format!(concat!("unknown ", $what, " {:?}"), s)))
            }
        }
    };
}

name_traits!(Stage, "stage");
name_traits!(FeatureSet, "feature set");
