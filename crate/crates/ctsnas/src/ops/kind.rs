//! Operator vocabulary for the spatio-temporal search space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All operators the code can build. The searchable set holds six of them;
/// the remaining three exist for the operator-comparison harness only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    /// Gated dilated causal convolution over the time axis.
    #[serde(rename = "GDCC")]
    Gdcc,
    /// Sparse (sampled-query) attention over the time axis.
    #[serde(rename = "INF_T")]
    InfT,
    /// Diffusion graph convolution over the node axis.
    #[serde(rename = "DGCN")]
    Dgcn,
    /// Sparse (sampled-query) attention over the node axis.
    #[serde(rename = "INF_S")]
    InfS,
    #[serde(rename = "ZERO")]
    Zero,
    #[serde(rename = "IDENTITY")]
    Identity,
    /// Chebyshev graph convolution (reference only).
    #[serde(rename = "CHEBY_GCN")]
    ChebyGcn,
    /// Dense attention over the time axis (reference only).
    #[serde(rename = "TRANSFORMER_T")]
    TransformerT,
    /// Dense attention over the node axis (reference only).
    #[serde(rename = "TRANSFORMER_S")]
    TransformerS,
}

impl OperatorKind {
    /// The searchable operator set, in canonical index order. Mixture weights
    /// and derivation tie-breaking follow this order.
    pub const SEARCHABLE: [OperatorKind; 6] = [
        OperatorKind::Gdcc,
        OperatorKind::InfT,
        OperatorKind::Dgcn,
        OperatorKind::InfS,
        OperatorKind::Zero,
        OperatorKind::Identity,
    ];

    pub fn is_searchable(self) -> bool {
        Self::SEARCHABLE.contains(&self)
    }

    pub fn searchable_index(self) -> Option<usize> {
        Self::SEARCHABLE.iter().position(|k| *k == self)
    }

    pub fn has_weights(self) -> bool {
        !matches!(self, OperatorKind::Zero | OperatorKind::Identity)
    }

    pub fn tag(self) -> &'static str {
        match self {
            OperatorKind::Gdcc => "GDCC",
            OperatorKind::InfT => "INF_T",
            OperatorKind::Dgcn => "DGCN",
            OperatorKind::InfS => "INF_S",
            OperatorKind::Zero => "ZERO",
            OperatorKind::Identity => "IDENTITY",
            OperatorKind::ChebyGcn => "CHEBY_GCN",
            OperatorKind::TransformerT => "TRANSFORMER_T",
            OperatorKind::TransformerS => "TRANSFORMER_S",
        }
    }

    pub fn parse_tag(s: &str) -> Result<Self> {
        match s {
            "GDCC" => Ok(OperatorKind::Gdcc),
            "INF_T" => Ok(OperatorKind::InfT),
            "DGCN" => Ok(OperatorKind::Dgcn),
            "INF_S" => Ok(OperatorKind::InfS),
            "ZERO" => Ok(OperatorKind::Zero),
            "IDENTITY" => Ok(OperatorKind::Identity),
            "CHEBY_GCN" => Ok(OperatorKind::ChebyGcn),
            "TRANSFORMER_T" => Ok(OperatorKind::TransformerT),
            "TRANSFORMER_S" => Ok(OperatorKind::TransformerS),
            other => Err(Error::genotype(format!("unknown operator tag {other:?}"))),
        }
    }
}
