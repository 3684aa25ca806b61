//! Hyperbolic multimodal survival prediction.
//!
//! Embeds per-patient pathology and genomics bags in the Poincare ball,
//! pools them with tangent-space attention, fuses the modalities, and trains
//! discrete-hazard survival heads with a rank-banded contrastive loss, an
//! entailment-cone angle penalty, and a censor-conditioned radius
//! constraint. Evaluation covers the concordance index, Kaplan-Meier curves,
//! and the two-group log-rank test, all censoring-aware.

pub mod autodiff;
pub mod cli;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod survstats;
pub mod data;
pub mod synth;
pub mod util;
