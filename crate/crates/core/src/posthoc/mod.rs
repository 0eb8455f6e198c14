//! Identification and summarisation of a recorded chain: label-switching
//! correction, Procrustes rotation of loadings, posterior summaries.

pub mod assignment;
pub mod procrustes;
pub mod relabel;
pub mod summary;

pub use assignment::solve_assignment;
pub use procrustes::{apply_rotation, procrustes_rotation, ProcrustesRotation};
pub use relabel::{agreement_permutation, canonical_labels, relabel_sample, relabel_trace};
pub use summary::{
    procrustes_align_trace, summarize, CriteriaValues, PosteriorSummary, SummaryOptions,
    TemplateChoice,
};
