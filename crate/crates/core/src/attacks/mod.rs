//! Membership attacks: score-only observables, the learned subject-level
//! attacker, and embedding-space nearest neighbours.

mod dump;
mod embedding;
mod features;
mod mlp;
mod score;

#[cfg(test)]
mod tests;

pub use dump::{encode_score_dump, read_score_dump, write_score_dump, WindowScore, DUMP_HEADER};
pub use embedding::{knn_score, subject_embedding, ReferenceSet};
pub use features::{subject_features, SubjectFeatureVector};
pub use mlp::{mlp_score, train_mlp_attacker, MlpAttacker, FEATURES, HIDDEN};
pub use score::{score_con, score_rec};
