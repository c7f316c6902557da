//! Comparison systems: the unsupervised lexicon-centroid scorer (DDR) and
//! AFLite data filtering.

mod aflite;
mod ddr;
mod lexicon;

pub use aflite::{aflite_filter, aflite_round, AfliteDataset, AfliteOutcome, AfliteRound, AFLiteConfig, PredictabilityScore};
pub use ddr::{build_centroids, ddr_predict, ddr_predictions, CentroidTable, DdrPrediction};
pub use lexicon::{Lexicon, WordVectors};
