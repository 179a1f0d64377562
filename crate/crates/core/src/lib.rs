//! Battery digital twin: trace ingestion, Coulomb-counting labels, SOC/SOH
//! regressors, a synthetic ageing generator, and an edge/cloud runtime that
//! retrains the SOC model as the battery degrades.

pub mod features;
pub mod ingest;
pub mod labeling;
pub mod learners;
pub mod synth;
pub mod twin;
