//! On-disk formats shared by the pipeline stages.

pub mod feature_store;
pub mod kv;
pub mod wav;
