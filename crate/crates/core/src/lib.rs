//! Transplant-or-discard prediction for procured deceased-donor kidneys.
//!
//! The pipeline ingests donor records ([`data`]), imputes, flags outliers and
//! min-max normalizes them ([`preprocess`]), fits four classifiers
//! ([`logistic`], [`naive_bayes`], [`forest`], [`boosting`]) and compares
//! them on a held-out split ([`evaluate`]). [`experiment`] wires the stages
//! together and writes every report; [`artifact`] persists fitted models.

pub mod artifact;
pub mod boosting;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod experiment;
pub mod forest;
pub mod logistic;
pub mod matrix;
pub mod naive_bayes;
pub mod preprocess;
pub mod rng;
pub mod synthetic;
pub mod tree;

pub use error::{Error, Result};
pub use exec::Exec;
