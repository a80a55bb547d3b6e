//! Medication timeline extraction from free-text discharge summaries.
//!
//! The pipeline runs in three stages:
//!
//! 1. IOB named-entity recognition of medications and clinical events
//!    ([`ner`]), using either a BiLSTM-CRF or a CNN-BiLSTM tagger.
//! 2. Temporal relation classification of (event, date) pairs into
//!    `BEFORE` / `AFTER` / `OVERLAP` ([`relex`]) with a small transformer
//!    encoder followed by a three-kernel CNN head.
//! 3. Rule-based medication in-use status and the final
//!    `ID,Event,Status,Start,Stop` table ([`medstatus`]).
//!
//! Every model is trained from scratch on top of [`numcore`], a small
//! reverse-mode autodiff engine over dense `f64` matrices. Exact linear-chain
//! CRF inference lives in [`crf`].

pub mod config;
pub mod corpus;
pub mod crf;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod layers;
pub mod medstatus;
pub mod ner;
pub mod numcore;
pub mod pipeline;
pub mod relex;
pub mod textproc;
pub mod verify;

pub use error::{Error, Result, Warnings};
