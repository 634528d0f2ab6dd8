// SPDX-License-Identifier: Apache-2.0

//! Two-way SMS survey engine.
//!
//! Questionnaires are authored from a shared question repository, dispatched
//! to user groups over a pluggable SMS gateway, and answered one question at
//! a time: the next question is only sent once the previous one has been
//! answered. Replies are parsed against each question's response contract,
//! logged in an append-only SMS ledger, and summarised for the dashboard.
//!
//! The crate is organised as:
//!
//! - [`model`]: persistent vocabulary (questions, respondents, staff, settings)
//!   and row filtering.
//! - [`access`]: the staff access-level capability matrix.
//! - [`parse`]: answer normalisation and the enumerator bulk format.
//! - [`transport`]: SMS segmentation, the gateway port and the simulated GSM
//!   network.
//! - [`store`]: SQLite persistence, the SMS ledger and CSV import/export.
//! - [`session`]: the per-respondent questionnaire state machine.
//! - [`analytics`]: dashboard summaries and the send/receive timeline.
//! - [`service`], [`http`], [`render`]: the admin API surface.
//! - [`scenario`]: the line-oriented simulation harness.

pub mod access;
pub mod analytics;
pub mod config;
pub mod http;
pub mod model;
pub mod parse;
pub mod render;
pub mod scenario;
pub mod service;
pub mod session;
pub mod store;
pub mod time;
pub mod transport;

pub use access::{authorize, Capability, Decision};
pub use model::{AccessLevel, Phone, ResponseType, SystemSettings};
pub use service::{AdminService, ServiceError};
pub use time::{Clock, ManualClock, SystemClock, Timestamp};
