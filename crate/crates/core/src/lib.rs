//! Multi-task optic disc/cup segmentation with source pretraining and
//! source-free test-time adaptation.
//!
//! The crate is organised by stage: [`imaging`] loads, synthesises and
//! augments data; [`network`] is the segmentation model with its own
//! forward/backward engine; [`losses`] holds every training objective;
//! [`adaptation`] drives pretraining, pseudo-labelling and adaptation; and
//! [`metrics`] scores predictions.

pub mod adaptation;
pub mod boundary;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod report;

pub use error::{Error, Result};
pub use grid::Grid;
