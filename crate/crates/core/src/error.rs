// SPDX-License-Identifier: Apache-2.0

//! Error types shared across the library.

use thiserror::Error;

/// Errors surfaced by parameter validation, protocol execution, and data loading.
#[derive(Error, Debug)]
pub enum Error {
    /// A parameter violates its documented range (bad epsilon, zero domain, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A randomizer or analyzer received input that breaks the protocol contract,
    /// e.g. a payload outside its instance's domain or a missing instance group.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// A dataset failed validation or could not be loaded.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn violation(msg: impl Into<String>) -> Self {
        Error::ProtocolViolation(msg.into())
    }

    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }
}
