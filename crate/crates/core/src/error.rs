use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcgaError {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite log-likelihood contribution at subject {subject}")]
    NonFinite { subject: usize },
    #[error("class alignment supports at most 6 classes, got {0}; supply an explicit alignment")]
    AlignmentTooLarge(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LcgaError>;
