//! Traffic and firmware triage: byte entropy of protocol fields, embedded
//! certificate search, and filesystem signature identification.

pub mod blob;
pub mod entropy;

pub use blob::{find_pem_certificates, identify_filesystems, BlobFinding, FindingKind, PEM_HEADER};
pub use entropy::{
    classify_trace_fields, shannon_entropy, EntropyError, EntropyReport, FieldEntropy,
};
