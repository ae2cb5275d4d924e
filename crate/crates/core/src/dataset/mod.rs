//! Corpus management: ingestion, forged-set generation, splitting, pair
//! sampling and tensor preparation.

mod forge;
mod ingest;
mod manifest;
mod pairs;
mod preprocess;
mod split;
pub mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{ImagingError, Region};

pub use forge::{generate_forged_set, ForgeOptions, ForgeOutcome, ForgeReport};
pub use ingest::{ingest, load_annotations, Annotations, IngestReport};
pub use manifest::{Manifest, MANIFEST_FORMAT};
pub use pairs::{sample_pairs, PairLabel, PairOptions, PairSample};
pub use preprocess::{preprocess, CachedPreprocessor, InputTensor, Preprocessor};
pub use split::split;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no images found under {0}")]
    EmptyCorpus(PathBuf),
    #[error("unknown country directory {0}")]
    UnknownCountryDirectory(String),
    #[error("no candidate tamper zones in {0}")]
    NoCandidateZones(String),
    #[error("stratum {country}/{class} has {count} records, need at least 2")]
    StratumTooSmall {
        country: Country,
        class: DocClass,
        count: usize,
    },
    #[error("insufficient documents for {country} ({split}): {detail}")]
    InsufficientDocuments {
        country: Country,
        split: Split,
        detail: String,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl DatasetError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyCorpus(_) => "EmptyCorpus",
            Self::UnknownCountryDirectory(_) => "UnknownCountryDirectory",
            Self::NoCandidateZones(_) => "NoCandidateZones",
            Self::StratumTooSmall { .. } => "StratumTooSmall",
            Self::InsufficientDocuments { .. } => "InsufficientDocuments",
            Self::InvalidManifest(_) => "InvalidManifest",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::Imaging(e) => e.kind(),
            Self::Io { .. } => "IoError",
            Self::Json { .. } => "JsonError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

/// The ten issuing countries of the MIDV-2020 collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Country {
    Alb,
    Aze,
    Esp,
    Est,
    Fin,
    Grc,
    Iva,
    Rus,
    Srb,
    Svk,
}

impl Country {
    pub const ALL: [Country; 10] = [
        Country::Alb,
        Country::Aze,
        Country::Esp,
        Country::Est,
        Country::Fin,
        Country::Grc,
        Country::Iva,
        Country::Rus,
        Country::Srb,
        Country::Svk,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Country::Alb => "alb",
            Country::Aze => "aze",
            Country::Esp => "esp",
            Country::Est => "est",
            Country::Fin => "fin",
            Country::Grc => "grc",
            Country::Iva => "iva",
            Country::Rus => "rus",
            Country::Srb => "srb",
            Country::Svk => "svk",
        }
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Country {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Country::ALL
            .into_iter()
            .find(|c| c.code() == lower)
            .ok_or_else(|| DatasetError::UnknownCountryDirectory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocClass {
    Genuine,
    Forged,
}

impl fmt::Display for DocClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocClass::Genuine => "genuine",
            DocClass::Forged => "forged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Template,
    Scan,
}

impl Source {
    /// Sub-directory holding this source inside a country directory.
    pub fn dir_name(self) -> &'static str {
        match self {
            Source::Template => "templates",
            Source::Scan => "scans",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Template => "template",
            Source::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One copy-move applied to a forged document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperStep {
    pub src: Region,
    pub dst: Region,
    pub block_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub country: Country,
    pub doc_class: DocClass,
    pub source: Source,
    pub image_path: PathBuf,
    pub tamper_log: Option<Vec<TamperStep>>,
}

impl DocumentRecord {
    pub(crate) fn check(&self) -> Result<(), DatasetError> {
        let tampered = self.tamper_log.as_ref().is_some_and(|log| !log.is_empty());
        if tampered != (self.doc_class == DocClass::Forged) {
            return Err(DatasetError::InvalidManifest(format!(
                "record {} is {} but tamper_log is {}",
                self.id,
                self.doc_class,
                if tampered { "present" } else { "absent" }
            )));
        }
        Ok(())
    }
}

/// Seed of an independent random stream keyed by `(seed, key)`.
///
/// Streams derived this way do not depend on iteration order, which keeps
/// parallel generation deterministic.
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
