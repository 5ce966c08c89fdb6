//! Episode ingestion, cleaning, binarization, splitting and synthetic data.

pub mod clean;
pub mod dataset;
pub mod io;
pub mod records;
pub mod report;
pub mod split;
pub mod synth;

pub use clean::{clean, CleanConfig, CleanReport};
pub use dataset::{binarize_with, build_vocab_and_binarize, Dataset, TokenKind, UnknownCounts, Vocabulary};
pub use io::{load_split, load_splits, save_splits};
pub use records::{ingest, ingest_reader, write_records, Demographics, EpisodeRecord, Medication};
pub use report::{
    chapter_groups, demographic_groups, icd10_chapter, label_frequency_report, DemographicKey, LabelFrequencyReport,
};
pub use split::{split_assignment, split_sizes, stratified_split, Splits, DEFAULT_RATIOS, SPLIT_NAMES};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticOracle, SyntheticSpec};
