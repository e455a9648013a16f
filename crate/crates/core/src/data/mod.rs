//! CSV ingestion, discretization, rare-value merging, encoding, splitting
//! and batching.

pub mod batch;
pub mod preprocess;
pub mod raw;
pub mod schema;
pub mod split;
pub mod table;

pub use batch::{iter_batches, n_batches, Batch};
pub use preprocess::{
    discretize_numeric, encode_categorical, encode_column, merge_rare_values, preprocess, CategoricalTable,
    PreprocessOptions,
};
pub use raw::{load_csv, read_csv, RawColumn, RawTable, RawValues};
pub use schema::{ColumnKind, ColumnSpec, Schema, GRANULARITIES};
pub use split::{holdout_split, split_dataset, split_indices, Splits};
pub use table::{EncodedColumn, EncodedTable, RARE};
