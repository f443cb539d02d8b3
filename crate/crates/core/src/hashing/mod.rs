//! Binary codes, LSH sub-codes, reliability selection and the catalog table.

pub mod index;
pub mod lsh;
pub mod table;

pub use index::{CatalogIndex, IndexParams, TrackInfo};
pub use lsh::{
    binarize, collision_mean, expected_collisions, expected_true_matches, expected_unchanged, extended_code,
    select_reliable, splitmix64, HashCode, LshSpec, CODE_BITS, DEFAULT_LSH_SEED, LSH_BITS, N_LSH,
};
pub use table::{HashTable, LoadStats, Posting, TableBuilder, N_BUCKETS};
