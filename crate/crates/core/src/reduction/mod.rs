//! Learned reduction of 1056-dimensional prints to 40 components:
//! dependency rejection, discriminant analysis, independent component
//! rotation, orthogonal Mahalanobis PCA and a Hadamard mix.

pub mod hadamard;
pub mod ica;
pub mod iccr;
pub mod lda;
pub mod linalg;
pub mod model;
pub mod ompca;
pub mod scatter;

pub use hadamard::hadamard_matrix;
pub use ica::{fit_ica, IcaConfig, IcaFit};
pub use iccr::{fit_iccr, fit_iccr_gram, GramAccumulator};
pub use lda::{fit_lda, LdaFit};
pub use model::{BandModel, ReductionModel};
pub use ompca::{fit_ompca, fit_ompca_cov, OmpcaFit};
pub use scatter::{Scatter, ScatterAccumulator};
