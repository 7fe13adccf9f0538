//! Token alphabets, infinite sequence specifications, Hamming distances and
//! perturbation samplers.

mod alphabet;
mod betabinom;
mod hamming;
mod perturb;
mod spec;

pub use alphabet::{Alphabet, Token};
pub use betabinom::{
    betabinom_pmf, betabinom_table, sample_positions_betabinomial, DEFAULT_SHAPES,
};
pub use hamming::{common_period, dh_asymptotic, hamming_rel, AsymptoticDistance};
pub use perturb::{
    apply_positions, nts_count, perturb, random_order, PerturbationPlan, ReplacementRule,
};
pub use spec::{beta_block, prime_sieve, IndicatorSet, InfiniteSequenceSpec, Pattern};
