//! Bounded verifier for unlinkability and anonymity of 2-party security
//! protocols in a constructor/destructor applied pi calculus.
//!
//! The pipeline: parse a `.priv` protocol description ([`frontend`]), build
//! the multi-/single-session scenarios and run the annotated semantics
//! ([`calculus`]), explore bounded traces ([`explorer`]), check the two
//! sufficient conditions — frame opacity and well-authentication
//! ([`conditions`]) — cross-validate with a bounded trace-inclusion oracle,
//! and emit ProVerif-style encodings of both conditions ([`emitter`]).

pub mod calculus;
pub mod conditions;
pub mod emitter;
pub mod explorer;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod frames;
pub mod frontend;
pub mod report;
pub mod terms;
