//! Risk-sensitive ergodic zero-sum games on countable-state continuous-time
//! Markov chains.

pub mod domain;
pub mod format;
pub mod matrix_game;
pub mod model;
pub mod dirichlet;
pub mod strategy;
pub mod eigen;
pub mod policy_eval;
pub mod simulate;

// the guide's snippets run as doc-tests
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/matrix-games.md")]
    mod matrix_games {}
    #[doc = include_str!("../../../book/src/dirichlet.md")]
    mod dirichlet {}
    #[doc = include_str!("../../../book/src/eigen.md")]
    mod eigen {}
    #[doc = include_str!("../../../book/src/policy-eval.md")]
    mod policy_eval {}
    #[doc = include_str!("../../../book/src/simulate.md")]
    mod simulate {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
