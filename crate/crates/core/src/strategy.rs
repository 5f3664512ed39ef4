//! Mixed actions and stationary Markov strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Domain;
use crate::model::GameModel;

/// Probability vector over one state's action set.
pub type MixedAction = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    /// Row player, maximizer.
    One,
    /// Column player, minimizer.
    Two,
}

impl Player {
    pub fn actions(self, model: &GameModel, i: usize) -> usize {
        match self {
            Player::One => model.n_a(i),
            Player::Two => model.n_b(i),
        }
    }

    pub fn labels(self, model: &GameModel, i: usize) -> &[String] {
        match self {
            Player::One => model.actions_a(i),
            Player::Two => model.actions_b(i),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Player::One => 1,
            Player::Two => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("player {player}: no distribution at state {state}")]
    Missing { player: u8, state: usize },
    #[error("player {player}, state {state}: {got} probabilities for {expected} actions")]
    Length {
        player: u8,
        state: usize,
        expected: usize,
        got: usize,
    },
    #[error("player {player}, state {state}: not a probability vector (sum {sum})")]
    NotDistribution { player: u8, state: usize, sum: f64 },
    #[error("player {player}, state {state}: unknown action label {label:?}")]
    UnknownLabel { player: u8, state: usize, label: String },
}

/// A time-independent map from states to mixed actions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryStrategy(pub BTreeMap<usize, MixedAction>);

impl StationaryStrategy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.0.get(&i).map(Vec::as_slice)
    }

    pub fn insert(&mut self, i: usize, p: MixedAction) {
        self.0.insert(i, p);
    }

    /// Plays action `pick(i)` with probability one at every state of `domain`.
    pub fn pure(model: &GameModel, player: Player, domain: &Domain, pick: impl Fn(usize) -> usize) -> Self {
        let mut s = Self::new();
        for &i in domain.states() {
            let mut p = vec![0.0; player.actions(model, i)];
            p[pick(i)] = 1.0;
            s.insert(i, p);
        }
        s
    }

    pub fn uniform(model: &GameModel, player: Player, domain: &Domain) -> Self {
        let mut s = Self::new();
        for &i in domain.states() {
            let n = player.actions(model, i);
            s.insert(i, vec![1.0 / n as f64; n]);
        }
        s
    }

    /// Copy with the distribution at `i` replaced by a point mass on `a`.
    pub fn deviate(&self, i: usize, a: usize, n_actions: usize) -> Self {
        let mut s = self.clone();
        let mut p = vec![0.0; n_actions];
        p[a] = 1.0;
        s.insert(i, p);
        s
    }

    /// Checks that every state of `domain` carries a probability vector of the
    /// right length (entries `>= 0`, sum within `1e-9` of one).
    pub fn check(&self, model: &GameModel, player: Player, domain: &Domain) -> Result<(), StrategyError> {
        let pl = player.number();
        for &i in domain.states() {
            let p = self.get(i).ok_or(StrategyError::Missing { player: pl, state: i })?;
            let n = player.actions(model, i);
            if p.len() != n {
                return Err(StrategyError::Length {
                    player: pl,
                    state: i,
                    expected: n,
                    got: p.len(),
                });
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(StrategyError::NotDistribution { player: pl, state: i, sum });
            }
        }
        Ok(())
    }

    /// `state -> {label -> probability}`, the form written to disk.
    pub fn to_labeled(&self, model: &GameModel, player: Player) -> BTreeMap<usize, BTreeMap<String, f64>> {
        self.0
            .iter()
            .map(|(&i, p)| {
                let labels = player.labels(model, i);
                (i, labels.iter().cloned().zip(p.iter().copied()).collect())
            })
            .collect()
    }

    /// Inverse of [`to_labeled`](Self::to_labeled); labels missing from a
    /// state's map get probability zero.
    pub fn from_labeled(
        model: &GameModel,
        player: Player,
        labeled: &BTreeMap<usize, BTreeMap<String, f64>>,
    ) -> Result<Self, StrategyError> {
        let mut s = Self::new();
        for (&i, m) in labeled {
            if i >= model.states() {
                return Err(StrategyError::Missing {
                    player: player.number(),
                    state: i,
                });
            }
            let labels = player.labels(model, i);
            for l in m.keys() {
                if !labels.contains(l) {
                    return Err(StrategyError::UnknownLabel {
                        player: player.number(),
                        state: i,
                        label: l.clone(),
                    });
                }
            }
            s.insert(i, labels.iter().map(|l| m.get(l).copied().unwrap_or(0.0)).collect());
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_birth_death, BirthDeathParams};

    #[test]
    fn labeled_round_trip_and_checks() {
        let (m, _) = build_birth_death(&BirthDeathParams::with_cap(12)).unwrap();
        let d = Domain::range(0, 5);
        let s = StationaryStrategy::uniform(&m, Player::Two, &d);
        s.check(&m, Player::Two, &d).unwrap();
        let back = StationaryStrategy::from_labeled(&m, Player::Two, &s.to_labeled(&m, Player::Two)).unwrap();
        assert_eq!(back, s);
        let bad = s.deviate(3, 0, 2);
        assert!(matches!(
            bad.check(&m, Player::Two, &d),
            Err(StrategyError::Length { state: 3, .. })
        ));
        let mut neg = s.clone();
        neg.insert(2, vec![1.5, -0.25, -0.25]);
        assert!(neg.check(&m, Player::Two, &d).is_err());
    }
}
