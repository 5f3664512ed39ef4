//! Finite state sets used as Dirichlet truncations, and nested ladders of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("domain is empty")]
    Empty,
    #[error("state {state} is outside the stored model (0..{states})")]
    OutOfRange { state: usize, states: usize },
    #[error("reference state {0} missing from ladder level {1}")]
    MissingReference(usize, usize),
    #[error("ladder level {0} is not a strict superset of level {1}")]
    NotNested(usize, usize),
    #[error("ladder radii must be strictly increasing, got {0:?}")]
    RadiiNotIncreasing(Vec<usize>),
    #[error("largest ladder level covers {covered} of {states} stored states")]
    NotExhaustive { covered: usize, states: usize },
}

/// A finite, sorted set of states. Functions "on the domain" vanish elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct Domain {
    states: Vec<usize>,
    // position[i] = index of state i in `states`
    position: Vec<Option<usize>>,
}

impl Domain {
    pub fn new(mut states: Vec<usize>) -> Result<Self, DomainError> {
        states.sort_unstable();
        states.dedup();
        let max = *states.last().ok_or(DomainError::Empty)?;
        let mut position = vec![None; max + 1];
        for (k, &s) in states.iter().enumerate() {
            position[s] = Some(k);
        }
        Ok(Self { states, position })
    }

    /// States `lo..=hi`.
    pub fn range(lo: usize, hi: usize) -> Self {
        Self::new((lo..=hi).collect()).expect("nonempty range")
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, state: usize) -> bool {
        self.index_of(state).is_some()
    }

    #[inline]
    pub fn index_of(&self, state: usize) -> Option<usize> {
        self.position.get(state).copied().flatten()
    }

    pub fn is_subset_of(&self, other: &Domain) -> bool {
        self.states.iter().all(|&s| other.contains(s))
    }

    pub fn max_state(&self) -> usize {
        *self.states.last().expect("domain is never empty")
    }
}

impl From<Domain> for Vec<usize> {
    fn from(d: Domain) -> Self {
        d.states
    }
}

impl TryFrom<Vec<usize>> for Domain {
    type Error = DomainError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Domain::new(v)
    }
}

/// Increasing nested finite domains, each containing the reference state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationLadder {
    pub domains: Vec<Domain>,
    /// How the levels were chosen (radius around the reference state), if applicable.
    pub radii: Option<Vec<usize>>,
}

impl TruncationLadder {
    /// Checks nestedness, reference-state membership, range and that the last
    /// level covers every stored state.
    pub fn new(
        domains: Vec<Domain>,
        reference_state: usize,
        states: usize,
    ) -> Result<Self, DomainError> {
        if domains.is_empty() {
            return Err(DomainError::Empty);
        }
        for (n, d) in domains.iter().enumerate() {
            if d.max_state() >= states {
                return Err(DomainError::OutOfRange {
                    state: d.max_state(),
                    states,
                });
            }
            if !d.contains(reference_state) {
                return Err(DomainError::MissingReference(reference_state, n));
            }
            if n > 0 {
                let prev = &domains[n - 1];
                if !prev.is_subset_of(d) || prev.len() >= d.len() {
                    return Err(DomainError::NotNested(n, n - 1));
                }
            }
        }
        let covered = domains.last().map(Domain::len).unwrap_or(0);
        if covered != states {
            return Err(DomainError::NotExhaustive { covered, states });
        }
        Ok(Self {
            domains,
            radii: None,
        })
    }

    /// Levels `{i : |i - i0| <= r}` for each radius `r`, clipped to the store.
    pub fn from_radii(
        radii: &[usize],
        reference_state: usize,
        states: usize,
    ) -> Result<Self, DomainError> {
        if radii.is_empty() {
            return Err(DomainError::Empty);
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::RadiiNotIncreasing(radii.to_vec()));
        }
        let domains = radii
            .iter()
            .map(|&r| {
                let lo = reference_state.saturating_sub(r);
                let hi = (reference_state + r).min(states.saturating_sub(1));
                Domain::range(lo, hi)
            })
            .collect();
        let mut ladder = Self::new(domains, reference_state, states)?;
        ladder.radii = Some(radii.to_vec());
        Ok(ladder)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// The core window used for ladder convergence: the smallest level.
    pub fn core_window(&self) -> &Domain {
        &self.domains[0]
    }

    pub fn largest(&self) -> &Domain {
        self.domains.last().expect("ladder is never empty")
    }
}
