use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use super::GameModel;

/// One violated standing assumption, located by `(i, a, b, j)` where relevant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyActions { i: usize, player: u8 },
    NonFinite { i: usize, a: usize, b: usize },
    NegativeOffDiagonal { i: usize, a: usize, b: usize, j: usize, q: f64 },
    NotConservative { i: usize, a: usize, b: usize, sum: f64 },
    NegativeCost { i: usize, a: usize, b: usize, c: f64 },
    NotReachableFromReference { j: usize, a: usize, b: usize },
    NotIrreducible { unreached: Vec<usize>, not_reaching: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyActions { i, player } => {
                write!(f, "empty action set for player {player} at state {i}")
            }
            Violation::NonFinite { i, a, b } => write!(f, "non-finite rate or cost at ({i},{a},{b})"),
            Violation::NegativeOffDiagonal { i, a, b, j, q } => {
                write!(f, "negative off-diagonal at ({i},{a},{b},{j}): q = {q}")
            }
            Violation::NotConservative { i, a, b, sum } => {
                write!(f, "row ({i},{a},{b}) not conservative: sum = {sum:e}")
            }
            Violation::NegativeCost { i, a, b, c } => write!(f, "negative cost at ({i},{a},{b}): c = {c}"),
            Violation::NotReachableFromReference { j, a, b } => write!(
                f,
                "state {j} not reached in one jump from the reference state under ({a},{b})"
            ),
            Violation::NotIrreducible {
                unreached,
                not_reaching,
            } => write!(
                f,
                "support graph not strongly connected: {} states unreached from the reference state, {} cannot reach it",
                unreached.len(),
                not_reaching.len()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub states: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every standing assumption that a finite truncation can witness.
/// Pure: never mutates the model and never fails; callers decide fatality.
///
/// Irreducibility is checked on the graph of edges that are present under
/// *every* action pair, which implies irreducibility under any stationary pair.
pub fn validate_model(model: &GameModel, tol: f64) -> ValidationReport {
    let n = model.states();
    let mut violations = Vec::new();
    for i in 0..n {
        if model.n_a(i) == 0 {
            violations.push(Violation::EmptyActions { i, player: 1 });
        }
        if model.n_b(i) == 0 {
            violations.push(Violation::EmptyActions { i, player: 2 });
        }
        for a in 0..model.n_a(i) {
            for b in 0..model.n_b(i) {
                let row = model.row(i, a, b);
                let c = model.cost(i, a, b);
                if !row.diag.is_finite() || !c.is_finite() || row.off.iter().any(|&(_, q)| !q.is_finite()) {
                    violations.push(Violation::NonFinite { i, a, b });
                    continue;
                }
                for &(j, q) in &row.off {
                    if q < 0.0 {
                        violations.push(Violation::NegativeOffDiagonal { i, a, b, j, q });
                    }
                }
                let sum = row.row_sum();
                if sum.abs() > tol * row.magnitude() {
                    violations.push(Violation::NotConservative { i, a, b, sum });
                }
                if c < 0.0 {
                    violations.push(Violation::NegativeCost { i, a, b, c });
                }
            }
        }
    }

    let i0 = model.reference_state;
    for a in 0..model.n_a(i0) {
        for b in 0..model.n_b(i0) {
            let row = model.row(i0, a, b);
            let mut hit = vec![false; n];
            for &(j, q) in &row.off {
                if j < n && q > 0.0 {
                    hit[j] = true;
                }
            }
            for (j, &h) in hit.iter().enumerate() {
                if j != i0 && !h {
                    violations.push(Violation::NotReachableFromReference { j, a, b });
                }
            }
        }
    }

    // edge i -> j iff q(j|i,a,b) > 0 for every (a,b)
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let pairs = model.n_a(i) * model.n_b(i);
        if pairs == 0 {
            continue;
        }
        let mut count: std::collections::BTreeMap<usize, usize> = Default::default();
        for a in 0..model.n_a(i) {
            for b in 0..model.n_b(i) {
                for &(j, q) in &model.row(i, a, b).off {
                    if j < n && q > 0.0 {
                        *count.entry(j).or_default() += 1;
                    }
                }
            }
        }
        for (j, k) in count {
            if k == pairs {
                fwd[i].push(j);
                bwd[j].push(i);
            }
        }
    }
    let unreached = unvisited(&fwd, i0);
    let not_reaching = unvisited(&bwd, i0);
    if !unreached.is_empty() || !not_reaching.is_empty() {
        violations.push(Violation::NotIrreducible {
            unreached,
            not_reaching,
        });
    }

    ValidationReport {
        states: n,
        violations,
    }
}

fn unvisited(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_models::*;
    use super::super::{RateRow, ROW_SUM_TOL};
    use super::*;

    #[test]
    fn conservative_two_state_passes() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![2.0, -2.0]], &[0.0, 1.0]);
        let rep = validate_model(&m, ROW_SUM_TOL);
        assert!(rep.is_ok(), "{:?}", rep.violations);
    }

    #[test]
    fn negative_off_diagonal_is_located() {
        let m = GameModel::new(
            "neg",
            0,
            false,
            vec![labels(1, "a"); 2],
            vec![labels(1, "b"); 2],
            vec![
                vec![RateRow { diag: 0.5, off: vec![(1, -0.5)] }],
                vec![RateRow::balanced(vec![(0, 1.0)])],
            ],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        let rep = validate_model(&m, ROW_SUM_TOL);
        assert!(rep.violations.contains(&Violation::NegativeOffDiagonal {
            i: 0,
            a: 0,
            b: 0,
            j: 1,
            q: -0.5
        }));
        let text: Vec<String> = rep.violations.iter().map(|v| v.to_string()).collect();
        assert!(text.iter().any(|t| t.starts_with("negative off-diagonal at (0,0,0,1)")));
    }

    #[test]
    fn reducible_chain_is_flagged() {
        // 2 is absorbing
        let m = uncontrolled(
            &[
                vec![-2.0, 1.0, 1.0],
                vec![1.0, -1.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            &[0.0, 0.0, 0.0],
        );
        let rep = validate_model(&m, ROW_SUM_TOL);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotIrreducible { not_reaching, .. } if not_reaching == &vec![2])));
    }

    #[test]
    fn idempotent() {
        let m = uncontrolled(&[vec![-1.0, 1.0], vec![0.0, 0.0]], &[-1.0, 0.0]);
        let a = validate_model(&m, ROW_SUM_TOL);
        let b = validate_model(&m, ROW_SUM_TOL);
        assert_eq!(a, b);
        assert!(!a.is_ok());
    }
}
