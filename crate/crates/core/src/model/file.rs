//! JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DriftMode, GameModel, LyapunovData, ModelError, RateRow, ROW_SUM_TOL};
use crate::format::to_json_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub reference_state: usize,
    pub conceptually_infinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub j: usize,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub i: usize,
    pub a_idx: usize,
    pub b_idx: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub i: usize,
    pub a_idx: usize,
    pub b_idx: usize,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lhat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "K_hat")]
    pub k_hat: Vec<usize>,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    #[serde(rename = "V_tilde")]
    pub v_tilde: Vec<f64>,
}

/// On-disk layout of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub meta: Meta,
    pub states: usize,
    pub actions_a: Vec<Vec<String>>,
    pub actions_b: Vec<Vec<String>>,
    pub rates: Vec<RateRecord>,
    pub cost: Vec<CostRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovRecord>,
}

impl ModelFile {
    pub fn from_model(model: &GameModel, lyap: Option<&LyapunovData>) -> Self {
        let n = model.states();
        let mut rates = Vec::new();
        let mut cost = Vec::new();
        for i in 0..n {
            for a in 0..model.n_a(i) {
                for b in 0..model.n_b(i) {
                    let row = model.row(i, a, b);
                    let mut entries: Vec<Entry> = row.off.iter().map(|&(j, q)| Entry { j, q }).collect();
                    let at = entries.partition_point(|e| e.j < i);
                    entries.insert(at, Entry { j: i, q: row.diag });
                    rates.push(RateRecord {
                        i,
                        a_idx: a,
                        b_idx: b,
                        entries,
                    });
                    cost.push(CostRecord {
                        i,
                        a_idx: a,
                        b_idx: b,
                        c: model.cost(i, a, b),
                    });
                }
            }
        }
        let lyapunov = lyap.map(|l| {
            let (lhat, gamma_hat) = match &l.mode {
                DriftMode::Bounded { gamma_hat } => (None, Some(*gamma_hat)),
                DriftMode::Unbounded { lhat } => (Some(lhat.clone()), None),
            };
            LyapunovRecord {
                v: l.v.clone(),
                lhat,
                gamma_hat,
                c: l.c,
                k_hat: l.k_hat.clone(),
                b0: l.b0,
                b1: l.b1,
                b2: l.b2,
                v_tilde: l.v_tilde.clone(),
            }
        });
        Self {
            meta: Meta {
                name: model.name.clone(),
                reference_state: model.reference_state,
                conceptually_infinite: model.conceptually_infinite,
            },
            states: n,
            actions_a: (0..n).map(|i| model.actions_a(i).to_vec()).collect(),
            actions_b: (0..n).map(|i| model.actions_b(i).to_vec()).collect(),
            rates,
            cost,
            lyapunov,
        }
    }

    /// Converts to a model, reconstructing omitted diagonals and rejecting
    /// rows whose explicit diagonal breaks conservativeness beyond `tol`.
    pub fn into_model(self, tol: f64) -> Result<(GameModel, Option<LyapunovData>), ModelError> {
        let n = self.states;
        if self.actions_a.len() != n || self.actions_b.len() != n {
            return Err(ModelError::Schema(format!(
                "`actions_a`/`actions_b` must list {n} states, got {} and {}",
                self.actions_a.len(),
                self.actions_b.len()
            )));
        }
        let idx = |i: usize, a: usize, b: usize| -> Result<usize, ModelError> {
            if i >= n || a >= self.actions_a[i].len() || b >= self.actions_b[i].len() {
                return Err(ModelError::Schema(format!("record (i={i}, a_idx={a}, b_idx={b}) out of range")));
            }
            Ok(a * self.actions_b[i].len() + b)
        };
        let mut rows: Vec<Vec<Option<RateRow>>> = (0..n)
            .map(|i| vec![None; self.actions_a[i].len() * self.actions_b[i].len()])
            .collect();
        for rec in &self.rates {
            let k = idx(rec.i, rec.a_idx, rec.b_idx)?;
            let mut diag = None;
            let mut off = Vec::with_capacity(rec.entries.len());
            for e in &rec.entries {
                if e.j == rec.i {
                    diag = Some(e.q);
                } else {
                    off.push((e.j, e.q));
                }
            }
            let row = match diag {
                None => RateRow::balanced(off),
                Some(d) => {
                    off.sort_by_key(|&(j, _)| j);
                    let row = RateRow { diag: d, off };
                    let sum = row.row_sum();
                    if sum.abs() > tol * row.magnitude() {
                        return Err(ModelError::NotConservative {
                            i: rec.i,
                            a: rec.a_idx,
                            b: rec.b_idx,
                            sum,
                        });
                    }
                    row
                }
            };
            if rows[rec.i][k].replace(row).is_some() {
                return Err(ModelError::Schema(format!(
                    "duplicate `rates` record (i={}, a_idx={}, b_idx={})",
                    rec.i, rec.a_idx, rec.b_idx
                )));
            }
        }
        let mut cost: Vec<Vec<Option<f64>>> = rows.iter().map(|r| vec![None; r.len()]).collect();
        for rec in &self.cost {
            let k = idx(rec.i, rec.a_idx, rec.b_idx)?;
            if cost[rec.i][k].replace(rec.c).is_some() {
                return Err(ModelError::Schema(format!(
                    "duplicate `cost` record (i={}, a_idx={}, b_idx={})",
                    rec.i, rec.a_idx, rec.b_idx
                )));
            }
        }
        let mut full_rows = Vec::with_capacity(n);
        let mut full_cost = Vec::with_capacity(n);
        for i in 0..n {
            let nb = self.actions_b[i].len();
            let mut r = Vec::with_capacity(rows[i].len());
            let mut c = Vec::with_capacity(rows[i].len());
            for k in 0..rows[i].len() {
                let (a, b) = (k / nb, k % nb);
                r.push(rows[i][k].take().ok_or_else(|| {
                    ModelError::Schema(format!("missing `rates` record (i={i}, a_idx={a}, b_idx={b})"))
                })?);
                c.push(cost[i][k].ok_or_else(|| {
                    ModelError::Schema(format!("missing `cost` record (i={i}, a_idx={a}, b_idx={b})"))
                })?);
            }
            full_rows.push(r);
            full_cost.push(c);
        }
        let model = GameModel::new(
            self.meta.name,
            self.meta.reference_state,
            self.meta.conceptually_infinite,
            self.actions_a,
            self.actions_b,
            full_rows,
            full_cost,
        )?;
        let lyap = match self.lyapunov {
            None => None,
            Some(l) => {
                let mode = match (l.lhat, l.gamma_hat) {
                    (Some(lhat), None) => DriftMode::Unbounded { lhat },
                    (None, Some(gamma_hat)) => DriftMode::Bounded { gamma_hat },
                    _ => {
                        return Err(ModelError::Schema(
                            "`lyapunov` needs exactly one of `lhat` and `gamma_hat`".into(),
                        ))
                    }
                };
                let data = LyapunovData {
                    v: l.v,
                    mode,
                    c: l.c,
                    k_hat: l.k_hat,
                    b0: l.b0,
                    b1: l.b1,
                    b2: l.b2,
                    v_tilde: l.v_tilde,
                };
                let problems = data.check(&model);
                if !problems.is_empty() {
                    return Err(ModelError::Schema(format!("`lyapunov`: {}", problems.join("; "))));
                }
                Some(data)
            }
        };
        Ok((model, lyap))
    }
}

fn map_serde(e: serde_json::Error) -> ModelError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => ModelError::Schema(e.to_string()),
        Category::Io => ModelError::Io(e.into()),
        Category::Syntax | Category::Eof => ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    }
}

pub fn model_from_json(text: &str, tol: f64) -> Result<(GameModel, Option<LyapunovData>), ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(map_serde)?;
    file.into_model(tol)
}

pub fn model_to_json(model: &GameModel, lyap: Option<&LyapunovData>) -> String {
    to_json_string(&ModelFile::from_model(model, lyap)).expect("model serializes")
}

/// Reads a model file, checking conservativeness at the default tolerance.
pub fn load_model(path: impl AsRef<Path>) -> Result<(GameModel, Option<LyapunovData>), ModelError> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text, ROW_SUM_TOL)
}

pub fn save_model(model: &GameModel, lyap: Option<&LyapunovData>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, model_to_json(model, lyap))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{build_birth_death, BirthDeathParams};
    use super::*;

    const TWO_STATE: &str = r#"{
        "meta": {"name": "two", "reference_state": 0, "conceptually_infinite": false},
        "states": 2,
        "actions_a": [["x"], ["x"]],
        "actions_b": [["y"], ["y"]],
        "rates": [
            {"i": 0, "a_idx": 0, "b_idx": 0, "entries": [{"j": 1, "q": 1.0}]},
            {"i": 1, "a_idx": 0, "b_idx": 0, "entries": [{"j": 0, "q": 2.0}, {"j": 1, "q": -2.0}]}
        ],
        "cost": [
            {"i": 0, "a_idx": 0, "b_idx": 0, "c": 0.0},
            {"i": 1, "a_idx": 0, "b_idx": 0, "c": 1.5}
        ]
    }"#;

    #[test]
    fn diagonal_is_reconstructed() {
        let (m, l) = model_from_json(TWO_STATE, ROW_SUM_TOL).unwrap();
        assert_eq!(m.row(0, 0, 0).diag, -1.0);
        assert_eq!(m.row(1, 0, 0).diag, -2.0);
        assert!(l.is_none());
    }

    #[test]
    fn birth_death_round_trip() {
        let (m, l) = build_birth_death(&BirthDeathParams::with_cap(200)).unwrap();
        let text = model_to_json(&m, Some(&l));
        let (m2, l2) = model_from_json(&text, ROW_SUM_TOL).unwrap();
        assert_eq!(m, m2);
        assert_eq!(Some(l), l2);
        assert_eq!(model_to_json(&m2, l2.as_ref()), text);
    }

    #[test]
    fn missing_rates_names_the_key() {
        let mut v: serde_json::Value = serde_json::from_str(TWO_STATE).unwrap();
        v.as_object_mut().unwrap().remove("rates");
        let e = model_from_json(&v.to_string(), ROW_SUM_TOL).unwrap_err();
        assert!(matches!(e, ModelError::Schema(_)));
        assert!(e.to_string().contains("rates"), "{e}");
    }

    #[test]
    fn nonconservative_row_is_located() {
        let bad = TWO_STATE.replace(r#"{"j": 1, "q": -2.0}"#, r#"{"j": 1, "q": -1.999999}"#);
        match model_from_json(&bad, 1e-12) {
            Err(ModelError::NotConservative { i, a, b, sum }) => {
                assert_eq!((i, a, b), (1, 0, 0));
                assert!((sum - 1e-6).abs() < 1e-12);
            }
            other => panic!("expected conservativeness error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = model_from_json("{\n  \"meta\": ,", ROW_SUM_TOL).unwrap_err();
        match e {
            ModelError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
