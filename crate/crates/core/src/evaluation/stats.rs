use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_RATING: u8 = 4;

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EvalError::Input(format!("pearson needs equal lengths >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Input("pearson undefined for a constant input".into()));
    }
    if !(sxy.is_finite() && sxx.is_finite() && syy.is_finite()) {
        return Err(EvalError::NonFinite("pearson input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub pair_id: String,
    pub model_id: String,
    pub rating: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater: Option<String>,
}

/// One rating per line; blank lines are skipped.
pub fn parse_ratings(text: &str) -> Result<Vec<Rating>, EvalError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Rating = serde_json::from_str(line).map_err(|e| EvalError::Input(format!("line {}: {e}", i + 1)))?;
        if r.rating > MAX_RATING {
            return Err(EvalError::Input(format!("line {}: rating {} outside 0..={MAX_RATING}", i + 1, r.rating)));
        }
        if !seen.insert((r.pair_id.clone(), r.model_id.clone(), r.rater.clone())) {
            return Err(EvalError::Input(format!(
                "line {}: duplicate rating for pair {} model {}",
                i + 1,
                r.pair_id,
                r.model_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_ratings(path: &Path) -> Result<Vec<Rating>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_ratings(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRatings {
    pub mean: f64,
    pub count: usize,
}

/// Mean rating per model id.
pub fn aggregate_ratings(ratings: &[Rating]) -> BTreeMap<String, ModelRatings> {
    let mut sums: BTreeMap<String, (u64, usize)> = BTreeMap::new();
    for r in ratings {
        let e = sums.entry(r.model_id.clone()).or_insert((0, 0));
        e.0 += r.rating as u64;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(m, (s, n))| (m, ModelRatings { mean: s as f64 / n as f64, count: n }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_correlations() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 5]).is_err());
    }

    #[test]
    fn duplicates_and_range() {
        let a = r#"{"pair_id":"p","model_id":"m","rating":3}"#;
        assert!(parse_ratings(&format!("{a}\n{a}\n")).is_err());
        assert!(parse_ratings(r#"{"pair_id":"p","model_id":"m","rating":5}"#).is_err());
        let b = r#"{"pair_id":"p","model_id":"m","rating":3,"rater":"r2"}"#;
        assert_eq!(parse_ratings(&format!("{a}\n\n{b}\n")).unwrap().len(), 2);
    }
}
