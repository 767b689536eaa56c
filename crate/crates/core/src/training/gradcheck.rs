use serde::Serialize;

use super::{batch_gradients, batch_loss, Example, TrainError};
use crate::model::Model;

/// Denominator floor of the relative error, so entries whose true gradient
/// is essentially zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub step: f64,
}

/// Compares analytic gradients of the batch loss with central differences
/// `(L(θ+h) - L(θ-h)) / 2h` for every entry of every parameter. Relative
/// error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(model: &Model<f64>, batch: &[&Example<f64>], h: f64) -> Result<GradCheckReport, TrainError> {
    let (_, analytic) = batch_gradients(model, batch)?;
    let mut probe = model.clone();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut params = Vec::with_capacity(names.len());
    for (name, grad) in names.iter().zip(&analytic) {
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for i in 0..grad.len() {
            let orig = model.params.get(name).expect("listed name").data()[i];
            let mut at = |x: f64| -> Result<f64, TrainError> {
                let mut t = probe.params.get(name).expect("listed name").clone();
                t.data_mut()[i] = x;
                probe.params.set(name, t)?;
                batch_loss(&probe, batch)
            };
            let plus = at(orig + h)?;
            let minus = at(orig - h)?;
            at(orig)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let abs = (a - numeric).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR));
        }
        params.push(ParamCheck { name: name.clone(), entries: grad.len(), max_abs_error: max_abs, max_rel_error: max_rel });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { params, max_rel_error, step: h })
}
