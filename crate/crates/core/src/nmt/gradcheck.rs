use std::fmt;

use super::model::{Params, Seq2SeqModel};
use crate::error::{Error, Result};

/// Gradients smaller than this in magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{}\t{:.3e}\t[{}] analytic={:.6e} numeric={:.6e}",
                t.name, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the pair's loss with central finite
/// differences of step `eps` on every coordinate of every tensor. Fails when
/// some tensor's maximum relative error exceeds `tolerance`.
pub fn gradient_check(
    model: &Seq2SeqModel,
    src: &[u32],
    tgt: &[u32],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    model.check_ids(src, tgt)?;
    let mut analytic = Params::zeros(&model.dims);
    model.loss_and_grad(src, tgt, &mut analytic);
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for (ti, (name, grad)) in analytic.tensors().into_iter().enumerate() {
        let mut worst = TensorCheck {
            name,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in grad.iter().enumerate() {
            let orig = model.params.tensors()[ti].1[i];
            let mut eval = |x: f64| {
                probe.params.tensors_mut()[ti].1[i] = x;
                probe.loss(src, tgt)
            };
            let numeric = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps);
            eval(orig);
            let err = rel_error(a, numeric);
            if err > worst.max_rel_error {
                worst = TensorCheck {
                    name,
                    max_rel_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        tensors.push(worst);
    }
    let report = GradCheckReport { tensors };
    if report.max_rel_error() > tolerance {
        let failing: Vec<String> = report
            .tensors
            .iter()
            .filter(|t| t.max_rel_error > tolerance)
            .map(|t| format!("{}[{}] rel={:.3e}", t.name, t.worst_index, t.max_rel_error))
            .collect();
        return Err(Error::GradientCheck(failing.join(", ")));
    }
    Ok(report)
}
