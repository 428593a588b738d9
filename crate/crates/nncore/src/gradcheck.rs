//! Central finite-difference gradient checking.
//!
//! Only uses forward evaluation, so it serves as an oracle independent of the
//! backward closures it verifies.

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Outcome of [`check`]: worst norm-wise relative error over all inputs.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

/// Compares autodiff gradients of the scalar `⟨f(inputs), probe⟩` against
/// central differences with step `h`.
///
/// `f` receives the tape and one leaf per input. The probe tensor makes
/// non-scalar outputs testable; pass `None` for ops that already return a
/// scalar.
pub fn check<F>(inputs: &[Tensor<f64>], probe: Option<&Tensor<f64>>, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out);
        Ok(match probe {
            Some(p) => v.data().iter().zip(p.data()).map(|(a, b)| a * b).sum(),
            None => v.item()?,
        })
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = match probe {
        Some(p) => {
            let pv = tape.constant(p.clone());
            tape.dot(out, pv)?
        }
        None => out,
    };
    let grads = tape.backward(loss, &mut ParamStore::new())?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let scale = n.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
            let diff = a
                .data()
                .iter()
                .zip(n.data())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            diff / scale
        })
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}
