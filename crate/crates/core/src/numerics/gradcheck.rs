use crate::error::Result;
use crate::numerics::{BoundParams, NodeId, ParamStore, Tape};
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±eps perturbation crossed a kink or switched an
    /// argmin/argmax, so finite differences are not meaningful there.
    pub skipped: usize,
    /// Coordinates whose analytic and numeric values differ by less than
    /// the rounding error of the loss divided by `eps`; not counted in
    /// `max_rel_error`.
    pub within_roundoff: usize,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn evaluate<S, F>(params: &ParamStore<S>, forward: &F) -> Result<(f64, Vec<u32>)>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &BoundParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    Ok((value, tape.branch_signature().to_vec()))
}

/// Checks the gradient of a scalar `forward` with respect to every
/// coordinate of `params` using central differences with step `eps`.
pub fn grad_check<S, F>(params: &ParamStore<S>, eps: f64, forward: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &BoundParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound)?;
    let base = tape.value(loss).data()[0].to_f64_lossy();
    let grads = tape.backward(loss)?;
    let signature = tape.branch_signature().to_vec();
    let resolution = 16.0 * S::epsilon().to_f64_lossy() * base.abs().max(1.0) / eps;
    drop(tape);

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0, within_roundoff: 0, worst: None };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic = &grads[name];
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + S::of(eps);
            let (plus, sig_plus) = evaluate(&probe, &forward)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - S::of(eps);
            let (minus, sig_minus) = evaluate(&probe, &forward)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            if sig_plus != signature || sig_minus != signature {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic.data()[i].to_f64_lossy();
            report.checked += 1;
            if (ad - fd).abs() <= resolution {
                report.within_roundoff += 1;
                continue;
            }
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), i, ad, fd));
            }
        }
    }
    Ok(report)
}
