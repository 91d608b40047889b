//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes with constant leaves, so
//! it never touches the backward rules it is checking. Entries whose `±h`
//! probes land on different sides of a kink (a ReLU input crossing zero, say)
//! have no valid central difference; they are counted and left out.

use crate::error::Result;

use super::{Graph, Tensor, Var};

/// Step used by the checks when none is given.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Norms below this are treated as zero when forming relative errors. It
/// sits above the roundoff of a central difference on an O(1) loss, which
/// matters for gradients that vanish identically (a bias feeding straight
/// into instance norm).
pub const NORM_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, NORM_FLOOR)` per input,
    /// over the entries that were not skipped.
    pub per_input: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// Entries per input whose probes straddled a kink.
    pub skipped: Vec<usize>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_skipped(&self) -> usize {
        self.skipped.iter().sum()
    }
}

/// Gradients of the scalar `f(inputs)` by backward pass, one per input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take_or_zeros(v, t))
        .collect())
}

/// Forward-only evaluation of the scalar `f(inputs)`.
pub fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    Ok(evaluate_with_pattern(inputs, f)?.0)
}

fn evaluate_with_pattern<F>(inputs: &[Tensor], f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g.value(out).sum(), g.branch_pattern()))
}

/// Central differences `(f(x + h·e) − f(x − h·e)) / 2h` for every entry of
/// every input, with a per-entry flag set where the two probes straddle a
/// kink.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F, step: f64) -> Result<Vec<(Tensor, Vec<bool>)>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].dims().to_vec());
        let mut straddles = vec![false; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let (up, up_pattern) = evaluate_with_pattern(&work, f)?;
            work[i].data_mut()[j] = orig - step;
            let (down, down_pattern) = evaluate_with_pattern(&work, f)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (up - down) / (2.0 * step);
            straddles[j] = up_pattern != down_pattern;
        }
        out.push((grad, straddles));
    }
    Ok(out)
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.norm().max(b.norm()).max(NORM_FLOOR)
}

fn masked_relative_error(a: &Tensor, n: &Tensor, skip: &[bool]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for ((x, y), &s) in a.data().iter().zip(n.data()).zip(skip) {
        if !s {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(NORM_FLOOR)
}

pub fn check<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let (numeric, skips): (Vec<Tensor>, Vec<Vec<bool>>) = numeric_gradients(inputs, &f, step)?.into_iter().unzip();
    let per_input = analytic
        .iter()
        .zip(&numeric)
        .zip(&skips)
        .map(|((a, n), s)| masked_relative_error(a, n, s))
        .collect();
    Ok(GradCheckReport {
        per_input,
        analytic,
        numeric,
        skipped: skips.iter().map(|s| s.iter().filter(|&&x| x).count()).collect(),
    })
}
