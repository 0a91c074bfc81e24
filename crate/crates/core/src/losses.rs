//! Multi-scale content loss, multi-scale frequency reconstruction loss and
//! their weighted sum.
//!
//! Every level's term is normalized by that level's element count. The
//! frequency term compares unnormalized 2-D DFTs, taking the L1 distance of
//! real and imaginary parts separately.

use mimo_tensor::{Graph, Scalar, Tensor, Var};

use crate::{CoreError, Result};

/// Default weight of the frequency term.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Scalar loss values of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_cont: f64,
    pub l_msfr: f64,
    /// `l_cont + lambda * l_msfr`, evaluated in double precision.
    pub l_total: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn new(l_cont: f64, l_msfr: f64, lambda: f64) -> Self {
        Self {
            l_cont,
            l_msfr,
            l_total: l_cont + lambda * l_msfr,
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_cont.is_finite() && self.l_msfr.is_finite() && self.l_total.is_finite()
    }
}

/// Graph nodes of a total-loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub content: Var,
    pub msfr: Var,
    pub total: Var,
}

fn check_pyramids<T: Scalar>(g: &Graph<T>, predictions: &[Var], targets: &[Var]) -> Result<()> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(CoreError::Usage(format!(
            "{} predictions against {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    for (k, (&p, &t)) in predictions.iter().zip(targets).enumerate() {
        if g.shape(p) != g.shape(t) {
            return Err(CoreError::Usage(format!(
                "level {} prediction is {} but target is {}",
                k + 1,
                g.shape(p),
                g.shape(t)
            )));
        }
    }
    Ok(())
}

fn sum_all<T: Scalar>(g: &mut Graph<T>, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().expect("at least one term");
    it.try_fold(first, |acc, v| Ok(g.add(acc, v)?))
}

/// `sum_k mean |pred_k - target_k|`.
pub fn content_loss<T: Scalar>(g: &mut Graph<T>, predictions: &[Var], targets: &[Var]) -> Result<Var> {
    check_pyramids(g, predictions, targets)?;
    let terms = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| g.l1_mean(p, t))
        .collect::<Result<Vec<_>, _>>()?;
    sum_all(g, terms)
}

/// `sum_k (sum |Re F p_k - Re F t_k| + sum |Im F p_k - Im F t_k|) / t_k`.
pub fn msfr_loss<T: Scalar>(g: &mut Graph<T>, predictions: &[Var], targets: &[Var]) -> Result<Var> {
    check_pyramids(g, predictions, targets)?;
    let mut terms = Vec::with_capacity(2 * predictions.len());
    for (&p, &t) in predictions.iter().zip(targets) {
        let (pr, pi) = g.fft2(p);
        let (tr, ti) = g.fft2(t);
        terms.push(g.l1_mean(pr, tr)?);
        terms.push(g.l1_mean(pi, ti)?);
    }
    sum_all(g, terms)
}

/// Content loss plus `lambda` times the frequency loss.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    predictions: &[Var],
    targets: &[Var],
    lambda: f64,
) -> Result<(LossVars, LossReport)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CoreError::Config(format!("loss weight must be finite and non-negative, got {lambda}")));
    }
    let content = content_loss(g, predictions, targets)?;
    let msfr = msfr_loss(g, predictions, targets)?;
    let total = if lambda == 0.0 {
        content
    } else {
        let weighted = g.scale(msfr, T::from_real(lambda));
        g.add(content, weighted)?
    };
    let report = LossReport::new(g.value(content).data()[0].as_f64(), g.value(msfr).data()[0].as_f64(), lambda);
    Ok((LossVars { content, msfr, total }, report))
}

/// Evaluates the losses on plain tensors.
pub fn evaluate<T: Scalar>(predictions: &[Tensor<T>], targets: &[Tensor<T>], lambda: f64) -> Result<LossReport> {
    let mut g = Graph::new();
    let p: Vec<Var> = predictions.iter().map(|t| g.input(t.clone())).collect();
    let t: Vec<Var> = targets.iter().map(|t| g.input(t.clone())).collect();
    Ok(total_loss(&mut g, &p, &t, lambda)?.1)
}
