use super::matching::{
    build_target_matrix, match_tracks_with, AssociationMatrix, ClutterTarget, TargetMatrix,
};
use super::DdaError;
use crate::nn::{Graph, Var};

/// Probabilities are clamped from below before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_shapes(rows: usize, cols: usize, target: &TargetMatrix) -> Result<(), DdaError> {
    if target.0.rows() != rows || target.0.cols() != cols {
        return Err(DdaError::ShapeMismatch(format!(
            "prediction {rows}x{cols}, target {}x{}",
            target.0.rows(),
            target.0.cols()
        )));
    }
    if rows == 0 {
        return Err(DdaError::EmptyInput);
    }
    Ok(())
}

/// Cross-entropy `-(1/n) sum_ij A*_ij log A_ij`.
pub fn dda_loss(a: &AssociationMatrix, target: &TargetMatrix) -> Result<f64, DdaError> {
    let (n, b) = (a.measurements(), a.tracks());
    check_shapes(n, b, target)?;
    let mut total = 0.0;
    for i in 0..n {
        for (p, &w) in a.row(i).iter().zip(target.0.row(i)) {
            if w != 0.0 {
                total -= w * p.max(LOG_FLOOR).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Differentiable [`dda_loss`] on a node holding the row pmfs.
pub fn dda_loss_var(g: &mut Graph, probs: Var, target: &TargetMatrix) -> Result<Var, DdaError> {
    let shape = g.value(probs).shape().to_vec();
    check_shapes(shape[0], shape[1], target)?;
    let t = g.input(target.0.clone());
    let logp = g.log_clamped(probs, LOG_FLOOR);
    let weighted = g.mul(logp, t)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, -1.0 / shape[0] as f64))
}

/// Loss after matching `a` to the labels and building the target from that
/// match.
pub fn rematched_loss(
    a: &AssociationMatrix,
    labels: &[i64],
    mode: ClutterTarget,
) -> Result<f64, DdaError> {
    let m = match_tracks_with(a, labels, mode)?;
    dda_loss(a, &build_target_matrix(&m, labels, mode))
}
