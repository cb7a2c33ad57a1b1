//! Track-to-object matching and the target association matrix used by the
//! associator loss and by the association accuracy measure.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::assignment::min_cost_assignment;
use super::DdaError;
use crate::nn::Tensor;
use crate::sim::CLUTTER_LABEL;

/// Row-stochastic `n x B` matrix: row `i` is the pmf of measurement `i` over
/// the `B` tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociationMatrix(Tensor);

impl AssociationMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    pub fn new(probs: Tensor) -> Result<Self, DdaError> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            if row.iter().any(|&p| !(p >= 0.0))
                || (row.iter().sum::<f64>() - 1.0).abs() > Self::ROW_SUM_TOL
            {
                return Err(DdaError::NotStochastic(i));
            }
        }
        Ok(Self(probs))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DdaError> {
        Self::new(Tensor::from_rows(rows))
    }

    pub fn measurements(&self) -> usize {
        self.0.rows()
    }

    pub fn tracks(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Column of the row maximum; ties go to the lowest index.
    pub fn row_argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn row_max(&self, i: usize) -> f64 {
        self.row(i)[self.row_argmax(i)]
    }

    /// Matrix with columns reordered so that new column `j` is old column
    /// `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let (n, b) = (self.measurements(), self.tracks());
        let mut data = Vec::with_capacity(n * b);
        for i in 0..n {
            data.extend(perm.iter().map(|&j| self.get(i, j)));
        }
        Self(Tensor::matrix(n, b, data))
    }

    /// One row per measurement, `B` comma-separated columns.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        for i in 0..self.measurements() {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(input: &str) -> Result<Self, DdaError> {
        let rows = input
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| DdaError::Parse(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(DdaError::Parse("ragged association matrix".into()));
        }
        Self::from_rows(&rows)
    }
}

/// How clutter rows of the target matrix are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterTarget {
    /// `A*_{ij} = 1(b_i = s*_j)`: clutter rows get a 1 in every unmatched
    /// track.
    #[default]
    Literal,
    /// The last column is reserved for clutter: it is never matched to an
    /// object and clutter rows are one-hot on it.
    SingleColumn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Object ids, one per column of `cost`.
    pub objects: Vec<i64>,
    /// `B x K` cost `C_{jk} = -sum_i A_{ij} 1(b_i = object_k)`.
    pub cost: Tensor,
    /// Track assigned to each object.
    pub track_of_object: Vec<usize>,
    /// Object matched to each track, or -1.
    pub s_star: Vec<i64>,
}

impl MatchResult {
    /// Binary `B x K` assignment matrix.
    pub fn assignment_matrix(&self) -> Tensor {
        let (b, k) = (self.s_star.len(), self.objects.len());
        let mut s = Tensor::zeros(&[b, k]);
        for (obj, &track) in self.track_of_object.iter().enumerate() {
            s.set(track, obj, 1.0);
        }
        s
    }

    pub fn total_cost(&self) -> f64 {
        self.track_of_object
            .iter()
            .enumerate()
            .map(|(k, &j)| self.cost.get(j, k))
            .sum()
    }

    pub fn tracks(&self) -> usize {
        self.s_star.len()
    }
}

fn distinct_objects(labels: &[i64]) -> Vec<i64> {
    labels
        .iter()
        .copied()
        .filter(|&b| b != CLUTTER_LABEL)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Minimum-cost assignment of every object appearing in `labels` to a
/// distinct track, over all `B` tracks.
pub fn match_tracks_to_objects(
    a: &AssociationMatrix,
    labels: &[i64],
) -> Result<MatchResult, DdaError> {
    match_tracks_with(a, labels, ClutterTarget::Literal)
}

/// As [`match_tracks_to_objects`]; with [`ClutterTarget::SingleColumn`] the
/// last track is excluded from matching.
pub fn match_tracks_with(
    a: &AssociationMatrix,
    labels: &[i64],
    mode: ClutterTarget,
) -> Result<MatchResult, DdaError> {
    if labels.len() != a.measurements() {
        return Err(DdaError::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            a.measurements()
        )));
    }
    let objects = distinct_objects(labels);
    let b = a.tracks();
    let usable = match mode {
        ClutterTarget::Literal => b,
        ClutterTarget::SingleColumn => b.saturating_sub(1),
    };
    if objects.len() > usable {
        return Err(DdaError::Capacity {
            objects: objects.len(),
            tracks: usable,
        });
    }
    let k = objects.len();
    let mut cost = Tensor::zeros(&[b, k]);
    for (i, &label) in labels.iter().enumerate() {
        if let Ok(obj) = objects.binary_search(&label) {
            for j in 0..b {
                let c = cost.get(j, obj) - a.get(i, j);
                cost.set(j, obj, c);
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|obj| (0..usable).map(|j| cost.get(j, obj)).collect())
        .collect();
    let (track_of_object, _) = min_cost_assignment(&rows);
    let mut s_star = vec![CLUTTER_LABEL; b];
    for (obj, &j) in track_of_object.iter().enumerate() {
        s_star[j] = objects[obj];
    }
    Ok(MatchResult {
        objects,
        cost,
        track_of_object,
        s_star,
    })
}

/// Binary `n x B` target matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMatrix(pub Tensor);

pub fn build_target_matrix(m: &MatchResult, labels: &[i64], mode: ClutterTarget) -> TargetMatrix {
    let b = m.tracks();
    let mut t = Tensor::zeros(&[labels.len(), b]);
    for (i, &label) in labels.iter().enumerate() {
        if label == CLUTTER_LABEL && mode == ClutterTarget::SingleColumn {
            t.set(i, b - 1, 1.0);
            continue;
        }
        for (j, &s) in m.s_star.iter().enumerate() {
            if s == label {
                t.set(i, j, 1.0);
            }
        }
    }
    TargetMatrix(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example() -> (AssociationMatrix, Vec<i64>) {
        let a = AssociationMatrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.1, 0.9]])
            .unwrap();
        (a, vec![1, 1, -1])
    }

    #[test]
    fn worked_example() {
        let (a, b) = example();
        let m = match_tracks_to_objects(&a, &b).unwrap();
        assert_eq!(m.objects, vec![1]);
        assert_abs_diff_eq!(m.cost.get(0, 0), -1.7, epsilon = 1e-15);
        assert_abs_diff_eq!(m.cost.get(1, 0), -0.3, epsilon = 1e-15);
        assert_eq!(m.track_of_object, vec![0]);
        assert_eq!(m.s_star, vec![1, -1]);
        let t = build_target_matrix(&m, &b, ClutterTarget::Literal);
        assert_eq!(t.0.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_object_single_track() {
        let a = AssociationMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let m = match_tracks_to_objects(&a, &[4, 4]).unwrap();
        assert_eq!(m.s_star, vec![4]);
    }

    #[test]
    fn all_clutter_literal_target_is_all_ones() {
        let a = AssociationMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let labels = [-1, -1];
        let m = match_tracks_to_objects(&a, &labels).unwrap();
        assert_eq!(m.s_star, vec![-1, -1]);
        let t = build_target_matrix(&m, &labels, ClutterTarget::Literal);
        assert!(t.0.data().iter().all(|&v| v == 1.0));
        let t = build_target_matrix(&m, &labels, ClutterTarget::SingleColumn);
        assert_eq!(t.0.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn distinct_objects_give_permutation_targets() {
        // Identity-like A whose columns are a permutation of the objects.
        let a = AssociationMatrix::from_rows(&[
            vec![0.05, 0.9, 0.05],
            vec![0.9, 0.05, 0.05],
            vec![0.05, 0.05, 0.9],
        ])
        .unwrap();
        let labels = [10, 20, 30];
        let m = match_tracks_to_objects(&a, &labels).unwrap();
        assert_eq!(m.s_star, vec![20, 10, 30]);
        let t = build_target_matrix(&m, &labels, ClutterTarget::Literal);
        assert_eq!(t.0.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn capacity_error() {
        let a = AssociationMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            match_tracks_to_objects(&a, &[0, 1]),
            Err(DdaError::Capacity {
                objects: 2,
                tracks: 1
            })
        ));
        let a = AssociationMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(match_tracks_with(&a, &[0], ClutterTarget::SingleColumn).is_ok());
        let a = AssociationMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(match_tracks_with(&a, &[0, 1], ClutterTarget::SingleColumn).is_err());
    }

    #[test]
    fn single_column_never_matches_the_clutter_track() {
        let a = AssociationMatrix::from_rows(&[vec![0.1, 0.1, 0.8], vec![0.1, 0.1, 0.8]]).unwrap();
        let m = match_tracks_with(&a, &[3, -1], ClutterTarget::SingleColumn).unwrap();
        assert_eq!(m.s_star[2], -1);
        let t = build_target_matrix(&m, &[3, -1], ClutterTarget::SingleColumn);
        assert_eq!(t.0.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(AssociationMatrix::from_rows(&[vec![0.5, 0.6]]).is_err());
        assert!(AssociationMatrix::from_rows(&[vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (a, _) = example();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = AssociationMatrix::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
