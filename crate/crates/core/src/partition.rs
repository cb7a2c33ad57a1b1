//! Greedy conversion of an association matrix into fixed-length tracks.

use std::collections::BTreeMap;

use crate::dda::AssociationMatrix;
use crate::sim::{Measurement, CLUTTER_LABEL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrackSlot {
    Measured {
        z: [f64; 3],
        /// Row maximum of the association pmf.
        confidence: f64,
        /// Index of the measurement in the input sequence.
        measurement: usize,
    },
    Dummy,
}

impl TrackSlot {
    pub fn is_measured(&self) -> bool {
        matches!(self, TrackSlot::Measured { .. })
    }
}

/// Exactly one slot per time-step of the window.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub slots: Vec<TrackSlot>,
    pub source_column: usize,
}

impl Track {
    pub fn measured_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_measured()).count()
    }

    pub fn window(&self) -> usize {
        self.slots.len()
    }
}

struct Candidate {
    column: usize,
    t: usize,
    z: [f64; 3],
    confidence: f64,
    index: usize,
}

fn assemble(candidates: Vec<Candidate>, window: usize) -> Vec<Track> {
    let mut by_column: BTreeMap<usize, Vec<TrackSlot>> = BTreeMap::new();
    for c in candidates {
        if c.t < 1 || c.t > window {
            continue;
        }
        let slots = by_column
            .entry(c.column)
            .or_insert_with(|| vec![TrackSlot::Dummy; window]);
        let slot = &mut slots[c.t - 1];
        let replace = match *slot {
            TrackSlot::Dummy => true,
            TrackSlot::Measured {
                confidence,
                measurement,
                ..
            } => c.confidence > confidence || (c.confidence == confidence && c.index < measurement),
        };
        if replace {
            *slot = TrackSlot::Measured {
                z: c.z,
                confidence: c.confidence,
                measurement: c.index,
            };
        }
    }
    by_column
        .into_iter()
        .map(|(source_column, slots)| Track {
            slots,
            source_column,
        })
        .collect()
}

/// Sends every measurement to its row-argmax column (lowest index on ties),
/// drops columns without measurements, fills empty steps with dummies, and
/// keeps one measurement per step: the most confident, then the earliest.
pub fn partition(
    a: &AssociationMatrix,
    z: &[[f64; 3]],
    times: &[usize],
    window: usize,
) -> Vec<Track> {
    assert_eq!(
        a.measurements(),
        z.len(),
        "association rows must align with measurements"
    );
    assert_eq!(z.len(), times.len());
    let candidates = (0..z.len())
        .map(|i| Candidate {
            column: a.row_argmax(i),
            t: times[i],
            z: z[i],
            confidence: a.row_max(i),
            index: i,
        })
        .collect();
    assemble(candidates, window)
}

/// Partition by true labels with unit confidence; clutter is discarded. Track
/// `k` carries the `k`-th smallest object id, returned alongside.
pub fn partition_by_labels(measurements: &[Measurement], window: usize) -> Vec<(i64, Track)> {
    let mut ids: Vec<i64> = measurements
        .iter()
        .map(|m| m.label)
        .filter(|&b| b != CLUTTER_LABEL)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let candidates = measurements
        .iter()
        .enumerate()
        .filter(|(_, m)| m.label != CLUTTER_LABEL)
        .map(|(i, m)| Candidate {
            column: ids.binary_search(&m.label).expect("collected above"),
            t: m.t,
            z: m.z,
            confidence: 1.0,
            index: i,
        })
        .collect();
    assemble(candidates, window)
        .into_iter()
        .map(|tr| (ids[tr.source_column], tr))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measured(z: [f64; 3], confidence: f64, measurement: usize) -> TrackSlot {
        TrackSlot::Measured {
            z,
            confidence,
            measurement,
        }
    }

    fn example() -> (AssociationMatrix, Vec<[f64; 3]>, Vec<usize>) {
        let a = AssociationMatrix::from_rows(&[
            vec![0.9, 0.05, 0.05],
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.2, 0.1, 0.7],
        ])
        .unwrap();
        let z = vec![
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [4.0, 0.0, 0.0],
        ];
        (a, z, vec![1, 1, 2, 3])
    }

    #[test]
    fn worked_example() {
        let (a, z, t) = example();
        let tracks = partition(&a, &z, &t, 3);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].source_column, 0);
        assert_eq!(
            tracks[0].slots,
            vec![measured(z[0], 0.9, 0), TrackSlot::Dummy, TrackSlot::Dummy]
        );
        assert_eq!(tracks[1].source_column, 2);
        assert_eq!(
            tracks[1].slots,
            vec![
                TrackSlot::Dummy,
                measured(z[2], 0.8, 2),
                measured(z[3], 0.7, 3)
            ]
        );
    }

    #[test]
    fn single_column() {
        let a = AssociationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.7, 0.3]]).unwrap();
        let tracks = partition(&a, &[[1.0; 3], [2.0; 3]], &[1, 2], 2);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].measured_count(), 2);
    }

    #[test]
    fn no_measurements() {
        let a = AssociationMatrix::from_rows(&[]).unwrap();
        assert!(partition(&a, &[], &[], 4).is_empty());
    }

    #[test]
    fn argmax_ties_go_to_lowest_column() {
        let a = AssociationMatrix::from_rows(&[
            vec![0.25, 0.5, 0.25 / 2.0, 0.25 / 2.0],
            vec![0.4, 0.4, 0.1, 0.1],
        ])
        .unwrap();
        let tracks = partition(&a, &[[1.0; 3], [2.0; 3]], &[1, 1], 1);
        assert_eq!(
            tracks.iter().map(|t| t.source_column).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn input_order_does_not_matter() {
        let (a, z, t) = example();
        let order = [3, 1, 2, 0];
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| a.row(i).to_vec()).collect();
        let a2 = AssociationMatrix::from_rows(&rows).unwrap();
        let z2: Vec<_> = order.iter().map(|&i| z[i]).collect();
        let t2: Vec<_> = order.iter().map(|&i| t[i]).collect();
        let strip = |tracks: Vec<Track>| -> Vec<Vec<Option<[f64; 3]>>> {
            tracks
                .into_iter()
                .map(|tr| {
                    tr.slots
                        .into_iter()
                        .map(|s| match s {
                            TrackSlot::Measured { z, .. } => Some(z),
                            TrackSlot::Dummy => None,
                        })
                        .collect()
                })
                .collect()
        };
        assert_eq!(
            strip(partition(&a, &z, &t, 3)),
            strip(partition(&a2, &z2, &t2, 3))
        );
    }

    #[test]
    fn label_partition_ignores_clutter() {
        let ms = [
            Measurement {
                z: [1.0; 3],
                t: 1,
                label: 7,
            },
            Measurement {
                z: [2.0; 3],
                t: 1,
                label: -1,
            },
            Measurement {
                z: [3.0; 3],
                t: 2,
                label: 3,
            },
            Measurement {
                z: [4.0; 3],
                t: 2,
                label: 7,
            },
        ];
        let tracks = partition_by_labels(&ms, 2);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].0, 3);
        assert_eq!(tracks[1].0, 7);
        assert_eq!(
            tracks[1].1.slots,
            vec![measured([1.0; 3], 1.0, 0), measured([4.0; 3], 1.0, 3)]
        );
    }
}
