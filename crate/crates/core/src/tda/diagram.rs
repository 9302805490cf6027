//! Persistence diagrams of 1D signals via sublevel-set filtration.

use super::TdaError;

/// A fixed-length multichannel window of signal samples.
///
/// Values are stored channel-major: `values[c * length + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    channels: usize,
    length: usize,
    values: Vec<f64>,
    pub label: Option<usize>,
}

impl SignalWindow {
    pub fn new(
        channels: usize,
        length: usize,
        values: Vec<f64>,
        label: Option<usize>,
    ) -> Result<Self, TdaError> {
        if channels == 0 || length == 0 {
            return Err(TdaError::InvalidWindow(format!(
                "channels={channels}, length={length}; both must be >= 1"
            )));
        }
        if values.len() != channels * length {
            return Err(TdaError::InvalidWindow(format!(
                "expected {} values for {channels} channel(s) x {length} step(s), got {}",
                channels * length,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TdaError::NonFinite { index: i });
        }
        Ok(Self {
            channels,
            length,
            values,
            label,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One channel's samples.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }
}

/// One feature of the diagram: a component born at `birth` that dies at
/// `death`. The single component that never merges away is `essential` and
/// is paired with the global maximum of the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePoint {
    pub birth: f64,
    pub death: f64,
    pub essential: bool,
}

impl PersistencePoint {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

/// Multiset of persistence points for one signal channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub points: Vec<PersistencePoint>,
    pub channel_index: usize,
}

impl PersistenceDiagram {
    pub fn essential(&self) -> Option<&PersistencePoint> {
        self.points.iter().find(|p| p.essential)
    }

    pub fn finite_points(&self) -> impl Iterator<Item = &PersistencePoint> {
        self.points.iter().filter(|p| !p.essential)
    }

    /// Canonical ordering for multiset comparison in tests.
    pub fn sorted_points(&self) -> Vec<PersistencePoint> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            (a.birth, a.death, a.essential as u8)
                .partial_cmp(&(b.birth, b.death, b.essential as u8))
                .unwrap()
        });
        pts
    }
}

/// Union-find over sample indices; each root carries the (value, index) at
/// which its component was born.
struct Components {
    parent: Vec<usize>,
    birth: Vec<(f64, usize)>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            birth: vec![(f64::INFINITY, usize::MAX); n],
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
}

/// Computes the 0-dimensional sublevel-set persistence diagram of a series.
///
/// Samples are processed in increasing `(value, index)` order. A sample with
/// no processed neighbor starts a component; a sample joining two components
/// merges them, and the component with the higher (younger) birth dies at
/// the merge value. Ties in birth are broken toward the earlier index, so
/// the result is deterministic. Merge pairs with zero persistence are
/// discarded. The surviving component is reported as the essential point,
/// born at the global minimum and paired with the global maximum.
pub fn sublevel_persistence(series: &[f64]) -> Result<PersistenceDiagram, TdaError> {
    if series.is_empty() {
        return Err(TdaError::EmptySeries);
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(TdaError::NonFinite { index: i });
    }

    let n = series.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (series[a], a).partial_cmp(&(series[b], b)).unwrap());

    let mut comps = Components::new(n);
    let mut processed = vec![false; n];
    let mut points = Vec::new();

    for &i in &order {
        let value = series[i];
        comps.birth[i] = (value, i);
        processed[i] = true;

        for j in [i.wrapping_sub(1), i + 1] {
            if j >= n || !processed[j] {
                continue;
            }
            let root_i = comps.find(i);
            let root_j = comps.find(j);
            if root_i == root_j {
                continue;
            }
            // Elder rule: the component with the lexicographically smaller
            // (birth value, birth index) survives.
            let (survivor, dying) = if comps.birth[root_i] <= comps.birth[root_j] {
                (root_i, root_j)
            } else {
                (root_j, root_i)
            };
            let (dying_birth, _) = comps.birth[dying];
            if value > dying_birth {
                points.push(PersistencePoint {
                    birth: dying_birth,
                    death: value,
                    essential: false,
                });
            }
            comps.parent[dying] = survivor;
        }
    }

    let survivor = comps.find(order[0]);
    let global_min = comps.birth[survivor].0;
    let global_max = series[*order.last().unwrap()];
    points.push(PersistencePoint {
        birth: global_min,
        death: global_max,
        essential: true,
    });

    Ok(PersistenceDiagram {
        points,
        channel_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagram(series: &[f64]) -> Vec<(f64, f64, bool)> {
        sublevel_persistence(series)
            .unwrap()
            .sorted_points()
            .iter()
            .map(|p| (p.birth, p.death, p.essential))
            .collect()
    }

    #[test]
    fn constant_signal_has_only_the_essential_point() {
        assert_eq!(diagram(&[5.0, 5.0, 5.0]), vec![(5.0, 5.0, true)]);
    }

    #[test]
    fn monotone_signal_has_single_component() {
        assert_eq!(diagram(&[1.0, 2.0, 3.0]), vec![(1.0, 3.0, true)]);
    }

    #[test]
    fn two_minima_pair_by_elder_rule() {
        assert_eq!(
            diagram(&[0.0, 2.0, 1.0, 3.0]),
            vec![(0.0, 3.0, true), (1.0, 2.0, false)]
        );
    }

    #[test]
    fn single_sample() {
        assert_eq!(diagram(&[7.0]), vec![(7.0, 7.0, true)]);
    }

    #[test]
    fn equal_births_break_toward_earlier_index() {
        // Two minima at the same height; the later one dies at the bridge.
        assert_eq!(
            diagram(&[0.0, 1.0, 0.0]),
            vec![(0.0, 1.0, false), (0.0, 1.0, true)]
        );
    }

    #[test]
    fn zero_persistence_merges_are_discarded() {
        // The second minimum merges at its own height.
        assert_eq!(
            diagram(&[0.0, 1.0, 1.0, 1.0, 0.5, 1.0]),
            vec![(0.0, 1.0, true), (0.5, 1.0, false)]
        );
    }

    #[test]
    fn exactly_one_essential_point() {
        let pd = sublevel_persistence(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]).unwrap();
        assert_eq!(pd.points.iter().filter(|p| p.essential).count(), 1);
        for p in pd.finite_points() {
            assert!(p.death > p.birth);
        }
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(
            sublevel_persistence(&[]),
            Err(TdaError::EmptySeries)
        ));
        assert!(matches!(
            sublevel_persistence(&[1.0, f64::NAN]),
            Err(TdaError::NonFinite { index: 1 })
        ));
        assert!(matches!(
            sublevel_persistence(&[f64::INFINITY, 1.0]),
            Err(TdaError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn window_validates_shape_and_values() {
        assert!(SignalWindow::new(2, 3, vec![0.0; 6], Some(1)).is_ok());
        assert!(SignalWindow::new(0, 3, vec![], None).is_err());
        assert!(SignalWindow::new(2, 3, vec![0.0; 5], None).is_err());
        assert!(SignalWindow::new(1, 2, vec![0.0, f64::NAN], None).is_err());
    }
}
