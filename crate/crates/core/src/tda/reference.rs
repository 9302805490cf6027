//! Reference persistence computation by explicit threshold sweeping.
//!
//! This is the slow-but-obvious counterpart to
//! [`sublevel_persistence`](super::sublevel_persistence): for every distinct
//! sample value, the sublevel set is re-scanned from scratch and its
//! connected runs are matched against the components of the previous
//! threshold. It shares no code or data structures with the union-find
//! implementation and exists to cross-check it at small scale.

use super::{PersistenceDiagram, PersistencePoint, TdaError};

#[derive(Debug, Clone)]
struct Component {
    birth_value: f64,
    birth_index: usize,
    // Any sample index known to lie in this component; used to locate it
    // inside a run of the current sublevel set.
    witness: usize,
}

/// Identical contract to [`sublevel_persistence`](super::sublevel_persistence),
/// computed by sweeping thresholds through all distinct values and tracking
/// component births and merges explicitly. Intended for series of at most a
/// few hundred samples.
pub fn brute_force_persistence(series: &[f64]) -> Result<PersistenceDiagram, TdaError> {
    if series.is_empty() {
        return Err(TdaError::EmptySeries);
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(TdaError::NonFinite { index: i });
    }

    let n = series.len();
    let mut thresholds: Vec<f64> = series.to_vec();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut components: Vec<Component> = Vec::new();
    let mut points = Vec::new();

    for &threshold in &thresholds {
        // Maximal contiguous runs of the sublevel set {i : x[i] <= threshold}.
        let included: Vec<bool> = series.iter().map(|&v| v <= threshold).collect();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut start = None;
        for (i, &inside) in included.iter().enumerate() {
            match (inside, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, n - 1));
        }

        let mut next: Vec<Component> = Vec::new();
        for &(lo, hi) in &runs {
            let members: Vec<usize> = components
                .iter()
                .enumerate()
                .filter(|(_, c)| c.witness >= lo && c.witness <= hi)
                .map(|(idx, _)| idx)
                .collect();
            if members.is_empty() {
                // Fresh run: all its samples sit exactly at this threshold.
                let birth_index = (lo..=hi).find(|&i| series[i] == threshold).unwrap();
                next.push(Component {
                    birth_value: threshold,
                    birth_index,
                    witness: birth_index,
                });
            } else {
                // The eldest component absorbs the rest.
                let eldest = *members
                    .iter()
                    .min_by(|&&a, &&b| {
                        (components[a].birth_value, components[a].birth_index)
                            .partial_cmp(&(components[b].birth_value, components[b].birth_index))
                            .unwrap()
                    })
                    .unwrap();
                for &m in &members {
                    if m != eldest && threshold > components[m].birth_value {
                        points.push(PersistencePoint {
                            birth: components[m].birth_value,
                            death: threshold,
                            essential: false,
                        });
                    }
                }
                next.push(components[eldest].clone());
            }
        }
        components = next;
    }

    debug_assert_eq!(components.len(), 1);
    let survivor = &components[0];
    points.push(PersistencePoint {
        birth: survivor.birth_value,
        death: *thresholds.last().unwrap(),
        essential: true,
    });

    Ok(PersistenceDiagram {
        points,
        channel_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::super::sublevel_persistence;
    use super::*;

    #[test]
    fn matches_union_find_on_the_worked_example() {
        let series = [0.0, 2.0, 1.0, 3.0];
        let a = brute_force_persistence(&series).unwrap();
        let b = sublevel_persistence(&series).unwrap();
        assert_eq!(a.sorted_points(), b.sorted_points());
    }

    #[test]
    fn singleton_series() {
        let pd = brute_force_persistence(&[7.0]).unwrap();
        assert_eq!(
            pd.points,
            vec![PersistencePoint {
                birth: 7.0,
                death: 7.0,
                essential: true
            }]
        );
    }

    #[test]
    fn point_count_equals_plateau_minima() {
        // Plateau runs count once: minima at [1 1], [0], and the boundary [2].
        let series = [2.0, 5.0, 1.0, 1.0, 4.0, 0.0, 3.0];
        let pd = brute_force_persistence(&series).unwrap();
        let minima = count_plateau_minima(&series);
        assert_eq!(pd.points.len(), minima);
    }

    fn count_plateau_minima(series: &[f64]) -> usize {
        let n = series.len();
        let mut count = 0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && series[j + 1] == series[i] {
                j += 1;
            }
            let left_higher = i == 0 || series[i - 1] > series[i];
            let right_higher = j == n - 1 || series[j + 1] > series[i];
            if left_higher && right_higher {
                count += 1;
            }
            i = j + 1;
        }
        count
    }
}
