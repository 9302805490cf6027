//! Rasterization of persistence diagrams into persistence images.
//!
//! Each diagram point is placed at `(birth, persistence)` coordinates and
//! spread by an isotropic Gaussian weighted by its persistence. Pixel values
//! are exact box integrals of the Gaussian (separable error-function form),
//! not center-point evaluations, so the image is unbiased at any resolution.

use super::{PersistenceDiagram, SignalWindow, TdaError};
use crate::digest::Fnv64;
use crate::nn::Tensor;

/// Linear-in-persistence weighting is the single supported scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    LinearPersistence,
}

/// Rasterization settings for persistence images.
///
/// The horizontal axis spans `birth_range` in signal units; the vertical
/// axis spans persistences `[0, hi - lo]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PIConfig {
    /// Standard deviation of the Gaussian kernel, in signal units.
    pub sigma: f64,
    /// Birth-axis range `[lo, hi]`.
    pub birth_range: (f64, f64),
    /// Grid resolution per axis.
    pub resolution: usize,
    pub weight: WeightKind,
    /// Whether the essential point contributes to the image.
    pub include_essential: bool,
    /// Divide by the max entry after accumulation (when the max is > 0).
    pub normalize: bool,
}

impl Default for PIConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            birth_range: (-10.0, 10.0),
            resolution: 64,
            weight: WeightKind::LinearPersistence,
            include_essential: true,
            normalize: true,
        }
    }
}

impl PIConfig {
    pub fn validate(&self) -> Result<(), TdaError> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(TdaError::InvalidConfig(format!(
                "sigma must be finite and > 0, got {}",
                self.sigma
            )));
        }
        let (lo, hi) = self.birth_range;
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(TdaError::InvalidConfig(format!(
                "birth range must satisfy hi > lo, got [{lo}, {hi}]"
            )));
        }
        if self.resolution == 0 {
            return Err(TdaError::InvalidConfig("resolution must be >= 1".into()));
        }
        Ok(())
    }

    /// Persistence-axis range, fixed to `[0, hi - lo]`.
    pub fn persistence_range(&self) -> (f64, f64) {
        (0.0, self.birth_range.1 - self.birth_range.0)
    }

    /// Stable fingerprint of every field; any change forces re-extraction
    /// of cached images.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::new();
        h.update(b"piconfig-v1");
        h.update_f64(self.sigma);
        h.update_f64(self.birth_range.0);
        h.update_f64(self.birth_range.1);
        h.update_u64(self.resolution as u64);
        h.update(&[match self.weight {
            WeightKind::LinearPersistence => 0u8,
        }]);
        h.update(&[self.include_essential as u8, self.normalize as u8]);
        h.finish()
    }
}

/// A rasterized diagram: a nonnegative `resolution x resolution` grid in
/// row-major order, rows indexed by persistence and columns by birth.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceImage {
    pub grid: Vec<f64>,
    pub resolution: usize,
    pub normalized: bool,
    pub config_hash: u64,
}

impl PersistenceImage {
    pub fn max(&self) -> f64 {
        self.grid.iter().cloned().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().sum()
    }
}

/// Mass of one axis of a unit Gaussian over `[a, b]`.
fn axis_mass(a: f64, b: f64, center: f64, sigma: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf((x - center) / (sigma * std::f64::consts::SQRT_2)));
    cdf(b) - cdf(a)
}

/// Exact integral of an isotropic unit-mass 2D Gaussian centered at
/// `center` over the box `[x0, x1] x [y0, y1]`, computed separably via the
/// Gaussian CDF in each axis. The result lies in `[0, 1]`.
pub fn gaussian_pixel_mass(center: (f64, f64), pixel_box: (f64, f64, f64, f64), sigma: f64) -> f64 {
    let (x0, x1, y0, y1) = pixel_box;
    debug_assert!(x1 > x0 && y1 > y0 && sigma > 0.0);
    axis_mass(x0, x1, center.0, sigma) * axis_mass(y0, y1, center.1, sigma)
}

/// Rasterizes a diagram onto the configured grid.
///
/// Every point contributes `persistence x gaussian_pixel_mass` to every
/// pixel; points outside the configured ranges still deposit whatever mass
/// falls inside the grid. An empty effective diagram yields the all-zero
/// image with `normalized = false`.
pub fn diagram_to_image(pd: &PersistenceDiagram, cfg: &PIConfig) -> Result<PersistenceImage, TdaError> {
    cfg.validate()?;
    let res = cfg.resolution;
    let (blo, bhi) = cfg.birth_range;
    let (plo, phi) = cfg.persistence_range();
    let bstep = (bhi - blo) / res as f64;
    let pstep = (phi - plo) / res as f64;

    let mut grid = vec![0.0f64; res * res];
    let mut col_mass = vec![0.0f64; res];
    let mut row_mass = vec![0.0f64; res];

    for point in &pd.points {
        if point.essential && !cfg.include_essential {
            continue;
        }
        let weight = point.persistence();
        if weight == 0.0 {
            continue;
        }
        let center = (point.birth, point.persistence());
        for (i, mass) in col_mass.iter_mut().enumerate() {
            let x0 = blo + i as f64 * bstep;
            *mass = axis_mass(x0, x0 + bstep, center.0, cfg.sigma);
        }
        for (j, mass) in row_mass.iter_mut().enumerate() {
            let y0 = plo + j as f64 * pstep;
            *mass = axis_mass(y0, y0 + pstep, center.1, cfg.sigma);
        }
        for j in 0..res {
            let row = &mut grid[j * res..(j + 1) * res];
            let wy = weight * row_mass[j];
            for i in 0..res {
                row[i] += wy * col_mass[i];
            }
        }
    }

    let max = grid.iter().cloned().fold(0.0, f64::max);
    let normalized = cfg.normalize && max > 0.0;
    if normalized {
        for v in &mut grid {
            *v /= max;
        }
    }

    Ok(PersistenceImage {
        grid,
        resolution: res,
        normalized,
        config_hash: cfg.digest(),
    })
}

/// Per-channel persistence images of one window, stacked as image channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PiStack {
    pub channels: Vec<PersistenceImage>,
}

/// Extracts one [`PiStack`] per window, fanning out across `workers`
/// threads. Results are written to pre-assigned slots, so the output is
/// identical for any worker count.
pub fn extract_pi_batch(
    windows: &[SignalWindow],
    cfg: &PIConfig,
    workers: usize,
) -> Result<Vec<PiStack>, TdaError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let channels = windows[0].channels();
    for (i, w) in windows.iter().enumerate() {
        if w.channels() != channels {
            return Err(TdaError::Window {
                index: i,
                source: Box::new(TdaError::InvalidWindow(format!(
                    "expected {channels} channel(s), got {}",
                    w.channels()
                ))),
            });
        }
    }

    let extract_one = |index: usize, window: &SignalWindow| -> Result<PiStack, TdaError> {
        let wrap = |source: TdaError| TdaError::Window {
            index,
            source: Box::new(source),
        };
        let mut stack = Vec::with_capacity(window.channels());
        for c in 0..window.channels() {
            let mut pd = super::sublevel_persistence(window.channel(c)).map_err(wrap)?;
            pd.channel_index = c;
            stack.push(diagram_to_image(&pd, cfg).map_err(wrap)?);
        }
        Ok(PiStack { channels: stack })
    };

    let workers = workers.max(1).min(windows.len());
    if workers == 1 {
        return windows
            .iter()
            .enumerate()
            .map(|(i, w)| extract_one(i, w))
            .collect();
    }

    let mut slots: Vec<Option<Result<PiStack, TdaError>>> = Vec::new();
    slots.resize_with(windows.len(), || None);
    let chunk = windows.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (slot_chunk, (offset, window_chunk)) in slots
            .chunks_mut(chunk)
            .zip(windows.chunks(chunk).enumerate().map(|(k, w)| (k * chunk, w)))
        {
            scope.spawn(move || {
                for (j, window) in window_chunk.iter().enumerate() {
                    slot_chunk[j] = Some(extract_one(offset + j, window));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

/// Stacks extracted images into an `[n, channels, res, res]` input tensor.
pub fn stacks_to_tensor(stacks: &[PiStack]) -> Tensor {
    assert!(!stacks.is_empty());
    let channels = stacks[0].channels.len();
    let res = stacks[0].channels[0].resolution;
    let mut data = Vec::with_capacity(stacks.len() * channels * res * res);
    for stack in stacks {
        assert_eq!(stack.channels.len(), channels);
        for image in &stack.channels {
            assert_eq!(image.resolution, res);
            data.extend_from_slice(&image.grid);
        }
    }
    Tensor::new(vec![stacks.len(), channels, res, res], data)
}

#[cfg(test)]
mod tests {
    use super::super::sublevel_persistence;
    use super::*;
    use crate::tda::PersistencePoint;

    fn cfg() -> PIConfig {
        PIConfig {
            sigma: 0.25,
            birth_range: (-2.0, 2.0),
            resolution: 64,
            weight: WeightKind::LinearPersistence,
            include_essential: true,
            normalize: false,
        }
    }

    #[test]
    fn whole_plane_mass_is_one() {
        let m = gaussian_pixel_mass((0.0, 0.0), (-40.0, 40.0, -40.0, 40.0), 1.0);
        assert!((m - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn centered_two_sigma_box() {
        // One-axis mass over +-1 sigma, squared.
        let m = gaussian_pixel_mass((0.0, 0.0), (-1.0, 1.0, -1.0, 1.0), 1.0);
        assert!((m - 0.46606499).abs() < 1e-6, "mass {m}");
    }

    #[test]
    fn far_away_box_has_no_mass() {
        let m = gaussian_pixel_mass((0.0, 0.0), (100.0, 101.0, 100.0, 101.0), 1.0);
        assert!(m <= 1e-15);
    }

    #[test]
    fn empty_diagram_gives_zero_unnormalized_image() {
        let pd = PersistenceDiagram {
            points: vec![PersistencePoint {
                birth: 0.0,
                death: 0.0,
                essential: true,
            }],
            channel_index: 0,
        };
        let mut c = cfg();
        c.include_essential = false;
        c.normalize = true;
        let img = diagram_to_image(&pd, &c).unwrap();
        assert!(!img.normalized);
        assert!(img.grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_mass_matches_analytic_integral() {
        let pd = PersistenceDiagram {
            points: vec![PersistencePoint {
                birth: 0.3,
                death: 1.4,
                essential: false,
            }],
            channel_index: 0,
        };
        let c = cfg();
        let img = diagram_to_image(&pd, &c).unwrap();
        let p = 1.4 - 0.3;
        let (blo, bhi) = c.birth_range;
        let (plo, phi) = c.persistence_range();
        let expected = p * gaussian_pixel_mass((0.3, p), (blo, bhi, plo, phi), c.sigma);
        let rel = (img.sum() - expected).abs() / expected;
        assert!(rel < 1e-9, "relative error {rel}");
    }

    #[test]
    fn normalized_image_peaks_at_one() {
        let pd = sublevel_persistence(&[0.0, 1.5, -0.5, 1.0, 0.2]).unwrap();
        let mut c = cfg();
        c.normalize = true;
        let img = diagram_to_image(&pd, &c).unwrap();
        assert!(img.normalized);
        assert_eq!(img.max(), 1.0);
        assert!(img.grid.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn batch_shape_and_determinism() {
        let mut windows = Vec::new();
        for k in 0..5 {
            let values: Vec<f64> = (0..48)
                .map(|t| ((t + k) as f64 * 0.41).sin() + 0.2 * ((t * 7 + k) as f64 * 1.3).cos())
                .collect();
            let mut all = values.clone();
            all.extend(values.iter().map(|v| v * 0.5 + 0.1));
            all.extend(values.iter().map(|v| -v));
            windows.push(SignalWindow::new(3, 48, all, Some(k % 2)).unwrap());
        }
        let c = cfg();
        let sequential = extract_pi_batch(&windows, &c, 1).unwrap();
        assert_eq!(sequential.len(), 5);
        assert_eq!(sequential[0].channels.len(), 3);
        assert_eq!(sequential[0].channels[0].grid.len(), 64 * 64);

        let parallel = extract_pi_batch(&windows, &c, 4).unwrap();
        assert_eq!(sequential, parallel);

        let again = extract_pi_batch(&windows, &c, 1).unwrap();
        assert_eq!(sequential, again);

        let t = stacks_to_tensor(&sequential);
        assert_eq!(t.shape(), &[5, 3, 64, 64]);
    }

    #[test]
    fn heterogeneous_batch_names_the_window() {
        let a = SignalWindow::new(2, 8, vec![0.0; 16], None).unwrap();
        let b = SignalWindow::new(3, 8, vec![0.0; 24], None).unwrap();
        match extract_pi_batch(&[a, b], &cfg(), 1) {
            Err(crate::tda::TdaError::Window { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected a window-indexed error, got {other:?}"),
        }
    }

    #[test]
    fn config_digest_tracks_every_field() {
        let base = cfg();
        let mut variants = Vec::new();
        for f in [
            |c: &mut PIConfig| c.sigma = 0.3,
            |c: &mut PIConfig| c.birth_range = (-2.0, 2.5),
            |c: &mut PIConfig| c.birth_range = (-1.5, 2.0),
            |c: &mut PIConfig| c.resolution = 32,
            |c: &mut PIConfig| c.include_essential = false,
            |c: &mut PIConfig| c.normalize = true,
        ] {
            let mut c = base.clone();
            f(&mut c);
            variants.push(c.digest());
        }
        for d in &variants {
            assert_ne!(*d, base.digest());
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg();
        c.sigma = 0.0;
        assert!(c.validate().is_err());
        c = cfg();
        c.birth_range = (2.0, 2.0);
        assert!(c.validate().is_err());
        c = cfg();
        c.resolution = 0;
        assert!(c.validate().is_err());
    }
}
