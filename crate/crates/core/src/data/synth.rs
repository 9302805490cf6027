//! Synthetic multichannel waveform datasets.
//!
//! Classes are parameterized waveform families whose oscillation counts
//! differ, so both the raw series and their persistence structure carry
//! class signal: a sampled wave with `f` cycles has about `f` local minima,
//! hence about `f` diagram points.

use super::{DataError, LabeledWindowSet};
use crate::digest::Fnv64;
use crate::rng::{normal, uniform, Rng};
use crate::tda::SignalWindow;

/// Waveform family of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    /// Pure sinusoid.
    Sine,
    /// Amplitude-modulated sinusoid (modulation at a fifth of the carrier).
    AmSine,
    /// Scaled cumulative sum of Gaussian steps.
    RandomWalk,
    /// Periodic triangular spikes over a quiet baseline.
    SpikeTrain,
}

impl Waveform {
    pub fn name(&self) -> &'static str {
        match self {
            Waveform::Sine => "sine",
            Waveform::AmSine => "am-sine",
            Waveform::RandomWalk => "walk",
            Waveform::SpikeTrain => "spikes",
        }
    }
}

impl std::str::FromStr for Waveform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sine" => Ok(Waveform::Sine),
            "am-sine" => Ok(Waveform::AmSine),
            "walk" => Ok(Waveform::RandomWalk),
            "spikes" => Ok(Waveform::SpikeTrain),
            other => Err(format!("unknown waveform '{other}'")),
        }
    }
}

/// Per-class generation ranges. `freq` counts cycles (or spikes) per
/// window; each sample draws its parameters uniformly from the ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub family: Waveform,
    pub freq: (f64, f64),
    pub amp: (f64, f64),
    pub noise: (f64, f64),
}

/// Generator settings for a labeled synthetic set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub channels: usize,
    pub length: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassSpec {
                    family: Waveform::Sine,
                    freq: (2.5, 4.0),
                    amp: (0.7, 1.2),
                    noise: (0.12, 0.25),
                },
                ClassSpec {
                    family: Waveform::Sine,
                    freq: (6.0, 8.0),
                    amp: (0.7, 1.2),
                    noise: (0.12, 0.25),
                },
                ClassSpec {
                    family: Waveform::SpikeTrain,
                    freq: (4.5, 6.5),
                    amp: (1.0, 1.5),
                    noise: (0.10, 0.20),
                },
            ],
            channels: 2,
            length: 128,
            samples_per_class: 120,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::new();
        h.update(b"synthspec-v1");
        h.update_u64(self.channels as u64);
        h.update_u64(self.length as u64);
        h.update_u64(self.samples_per_class as u64);
        h.update_u64(self.seed);
        for c in &self.classes {
            h.update(c.family.name().as_bytes());
            for v in [c.freq.0, c.freq.1, c.amp.0, c.amp.1, c.noise.0, c.noise.1] {
                h.update_f64(v);
            }
        }
        h.finish()
    }
}

fn range(r: (f64, f64), rng: &mut Rng) -> f64 {
    r.0 + (r.1 - r.0) * uniform(rng)
}

/// Renders one channel of one sample. `phase` shifts periodic families;
/// the noise term is drawn from `rng`.
pub fn render_waveform(
    family: Waveform,
    freq: f64,
    amp: f64,
    noise_sigma: f64,
    phase: f64,
    length: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(length);
    match family {
        Waveform::Sine => {
            for t in 0..length {
                let x = t as f64 / length as f64;
                out.push(amp * (tau * freq * x + phase).sin());
            }
        }
        Waveform::AmSine => {
            for t in 0..length {
                let x = t as f64 / length as f64;
                let envelope = 1.0 + 0.5 * (tau * freq * 0.2 * x).sin();
                out.push(amp * envelope * (tau * freq * x + phase).sin());
            }
        }
        Waveform::RandomWalk => {
            let step = amp / (length as f64).sqrt();
            let mut acc = 0.0;
            for _ in 0..length {
                acc += step * normal(rng);
                out.push(acc);
            }
        }
        Waveform::SpikeTrain => {
            let period = length as f64 / freq.max(1.0);
            let offset = phase / tau * period;
            out.resize(length, 0.0);
            let width = 2.0_f64.max(period / 8.0).min(5.0);
            let mut center = offset;
            while center < length as f64 + width {
                let lo = ((center - width).floor().max(0.0)) as usize;
                let hi = ((center + width).ceil() as usize).min(length);
                for (t, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
                    let d = (t as f64 - center).abs();
                    if d < width {
                        *v += amp * (1.0 - d / width);
                    }
                }
                center += period;
            }
        }
    }
    if noise_sigma > 0.0 {
        for v in &mut out {
            *v += noise_sigma * normal(rng);
        }
    }
    out
}

/// Generates a class-balanced labeled set, deterministic in `seed`.
/// Channels of one sample share the drawn parameters but get phase offsets
/// and independent noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledWindowSet, DataError> {
    assert!(spec.classes.len() >= 2, "need at least two classes");
    assert!(spec.channels >= 1 && spec.length >= 1);
    let mut rng = crate::rng::derived(seed, "synth");
    let mut windows = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);

    for (label, class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let freq = range(class.freq, &mut rng);
            let amp = range(class.amp, &mut rng);
            let noise = range(class.noise, &mut rng);
            let phase = std::f64::consts::TAU * uniform(&mut rng);
            let mut values = Vec::with_capacity(spec.channels * spec.length);
            for ch in 0..spec.channels {
                let ch_phase = phase + ch as f64 * std::f64::consts::FRAC_PI_4;
                let ch_amp = amp * (1.0 - 0.25 * ch as f64 / spec.channels.max(1) as f64);
                values.extend(render_waveform(
                    class.family,
                    freq,
                    ch_amp,
                    noise,
                    ch_phase,
                    spec.length,
                    &mut rng,
                ));
            }
            windows.push(SignalWindow::new(
                spec.channels,
                spec.length,
                values,
                Some(label),
            )?);
        }
    }

    LabeledWindowSet::new(windows, spec.classes.len(), None, spec.digest())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tda::sublevel_persistence;

    #[test]
    fn balanced_and_shaped() {
        let spec = SyntheticSpec {
            samples_per_class: 100,
            ..SyntheticSpec::default()
        };
        let set = generate_synthetic(&spec, 1).unwrap();
        assert_eq!(set.len(), 300);
        assert_eq!(set.channels(), 2);
        assert_eq!(set.window_length(), 128);
        let labels = set.labels();
        for class in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == class).count(), 100);
        }
    }

    #[test]
    fn seed_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, 5).unwrap();
        let b = generate_synthetic(&spec, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pure_sine_minima_match_frequency() {
        let mut rng = crate::rng::seeded(3);
        for f in [3.0, 5.0, 8.0] {
            for phase in [0.0, 1.0, 2.5] {
                let wave = render_waveform(Waveform::Sine, f, 1.0, 0.0, phase, 256, &mut rng);
                let pd = sublevel_persistence(&wave).unwrap();
                let finite = pd.finite_points().count() as f64;
                assert!(
                    (finite - f).abs() <= 1.0,
                    "freq {f} phase {phase}: {finite} finite points"
                );
            }
        }
    }

    #[test]
    fn nearest_neighbor_separates_default_classes() {
        // Raw-window 1-NN as an independent separability check of the
        // default generator settings.
        let spec = SyntheticSpec::default();
        let set = generate_synthetic(&spec, 2).unwrap();
        let split = crate::data::split(
            &set,
            &crate::data::SplitSpec::RandomStratified {
                train_fraction: 0.75,
                val_fraction: None,
                seed: 5,
            },
        )
        .unwrap();
        let train = split.train.to_tensor();
        let test = split.test.to_tensor();
        let train_labels = split.train.labels();
        let test_labels = split.test.labels();
        let mut correct = 0;
        for (i, &truth) in test_labels.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (j, &candidate) in train_labels.iter().enumerate() {
                let d: f64 = test
                    .row(i)
                    .iter()
                    .zip(train.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, candidate);
                }
            }
            if best.1 == truth {
                correct += 1;
            }
        }
        let acc = 100.0 * correct as f64 / test.rows() as f64;
        assert!(acc >= 95.0, "1-NN accuracy {acc:.2}%");
    }

    #[test]
    fn distinct_frequencies_give_distinct_point_counts() {
        let mut rng = crate::rng::seeded(9);
        let slow = render_waveform(Waveform::Sine, 3.0, 1.0, 0.0, 0.3, 128, &mut rng);
        let fast = render_waveform(Waveform::Sine, 8.0, 1.0, 0.0, 0.3, 128, &mut rng);
        let p_slow = sublevel_persistence(&slow).unwrap().points.len();
        let p_fast = sublevel_persistence(&fast).unwrap().points.len();
        assert!(p_fast > p_slow);
    }
}
