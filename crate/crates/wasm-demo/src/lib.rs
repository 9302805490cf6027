//! Browser bindings for the interactive playground.
//!
//! Three panels, all computed in this module and rendered by `www/main.js`:
//! a signal-to-persistence-image explorer, a mixup lab (Beta sampling and
//! convex signal mixing), and a distillation-loss lab (tempered softmax and
//! the KL term as functions of temperature).

use wasm_bindgen::prelude::*;

use topokd::augment::sample_lambda;
use topokd::data::{render_waveform, Waveform};
use topokd::distill::losses::{kd_kl_loss, tempered_softmax};
use topokd::nn::Tensor;
use topokd::tda::{diagram_to_image, sublevel_persistence, PIConfig};

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Renders one synthetic waveform channel.
///
/// `family` is one of `sine`, `am-sine`, `walk`, `spikes`; `cycles` counts
/// oscillations (or spikes) per window.
#[wasm_bindgen]
pub fn gen_signal(
    family: &str,
    cycles: f64,
    amp: f64,
    noise: f64,
    phase: f64,
    length: usize,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    let family: Waveform = family.parse().map_err(err)?;
    let mut rng = topokd::rng::seeded(seed);
    Ok(render_waveform(
        family, cycles, amp, noise, phase, length, &mut rng,
    ))
}

/// Persistence diagram of a signal as flat `[birth, death, essential]`
/// triples (`essential` is 0 or 1).
#[wasm_bindgen]
pub fn diagram_points(signal: &[f64]) -> Result<Vec<f64>, JsValue> {
    let pd = sublevel_persistence(signal).map_err(err)?;
    let mut out = Vec::with_capacity(pd.points.len() * 3);
    for p in pd.sorted_points() {
        out.push(p.birth);
        out.push(p.death);
        out.push(p.essential as u8 as f64);
    }
    Ok(out)
}

/// Persistence image of a signal as a row-major `resolution^2` grid
/// (row 0 = lowest persistence band).
#[wasm_bindgen]
pub fn persistence_image(
    signal: &[f64],
    sigma: f64,
    birth_lo: f64,
    birth_hi: f64,
    resolution: usize,
    include_essential: bool,
) -> Result<Vec<f32>, JsValue> {
    let cfg = PIConfig {
        sigma,
        birth_range: (birth_lo, birth_hi),
        resolution,
        include_essential,
        normalize: true,
        ..PIConfig::default()
    };
    let pd = sublevel_persistence(signal).map_err(err)?;
    let img = diagram_to_image(&pd, &cfg).map_err(err)?;
    Ok(img.grid.iter().map(|&v| v as f32).collect())
}

/// Draws `count` mixing coefficients from `Beta(alpha, alpha)`.
#[wasm_bindgen]
pub fn sample_lambdas(alpha: f64, count: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    let mut rng = topokd::rng::seeded(seed);
    (0..count)
        .map(|_| sample_lambda(alpha, &mut rng).map_err(err))
        .collect()
}

/// Convex mix `lambda * a + (1 - lambda) * b`, elementwise.
#[wasm_bindgen]
pub fn mix_signals(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>, JsValue> {
    if a.len() != b.len() {
        return Err(err("signals must have equal length"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(err("lambda must lie in [0, 1]"));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
        .collect())
}

/// Temperature-softened class probabilities for one logit vector.
#[wasm_bindgen]
pub fn tempered_probs(logits: &[f64], temperature: f64) -> Result<Vec<f64>, JsValue> {
    if logits.is_empty() {
        return Err(err("need at least one logit"));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(err("temperature must be positive"));
    }
    let t = Tensor::new(vec![1, logits.len()], logits.to_vec());
    Ok(tempered_softmax(&t, temperature).data().to_vec())
}

/// Temperature-softened KL distillation loss between one teacher/student
/// logit pair.
#[wasm_bindgen]
pub fn kd_loss(teacher: &[f64], student: &[f64], temperature: f64) -> Result<f64, JsValue> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(err("teacher and student need equal, nonzero lengths"));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(err("temperature must be positive"));
    }
    let t = Tensor::new(vec![1, teacher.len()], teacher.to_vec());
    let s = Tensor::new(vec![1, student.len()], student.to_vec());
    Ok(kd_kl_loss(&t, &s, temperature))
}
