//! Datasets: windowing, CSV ingestion, synthetic generation, and splits.

mod csv;
mod split;
mod synth;

pub use csv::{load_csv_dataset, write_csv_dataset};
pub use split::{split, SplitResult, SplitSpec};
pub use synth::{generate_synthetic, render_waveform, ClassSpec, SyntheticSpec, Waveform};

use thiserror::Error;

use crate::nn::Tensor;
use crate::tda::{SignalWindow, TdaError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {detail}")]
    Malformed {
        file: String,
        line: usize,
        detail: String,
    },
    #[error("manifest {0}: missing required key '{1}'")]
    MissingKey(String, &'static str),
    #[error("window {index}: label {label} out of range for {classes} class(es)")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("window {index}: expected {expected_channels} channel(s) x {expected_length} step(s)")]
    Heterogeneous {
        index: usize,
        expected_channels: usize,
        expected_length: usize,
    },
    #[error("window {index} has no label")]
    MissingLabel { index: usize },
    #[error("series of length {series} is shorter than the window length {window}")]
    SeriesTooShort { series: usize, window: usize },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("subject {0} not present in the dataset")]
    UnknownSubject(u32),
    #[error("dataset has no subject annotations")]
    NoSubjects,
    #[error("split fractions must lie in (0, 1) and sum below 1")]
    BadFractions,
    #[error(transparent)]
    Tda(#[from] TdaError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A labeled collection of homogeneous windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindowSet {
    windows: Vec<SignalWindow>,
    class_count: usize,
    subjects: Option<Vec<u32>>,
    /// Digest of the manifest or generator spec this set came from.
    pub provenance: u64,
}

impl LabeledWindowSet {
    pub fn new(
        windows: Vec<SignalWindow>,
        class_count: usize,
        subjects: Option<Vec<u32>>,
        provenance: u64,
    ) -> Result<Self, DataError> {
        assert!(
            subjects.as_ref().is_none_or(|s| s.len() == windows.len()),
            "subject annotations must match window count"
        );
        if let Some(first) = windows.first() {
            let (c, l) = (first.channels(), first.length());
            for (index, w) in windows.iter().enumerate() {
                if w.channels() != c || w.length() != l {
                    return Err(DataError::Heterogeneous {
                        index,
                        expected_channels: c,
                        expected_length: l,
                    });
                }
                match w.label {
                    Some(label) if label >= class_count => {
                        return Err(DataError::LabelOutOfRange {
                            index,
                            label,
                            classes: class_count,
                        })
                    }
                    Some(_) => {}
                    None => return Err(DataError::MissingLabel { index }),
                }
            }
        }
        Ok(Self {
            windows,
            class_count,
            subjects,
            provenance,
        })
    }

    pub fn windows(&self) -> &[SignalWindow] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn channels(&self) -> usize {
        self.windows.first().map_or(0, |w| w.channels())
    }

    pub fn window_length(&self) -> usize {
        self.windows.first().map_or(0, |w| w.length())
    }

    pub fn subjects(&self) -> Option<&[u32]> {
        self.subjects.as_deref()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label.expect("validated")).collect()
    }

    /// Stacks all windows into an `[n, channels, length]` input tensor.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.len();
        let (c, l) = (self.channels(), self.window_length());
        let mut data = Vec::with_capacity(n * c * l);
        for w in &self.windows {
            data.extend_from_slice(w.values());
        }
        Tensor::new(vec![n, c, l], data)
    }

    /// A subset by window indices, preserving metadata.
    pub fn subset(&self, indices: &[usize]) -> LabeledWindowSet {
        LabeledWindowSet {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            class_count: self.class_count,
            subjects: self
                .subjects
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            provenance: self.provenance,
        }
    }
}

/// Cuts one multichannel series into fully contained windows at offsets
/// `0, stride, 2 * stride, ...`; the count is
/// `floor((series_len - length) / stride) + 1`.
pub fn window_signal(
    series: &[Vec<f64>],
    length: usize,
    stride: usize,
) -> Result<Vec<SignalWindow>, DataError> {
    if stride == 0 {
        return Err(DataError::ZeroStride);
    }
    assert!(!series.is_empty(), "need at least one channel");
    let n = series[0].len();
    for ch in series {
        assert_eq!(ch.len(), n, "channels must have equal length");
    }
    if length == 0 || length > n {
        return Err(DataError::SeriesTooShort {
            series: n,
            window: length,
        });
    }
    let count = (n - length) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        let mut values = Vec::with_capacity(series.len() * length);
        for ch in series {
            values.extend_from_slice(&ch[start..start + length]);
        }
        out.push(SignalWindow::new(series.len(), length, values, None)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn non_overlapping_windows() {
        let w = window_signal(&[ramp(1000)], 500, 500).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].channel(0)[0], 0.0);
        assert_eq!(w[1].channel(0)[0], 500.0);
    }

    #[test]
    fn exact_fit_yields_one_window() {
        let w = window_signal(&[ramp(100)], 100, 22).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn overlapping_window_count() {
        // offsets 0, 22, 44 fit in 144 steps.
        let w = window_signal(&[ramp(144)], 100, 22).unwrap();
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn count_formula_holds() {
        for (n, len, stride) in [(64usize, 16usize, 4usize), (63, 16, 5), (16, 16, 1), (100, 7, 3)]
        {
            let w = window_signal(&[ramp(n)], len, stride).unwrap();
            assert_eq!(w.len(), (n - len) / stride + 1, "n={n} len={len} stride={stride}");
        }
    }

    #[test]
    fn short_series_is_an_error() {
        assert!(matches!(
            window_signal(&[ramp(10)], 11, 1),
            Err(DataError::SeriesTooShort { .. })
        ));
        assert!(matches!(
            window_signal(&[ramp(10)], 5, 0),
            Err(DataError::ZeroStride)
        ));
    }

    #[test]
    fn set_validates_labels_and_shape() {
        let mk = |label| SignalWindow::new(1, 4, vec![0.0; 4], Some(label)).unwrap();
        assert!(LabeledWindowSet::new(vec![mk(0), mk(1)], 2, None, 0).is_ok());
        assert!(matches!(
            LabeledWindowSet::new(vec![mk(0), mk(2)], 2, None, 0),
            Err(DataError::LabelOutOfRange { .. })
        ));
        let unlabeled = SignalWindow::new(1, 4, vec![0.0; 4], None).unwrap();
        assert!(matches!(
            LabeledWindowSet::new(vec![unlabeled], 2, None, 0),
            Err(DataError::MissingLabel { .. })
        ));
    }
}
