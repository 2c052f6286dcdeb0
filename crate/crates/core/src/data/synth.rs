//! Synthetic grid-telemetry windows: one temporal motif per class over a
//! baseline level, plus Gaussian noise of standard deviation
//! `BASELINE / class_margin`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class names in generator order.
pub const MOTIF_CLASSES: [&str; 7] = [
    "normal",
    "dos",
    "injection",
    "rogue-device",
    "scanning",
    "switching",
    "connection-loss",
];

/// Motif amplitude unit and resting level of every channel.
const BASELINE: f64 = 1.0;

/// Minimum window length for the motifs to fit.
pub const MIN_LENGTH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub length: usize,
    pub class_margin: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 7,
            per_class: 200,
            channels: 3,
            length: 32,
            class_margin: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MOTIF_CLASSES.len()).contains(&self.classes) {
            return Err(Error::Config(format!(
                "synth.classes must be between 2 and {}, got {}",
                MOTIF_CLASSES.len(),
                self.classes
            )));
        }
        if self.channels == 0 || self.length < MIN_LENGTH {
            return Err(Error::Config(format!(
                "synth needs at least one channel and length >= {MIN_LENGTH}"
            )));
        }
        if !(self.class_margin > 0.0 && self.class_margin.is_finite()) {
            return Err(Error::Config(format!("synth.class_margin must be positive, got {}", self.class_margin)));
        }
        Ok(())
    }
}

/// Noise-free motif of `class` for a window of length `n`; `shift` jitters
/// the motif position.
fn motif(class: usize, n: usize, shift: isize, out: &mut [f64]) {
    let a = BASELINE;
    out.iter_mut().for_each(|v| *v = a);
    let at = |base: usize| (base as isize + shift).clamp(0, n as isize - 1) as usize;
    match class {
        // normal: flat baseline
        0 => {}
        // dos: burst of four spikes
        1 => {
            let p = at(n / 3);
            for j in 0..4 {
                if let Some(v) = out.get_mut(p + 2 * j) {
                    *v += 2.0 * a;
                }
            }
        }
        // injection: ramp from baseline to three times baseline
        2 => {
            let p = at(n / 4);
            let span = (n - p).max(1) as f64;
            for (t, v) in out.iter_mut().enumerate().skip(p) {
                *v += 2.0 * a * (t - p + 1) as f64 / span;
            }
        }
        // rogue-device: pulse followed by a weaker echo
        3 => {
            let p = at(n / 4);
            let echo = p + n / 3;
            for t in p..(p + 2).min(n) {
                out[t] += 2.0 * a;
            }
            for t in echo..(echo + 2).min(n) {
                out[t] += a;
            }
        }
        // scanning: periodic probe pulses
        4 => {
            let phase = shift.rem_euclid(2) as usize;
            for t in (phase..n).step_by(6) {
                out[t] += 2.0 * a;
            }
        }
        // switching: step change
        5 => {
            let p = at(n / 2);
            out[p..].iter_mut().for_each(|v| *v += 1.5 * a);
        }
        // connection-loss: dropout to zero
        6 => {
            let p = at(n / 3);
            for t in p..(p + n / 4).min(n) {
                out[t] = 0.0;
            }
        }
        _ => unreachable!("validated class count"),
    }
}

/// Balanced labeled dataset; samples cycle through the classes.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (c, k, n) = (cfg.classes, cfg.channels, cfg.length);
    let total = c * cfg.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, BASELINE / cfg.class_margin).map_err(|e| Error::Config(e.to_string()))?;
    let max_shift = (n / 16) as i64;
    let mut data = Vec::with_capacity(total * k * n);
    let mut labels = Vec::with_capacity(total);
    let mut shape = vec![0.0; n];
    for i in 0..total {
        let class = i % c;
        let shift = rng.random_range(-max_shift..=max_shift) as isize;
        motif(class, n, shift, &mut shape);
        for _ in 0..k {
            let gain = rng.random_range(0.8..1.2);
            data.extend(shape.iter().map(|&v| (BASELINE + gain * (v - BASELINE) + noise.sample(&mut rng)) as f32));
        }
        labels.push(class);
    }
    Dataset::new(
        Tensor::new(vec![total, k, n], data)?,
        Some(labels),
        (0..total).map(|i| format!("s{i:05}")).collect(),
        MOTIF_CLASSES[..c].iter().map(|s| s.to_string()).collect(),
    )
}
