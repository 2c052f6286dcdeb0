//! Windowed multichannel datasets, stratified splitting and normalization.

mod csv;
mod synth;

pub use self::csv::{load_csv, write_csv, CsvSchema, WindowPolicy};
pub use self::synth::{synth_generate, SynthConfig, MOTIF_CLASSES};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ProbMatrix, Tensor};

/// Variance floor for constant channels.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Windows of shape `[n, channels, length]` with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Tensor,
    labels: Option<Vec<usize>>,
    ids: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Option<Vec<usize>>, ids: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        if x.shape().len() != 3 {
            return Err(Error::dim(format!("dataset windows must be [n, k, N], got {:?}", x.shape())));
        }
        let n = x.batch();
        if ids.len() != n {
            return Err(Error::dim(format!("{} ids for {n} windows", ids.len())));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::dim(format!("{} labels for {n} windows", l.len())));
            }
            if let Some((i, &bad)) = l.iter().enumerate().find(|(_, &v)| v >= class_names.len()) {
                return Err(Error::InvalidValue(format!(
                    "label {bad} of sample {i} is outside the {} declared classes",
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            x,
            labels,
            ids,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn length(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a precondition error naming `purpose`.
    pub fn require_labels(&self, purpose: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Precondition(format!("{purpose} needs a labeled dataset")))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels().map(|l| {
            let mut counts = vec![0; self.classes()];
            l.iter().for_each(|&c| counts[c] += 1);
            counts
        })
    }

    pub fn one_hot(&self) -> Result<ProbMatrix> {
        Tensor::one_hot(self.require_labels("one-hot targets")?, self.classes())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn with_x(&self, x: Tensor) -> Result<Self> {
        if x.shape() != self.x.shape() {
            return Err(Error::dim(format!("replacement windows {:?} != {:?}", x.shape(), self.x.shape())));
        }
        Ok(Self { x, ..self.clone() })
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("cannot concatenate zero datasets".into()))?;
        let xs: Vec<&Tensor> = parts.iter().map(|d| &d.x).collect();
        let labels = parts
            .iter()
            .map(|d| d.labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Self::new(
            Tensor::concat(&xs)?,
            labels,
            parts.iter().flat_map(|d| d.ids.iter().cloned()).collect(),
            first.class_names.clone(),
        )
    }
}

/// Ground truth for the unlabeled partition. Only scoring code reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTruth {
    ids: Vec<String>,
    labels: Vec<usize>,
}

impl HiddenTruth {
    pub fn new(ids: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::dim(format!("{} ids for {} hidden labels", ids.len(), labels.len())));
        }
        Ok(Self { ids, labels })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels aligned with `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Vec<usize>> {
        if ids == self.ids.as_slice() {
            return Ok(self.labels.clone());
        }
        let map: std::collections::HashMap<&str, usize> =
            self.ids.iter().map(String::as_str).zip(self.labels.iter().copied()).collect();
        ids.iter()
            .map(|id| {
                map.get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Join(format!("sample_id {id} has no ground truth")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Share of each class that keeps its label.
    pub labeled_fraction: f64,
    /// Share of the labeled part held out for validation and threshold calibration.
    pub validation_fraction: f64,
    /// Set from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.05,
            validation_fraction: 0.2,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("labeled_fraction", self.labeled_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("split.{name} must lie in (0, 1), got {v}")));
            }
        }
        if !self.stratified {
            return Err(Error::Config(
                "split.stratified = false is not supported; every class needs samples on each side".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint parts of one dataset. `hidden` is present in evaluation mode.
#[derive(Clone, Debug)]
pub struct Partition {
    pub labeled: Dataset,
    pub validation: Dataset,
    pub unlabeled: Dataset,
    pub hidden: Option<HiddenTruth>,
}

fn take_count(n: usize, fraction: f64, min: usize, max: usize) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(min, max)
}

/// Seeded per-class shuffle followed by `take(n_c)`; returns (taken, rest),
/// each in original order.
fn stratified_take(labels: &[usize], classes: usize, counts: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        taken.extend_from_slice(&members[..counts[c]]);
        rest.extend_from_slice(&members[counts[c]..]);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

/// Evaluation-mode split of a fully labeled dataset. Unlabeled labels move
/// into [`HiddenTruth`].
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    let labels = dataset.require_labels("split")?;
    let counts = dataset.class_counts().unwrap_or_default();
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 4) {
        return Err(Error::Stratification(format!(
            "class {} has {n} samples; at least 4 are needed (2 to train, 1 to validate, 1 unlabeled)",
            dataset.class_names()[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let take: Vec<usize> = counts
        .iter()
        .map(|&n| take_count(n, spec.labeled_fraction, 3, n - 1))
        .collect();
    let (lab, unl) = stratified_take(labels, dataset.classes(), &take, &mut rng);
    let unlabeled = dataset.subset(&unl);
    let hidden = HiddenTruth::new(unlabeled.ids.clone(), unlabeled.labels.clone().unwrap_or_default())?;
    let (labeled, validation) = split_validation_with(&dataset.subset(&lab), spec.validation_fraction, &mut rng)?;
    Ok(Partition {
        labeled,
        validation,
        unlabeled: unlabeled.without_labels(),
        hidden: Some(hidden),
    })
}

/// Deployment mode: separate labeled and unlabeled sources; only the labeled
/// set is split into training and validation parts.
pub fn split_deployment(labeled: &Dataset, unlabeled: &Dataset, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    if labeled.channels() != unlabeled.channels() || labeled.length() != unlabeled.length() {
        return Err(Error::dim(format!(
            "labeled windows [{}, {}] differ from unlabeled windows [{}, {}]",
            labeled.channels(),
            labeled.length(),
            unlabeled.channels(),
            unlabeled.length()
        )));
    }
    if labeled.class_names() != unlabeled.class_names() {
        return Err(Error::Schema("labeled and unlabeled files declare different classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (train, validation) = split_validation_with(labeled, spec.validation_fraction, &mut rng)?;
    Ok(Partition {
        labeled: train,
        validation,
        unlabeled: unlabeled.without_labels(),
        hidden: None,
    })
}

fn split_validation_with(labeled: &Dataset, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset)> {
    let labels = labeled.require_labels("validation split")?;
    let counts = labeled.class_counts().unwrap_or_default();
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(Error::Stratification(format!(
            "class {} has {n} labeled samples; at least 2 are needed to hold one out for validation",
            labeled.class_names()[c]
        )));
    }
    let take: Vec<usize> = counts.iter().map(|&n| take_count(n, fraction, 1, n - 1)).collect();
    let (val, train) = stratified_take(labels, labeled.classes(), &take, rng);
    Ok((labeled.subset(&train), labeled.subset(&val)))
}

/// Per-channel mean and standard deviation (population form).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::Precondition(format!(
                "feature statistics need a nonempty [n, k, N] tensor, got {shape:?}"
            )));
        }
        let (n, k, len) = (shape[0], shape[1], shape[2]);
        let count = (n * len) as f64;
        let mut mean = vec![0.0; k];
        let mut var = vec![0.0; k];
        for b in 0..n {
            for c in 0..k {
                let off = (b * k + c) * len;
                mean[c] += x.data()[off..off + len].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..n {
            for c in 0..k {
                let off = (b * k + c) * len;
                var[c] += x.data()[off..off + len]
                    .iter()
                    .map(|&v| (v as f64 - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var
            .into_iter()
            .enumerate()
            .map(|(c, v)| {
                let v = v / count;
                if v < VARIANCE_FLOOR {
                    log::warn!("channel {c} has variance {v:e}; flooring at {VARIANCE_FLOOR:e}");
                    VARIANCE_FLOOR.sqrt()
                } else {
                    v.sqrt()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        match x.shape() {
            [_, k, len] if *k == self.channels() => Ok((*k, *len)),
            s => Err(Error::dim(format!("stats for {} channels cannot apply to {s:?}", self.channels()))),
        }
    }

    fn map(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let (k, len) = self.check(x)?;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = (i / len) % k;
            *v = f(*v as f64, self.mean[c], self.std[c]) as f32;
        }
        Ok(out)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.map(x, |v, m, s| v * s + m)
    }

    pub fn apply_dataset(&self, d: &Dataset) -> Result<Dataset> {
        d.with_x(self.apply(d.x())?)
    }
}

/// z-scores a dataset with its own statistics.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, FeatureStats)> {
    let stats = FeatureStats::fit(dataset.x())?;
    Ok((stats.apply_dataset(dataset)?, stats))
}
