//! Warm-up, curriculum refitting, threshold calibration and labeling.

use serde::{Deserialize, Serialize};

use super::curriculum::{select_confident, CurriculumConfig, CurriculumState, IterationLog};
use super::thresholds::{assign_pseudo_labels, thresholds_from, PseudoLabelResult, ThresholdVector};
use crate::augment::{weak_augment, AugmentConfig};
use crate::data::{Dataset, FeatureStats, Partition};
use crate::error::{Error, Result};
use crate::metrics::{confusion, per_class_accuracy, Averaging, Decision, MetricsReport};
use crate::nn::Network;
use crate::tempcnn::{build_tempcnn, fit_with, predict_proba, Monitor, TempCnnConfig, TrainReport, TrainSet};
use crate::tensor::{ProbMatrix, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    /// Weight of the consistency term during warm-up.
    pub consistency_weight: f64,
    /// Percentile of claimed-sample probabilities used as the raw class threshold.
    pub threshold_percentile: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            consistency_weight: 0.5,
            threshold_percentile: 90.0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.consistency_weight >= 0.0 && self.consistency_weight.is_finite()) {
            return Err(Error::Config(format!(
                "ssl.consistency_weight must be non-negative, got {}",
                self.consistency_weight
            )));
        }
        if !(0.0..=100.0).contains(&self.threshold_percentile) {
            return Err(Error::Config(format!(
                "ssl.threshold_percentile must lie in [0, 100], got {}",
                self.threshold_percentile
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CruplConfig {
    pub model: TempCnnConfig,
    pub augment: AugmentConfig,
    pub curriculum: CurriculumConfig,
    pub ssl: SslConfig,
    pub averaging: Averaging,
}

impl CruplConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.curriculum.validate()?;
        self.ssl.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub supervised: TrainReport,
    pub consistency: TrainReport,
}

fn require_per_class(d: &Dataset, min: usize, what: &str) -> Result<Vec<usize>> {
    let counts = d
        .class_counts()
        .ok_or_else(|| Error::Precondition(format!("{what} needs labels")))?;
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < min) {
        return Err(Error::Stratification(format!(
            "{what}: class {} has {n} samples, at least {min} required",
            d.class_names()[c]
        )));
    }
    Ok(counts)
}

/// Fits on the labeled windows, then on clean plus weakly augmented copies
/// with the consistency term weighted by `consistency_weight`.
/// Inputs are expected in normalized units.
pub fn warmup_train(
    network: &mut Network<f32>,
    labeled: &Dataset,
    validation: Option<&Dataset>,
    aug: &AugmentConfig,
    model: &TempCnnConfig,
    consistency_weight: f64,
) -> Result<WarmupReport> {
    require_per_class(labeled, 2, "warm-up")?;
    let y = labeled.one_hot()?;
    let val = match validation {
        Some(v) if !v.is_empty() => Some((v.x(), v.one_hot()?)),
        _ => None,
    };
    let validation_pair = val.as_ref().map(|(x, y)| (*x, y));

    let supervised = fit_with(
        network,
        TrainSet::supervised(labeled.x(), &y),
        model,
        &Monitor {
            validation: validation_pair,
            consistency_probe: None,
            phase: "warm-up",
        },
    )?;

    let stats = FeatureStats::fit(labeled.x())?;
    let xa = weak_augment(labeled.x(), aug, Some(&stats))?;
    let probe = match validation {
        Some(v) if !v.is_empty() => {
            let probe_cfg = AugmentConfig {
                seed: aug.seed.wrapping_add(1),
                ..aug.clone()
            };
            Some((v.x(), weak_augment(v.x(), &probe_cfg, Some(&stats))?))
        }
        _ => None,
    };
    let phase2 = TempCnnConfig {
        seed: model.seed.wrapping_add(1),
        ..model.clone()
    };
    let consistency = fit_with(
        network,
        TrainSet {
            x: labeled.x(),
            y: &y,
            augmented: Some(&xa),
            consistency_weight,
        },
        &phase2,
        &Monitor {
            validation: validation_pair,
            consistency_probe: probe.as_ref().map(|(a, b)| (*a, b)),
            phase: "consistency warm-up",
        },
    )?;
    Ok(WarmupReport { supervised, consistency })
}

#[derive(Clone, Debug)]
pub struct CurriculumReport {
    pub iterations: Vec<IterationLog>,
    pub first_selected: Vec<Option<usize>>,
    /// Unlabeled indices in the final pool, ascending.
    pub pool: Vec<usize>,
    /// Refit reports, one per iteration.
    pub fits: Vec<TrainReport>,
}

/// Iteratively pseudo-labels the most confident unlabeled windows and refits
/// on labeled plus pooled samples. Divergence aborts with
/// [`Error::CurriculumAbort`] carrying the last good network.
pub fn curriculum_finetune(
    network: &mut Network<f32>,
    labeled: &Dataset,
    unlabeled: &Tensor,
    validation: Option<&Dataset>,
    cur: &CurriculumConfig,
    model: &TempCnnConfig,
) -> Result<CurriculumReport> {
    cur.validate()?;
    let y_lab = labeled.one_hot()?;
    let val = match validation {
        Some(v) if !v.is_empty() => Some((v.x(), v.one_hot()?)),
        _ => None,
    };
    let mut state = CurriculumState::new(unlabeled.batch());
    let mut fits = Vec::new();
    for (i, t) in cur.schedule().into_iter().enumerate() {
        let iteration = i + 1;
        let last_good = network.clone();
        let abort = |source: Error, net: &Network<f32>| Error::CurriculumAbort {
            iteration,
            last_good: Box::new(net.clone()),
            source: Box::new(source),
        };
        let probs = predict_proba(network, unlabeled).map_err(|e| abort(e, &last_good))?;
        let selected = select_confident(&probs, t)?;
        let newly_added = state.absorb(iteration, &probs, &selected);

        let idx: Vec<usize> = state.pool.keys().copied().collect();
        let targets: Vec<f32> = state.pool.values().flatten().copied().collect();
        let x = Tensor::concat(&[labeled.x(), &unlabeled.select_rows(&idx)])?;
        let pool_y = Tensor::new(vec![idx.len(), labeled.classes()], targets)?;
        let y = Tensor::concat(&[&y_lab, &pool_y])?;
        let cfg = TempCnnConfig {
            epochs: cur.finetune_epochs,
            seed: model.seed.wrapping_add(100 + iteration as u64),
            ..model.clone()
        };
        let phase = format!("curriculum iteration {iteration}");
        let report = fit_with(
            network,
            TrainSet::supervised(&x, &y),
            &cfg,
            &Monitor {
                validation: val.as_ref().map(|(x, y)| (*x, y)),
                consistency_probe: None,
                phase: &phase,
            },
        );
        let report = match report {
            Ok(r) => r,
            Err(e @ Error::Divergence { .. }) => {
                *network = last_good.clone();
                return Err(abort(e, &last_good));
            }
            Err(e) => return Err(e),
        };
        let log = IterationLog {
            iteration,
            t,
            selected: selected.len(),
            newly_added,
            pool_size: state.pool.len(),
            final_loss: report.final_loss(),
            epochs_run: report.epochs.len(),
        };
        log::info!(
            "curriculum iteration {iteration}: t={t} selected={} new={} pool={} loss={:.5}",
            log.selected,
            log.newly_added,
            log.pool_size,
            log.final_loss.unwrap_or(f64::NAN)
        );
        state.log.push(log);
        fits.push(report);
    }
    Ok(CurriculumReport {
        iterations: state.log,
        pool: state.pool.keys().copied().collect(),
        first_selected: state.first_selected,
        fits,
    })
}

/// Thresholds from unlabeled predictions and the network's per-class
/// accuracy on `validation`.
pub fn calibrate_thresholds(
    network: &Network<f32>,
    unlabeled_probs: &ProbMatrix,
    validation: &Dataset,
    percentile: f64,
) -> Result<ThresholdVector> {
    require_per_class(validation, 1, "threshold calibration")?;
    let truth = validation.require_labels("threshold calibration")?;
    let pred: Vec<Decision> = predict_proba(network, validation.x())?
        .argmax_rows()
        .into_iter()
        .map(Decision::Class)
        .collect();
    let cm = confusion(truth, &pred, validation.classes())?;
    thresholds_from(unlabeled_probs, &per_class_accuracy(&cm), percentile)
}

#[derive(Clone, Debug)]
pub struct CruplOutcome {
    pub network: Network<f32>,
    /// Labeled-split statistics used to normalize every input.
    pub feature_stats: FeatureStats,
    pub warmup: WarmupReport,
    pub curriculum: CurriculumReport,
    pub thresholds: ThresholdVector,
    pub labels: PseudoLabelResult,
    pub metrics: Option<MetricsReport>,
}

struct Prepared {
    stats: FeatureStats,
    labeled: Dataset,
    validation: Dataset,
    unlabeled: Dataset,
    model: TempCnnConfig,
}

fn prepare(part: &Partition, model: &TempCnnConfig) -> Result<Prepared> {
    let all_labeled = Dataset::concat(&[&part.labeled, &part.validation])?;
    let stats = FeatureStats::fit(all_labeled.x())?;
    let model = model
        .clone()
        .with_input(part.labeled.channels(), part.labeled.length(), part.labeled.classes())?;
    Ok(Prepared {
        labeled: stats.apply_dataset(&part.labeled)?,
        validation: stats.apply_dataset(&part.validation)?,
        unlabeled: stats.apply_dataset(&part.unlabeled)?,
        stats,
        model,
    })
}

fn score(part: &Partition, decisions: &[Decision], averaging: Averaging) -> Result<Option<MetricsReport>> {
    let Some(hidden) = &part.hidden else {
        return Ok(None);
    };
    let truth = hidden.aligned_to(part.unlabeled.ids())?;
    let cm = confusion(&truth, decisions, part.unlabeled.classes())?;
    Ok(Some(MetricsReport::new(
        &cm,
        part.unlabeled.class_names(),
        averaging == Averaging::Micro,
    )))
}

/// Warm-up, curriculum, calibration and labeling of `part.unlabeled`.
/// Metrics are computed only when `part.hidden` is present.
pub fn run_crupl(part: &Partition, cfg: &CruplConfig) -> Result<CruplOutcome> {
    cfg.validate()?;
    let p = prepare(part, &cfg.model)?;
    let mut network = build_tempcnn(&p.model)?;
    let warmup = warmup_train(
        &mut network,
        &p.labeled,
        Some(&p.validation),
        &cfg.augment,
        &p.model,
        cfg.ssl.consistency_weight,
    )?;
    let curriculum = curriculum_finetune(
        &mut network,
        &p.labeled,
        p.unlabeled.x(),
        Some(&p.validation),
        &cfg.curriculum,
        &p.model,
    )?;
    let probs = predict_proba(&network, p.unlabeled.x())?;
    let thresholds = calibrate_thresholds(&network, &probs, &p.validation, cfg.ssl.threshold_percentile)?;
    let labels = assign_pseudo_labels(&probs, &thresholds)?;
    let metrics = score(part, &labels.decisions, cfg.averaging)?;
    Ok(CruplOutcome {
        network,
        feature_stats: p.stats,
        warmup,
        curriculum,
        thresholds,
        labels,
        metrics,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub network: Network<f32>,
    pub report: TrainReport,
    pub decisions: Vec<Decision>,
    pub metrics: Option<MetricsReport>,
}

/// Supervised-only reference: fit on the labeled part, label every
/// unlabeled window with its argmax.
pub fn run_baseline(part: &Partition, cfg: &CruplConfig) -> Result<BaselineOutcome> {
    let p = prepare(part, &cfg.model)?;
    let mut network = build_tempcnn(&p.model)?;
    let y = p.labeled.one_hot()?;
    let vy = p.validation.one_hot()?;
    let report = fit_with(
        &mut network,
        TrainSet::supervised(p.labeled.x(), &y),
        &p.model,
        &Monitor {
            validation: Some((p.validation.x(), &vy)),
            consistency_probe: None,
            phase: "baseline",
        },
    )?;
    let decisions: Vec<Decision> = predict_proba(&network, p.unlabeled.x())?
        .argmax_rows()
        .into_iter()
        .map(Decision::Class)
        .collect();
    let metrics = score(part, &decisions, cfg.averaging)?;
    Ok(BaselineOutcome {
        network,
        report,
        decisions,
        metrics,
    })
}
