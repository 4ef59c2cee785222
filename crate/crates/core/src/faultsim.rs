//! Statistical single-bit fault-injection campaigns.
//!
//! A campaign samples `repetitions` activation fault sites uniformly over the
//! model's site space. For each site the whole dataset is classified with that
//! bit flipped on every image, giving one faulty accuracy per repetition.
//! Vulnerability is the fault-free accuracy minus the mean faulty accuracy.
//!
//! Site `i` of a campaign is drawn from its own ChaCha8 stream
//! (`seed = master_seed`, `stream = i`), so results do not depend on how
//! repetitions are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{ApproxConfig, Evaluation, FaultSite};
use crate::error::{Error, Result};
use crate::model::{Dataset, NetworkModel, SiteSpace};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_MARGIN: f64 = 0.01;
/// Assumed failure probability in the sample-size formula (worst case).
pub const WORST_CASE_P: f64 = 0.5;
/// Repetition counts tried by [`calibrate_repetitions`] unless overridden.
pub const DEFAULT_CALIBRATION_GRID: [u64; 8] = [100, 200, 400, 600, 800, 1000, 1500, 2000];
/// Calibration tolerance on the mean faulty accuracy, in percentage points.
pub const DEFAULT_CALIBRATION_TOLERANCE_PP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub repetitions: u64,
    pub master_seed: u64,
    pub confidence: f64,
    pub margin: f64,
}

impl CampaignPlan {
    pub fn new(repetitions: u64, master_seed: u64) -> Result<Self> {
        let plan = CampaignPlan {
            repetitions,
            master_seed,
            confidence: DEFAULT_CONFIDENCE,
            margin: DEFAULT_MARGIN,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan sized by [`statistical_sample_size`] over the model's site space.
    pub fn statistical(
        model: &NetworkModel,
        master_seed: u64,
        confidence: f64,
        margin: f64,
    ) -> Result<Self> {
        let repetitions =
            statistical_sample_size(model.site_space().site_count(), confidence, margin)?;
        let plan = CampaignPlan {
            repetitions,
            master_seed,
            confidence,
            margin,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Usage("repetitions must be at least 1".into()));
        }
        check_level(self.confidence, self.margin)
    }
}

fn check_level(confidence: f64, margin: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Usage(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::Usage(format!(
            "margin must be in (0, 1), got {margin}"
        )));
    }
    Ok(())
}

/// Two-sided standard normal quantile for `confidence` (1.959964 at 0.95).
pub fn normal_quantile(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

/// Number of injections needed for `confidence` and error `margin` over a
/// population of `population` fault sites:
///
/// `n = ceil(N / (1 + e^2 (N - 1) / (t^2 p (1 - p))))`, with `p = 0.5`.
pub fn statistical_sample_size(population: u64, confidence: f64, margin: f64) -> Result<u64> {
    if population == 0 {
        return Err(Error::Usage("population must be at least 1".into()));
    }
    check_level(confidence, margin)?;
    let n = population as f64;
    let t = normal_quantile(confidence);
    let pq = WORST_CASE_P * (1.0 - WORST_CASE_P);
    let size = n / (1.0 + margin * margin * (n - 1.0) / (t * t * pq));
    Ok((size.ceil() as u64).clamp(1, population))
}

/// Site drawn from stream `stream` of `master_seed`, uniform over `space`.
pub fn sample_site(space: &SiteSpace, master_seed: u64, stream: u64) -> FaultSite {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    let flat = rng.random_range(0..space.site_count());
    space.site_at(flat).expect("flat index in range")
}

/// `count` sites, site `i` drawn from stream `i`.
pub fn sample_sites(model: &NetworkModel, count: u64, master_seed: u64) -> Result<Vec<FaultSite>> {
    if count == 0 {
        return Err(Error::Usage("site count must be at least 1".into()));
    }
    let space = model.site_space();
    Ok((0..count)
        .map(|i| sample_site(&space, master_seed, i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: u64,
    pub site: FaultSite,
    pub correct: usize,
    pub accuracy: f64,
}

/// Outcome of one campaign. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub plan: CampaignPlan,
    pub site_count: u64,
    pub images: usize,
    pub baseline_correct: usize,
    pub baseline_accuracy: f64,
    pub records: Vec<RepetitionRecord>,
    pub mean_faulty_accuracy: f64,
    /// Sample standard deviation of the per-repetition accuracies.
    pub std_faulty_accuracy: f64,
    /// `baseline_accuracy - mean_faulty_accuracy`.
    pub vulnerability: f64,
}

impl CampaignResult {
    /// Vulnerability in percentage points.
    pub fn vulnerability_pct(&self) -> f64 {
        self.vulnerability * 100.0
    }
}

fn run_streams(
    eval: &Evaluation<'_>,
    plan: &CampaignPlan,
    stream_base: u64,
) -> Result<CampaignResult> {
    plan.validate()?;
    let space = eval.site_space();
    let images = eval.images();
    let records = (0..plan.repetitions)
        .into_par_iter()
        .map(|i| {
            let site = sample_site(space, plan.master_seed, stream_base + i);
            let correct = eval.faulty_correct(&site)?;
            Ok(RepetitionRecord {
                index: i,
                site,
                correct,
                accuracy: correct as f64 / images as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total_correct: u64 = records.iter().map(|r| r.correct as u64).sum();
    let mean = total_correct as f64 / (plan.repetitions as f64 * images as f64);
    let std = if records.len() > 1 {
        let ss: f64 = records.iter().map(|r| (r.accuracy - mean).powi(2)).sum();
        (ss / (records.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let baseline = eval.accuracy();
    Ok(CampaignResult {
        plan: *plan,
        site_count: space.site_count(),
        images,
        baseline_correct: eval.correct(),
        baseline_accuracy: baseline,
        records,
        mean_faulty_accuracy: mean,
        std_faulty_accuracy: std,
        vulnerability: baseline - mean,
    })
}

/// Runs a campaign over a prepared evaluation.
pub fn run_campaign_on(eval: &Evaluation<'_>, plan: &CampaignPlan) -> Result<CampaignResult> {
    run_streams(eval, plan, 0)
}

pub fn run_campaign(
    model: &NetworkModel,
    dataset: &Dataset,
    cfg: &ApproxConfig,
    plan: &CampaignPlan,
) -> Result<CampaignResult> {
    plan.validate()?;
    let eval = Evaluation::new(model, dataset, cfg)?;
    run_campaign_on(&eval, plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrial {
    pub repetitions: u64,
    pub mean_faulty_accuracy: f64,
    /// `|mean - reference mean|` in percentage points.
    pub difference_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Selected repetition count.
    pub repetitions: u64,
    pub reference_repetitions: u64,
    pub reference_mean: f64,
    pub tolerance_pp: f64,
    pub trials: Vec<CalibrationTrial>,
}

/// Smallest grid count whose campaign mean lies within `tolerance_pp`
/// percentage points of the reference campaign's mean.
///
/// Grid values are tried in ascending order; values not below the reference
/// count are skipped, and the reference count is returned when none
/// qualifies. Each trial draws its sites from a stream range disjoint from
/// the reference campaign's and from every other trial's.
pub fn calibrate_repetitions_on(
    eval: &Evaluation<'_>,
    reference_plan: &CampaignPlan,
    grid: &[u64],
    tolerance_pp: f64,
) -> Result<Calibration> {
    reference_plan.validate()?;
    if tolerance_pp.is_nan() || tolerance_pp < 0.0 {
        return Err(Error::Usage(format!(
            "tolerance must be non-negative, got {tolerance_pp}"
        )));
    }
    let reference = run_campaign_on(eval, reference_plan)?;
    let mut sorted: Vec<u64> = grid.iter().copied().filter(|&r| r > 0).collect();
    sorted.sort_unstable();
    sorted.dedup();

    let mut trials = Vec::new();
    let mut selected = reference_plan.repetitions;
    for (k, &r) in sorted.iter().enumerate() {
        if r >= reference_plan.repetitions {
            break;
        }
        let plan = CampaignPlan {
            repetitions: r,
            ..*reference_plan
        };
        let trial = run_streams(eval, &plan, (k as u64 + 1) << 32)?;
        let diff = (trial.mean_faulty_accuracy - reference.mean_faulty_accuracy).abs() * 100.0;
        trials.push(CalibrationTrial {
            repetitions: r,
            mean_faulty_accuracy: trial.mean_faulty_accuracy,
            difference_pp: diff,
        });
        if diff < tolerance_pp {
            selected = r;
            break;
        }
    }
    Ok(Calibration {
        repetitions: selected,
        reference_repetitions: reference_plan.repetitions,
        reference_mean: reference.mean_faulty_accuracy,
        tolerance_pp,
        trials,
    })
}

pub fn calibrate_repetitions(
    model: &NetworkModel,
    dataset: &Dataset,
    cfg: &ApproxConfig,
    reference_plan: &CampaignPlan,
    grid: &[u64],
    tolerance_pp: f64,
) -> Result<Calibration> {
    let eval = Evaluation::new(model, dataset, cfg)?;
    calibrate_repetitions_on(&eval, reference_plan, grid, tolerance_pp)
}
