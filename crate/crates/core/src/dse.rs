//! Design-space exploration over per-layer approximation masks.
//!
//! Each design point pairs one configuration with its fault-free accuracy
//! drop against the all-exact network, its fault-injection accuracy drop,
//! and linear cost proxies built from per-layer multiplication counts and
//! the multiplier's area/power coefficients. Latency is the total
//! multiplication count and so does not vary with the configuration.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axmult::Multiplier;
use crate::engine::{ApproxConfig, Evaluation};
use crate::error::{Error, Result};
use crate::faultsim::{run_campaign_on, CampaignPlan};
use crate::model::{Dataset, NetworkModel};

/// Largest computational-layer count [`enumerate_configs`] accepts by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProxies {
    /// Sum over computational layers of multiplications x multiplier area.
    pub area_proxy: f64,
    /// Same with multiplier power.
    pub power_proxy: f64,
    /// Total multiplications.
    pub latency_proxy: u64,
}

pub fn cost_proxies(model: &NetworkModel, cfg: &ApproxConfig) -> CostProxies {
    let mut area = 0.0;
    let mut power = 0.0;
    let mut latency = 0u64;
    for ((_, mults), m) in model.layer_mult_counts().iter().zip(cfg.assignments()) {
        area += *mults as f64 * m.cost().area_um2;
        power += *mults as f64 * m.cost().power_mw;
        latency += mults;
    }
    CostProxies {
        area_proxy: area,
        power_proxy: power,
        latency_proxy: latency,
    }
}

/// All-exact baseline followed by, for every approximate multiplier, every
/// non-empty mask over the computational layers: `|M| * (2^n - 1) + 1`
/// configurations. Exact multipliers in `multipliers` are skipped.
pub fn enumerate_configs(
    model: &NetworkModel,
    multipliers: &[Arc<Multiplier>],
    cap: usize,
) -> Result<Vec<ApproxConfig>> {
    let n = model.computational_count();
    if n > cap {
        return Err(Error::Usage(format!(
            "{n} computational layers exceed the enumeration cap of {cap}; \
             evaluate sampled masks with `eval`/`inject --mask` instead"
        )));
    }
    let mut configs = vec![ApproxConfig::exact(model)];
    let mut seen: Vec<&str> = Vec::new();
    for m in multipliers {
        if m.is_exact() || seen.contains(&m.id()) {
            continue;
        }
        seen.push(m.id());
        for mask in 1u64..(1u64 << n) {
            // first computational layer is the most significant bit
            let bits: Vec<bool> = (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect();
            configs.push(ApproxConfig::from_bits(model, &bits, m.clone())?);
        }
    }
    Ok(configs)
}

/// One evaluated configuration. Drops are in percentage points.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub cfg: ApproxConfig,
    pub multiplier_id: String,
    pub mask: String,
    pub exact_accuracy: f64,
    pub axdnn_accuracy: f64,
    pub faulty_accuracy: f64,
    /// `exact_accuracy - axdnn_accuracy`.
    pub approx_drop_pct: f64,
    /// `axdnn_accuracy - faulty_accuracy`.
    pub fi_drop_pct: f64,
    pub fi_std_pct: f64,
    pub repetitions: u64,
    pub costs: CostProxies,
}

/// Evaluates configurations of one model against a shared exact baseline.
pub struct Explorer<'a> {
    model: &'a NetworkModel,
    dataset: &'a Dataset,
    plan: CampaignPlan,
    exact_accuracy: f64,
}

impl<'a> Explorer<'a> {
    pub fn new(model: &'a NetworkModel, dataset: &'a Dataset, plan: CampaignPlan) -> Result<Self> {
        plan.validate()?;
        let exact = ApproxConfig::exact(model);
        let exact_accuracy = Evaluation::new(model, dataset, &exact)?.accuracy();
        Ok(Explorer {
            model,
            dataset,
            plan,
            exact_accuracy,
        })
    }

    pub fn exact_accuracy(&self) -> f64 {
        self.exact_accuracy
    }

    pub fn plan(&self) -> &CampaignPlan {
        &self.plan
    }

    /// Every configuration uses the same plan, and therefore the same fault sites.
    pub fn evaluate(&self, cfg: &ApproxConfig) -> Result<DesignPoint> {
        let eval = Evaluation::new(self.model, self.dataset, cfg)?;
        let campaign = run_campaign_on(&eval, &self.plan)?;
        let axdnn = eval.accuracy();
        Ok(DesignPoint {
            cfg: cfg.clone(),
            multiplier_id: cfg.multiplier_label(),
            mask: cfg.mask(),
            exact_accuracy: self.exact_accuracy,
            axdnn_accuracy: axdnn,
            faulty_accuracy: campaign.mean_faulty_accuracy,
            approx_drop_pct: (self.exact_accuracy - axdnn) * 100.0,
            fi_drop_pct: (axdnn - campaign.mean_faulty_accuracy) * 100.0,
            fi_std_pct: campaign.std_faulty_accuracy * 100.0,
            repetitions: self.plan.repetitions,
            costs: cost_proxies(self.model, cfg),
        })
    }

    /// Evaluates `configs` in parallel, preserving their order.
    pub fn evaluate_all(&self, configs: &[ApproxConfig]) -> Result<Vec<DesignPoint>> {
        configs.par_iter().map(|c| self.evaluate(c)).collect()
    }
}

pub fn evaluate_point(
    model: &NetworkModel,
    dataset: &Dataset,
    cfg: &ApproxConfig,
    plan: &CampaignPlan,
) -> Result<DesignPoint> {
    Explorer::new(model, dataset, *plan)?.evaluate(cfg)
}

/// Design-point fields usable as Pareto objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveField {
    AreaProxy,
    PowerProxy,
    LatencyProxy,
    ApproxDrop,
    FiDrop,
}

impl ObjectiveField {
    pub const ALL: [ObjectiveField; 5] = [
        ObjectiveField::AreaProxy,
        ObjectiveField::PowerProxy,
        ObjectiveField::LatencyProxy,
        ObjectiveField::ApproxDrop,
        ObjectiveField::FiDrop,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveField::AreaProxy => "area_proxy",
            ObjectiveField::PowerProxy => "power_proxy",
            ObjectiveField::LatencyProxy => "latency_proxy",
            ObjectiveField::ApproxDrop => "approx_drop_pct",
            ObjectiveField::FiDrop => "fi_drop_pct",
        }
    }
}

impl FromStr for ObjectiveField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let field = match s {
            "area_proxy" | "area" => ObjectiveField::AreaProxy,
            "power_proxy" | "power" => ObjectiveField::PowerProxy,
            "latency_proxy" | "latency" => ObjectiveField::LatencyProxy,
            "approx_drop_pct" | "approx_drop" => ObjectiveField::ApproxDrop,
            "fi_drop_pct" | "fi_drop" => ObjectiveField::FiDrop,
            other => {
                return Err(Error::Usage(format!(
                    "unknown objective field `{other}` (expected one of {})",
                    ObjectiveField::ALL.map(|f| f.name()).join(", ")
                )))
            }
        };
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Objective {
    pub field: ObjectiveField,
    pub direction: Direction,
}

impl Objective {
    pub fn minimize(field: ObjectiveField) -> Self {
        Objective {
            field,
            direction: Direction::Minimize,
        }
    }

    pub fn maximize(field: ObjectiveField) -> Self {
        Objective {
            field,
            direction: Direction::Maximize,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Minimize => "min",
            Direction::Maximize => "max",
        };
        write!(f, "{}:{dir}", self.field.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// `field[:min|:max]`, minimizing when the direction is omitted.
    fn from_str(s: &str) -> Result<Self> {
        let (field, dir) = s.split_once(':').unwrap_or((s, "min"));
        let direction = match dir {
            "min" | "minimize" => Direction::Minimize,
            "max" | "maximize" => Direction::Maximize,
            other => {
                return Err(Error::Usage(format!(
                    "unknown direction `{other}` in `{s}`"
                )))
            }
        };
        Ok(Objective {
            field: field.trim().parse()?,
            direction,
        })
    }
}

/// Parses a comma-separated objective list.
pub fn parse_objectives(s: &str) -> Result<Vec<Objective>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect()
}

/// Resource axis vs fault-injection accuracy drop, both minimized.
pub fn default_objectives() -> Vec<Objective> {
    vec![
        Objective::minimize(ObjectiveField::AreaProxy),
        Objective::minimize(ObjectiveField::FiDrop),
    ]
}

/// Anything that exposes objective values.
pub trait ObjectiveValues {
    fn objective_value(&self, field: ObjectiveField) -> f64;
}

impl ObjectiveValues for DesignPoint {
    fn objective_value(&self, field: ObjectiveField) -> f64 {
        match field {
            ObjectiveField::AreaProxy => self.costs.area_proxy,
            ObjectiveField::PowerProxy => self.costs.power_proxy,
            ObjectiveField::LatencyProxy => self.costs.latency_proxy as f64,
            ObjectiveField::ApproxDrop => self.approx_drop_pct,
            ObjectiveField::FiDrop => self.fi_drop_pct,
        }
    }
}

/// Objective vector oriented so that smaller is better on every axis.
fn oriented<T: ObjectiveValues>(p: &T, objectives: &[Objective]) -> Vec<f64> {
    objectives
        .iter()
        .map(|o| {
            let v = p.objective_value(o.field);
            match o.direction {
                Direction::Minimize => v,
                Direction::Maximize => -v,
            }
        })
        .collect()
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Less => strict = true,
            std::cmp::Ordering::Equal => {}
        }
    }
    strict
}

/// Indices of the non-dominated points, ordered by the first objective
/// (input order among ties).
///
/// Points with identical objective vectors do not dominate one another, so
/// all of them are kept unless `dedup` is set, in which case only the first
/// of each identical group survives.
pub fn pareto_indices<T: ObjectiveValues>(
    points: &[T],
    objectives: &[Objective],
    dedup: bool,
) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Usage(
            "Pareto extraction needs at least one point".into(),
        ));
    }
    if objectives.len() < 2 {
        return Err(Error::Usage(
            "Pareto extraction needs at least two objectives".into(),
        ));
    }
    let vectors: Vec<Vec<f64>> = points.iter().map(|p| oriented(p, objectives)).collect();
    let lex = |a: &usize, b: &usize| {
        vectors[*a]
            .iter()
            .zip(&vectors[*b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    // In lexicographic order, any dominator of a point precedes it, and by
    // transitivity some frontier member dominates every excluded point.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(lex);
    let mut frontier: Vec<usize> = Vec::new();
    for &i in &order {
        let v = &vectors[i];
        if frontier.iter().any(|&j| dominates(&vectors[j], v)) {
            continue;
        }
        if dedup && frontier.iter().any(|&j| vectors[j] == *v) {
            continue;
        }
        frontier.push(i);
    }
    frontier.sort_by(|a, b| vectors[*a][0].total_cmp(&vectors[*b][0]).then(a.cmp(b)));
    Ok(frontier)
}

pub fn pareto_frontier<T: ObjectiveValues + Clone>(
    points: &[T],
    objectives: &[Objective],
    dedup: bool,
) -> Result<Vec<T>> {
    Ok(pareto_indices(points, objectives, dedup)?
        .into_iter()
        .map(|i| points[i].clone())
        .collect())
}

/// A pair of same-multiplier masks where approximating one more layer did
/// not lower the cost proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendViolation {
    pub multiplier_id: String,
    pub mask: String,
    pub superset_mask: String,
    pub field: String,
    pub value: f64,
    pub superset_value: f64,
}

fn approximated_bits(mask: &str) -> Vec<bool> {
    mask.chars()
        .filter(|&c| c != '-')
        .map(|c| c == '1')
        .collect()
}

/// Flags configurations that break the "more approximated layers, lower
/// cost" trend. Informational only.
pub fn trend_violations(points: &[DesignPoint]) -> Vec<TrendViolation> {
    let mut out = Vec::new();
    for a in points {
        let bits_a = approximated_bits(&a.mask);
        for b in points {
            if a.multiplier_id != b.multiplier_id && !a.cfg.is_all_exact() {
                continue;
            }
            if b.cfg.is_all_exact() {
                continue;
            }
            let bits_b = approximated_bits(&b.mask);
            let added = bits_a
                .iter()
                .zip(&bits_b)
                .filter(|(x, y)| !**x && **y)
                .count();
            let removed = bits_a.iter().zip(&bits_b).any(|(x, y)| *x && !*y);
            if added != 1 || removed {
                continue;
            }
            for (field, va, vb) in [
                ("area_proxy", a.costs.area_proxy, b.costs.area_proxy),
                ("power_proxy", a.costs.power_proxy, b.costs.power_proxy),
            ] {
                if vb >= va {
                    out.push(TrendViolation {
                        multiplier_id: b.multiplier_id.clone(),
                        mask: a.mask.clone(),
                        superset_mask: b.mask.clone(),
                        field: field.into(),
                        value: va,
                        superset_value: vb,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct P(f64, f64);

    impl ObjectiveValues for P {
        fn objective_value(&self, f: ObjectiveField) -> f64 {
            match f {
                ObjectiveField::AreaProxy => self.0,
                _ => self.1,
            }
        }
    }

    fn objs() -> Vec<Objective> {
        default_objectives()
    }

    #[test]
    fn frontier_example() {
        let pts = vec![P(1.0, 5.0), P(2.0, 4.0), P(3.0, 3.0), P(2.0, 6.0)];
        let f = pareto_frontier(&pts, &objs(), false).unwrap();
        assert_eq!(f, vec![P(1.0, 5.0), P(2.0, 4.0), P(3.0, 3.0)]);
    }

    #[test]
    fn single_point() {
        let pts = vec![P(1.0, 1.0)];
        assert_eq!(pareto_frontier(&pts, &objs(), false).unwrap(), pts);
    }

    #[test]
    fn duplicates() {
        let pts = vec![P(1.0, 1.0), P(1.0, 1.0), P(2.0, 0.5)];
        assert_eq!(pareto_indices(&pts, &objs(), false).unwrap(), vec![0, 1, 2]);
        assert_eq!(pareto_indices(&pts, &objs(), true).unwrap(), vec![0, 2]);
    }

    #[test]
    fn maximize_direction() {
        let pts = vec![P(1.0, 5.0), P(2.0, 4.0), P(1.0, 4.0)];
        let o = vec![
            Objective::minimize(ObjectiveField::AreaProxy),
            Objective::maximize(ObjectiveField::FiDrop),
        ];
        assert_eq!(pareto_indices(&pts, &o, false).unwrap(), vec![0]);
    }

    #[test]
    fn usage_errors() {
        let pts = vec![P(1.0, 1.0)];
        assert!(pareto_indices(&pts, &objs()[..1], false).is_err());
        assert!(pareto_indices::<P>(&[], &objs(), false).is_err());
        assert!(matches!(
            "bogus:min".parse::<Objective>(),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            "area:sideways".parse::<Objective>(),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn objective_parsing() {
        let o = parse_objectives("area_proxy:min, fi_drop_pct:max,latency").unwrap();
        assert_eq!(o.len(), 3);
        assert_eq!(o[1].to_string(), "fi_drop_pct:max");
        assert_eq!(o[2], Objective::minimize(ObjectiveField::LatencyProxy));
    }
}
