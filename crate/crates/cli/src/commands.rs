use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use axdse_core::axmult::{parse_multiplier_spec, profile, sidecar_path};
use axdse_core::dse::{
    enumerate_configs, pareto_indices, parse_objectives, trend_violations, Explorer, TrendViolation,
};
use axdse_core::engine::{evaluate_accuracy, ApproxConfig, Evaluation};
use axdse_core::faultsim::{
    calibrate_repetitions_on, run_campaign_on, Calibration, CampaignPlan, DEFAULT_CALIBRATION_GRID,
};
use axdse_core::manifest::{self, DATASET_FILE, MODEL_FILE};
use axdse_core::quant::{calibrate, float_accuracy, quantize_dataset, quantize_model};
use axdse_core::report::{
    campaign_csv, points_csv, points_table, profile_table, read_points_csv, CampaignReport,
    PointRow, RunContext, TOOL_NAME, TOOL_VERSION,
};
use axdse_core::{Dataset, Error, Multiplier, MultiplierProfile, NetworkModel, Result};

use crate::hashing::{manifest_digest, sha256_bytes, sha256_file};
use crate::{
    CharacterizeArgs, DseArgs, EvalArgs, InjectArgs, ParetoArgs, PlanArgs, QuantizeArgs, Target,
};

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn quantize(a: &QuantizeArgs) -> Result<()> {
    let fm = manifest::load_float_model(Path::new(&a.model))?;
    let calib = manifest::load_float_dataset(Path::new(&a.data))?;
    let test = match &a.test_data {
        Some(p) => Some(manifest::load_float_dataset(Path::new(p))?),
        None => None,
    };
    let stats = calibrate(&fm, &calib)?;
    let model = quantize_model(&fm, &stats)?;

    let out = Path::new(&a.out);
    let mpath = manifest::save_model(&model, &out.join("model"))?;
    println!("model    {}", mpath.display());
    println!("layers   {}", model.layers().len());
    println!("sites    {}", model.site_space().site_count());

    if let Some(fd) = test {
        let ds = quantize_dataset(&fd, model.input_qparams())?;
        let dpath = manifest::save_dataset(&ds, &out.join("data"))?;
        let facc = float_accuracy(&fm, &fd);
        let qacc = evaluate_accuracy(&model, &ds, &ApproxConfig::exact(&model), None)?;
        println!("data     {}", dpath.display());
        println!("images   {}", ds.len());
        println!("float_accuracy      {facc:.4}");
        println!("quantized_accuracy  {qacc:.4}");
    }
    Ok(())
}

pub fn characterize(a: &CharacterizeArgs) -> Result<()> {
    let profiles = a
        .mults
        .iter()
        .map(|s| parse_multiplier_spec(s).map(|m| profile(&m)))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", profile_table(&profiles));
    match &a.out {
        Some(dir) => {
            let dir = Path::new(dir);
            create_dir(dir)?;
            for p in &profiles {
                write_file(
                    &dir.join(format!("{}.profile.json", p.id)),
                    pretty(p).as_bytes(),
                )?;
            }
        }
        None => {
            for p in &profiles {
                println!("{}", serde_json::to_string(p).expect("serializable"));
            }
        }
    }
    Ok(())
}

struct Loaded {
    model: NetworkModel,
    data: Dataset,
    model_path: PathBuf,
    data_path: PathBuf,
}

fn load_target(t: &Target) -> Result<Loaded> {
    let model_path = manifest::resolve(Path::new(&t.model), MODEL_FILE);
    let data_path = manifest::resolve(Path::new(&t.data), DATASET_FILE);
    let model = manifest::load_model(&model_path)?;
    let mut data = manifest::load_dataset(&data_path)?;
    if let Some(n) = t.images {
        data = data.subset(n)?;
    }
    data.check_compatible(&model)?;
    Ok(Loaded {
        model,
        data,
        model_path,
        data_path,
    })
}

fn build_config(model: &NetworkModel, mult: &str, mask: Option<&str>) -> Result<ApproxConfig> {
    let m = Arc::new(parse_multiplier_spec(mult)?);
    match mask {
        Some(mask) => ApproxConfig::from_mask(model, mask, m),
        None if m.is_exact() => Ok(ApproxConfig::exact(model)),
        None => Ok(ApproxConfig::uniform(model, m)),
    }
}

/// `(seed used, whether it came from entropy)`.
fn resolve_seed(requested: u64) -> (u64, bool) {
    if requested != 0 {
        return (requested, false);
    }
    loop {
        let s: u64 = rand::random();
        if s != 0 {
            return (s, true);
        }
    }
}

fn base_plan(model: &NetworkModel, p: &PlanArgs, seed: u64) -> Result<CampaignPlan> {
    match p.reps {
        Some(repetitions) => {
            let plan = CampaignPlan {
                repetitions,
                master_seed: seed,
                confidence: p.confidence,
                margin: p.margin,
            };
            plan.validate()?;
            Ok(plan)
        }
        None => CampaignPlan::statistical(model, seed, p.confidence, p.margin),
    }
}

fn calibration_grid(p: &PlanArgs) -> Vec<u64> {
    p.grid
        .clone()
        .unwrap_or_else(|| DEFAULT_CALIBRATION_GRID.to_vec())
}

fn check_plan_args(p: &PlanArgs) -> Result<()> {
    if p.reps == Some(0) {
        return Err(Error::Usage("repetitions must be at least 1".into()));
    }
    if p.tolerance.is_nan() || p.tolerance < 0.0 {
        return Err(Error::Usage(format!(
            "tolerance must be non-negative, got {}",
            p.tolerance
        )));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let t = load_target(&a.target)?;
    let cfg = build_config(&t.model, &a.mult, a.mask.as_deref())?;
    let ev = Evaluation::new(&t.model, &t.data, &cfg)?;
    println!("model       {}", t.model.name());
    println!("multiplier  {}", cfg.multiplier_label());
    println!("mask        {}", cfg.mask());
    println!("images      {}", ev.images());
    println!("correct     {}", ev.correct());
    println!("accuracy    {:.4}", ev.accuracy());
    Ok(())
}

pub fn inject(a: &InjectArgs) -> Result<()> {
    check_plan_args(&a.plan)?;
    let t = load_target(&a.target)?;
    let cfg = build_config(&t.model, &a.mult, a.mask.as_deref())?;
    let (seed, _) = resolve_seed(a.plan.seed);
    let mut plan = base_plan(&t.model, &a.plan, seed)?;

    let ev = Evaluation::new(&t.model, &t.data, &cfg)?;
    let calibration = if a.plan.calibrate {
        let c = calibrate_repetitions_on(&ev, &plan, &calibration_grid(&a.plan), a.plan.tolerance)?;
        plan.repetitions = c.repetitions;
        Some(c)
    } else {
        None
    };
    let result = run_campaign_on(&ev, &plan)?;

    let context = RunContext {
        model_name: t.model.name().to_string(),
        model_hash: Some(manifest_digest(&t.model_path)?),
        dataset_hash: Some(manifest_digest(&t.data_path)?),
        multiplier: cfg.multiplier_label(),
        mask: cfg.mask(),
    };
    let rep = CampaignReport::new(&result, context, calibration);

    let out = Path::new(&a.out);
    create_dir(out)?;
    write_file(&out.join("campaign.json"), rep.to_json().as_bytes())?;
    write_file(
        &out.join("campaign.csv"),
        campaign_csv(&result.records).as_bytes(),
    )?;

    let s = &rep.summary;
    println!("model                 {}", rep.context.model_name);
    println!("multiplier            {}", rep.context.multiplier);
    println!("mask                  {}", rep.context.mask);
    println!("seed                  {}", plan.master_seed);
    println!("sites                 {}", s.site_count);
    println!("repetitions           {}", plan.repetitions);
    println!("images                {}", s.images);
    println!("baseline_accuracy     {:.6}", s.baseline_accuracy);
    println!("mean_faulty_accuracy  {:.6}", s.mean_faulty_accuracy);
    println!("std_faulty_accuracy   {:.6}", s.std_faulty_accuracy);
    println!("vulnerability_pct     {}", s.vulnerability_pct);
    Ok(())
}

#[derive(Serialize)]
struct FileRef {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct MultiplierEntry {
    spec: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    table_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sidecar_sha256: Option<String>,
    profile: MultiplierProfile,
}

#[derive(Serialize)]
struct SeedRecord {
    requested: u64,
    used: u64,
    from_entropy: bool,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    model: FileRef,
    model_name: String,
    data: FileRef,
    images: usize,
    multipliers: Vec<MultiplierEntry>,
    seed: SeedRecord,
    plan: CampaignPlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<Calibration>,
    objectives: Vec<String>,
    dedup: bool,
    enumeration_cap: usize,
    exact_accuracy: f64,
    points: usize,
    pareto: usize,
    outputs: Vec<FileRef>,
    trend_violations: Vec<TrendViolation>,
}

fn multiplier_entry(spec: &str, m: &Multiplier) -> Result<MultiplierEntry> {
    let path = Path::new(spec);
    let (table, side) = if matches!(m.kind(), axdse_core::MultiplierKind::Lut(_)) {
        (
            Some(sha256_file(path)?),
            Some(sha256_file(&sidecar_path(path))?),
        )
    } else {
        (None, None)
    };
    Ok(MultiplierEntry {
        spec: spec.to_string(),
        table_sha256: table,
        sidecar_sha256: side,
        profile: profile(m),
    })
}

pub fn dse(a: &DseArgs) -> Result<()> {
    check_plan_args(&a.plan)?;
    let objectives = parse_objectives(&a.objectives)?;
    if objectives.len() < 2 {
        return Err(Error::Usage(
            "--objectives needs at least two entries".into(),
        ));
    }
    let t = load_target(&a.target)?;
    let mults = a
        .mults
        .iter()
        .map(|s| parse_multiplier_spec(s).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let configs = enumerate_configs(&t.model, &mults, a.cap)?;

    let (seed, from_entropy) = resolve_seed(a.plan.seed);
    let mut plan = base_plan(&t.model, &a.plan, seed)?;
    // Repetitions are calibrated once, on the exact network, and shared by every point.
    let calibration = if a.plan.calibrate {
        let exact = ApproxConfig::exact(&t.model);
        let ev = Evaluation::new(&t.model, &t.data, &exact)?;
        let c = calibrate_repetitions_on(&ev, &plan, &calibration_grid(&a.plan), a.plan.tolerance)?;
        plan.repetitions = c.repetitions;
        Some(c)
    } else {
        None
    };

    let explorer = Explorer::new(&t.model, &t.data, plan)?;
    let points = explorer.evaluate_all(&configs)?;
    let rows: Vec<PointRow> = points.iter().map(PointRow::from_point).collect();
    let front: Vec<PointRow> = pareto_indices(&rows, &objectives, a.dedup)?
        .into_iter()
        .map(|i| rows[i].clone())
        .collect();

    let out = Path::new(&a.out);
    create_dir(out)?;
    let points_text = points_csv(&rows);
    let pareto_text = points_csv(&front);
    write_file(&out.join("points.csv"), points_text.as_bytes())?;
    write_file(&out.join("pareto.csv"), pareto_text.as_bytes())?;

    let manifest = RunManifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        command: "dse",
        model: FileRef {
            path: t.model_path.display().to_string(),
            sha256: manifest_digest(&t.model_path)?,
        },
        model_name: t.model.name().to_string(),
        data: FileRef {
            path: t.data_path.display().to_string(),
            sha256: manifest_digest(&t.data_path)?,
        },
        images: t.data.len(),
        multipliers: a
            .mults
            .iter()
            .zip(&mults)
            .map(|(s, m)| multiplier_entry(s, m))
            .collect::<Result<_>>()?,
        seed: SeedRecord {
            requested: a.plan.seed,
            used: seed,
            from_entropy,
        },
        plan,
        calibration,
        objectives: objectives.iter().map(|o| o.to_string()).collect(),
        dedup: a.dedup,
        enumeration_cap: a.cap,
        exact_accuracy: explorer.exact_accuracy(),
        points: rows.len(),
        pareto: front.len(),
        outputs: vec![
            FileRef {
                path: "points.csv".into(),
                sha256: sha256_bytes(points_text.as_bytes()),
            },
            FileRef {
                path: "pareto.csv".into(),
                sha256: sha256_bytes(pareto_text.as_bytes()),
            },
        ],
        trend_violations: trend_violations(&points),
    };
    write_file(&out.join("run.json"), pretty(&manifest).as_bytes())?;

    println!(
        "{} points, {} repetitions per point, exact accuracy {:.4}",
        rows.len(),
        plan.repetitions,
        explorer.exact_accuracy()
    );
    print!("{}", points_table(&rows));
    println!();
    println!("pareto ({})", manifest.objectives.join(", "));
    print!("{}", points_table(&front));
    if !manifest.trend_violations.is_empty() {
        println!();
        println!(
            "{} cost trend violations (see run.json)",
            manifest.trend_violations.len()
        );
    }
    Ok(())
}

pub fn pareto(a: &ParetoArgs) -> Result<()> {
    let objectives = parse_objectives(&a.objectives)?;
    let path = Path::new(&a.points);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = read_points_csv(&text)?;
    let front: Vec<PointRow> = pareto_indices(&rows, &objectives, a.dedup)?
        .into_iter()
        .map(|i| rows[i].clone())
        .collect();
    print!("{}", points_table(&front));
    if let Some(dir) = &a.out {
        let dir = Path::new(dir);
        create_dir(dir)?;
        write_file(&dir.join("pareto.csv"), points_csv(&front).as_bytes())?;
    }
    Ok(())
}
