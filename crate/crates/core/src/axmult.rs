//! Behavioral 8x8-bit signed multipliers and their exhaustive error metrics.
//!
//! Three families are supported:
//! - `exact`: `a * b`.
//! - `truncK` (K in 1..=7): both operands have their K low bits cleared
//!   (arithmetically, so negative values round toward negative infinity)
//!   before an exact multiply.
//! - lookup tables (`.mul8s` files): 65536 little-endian `i16` products,
//!   entry `(a + 128) * 256 + (b + 128)` holding `a * b` as computed by the
//!   modelled circuit.
//!
//! Error metrics are expressed in percent of the largest exact product
//! magnitude, 2^14 = 16384. The mean relative error skips pairs whose exact
//! product is zero.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LUT_ENTRIES: usize = 1 << 16;
pub const LUT_FILE_BYTES: usize = LUT_ENTRIES * 2;
/// Normalization for MAE/WCE: largest `|a * b|` over `i8 x i8`.
pub const MAX_PRODUCT_MAGNITUDE: i32 = 1 << 14;
/// Accepted range of table entries.
pub const LUT_MIN: i32 = -MAX_PRODUCT_MAGNITUDE;
pub const LUT_MAX: i32 = MAX_PRODUCT_MAGNITUDE;

/// Area and power of one multiplier instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub power_mw: f64,
    pub area_um2: f64,
}

/// Cost of the exact 8-bit multiplier used as the reference design.
pub const EXACT_COST: CostCoefficients = CostCoefficients {
    power_mw: 0.425,
    area_um2: 729.8,
};

#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierKind {
    Exact,
    Lut(Box<[i16]>),
    Trunc(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    id: String,
    kind: MultiplierKind,
    cost: CostCoefficients,
}

#[inline]
pub fn lut_index(a: i8, b: i8) -> usize {
    (a as i32 + 128) as usize * 256 + (b as i32 + 128) as usize
}

#[inline]
pub fn truncate_operand(v: i8, k: u8) -> i8 {
    v & (-1i8 << k)
}

impl Multiplier {
    pub fn exact() -> Self {
        Multiplier {
            id: "exact".into(),
            kind: MultiplierKind::Exact,
            cost: EXACT_COST,
        }
    }

    /// Operand-truncating multiplier. Its cost scales the exact design by
    /// the remaining partial-product array, `((8 - k) / 8)^2`.
    pub fn truncated(k: u8) -> Result<Self> {
        if !(1..=7).contains(&k) {
            return Err(Error::Usage(format!(
                "truncation width must be in 1..=7, got {k}"
            )));
        }
        let f = (f64::from(8 - k) / 8.0).powi(2);
        Ok(Multiplier {
            id: format!("trunc{k}"),
            kind: MultiplierKind::Trunc(k),
            cost: CostCoefficients {
                power_mw: EXACT_COST.power_mw * f,
                area_um2: EXACT_COST.area_um2 * f,
            },
        })
    }

    /// Table-driven multiplier. Fails if the table is the wrong length or
    /// holds an entry outside the product range.
    pub fn from_table(
        id: impl Into<String>,
        table: Vec<i16>,
        cost: CostCoefficients,
    ) -> Result<Self> {
        if table.len() != LUT_ENTRIES {
            return Err(Error::Format(format!(
                "lookup table has {} entries, expected {LUT_ENTRIES}",
                table.len()
            )));
        }
        if let Some(i) = table
            .iter()
            .position(|&v| !(LUT_MIN..=LUT_MAX).contains(&i32::from(v)))
        {
            return Err(Error::Validation(format!(
                "lookup table entry {i} = {} outside [{LUT_MIN}, {LUT_MAX}]",
                table[i]
            )));
        }
        validate_cost(&cost)?;
        Ok(Multiplier {
            id: id.into(),
            kind: MultiplierKind::Lut(table.into_boxed_slice()),
            cost,
        })
    }

    /// `exact` or `trunc1`..`trunc7`.
    pub fn builtin(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        if lower == "exact" {
            return Ok(Multiplier::exact());
        }
        if let Some(k) = lower.strip_prefix("trunc") {
            if let Ok(k) = k.parse::<u8>() {
                return Multiplier::truncated(k);
            }
        }
        Err(Error::Usage(format!(
            "unknown builtin multiplier `{name}` (expected exact or trunc1..trunc7)"
        )))
    }

    /// Same multiplier under a different name and cost.
    pub fn with_cost(mut self, id: impl Into<String>, cost: CostCoefficients) -> Result<Self> {
        validate_cost(&cost)?;
        self.id = id.into();
        self.cost = cost;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &MultiplierKind {
        &self.kind
    }

    pub fn cost(&self) -> CostCoefficients {
        self.cost
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, MultiplierKind::Exact)
    }

    #[inline]
    pub fn multiply(&self, a: i8, b: i8) -> i32 {
        match &self.kind {
            MultiplierKind::Exact => i32::from(a) * i32::from(b),
            MultiplierKind::Trunc(k) => {
                i32::from(truncate_operand(a, *k)) * i32::from(truncate_operand(b, *k))
            }
            MultiplierKind::Lut(t) => i32::from(t[lut_index(a, b)]),
        }
    }

    /// The full product table in `.mul8s` index order.
    pub fn to_table(&self) -> Vec<i16> {
        let mut t = vec![0i16; LUT_ENTRIES];
        for a in i8::MIN..=i8::MAX {
            for b in i8::MIN..=i8::MAX {
                t[lut_index(a, b)] = self.multiply(a, b) as i16;
            }
        }
        t
    }
}

fn validate_cost(cost: &CostCoefficients) -> Result<()> {
    if !(cost.area_um2.is_finite()
        && cost.area_um2 >= 0.0
        && cost.power_mw.is_finite()
        && cost.power_mw >= 0.0)
    {
        return Err(Error::Validation(format!(
            "cost coefficients must be finite and non-negative: {cost:?}"
        )));
    }
    Ok(())
}

/// Exhaustive error statistics, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae_pct: f64,
    pub wce_pct: f64,
    pub mre_pct: f64,
    pub ep_pct: f64,
}

/// Error metrics plus cost, as written by `characterize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierProfile {
    pub id: String,
    pub mae_pct: f64,
    pub wce_pct: f64,
    pub mre_pct: f64,
    pub ep_pct: f64,
    pub power_mw: f64,
    pub area_um2: f64,
    /// MAE and WCE are percentages of this magnitude.
    pub normalization: i32,
    /// MRE averages only over pairs whose exact product is non-zero.
    pub mre_excludes_zero_products: bool,
    pub mre_pairs: u64,
    pub error_pairs: u64,
    pub max_abs_error: i32,
}

#[derive(Debug, Clone, Copy, Default)]
struct RowTally {
    sum_abs: u64,
    max_abs: i32,
    errors: u64,
    rel_sum: f64,
    rel_pairs: u64,
}

fn tally_row(m: &Multiplier, a: i8) -> RowTally {
    let mut t = RowTally::default();
    for b in i8::MIN..=i8::MAX {
        let exact = i32::from(a) * i32::from(b);
        let err = (m.multiply(a, b) - exact).abs();
        t.sum_abs += err as u64;
        t.max_abs = t.max_abs.max(err);
        if err != 0 {
            t.errors += 1;
        }
        if exact != 0 {
            t.rel_sum += f64::from(err) / f64::from(exact.abs());
            t.rel_pairs += 1;
        }
    }
    t
}

fn tally(m: &Multiplier) -> RowTally {
    // Rows are reduced in index order so the float sum does not depend on
    // the worker count.
    let rows: Vec<RowTally> = (i8::MIN..=i8::MAX)
        .into_par_iter()
        .map(|a| tally_row(m, a))
        .collect();
    rows.into_iter()
        .fold(RowTally::default(), |acc, r| RowTally {
            sum_abs: acc.sum_abs + r.sum_abs,
            max_abs: acc.max_abs.max(r.max_abs),
            errors: acc.errors + r.errors,
            rel_sum: acc.rel_sum + r.rel_sum,
            rel_pairs: acc.rel_pairs + r.rel_pairs,
        })
}

fn metrics_of(t: &RowTally) -> ErrorMetrics {
    let n = LUT_ENTRIES as f64;
    let norm = f64::from(MAX_PRODUCT_MAGNITUDE);
    ErrorMetrics {
        mae_pct: t.sum_abs as f64 / n / norm * 100.0,
        wce_pct: f64::from(t.max_abs) / norm * 100.0,
        mre_pct: if t.rel_pairs == 0 {
            0.0
        } else {
            t.rel_sum / t.rel_pairs as f64 * 100.0
        },
        ep_pct: t.errors as f64 / n * 100.0,
    }
}

/// Exhaustive error metrics over all 65536 operand pairs.
pub fn characterize(m: &Multiplier) -> ErrorMetrics {
    metrics_of(&tally(m))
}

pub fn profile(m: &Multiplier) -> MultiplierProfile {
    let t = tally(m);
    let e = metrics_of(&t);
    MultiplierProfile {
        id: m.id().to_string(),
        mae_pct: e.mae_pct,
        wce_pct: e.wce_pct,
        mre_pct: e.mre_pct,
        ep_pct: e.ep_pct,
        power_mw: m.cost().power_mw,
        area_um2: m.cost().area_um2,
        normalization: MAX_PRODUCT_MAGNITUDE,
        mre_excludes_zero_products: true,
        mre_pairs: t.rel_pairs,
        error_pairs: t.errors,
        max_abs_error: t.max_abs,
    }
}

/// Sidecar JSON next to a `.mul8s` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub power_mw: f64,
    pub area_um2: f64,
}

/// Reads a `.mul8s` table (131072 bytes) and attaches `cost`. The id is
/// the file stem.
pub fn load_lut(path: &Path, cost: CostCoefficients) -> Result<Multiplier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != LUT_FILE_BYTES {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {LUT_FILE_BYTES} (65536 x i16)",
            path.display(),
            bytes.len()
        )));
    }
    let table = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "lut".into());
    Multiplier::from_table(id, table, cost).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_lut(path: &Path, m: &Multiplier) -> Result<()> {
    let bytes: Vec<u8> = m.to_table().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sidecar_path(lut: &Path) -> PathBuf {
    lut.with_extension("json")
}

/// Loads a table plus its sidecar (`<stem>.json`).
pub fn load_lut_with_sidecar(path: &Path) -> Result<Multiplier> {
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sc: LutSidecar = serde_json::from_slice(&text).map_err(|e| Error::Parse {
        context: side.display().to_string(),
        message: e.to_string(),
    })?;
    let cost = CostCoefficients {
        power_mw: sc.power_mw,
        area_um2: sc.area_um2,
    };
    let m = load_lut(path, cost)?;
    match sc.id {
        Some(id) => m.with_cost(id, cost),
        None => Ok(m),
    }
}

/// Resolves a multiplier argument: a builtin name or a path to a `.mul8s`
/// table with a sidecar.
pub fn parse_multiplier_spec(spec: &str) -> Result<Multiplier> {
    let path = Path::new(spec);
    if spec.ends_with(".mul8s") || path.exists() {
        load_lut_with_sidecar(path)
    } else {
        Multiplier::builtin(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_extremes() {
        let m = Multiplier::exact();
        assert_eq!(m.multiply(-128, -128), 16384);
        assert_eq!(m.multiply(-128, 127), -16256);
    }

    #[test]
    fn trunc2_example() {
        let m = Multiplier::truncated(2).unwrap();
        // 7 = 0b111 -> 0b100 = 4, 6 = 0b110 -> 0b100 = 4
        assert_eq!(m.multiply(7, 6), 16);
        // -5 = ...11111011 -> ...11111000 = -8
        assert_eq!(truncate_operand(-5, 2), -8);
        // 3 = 0b011 -> 0
        assert_eq!(m.multiply(-5, 3), 0);
    }

    #[test]
    fn trunc_bounds() {
        assert!(Multiplier::truncated(0).is_err());
        assert!(Multiplier::truncated(8).is_err());
        assert!(Multiplier::builtin("trunc9").is_err());
        assert!(Multiplier::builtin("mul8s_1KVP").is_err());
        assert_eq!(Multiplier::builtin("TRUNC3").unwrap().id(), "trunc3");
    }

    #[test]
    fn trunc_is_commutative() {
        for k in 1..=7 {
            let m = Multiplier::truncated(k).unwrap();
            for a in i8::MIN..=i8::MAX {
                for b in (i8::MIN..=i8::MAX).step_by(7) {
                    assert_eq!(m.multiply(a, b), m.multiply(b, a));
                }
            }
        }
    }

    #[test]
    fn exact_profile_is_zero() {
        let e = characterize(&Multiplier::exact());
        assert_eq!(
            e,
            ErrorMetrics {
                mae_pct: 0.0,
                wce_pct: 0.0,
                mre_pct: 0.0,
                ep_pct: 0.0
            }
        );
        let p = profile(&Multiplier::exact());
        assert_eq!(p.mre_pairs, 255 * 255);
        assert_eq!((p.power_mw, p.area_um2), (0.425, 729.8));
    }

    #[test]
    fn truncation_costs_are_below_exact() {
        let mut prev = EXACT_COST.area_um2;
        for k in 1..=7 {
            let m = Multiplier::truncated(k).unwrap();
            assert!(m.cost().area_um2 < prev);
            assert!(m.cost().power_mw < EXACT_COST.power_mw);
            prev = m.cost().area_um2;
        }
    }

    #[test]
    fn table_validation() {
        let mut t = Multiplier::exact().to_table();
        assert!(Multiplier::from_table("ok", t.clone(), EXACT_COST).is_ok());
        t[0] = 20000;
        let err = Multiplier::from_table("bad", t, EXACT_COST).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("entry 0 ")),
            "{err}"
        );
        let err =
            Multiplier::from_table("short", vec![0; LUT_ENTRIES - 1], EXACT_COST).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn lut_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t3.mul8s");
        let t3 = Multiplier::truncated(3).unwrap();
        save_lut(&path, &t3).unwrap();
        let loaded = load_lut(&path, t3.cost()).unwrap();
        assert_eq!(loaded.id(), "t3");
        for a in i8::MIN..=i8::MAX {
            for b in i8::MIN..=i8::MAX {
                assert_eq!(loaded.multiply(a, b), t3.multiply(a, b));
            }
        }
        assert_eq!(characterize(&loaded), characterize(&t3));

        let short = dir.path().join("short.mul8s");
        fs::write(&short, vec![0u8; LUT_FILE_BYTES - 2]).unwrap();
        assert!(matches!(
            load_lut(&short, EXACT_COST),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn sidecar_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mine.mul8s");
        save_lut(&path, &Multiplier::exact()).unwrap();
        assert!(matches!(
            parse_multiplier_spec(path.to_str().unwrap()),
            Err(Error::Io { .. })
        ));
        fs::write(
            sidecar_path(&path),
            r#"{"id": "mul8s_test", "power_mw": 0.4, "area_um2": 700.0}"#,
        )
        .unwrap();
        let m = parse_multiplier_spec(path.to_str().unwrap()).unwrap();
        assert_eq!(m.id(), "mul8s_test");
        assert_eq!(m.cost().area_um2, 700.0);
        assert!(!m.is_exact());
    }
}
