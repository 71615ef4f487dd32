//! Evaluation tables and hemifield statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bast_audio::{Azimuth, Environment, NUM_AZIMUTHS};
use bast_tensor::Float;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{batch_tensors, Sample};
use crate::error::{CoreError, Result};
use crate::losses::{angular_error, squared_error};
use crate::model::BastModel;

/// Anything that maps samples to coordinate estimates.
pub trait Predictor {
    fn predict_batch(&self, batch: &[&Sample]) -> Result<Vec<[f64; 2]>>;
}

impl<T: Float> Predictor for BastModel<T> {
    fn predict_batch(&self, batch: &[&Sample]) -> Result<Vec<[f64; 2]>> {
        let (l, r, _) = batch_tensors::<T>(batch)?;
        let out = self.predict(&l, &r)?;
        Ok(out.data().chunks_exact(2).map(|p| [p[0].as_f64(), p[1].as_f64()]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub azimuth: Azimuth,
    pub environment: Environment,
    pub ad_deg: f64,
    pub sq_error: f64,
    pub pred_x: f64,
    pub pred_y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_ad_deg: f64,
    pub mean_mse: f64,
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(CoreError::Input("no records to summarize".into()));
    }
    let n = records.len() as f64;
    Ok(EvalSummary {
        count: records.len(),
        mean_ad_deg: records.iter().map(|r| r.ad_deg).sum::<f64>() / n,
        mean_mse: records.iter().map(|r| r.sq_error).sum::<f64>() / n,
    })
}

/// Scores every sample, in input order, in batches of `batch_size`.
pub fn evaluate(
    model: &dyn Predictor,
    samples: &[&Sample],
    batch_size: usize,
) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    if samples.is_empty() {
        return Err(CoreError::Input("evaluation split is empty".into()));
    }
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let preds = model.predict_batch(chunk)?;
        for (s, p) in chunk.iter().zip(preds) {
            let c = s.target.coordinate;
            records.push(EvalRecord {
                id: s.id.clone(),
                azimuth: s.target.azimuth,
                environment: s.target.environment,
                ad_deg: 180.0 * angular_error(c, p),
                sq_error: squared_error(c, p),
                pred_x: p[0],
                pred_y: p[1],
            });
        }
    }
    let summary = summarize(&records)?;
    Ok((records, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AzimuthRow {
    pub azimuth: u16,
    pub count: usize,
    /// `None` when the azimuth has no records.
    pub mean_ad_deg: Option<f64>,
    pub mean_mse: Option<f64>,
}

/// Mean errors per azimuth, one row for each of the 36 grid positions in
/// increasing order.
pub fn per_azimuth(records: &[EvalRecord]) -> Vec<AzimuthRow> {
    let mut acc = vec![(0usize, 0.0, 0.0); NUM_AZIMUTHS];
    for r in records {
        let e = &mut acc[r.azimuth.index()];
        e.0 += 1;
        e.1 += r.ad_deg;
        e.2 += r.sq_error;
    }
    Azimuth::all()
        .into_iter()
        .zip(acc)
        .map(|(a, (n, ad, se))| {
            if n == 0 {
                log::warn!("azimuth {a} has no evaluation records");
            }
            let mean = |s: f64| (n > 0).then(|| s / n as f64);
            AzimuthRow {
                azimuth: a.degrees(),
                count: n,
                mean_ad_deg: mean(ad),
                mean_mse: mean(se),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test of `a − b`. Identical samples give `t = 0` and
/// `p = 1`; a nonzero constant difference gives an infinite `t` and `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(CoreError::Stats("paired samples differ in length".into()));
    }
    let n = a.len();
    if n < 3 {
        return Err(CoreError::Stats(format!("need at least 3 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let (t, p) = if se == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| CoreError::Stats(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(PairedT { n, mean_diff: mean, t, p })
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        // rounding in p·m/rank can land one ulp below p itself
        adjusted[i] = running.min(1.0).max(p[i]);
    }
    adjusted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorPair {
    pub right_azimuth: u16,
    pub left_azimuth: u16,
    pub right_mean_ad_deg: f64,
    pub left_mean_ad_deg: f64,
    pub right_mean_mse: f64,
    pub left_mean_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HemifieldTest {
    /// Label of the set of tests adjusted together.
    pub family: String,
    pub condition: String,
    pub metric: String,
    pub n_pairs: usize,
    /// Mean of left minus right.
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HemifieldReport {
    pub pairs: Vec<MirrorPair>,
    pub tests: Vec<HemifieldTest>,
}

pub const SIGNIFICANCE: f64 = 0.05;

/// Left versus right hemifield comparison over mirror pairs `(θ, 360 − θ)`,
/// θ = 10..170. Tests both metrics; p-values are adjusted within this
/// report (see [`adjust_family`] to adjust across conditions).
pub fn hemifield_test(condition: &str, records: &[EvalRecord]) -> Result<HemifieldReport> {
    let table = per_azimuth(records);
    let mut pairs = Vec::new();
    for deg in (10..180).step_by(10) {
        let right = &table[(deg / 10) as usize];
        let left = &table[((360 - deg) / 10) as usize];
        if let (Some(rad), Some(lad), Some(rm), Some(lm)) =
            (right.mean_ad_deg, left.mean_ad_deg, right.mean_mse, left.mean_mse)
        {
            pairs.push(MirrorPair {
                right_azimuth: deg,
                left_azimuth: 360 - deg,
                right_mean_ad_deg: rad,
                left_mean_ad_deg: lad,
                right_mean_mse: rm,
                left_mean_mse: lm,
            });
        }
    }
    let column = |f: fn(&MirrorPair) -> f64| pairs.iter().map(f).collect::<Vec<_>>();
    let ad = paired_t_test(&column(|p| p.left_mean_ad_deg), &column(|p| p.right_mean_ad_deg))?;
    let mse = paired_t_test(&column(|p| p.left_mean_mse), &column(|p| p.right_mean_mse))?;
    let tests = [("ad", ad), ("mse", mse)]
        .into_iter()
        .map(|(metric, r)| HemifieldTest {
            family: String::new(),
            condition: condition.to_string(),
            metric: metric.to_string(),
            n_pairs: r.n,
            mean_diff: r.mean_diff,
            t: r.t,
            p: r.p,
            p_adjusted: r.p,
            significant: false,
        })
        .collect();
    let mut report = HemifieldReport { pairs, tests };
    adjust_family(std::slice::from_mut(&mut report), condition);
    Ok(report)
}

/// Re-adjusts every test in `reports` as one Benjamini–Hochberg family.
pub fn adjust_family(reports: &mut [HemifieldReport], family: &str) {
    let raw: Vec<f64> = reports.iter().flat_map(|r| r.tests.iter().map(|t| t.p)).collect();
    let adjusted = benjamini_hochberg(&raw);
    for (t, q) in reports.iter_mut().flat_map(|r| r.tests.iter_mut()).zip(adjusted) {
        t.family = family.to_string();
        t.p_adjusted = q;
        t.significant = q < SIGNIFICANCE;
    }
}

/// Which environments a model was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrainEnvironments {
    #[serde(rename = "AE")]
    Anechoic,
    #[serde(rename = "RV")]
    Reverberant,
    #[serde(rename = "AE+RV")]
    Both,
}

impl TrainEnvironments {
    pub const ALL: [TrainEnvironments; 3] = [
        TrainEnvironments::Anechoic,
        TrainEnvironments::Reverberant,
        TrainEnvironments::Both,
    ];

    pub fn environments(self) -> Vec<Environment> {
        match self {
            TrainEnvironments::Anechoic => vec![Environment::Anechoic],
            TrainEnvironments::Reverberant => vec![Environment::Reverberant],
            TrainEnvironments::Both => Environment::ALL.to_vec(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            TrainEnvironments::Anechoic => "AE",
            TrainEnvironments::Reverberant => "RV",
            TrainEnvironments::Both => "AE+RV",
        }
    }
}

impl std::str::FromStr for TrainEnvironments {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::Config(format!("unknown environment filter `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub trained_on: TrainEnvironments,
    pub tested_on: Environment,
    pub count: usize,
    pub mean_ad_deg: f64,
    pub mean_mse: f64,
}

/// Evaluates each trained model on each environment's test samples: a
/// `models.len() × 2` table in row-major order.
pub fn environment_transfer(
    models: &[(TrainEnvironments, &dyn Predictor)],
    tests: &[&Sample],
    batch_size: usize,
) -> Result<Vec<TransferCell>> {
    let mut cells = Vec::new();
    for &(trained_on, model) in models {
        for env in Environment::ALL {
            let subset: Vec<&Sample> = tests
                .iter()
                .copied()
                .filter(|s| s.target.environment == env)
                .collect();
            let (_, summary) = evaluate(model, &subset, batch_size)?;
            cells.push(TransferCell {
                trained_on,
                tested_on: env,
                count: summary.count,
                mean_ad_deg: summary.mean_ad_deg,
                mean_mse: summary.mean_mse,
            });
        }
    }
    Ok(cells)
}

/// Writes `rows` as `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_table<S: Serialize>(dir: impl AsRef<Path>, stem: &str, rows: &[S]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

pub fn write_hemifield(dir: impl AsRef<Path>, reports: &[HemifieldReport]) -> Result<()> {
    let rows: Vec<&HemifieldTest> = reports.iter().flat_map(|r| &r.tests).collect();
    write_table(&dir, "hemifield", &rows)?;
    let pairs: BTreeMap<&str, &Vec<MirrorPair>> = reports
        .iter()
        .filter_map(|r| r.tests.first().map(|t| (t.condition.as_str(), &r.pairs)))
        .collect();
    fs::write(
        dir.as_ref().join("hemifield_pairs.json"),
        serde_json::to_string_pretty(&pairs)?,
    )?;
    Ok(())
}
