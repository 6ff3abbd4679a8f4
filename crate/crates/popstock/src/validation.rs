//! Internal and external validation: sample sizing, labeled-home accuracy
//! with metro-equivalence merging, threshold sweeps, and least-squares fits
//! against reference series.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;

use thiserror::Error;

use crate::analytics::Aggregate;
use crate::inference::{HomeAssignment, HomeStatus};
use crate::regions::{RegionCode, RegionSet};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no labeled users with a computed mode")]
    NoLabeledResidents,
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("x values have zero variance")]
    ZeroVariance,
    #[error("duplicate label for user {0:?}")]
    DuplicateLabel(String),
    #[error("label for user {user:?} names region {region:?} absent from the region set")]
    UnknownLabelRegion { user: String, region: String },
    #[error("bad record on line {line}: {reason}")]
    BadRecord { line: u64, reason: String },
    #[error("bad header: expected {expected:?}, got {got:?}")]
    BadHeader { expected: &'static str, got: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Sample sizing
// ---------------------------------------------------------------------------

/// Inverse standard-normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub(crate) fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// Cochran sample size with p = 0.5 and finite-population correction,
/// rounded half-up: `n0 = z² * 0.25 / margin²`, `n = n0 / (1 + (n0-1)/N)`.
pub fn sample_size(population: u64, confidence: f64, margin: f64) -> Result<u64, ValidationError> {
    if population < 1 {
        return Err(ValidationError::InvalidParameter(
            "population must be at least 1".into(),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(ValidationError::InvalidParameter(format!(
            "confidence {confidence} not in (0,1)"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(ValidationError::InvalidParameter(format!(
            "margin {margin} not in (0,1)"
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
    let n0 = z * z * 0.25 / (margin * margin);
    let n = n0 / (1.0 + (n0 - 1.0) / population as f64);
    Ok((n + 0.5).floor() as u64)
}

// ---------------------------------------------------------------------------
// Internal validation
// ---------------------------------------------------------------------------

/// A user's self-reported (pre-cleaned) home region.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationLabel {
    pub user_id: String,
    pub home_region: RegionCode,
}

pub const LABELS_HEADER: &str = "user_id,region_code";

/// Load `user_id,region_code` labels; user ids must be unique.
pub fn read_labels_csv(reader: impl io::Read) -> Result<Vec<ValidationLabel>, ValidationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?;
    if !headers.iter().eq(["user_id", "region_code"]) {
        return Err(ValidationError::BadHeader {
            expected: LABELS_HEADER,
            got: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut seen = BTreeSet::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| ValidationError::BadRecord { line, reason };
        if record.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", record.len())));
        }
        if !seen.insert(record[0].to_owned()) {
            return Err(ValidationError::DuplicateLabel(record[0].to_owned()));
        }
        labels.push(ValidationLabel {
            user_id: record[0].to_owned(),
            home_region: RegionCode::new(&record[1]).map_err(|e| bad(e.to_string()))?,
        });
    }
    Ok(labels)
}

/// Verify that every label's region exists in the set.
pub fn check_labels(labels: &[ValidationLabel], set: &RegionSet) -> Result<(), ValidationError> {
    for label in labels {
        if set.get(&label.home_region).is_none() {
            return Err(ValidationError::UnknownLabelRegion {
                user: label.user_id.clone(),
                region: label.home_region.as_str().to_owned(),
            });
        }
    }
    Ok(())
}

/// Failure/success analysis of inferred homes against labels. The accuracy
/// denominator is the labeled users whose mode was computed; labeled users
/// with an unknown verdict are reported separately as `n_unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub n_labeled: u64,
    pub n_mode_computed: u64,
    pub n_unknown: u64,
    pub n_correct: u64,
    pub n_correct_merged: u64,
    pub accuracy: f64,
    pub accuracy_merged: f64,
    /// Mode-computed labeled users / labeled users.
    pub coverage: f64,
    /// Exact mismatches keyed by (inferred, labeled) region pair, including
    /// those forgiven under group merging.
    pub misidentifications: BTreeMap<(RegionCode, RegionCode), u64>,
}

/// Score inferred homes against labels. A mismatch also counts as correct
/// under merged scoring when both regions share an equivalence group.
pub fn internal_accuracy(
    homes: &HashMap<String, HomeAssignment>,
    labels: &[ValidationLabel],
    groups: &HashMap<RegionCode, String>,
) -> Result<AccuracyReport, ValidationError> {
    let mut report = AccuracyReport {
        n_labeled: labels.len() as u64,
        n_mode_computed: 0,
        n_unknown: 0,
        n_correct: 0,
        n_correct_merged: 0,
        accuracy: 0.0,
        accuracy_merged: 0.0,
        coverage: 0.0,
        misidentifications: BTreeMap::new(),
    };
    for label in labels {
        let inferred = match homes.get(&label.user_id).map(|h| &h.status) {
            Some(HomeStatus::Resident(region)) => region,
            Some(HomeStatus::Unknown(_)) | None => {
                report.n_unknown += 1;
                continue;
            }
        };
        report.n_mode_computed += 1;
        if *inferred == label.home_region {
            report.n_correct += 1;
            report.n_correct_merged += 1;
        } else {
            let same_group = match (groups.get(inferred), groups.get(&label.home_region)) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            if same_group {
                report.n_correct_merged += 1;
            }
            *report
                .misidentifications
                .entry((inferred.clone(), label.home_region.clone()))
                .or_insert(0) += 1;
        }
    }
    if report.n_mode_computed == 0 {
        return Err(ValidationError::NoLabeledResidents);
    }
    report.accuracy = report.n_correct as f64 / report.n_mode_computed as f64;
    report.accuracy_merged = report.n_correct_merged as f64 / report.n_mode_computed as f64;
    if report.n_labeled > 0 {
        report.coverage = report.n_mode_computed as f64 / report.n_labeled as f64;
    }
    Ok(report)
}

/// Default observation-count thresholds for the sweep.
pub const DEFAULT_THRESHOLDS: [u64; 13] = [1, 3, 5, 10, 15, 20, 25, 30, 50, 100, 200, 500, 1000];

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub threshold: u64,
    pub n_users: u64,
    /// Percentage of all mode-computed labeled users retained at this
    /// threshold.
    pub pct_of_total: f64,
    /// Unmerged accuracy over the retained users; `None` for empty buckets.
    pub accuracy: Option<f64>,
}

/// Accuracy restricted to labeled users with at least `threshold`
/// observations, one row per threshold.
pub fn threshold_sweep(
    homes: &HashMap<String, HomeAssignment>,
    labels: &[ValidationLabel],
    thresholds: &[u64],
) -> Vec<ThresholdRow> {
    // (total_observations, correct) for every labeled mode-computed user.
    let scored: Vec<(u64, bool)> = labels
        .iter()
        .filter_map(|label| {
            let home = homes.get(&label.user_id)?;
            match &home.status {
                HomeStatus::Resident(region) => {
                    Some((home.total_observations, *region == label.home_region))
                }
                HomeStatus::Unknown(_) => None,
            }
        })
        .collect();
    let denom = scored.len() as f64;

    thresholds
        .iter()
        .map(|&threshold| {
            let retained: Vec<&(u64, bool)> =
                scored.iter().filter(|(t, _)| *t >= threshold).collect();
            let n_users = retained.len() as u64;
            let pct_of_total = if denom > 0.0 {
                100.0 * n_users as f64 / denom
            } else {
                0.0
            };
            let accuracy = if n_users > 0 {
                let correct = retained.iter().filter(|(_, ok)| *ok).count();
                Some(correct as f64 / n_users as f64)
            } else {
                None
            };
            ThresholdRow {
                threshold,
                n_users,
                pct_of_total,
                accuracy,
            }
        })
        .collect()
}

pub const THRESHOLD_REPORT_HEADER: &str = "threshold,n_users,pct_total,pct_successful";

/// Write the sweep in the four-column report layout; empty buckets leave
/// `pct_successful` blank.
pub fn write_threshold_report<'a>(
    mut writer: impl io::Write,
    rows: impl IntoIterator<Item = &'a ThresholdRow>,
) -> io::Result<()> {
    writeln!(writer, "{THRESHOLD_REPORT_HEADER}")?;
    for row in rows {
        match row.accuracy {
            Some(acc) => writeln!(
                writer,
                "{},{},{},{}",
                row.threshold,
                row.n_users,
                row.pct_of_total,
                100.0 * acc
            )?,
            None => writeln!(writer, "{},{},{},", row.threshold, row.n_users, row.pct_of_total)?,
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// External validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log10Log10,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log10Log10 => "log10_log10",
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "identity" => Ok(Transform::Identity),
            "log10_log10" => Ok(Transform::Log10Log10),
            _ => Err(()),
        }
    }
}

/// Ordinary least squares fit of y on x, possibly in log10-log10 space.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Points dropped before a log-log fit because x or y was non-positive.
    pub n_excluded: usize,
    pub transform: Transform,
}

pub fn fit_line(
    points: &[(f64, f64)],
    transform: Transform,
) -> Result<RegressionResult, ValidationError> {
    let fitted: Vec<(f64, f64)> = match transform {
        Transform::Identity => points.to_vec(),
        Transform::Log10Log10 => points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| (x.log10(), y.log10()))
            .collect(),
    };
    let n_excluded = points.len() - fitted.len();
    if fitted.len() < 2 {
        return Err(ValidationError::TooFewPoints(fitted.len()));
    }

    let n = fitted.len() as f64;
    let mean_x = fitted.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = fitted.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in &fitted {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(ValidationError::ZeroVariance);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    // Constant y is fit exactly by the horizontal line.
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        ((sxy * sxy) / (sxx * syy)).min(1.0)
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        n_points: fitted.len(),
        n_excluded,
        transform,
    })
}

/// A reference observation (census estimate, tax collection) for one region
/// and optionally one month.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceValue {
    pub region: RegionCode,
    pub month: Option<String>,
    pub value: f64,
}

pub const REFERENCE_ANNUAL_HEADER: &str = "region_code,value";
pub const REFERENCE_MONTHLY_HEADER: &str = "region_code,month,value";

/// Load a reference CSV, accepting the annual (2-column) or monthly
/// (3-column) layout.
pub fn read_reference_csv(reader: impl io::Read) -> Result<Vec<ReferenceValue>, ValidationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let monthly = if headers.iter().eq(["region_code", "value"]) {
        false
    } else if headers.iter().eq(["region_code", "month", "value"]) {
        true
    } else {
        return Err(ValidationError::BadHeader {
            expected: "region_code,value or region_code,month,value",
            got: headers.iter().collect::<Vec<_>>().join(","),
        });
    };
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| ValidationError::BadRecord { line, reason };
        let expected_len = if monthly { 3 } else { 2 };
        if record.len() != expected_len {
            return Err(bad(format!(
                "expected {expected_len} fields, got {}",
                record.len()
            )));
        }
        let region = RegionCode::new(&record[0]).map_err(|e| bad(e.to_string()))?;
        let (month, value_field) = if monthly {
            (Some(record[1].to_owned()), 2)
        } else {
            (None, 1)
        };
        let value: f64 = record[value_field]
            .parse()
            .map_err(|_| bad(format!("bad value {:?}", &record[value_field])))?;
        values.push(ReferenceValue {
            region,
            month,
            value,
        });
    }
    Ok(values)
}

/// Regression outcome for one group (one month, or the single annual
/// group). A failed fit in one group never aborts the others.
#[derive(Debug)]
pub struct GroupRegression {
    pub month: Option<String>,
    pub result: Result<RegressionResult, ValidationError>,
    /// Regions present on only one side of the join.
    pub n_dropped: u64,
}

/// Inner-join aggregates with reference values on region (and month when
/// present) and fit each group.
pub fn external_report(
    aggregates: &[Aggregate],
    reference: &[ReferenceValue],
    transform: Transform,
) -> Vec<GroupRegression> {
    let mut months: BTreeSet<Option<String>> = BTreeSet::new();
    for a in aggregates {
        months.insert(a.month.clone());
    }

    let mut out = Vec::new();
    for month in months {
        let agg_map: BTreeMap<&RegionCode, f64> = aggregates
            .iter()
            .filter(|a| a.month == month)
            .map(|a| (&a.region, a.value))
            .collect();
        let ref_map: BTreeMap<&RegionCode, f64> = reference
            .iter()
            .filter(|r| r.month == month)
            .map(|r| (&r.region, r.value))
            .collect();

        let mut points = Vec::new();
        let mut n_dropped = 0u64;
        for (region, &x) in &agg_map {
            match ref_map.get(region) {
                Some(&y) => points.push((y, x)),
                None => n_dropped += 1,
            }
        }
        n_dropped += ref_map
            .keys()
            .filter(|r| !agg_map.contains_key(*r))
            .count() as u64;

        out.push(GroupRegression {
            month,
            result: fit_line(&points, transform),
            n_dropped,
        });
    }
    out
}
