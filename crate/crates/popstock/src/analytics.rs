//! Stock-series analytics: daily shares, z-scores, 9-band classification,
//! influx ratios against baseline dates, and the aggregates used for
//! external validation.
//!
//! Shares divide each day by the window's cumulative total, z-scores use the
//! sample (n-1) standard deviation, and bands cut the z axis at
//! ±0.5, ±1, ±1.5, ±2 into nine divergent intervals.

use std::collections::BTreeMap;
use std::io;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::regions::RegionCode;
use crate::stocks::DailyStock;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("series for {0} sums to zero")]
    ZeroTotal(RegionCode),
    #[error("series is degenerate (constant or shorter than 2)")]
    DegenerateSeries,
    #[error("z value is not finite")]
    NonFinite,
    #[error("baseline mean is zero or baseline is empty")]
    ZeroBaseline,
    #[error("empty window")]
    EmptyWindow,
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

/// One stock component per day for one region; dates are strictly
/// increasing and gap-free.
#[derive(Debug, Clone, PartialEq)]
pub struct StockSeries {
    region: RegionCode,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl StockSeries {
    pub fn new(
        region: RegionCode,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<StockSeries, AnalyticsError> {
        if dates.len() != values.len() {
            return Err(AnalyticsError::InvalidSeries(format!(
                "{} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        for pair in dates.windows(2) {
            if (pair[1] - pair[0]).num_days() != 1 {
                return Err(AnalyticsError::InvalidSeries(format!(
                    "dates not gap-free at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(StockSeries {
            region,
            dates,
            values,
        })
    }

    pub fn region(&self) -> &RegionCode {
        &self.region
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which stock class a series tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StockComponent {
    Residents,
    NonResidents,
}

impl StockComponent {
    pub fn of(self, stock: &DailyStock) -> u64 {
        match self {
            StockComponent::Residents => stock.residents,
            StockComponent::NonResidents => stock.non_residents,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StockComponent::Residents => "residents",
            StockComponent::NonResidents => "non_residents",
        }
    }
}

impl std::str::FromStr for StockComponent {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "residents" => Ok(StockComponent::Residents),
            "non_residents" => Ok(StockComponent::NonResidents),
            _ => Err(()),
        }
    }
}

/// Split stock rows into one gap-free series per region, sorted by date.
pub fn series_by_region(
    stocks: &[DailyStock],
    component: StockComponent,
) -> Result<Vec<StockSeries>, AnalyticsError> {
    let mut per_region: BTreeMap<&RegionCode, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for stock in stocks {
        per_region
            .entry(&stock.region)
            .or_default()
            .push((stock.date, component.of(stock) as f64));
    }
    let mut out = Vec::with_capacity(per_region.len());
    for (region, mut rows) in per_region {
        rows.sort_by_key(|(d, _)| *d);
        let (dates, values): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        out.push(StockSeries::new(region.clone(), dates, values)?);
    }
    Ok(out)
}

/// Each day's fraction of the window total: `p_d = v_d / Σ v`.
pub fn daily_share(series: &StockSeries) -> Result<Vec<f64>, AnalyticsError> {
    let total: f64 = series.values.iter().sum();
    if total <= 0.0 {
        return Err(AnalyticsError::ZeroTotal(series.region.clone()));
    }
    Ok(series.values.iter().map(|v| v / total).collect())
}

/// Standardize with the sample (n-1) standard deviation.
pub fn zscore_series(shares: &[f64]) -> Result<Vec<f64>, AnalyticsError> {
    if shares.len() < 2 {
        return Err(AnalyticsError::DegenerateSeries);
    }
    let n = shares.len() as f64;
    let mean = shares.iter().sum::<f64>() / n;
    let var = shares.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(AnalyticsError::DegenerateSeries);
    }
    Ok(shares.iter().map(|p| (p - mean) / std).collect())
}

/// The 9-interval divergent band of a z value. Cuts at -2, -1.5, -1, -0.5,
/// 0.5, 1, 1.5, 2; intervals are left-closed right-open except band 1,
/// which is open below -2.
pub fn band_of(z: f64) -> Result<u8, AnalyticsError> {
    if !z.is_finite() {
        return Err(AnalyticsError::NonFinite);
    }
    const CUTS: [f64; 8] = [-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0];
    let mut band = 1u8;
    for cut in CUTS {
        if z >= cut {
            band += 1;
        }
    }
    Ok(band)
}

/// Percent change of a value against the mean of baseline values.
pub fn influx_ratio(value: f64, baseline: &[f64]) -> Result<f64, AnalyticsError> {
    if baseline.is_empty() {
        return Err(AnalyticsError::ZeroBaseline);
    }
    let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
    if mean <= 0.0 {
        return Err(AnalyticsError::ZeroBaseline);
    }
    Ok(100.0 * (value - mean) / mean)
}

/// A stock series with its derived shares, z-scores, and bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSeries {
    pub region: RegionCode,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub shares: Vec<f64>,
    pub zscores: Vec<f64>,
    pub bands: Vec<u8>,
}

impl ZSeries {
    pub fn compute(series: &StockSeries) -> Result<ZSeries, AnalyticsError> {
        let shares = daily_share(series)?;
        let zscores = zscore_series(&shares)?;
        let bands = zscores
            .iter()
            .map(|&z| band_of(z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ZSeries {
            region: series.region.clone(),
            dates: series.dates.clone(),
            values: series.values.clone(),
            shares,
            zscores,
            bands,
        })
    }

    pub fn len(&self) -> usize {
        self.zscores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zscores.is_empty()
    }
}

/// Aggregation grain for external-validation comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateGrain {
    AnnualDailyMean,
    MonthlyDailyMean,
    MonthlySum,
}

impl std::str::FromStr for AggregateGrain {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "annual_daily_mean" => Ok(AggregateGrain::AnnualDailyMean),
            "monthly_daily_mean" => Ok(AggregateGrain::MonthlyDailyMean),
            "monthly_sum" => Ok(AggregateGrain::MonthlySum),
            _ => Err(()),
        }
    }
}

/// One aggregated value per region (annual) or per (region, month).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub region: RegionCode,
    /// `YYYY-MM` for monthly grains, `None` for annual.
    pub month: Option<String>,
    pub value: f64,
}

/// Aggregate a stock component per region at the requested grain.
pub fn aggregate_series(
    stocks: &[DailyStock],
    component: StockComponent,
    grain: AggregateGrain,
) -> Result<Vec<Aggregate>, AnalyticsError> {
    if stocks.is_empty() {
        return Err(AnalyticsError::EmptyWindow);
    }
    let series = series_by_region(stocks, component)?;
    let mut out = Vec::new();
    for s in &series {
        match grain {
            AggregateGrain::AnnualDailyMean => {
                let mean = s.values.iter().sum::<f64>() / s.len() as f64;
                out.push(Aggregate {
                    region: s.region.clone(),
                    month: None,
                    value: mean,
                });
            }
            AggregateGrain::MonthlyDailyMean | AggregateGrain::MonthlySum => {
                let mut months: BTreeMap<String, (f64, u32)> = BTreeMap::new();
                for (date, value) in s.dates.iter().zip(&s.values) {
                    let key = format!("{:04}-{:02}", date.year(), date.month());
                    let entry = months.entry(key).or_insert((0.0, 0));
                    entry.0 += value;
                    entry.1 += 1;
                }
                for (month, (sum, days)) in months {
                    let value = match grain {
                        AggregateGrain::MonthlySum => sum,
                        _ => sum / f64::from(days),
                    };
                    out.push(Aggregate {
                        region: s.region.clone(),
                        month: Some(month),
                        value,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub const ZSCORES_HEADER: &str = "date,region_code,value,share,z,band";

pub fn write_zscores_csv<'a>(
    mut writer: impl io::Write,
    series: impl IntoIterator<Item = &'a ZSeries>,
) -> io::Result<()> {
    writeln!(writer, "{ZSCORES_HEADER}")?;
    for zs in series {
        for i in 0..zs.len() {
            writeln!(
                writer,
                "{},{},{},{},{},{}",
                zs.dates[i], zs.region, zs.values[i], zs.shares[i], zs.zscores[i], zs.bands[i]
            )?;
        }
    }
    Ok(())
}

/// One influx comparison: a day's value against a baseline mean.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluxReport {
    pub region: RegionCode,
    pub event_date: NaiveDate,
    pub value: f64,
    pub baseline_mean: f64,
    pub pct_change: f64,
}

pub const INFLUX_HEADER: &str = "region_code,event_date,value,baseline_mean,pct_change";

pub fn write_influx_csv<'a>(
    mut writer: impl io::Write,
    reports: impl IntoIterator<Item = &'a InfluxReport>,
) -> io::Result<()> {
    writeln!(writer, "{INFLUX_HEADER}")?;
    for r in reports {
        writeln!(
            writer,
            "{},{},{},{},{}",
            r.region, r.event_date, r.value, r.baseline_mean, r.pct_change
        )?;
    }
    Ok(())
}
