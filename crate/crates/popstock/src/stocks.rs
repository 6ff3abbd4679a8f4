//! Daily per-region stocks: distinct active users classified against their
//! home assignment.
//!
//! A user active in several regions on one day counts once in each region's
//! stock; per-region counts are independent lists, so summing regions does
//! not give deduplicated totals. Every emitted record satisfies
//! `residents + non_residents + unknown == total_active`.

use std::collections::{BTreeSet, HashMap};
use std::io;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::ResolvedEvent;
use crate::inference::{HomeAssignment, HomeStatus};
use crate::regions::RegionCode;

#[derive(Debug, Error)]
pub enum StocksError {
    #[error("cannot merge stocks for ({a_date}, {a_region}) and ({b_date}, {b_region})")]
    KeyMismatch {
        a_date: NaiveDate,
        a_region: RegionCode,
        b_date: NaiveDate,
        b_region: RegionCode,
    },
    #[error("volume record ({v_date}, {v_region}) does not match stock ({s_date}, {s_region})")]
    MismatchedKey {
        s_date: NaiveDate,
        s_region: RegionCode,
        v_date: NaiveDate,
        v_region: RegionCode,
    },
    #[error("bad stocks record on line {line}: {reason}")]
    BadRecord { line: u64, reason: String },
    #[error("bad header: expected {expected:?}, got {got:?}")]
    BadHeader { expected: &'static str, got: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counts of distinct active users for one (date, region), by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyStock {
    pub date: NaiveDate,
    pub region: RegionCode,
    pub residents: u64,
    pub non_residents: u64,
    pub unknown: u64,
    pub total_active: u64,
}

impl DailyStock {
    pub fn empty(date: NaiveDate, region: RegionCode) -> DailyStock {
        DailyStock {
            date,
            region,
            residents: 0,
            non_residents: 0,
            unknown: 0,
            total_active: 0,
        }
    }

    pub fn sum_invariant_holds(&self) -> bool {
        self.residents + self.non_residents + self.unknown == self.total_active
    }
}

/// Raw event volume for one (date, region) — events, not distinct users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeRecord {
    pub date: NaiveDate,
    pub region: RegionCode,
    pub total_events: u64,
}

/// Per-class rates after dividing a stock by the day's event volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedRates {
    pub resident_rate: f64,
    pub non_resident_rate: f64,
    pub unknown_rate: f64,
}

/// Distinct users with at least one event in (date, region).
pub fn daily_active_users<'a>(
    events: impl IntoIterator<Item = &'a ResolvedEvent>,
    date: NaiveDate,
    region: &RegionCode,
) -> BTreeSet<String> {
    events
        .into_iter()
        .filter(|e| e.local_date == date && &e.region == region)
        .map(|e| e.user_id.clone())
        .collect()
}

/// Classify a day's active users against their home assignments. Users
/// absent from the map count as unknown.
pub fn compute_daily_stock(
    actives: &BTreeSet<String>,
    date: NaiveDate,
    region: &RegionCode,
    homes: &HashMap<String, HomeAssignment>,
) -> DailyStock {
    let mut stock = DailyStock::empty(date, region.clone());
    for user in actives {
        stock.total_active += 1;
        match homes.get(user).map(|h| &h.status) {
            Some(HomeStatus::Resident(home)) if home == region => stock.residents += 1,
            Some(HomeStatus::Resident(_)) => stock.non_residents += 1,
            Some(HomeStatus::Unknown(_)) | None => stock.unknown += 1,
        }
    }
    debug_assert!(stock.sum_invariant_holds());
    stock
}

/// Componentwise sum of two partial stocks for the same (date, region)
/// computed over disjoint user shards. Disjointness is not detectable from
/// the counts alone and stays a caller obligation.
pub fn merge_partial_stocks(a: &DailyStock, b: &DailyStock) -> Result<DailyStock, StocksError> {
    if a.date != b.date || a.region != b.region {
        return Err(StocksError::KeyMismatch {
            a_date: a.date,
            a_region: a.region.clone(),
            b_date: b.date,
            b_region: b.region.clone(),
        });
    }
    let merged = DailyStock {
        date: a.date,
        region: a.region.clone(),
        residents: a.residents + b.residents,
        non_residents: a.non_residents + b.non_residents,
        unknown: a.unknown + b.unknown,
        total_active: a.total_active + b.total_active,
    };
    debug_assert!(merged.sum_invariant_holds());
    Ok(merged)
}

/// Divide a stock by the day's total event volume. `Ok(None)` marks the
/// undefined case of zero volume; rates are never silently reported as 0.
pub fn normalize_by_volume(
    stock: &DailyStock,
    volume: &VolumeRecord,
) -> Result<Option<NormalizedRates>, StocksError> {
    if stock.date != volume.date || stock.region != volume.region {
        return Err(StocksError::MismatchedKey {
            s_date: stock.date,
            s_region: stock.region.clone(),
            v_date: volume.date,
            v_region: volume.region.clone(),
        });
    }
    if volume.total_events == 0 {
        return Ok(None);
    }
    let total = volume.total_events as f64;
    Ok(Some(NormalizedRates {
        resident_rate: stock.residents as f64 / total,
        non_resident_rate: stock.non_residents as f64 / total,
        unknown_rate: stock.unknown as f64 / total,
    }))
}

pub const STOCKS_HEADER: &str = "date,region_code,residents,non_residents,unknown,total_active";

/// Write stocks sorted by (date, region code); output is bit-exact across
/// runs for identical input.
pub fn write_stocks_csv<'a>(
    mut writer: impl io::Write,
    stocks: impl IntoIterator<Item = &'a DailyStock>,
) -> io::Result<()> {
    let mut rows: Vec<&DailyStock> = stocks.into_iter().collect();
    rows.sort_by(|a, b| (a.date, &a.region).cmp(&(b.date, &b.region)));
    writeln!(writer, "{STOCKS_HEADER}")?;
    for s in rows {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            s.date, s.region, s.residents, s.non_residents, s.unknown, s.total_active
        )?;
    }
    Ok(())
}

pub fn read_stocks_csv(reader: impl io::Read) -> Result<Vec<DailyStock>, StocksError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let expected = [
        "date",
        "region_code",
        "residents",
        "non_residents",
        "unknown",
        "total_active",
    ];
    let headers = rdr.headers()?;
    if !headers.iter().eq(expected.iter().copied()) {
        return Err(StocksError::BadHeader {
            expected: STOCKS_HEADER,
            got: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut stocks = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| StocksError::BadRecord { line, reason };
        if record.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", record.len())));
        }
        let date: NaiveDate = record[0]
            .parse()
            .map_err(|_| bad(format!("bad date {:?}", &record[0])))?;
        let region = RegionCode::new(&record[1]).map_err(|e| bad(e.to_string()))?;
        let parse_count = |i: usize| -> Result<u64, StocksError> {
            record[i]
                .parse()
                .map_err(|_| bad(format!("bad count {:?}", &record[i])))
        };
        let stock = DailyStock {
            date,
            region,
            residents: parse_count(2)?,
            non_residents: parse_count(3)?,
            unknown: parse_count(4)?,
            total_active: parse_count(5)?,
        };
        if !stock.sum_invariant_holds() {
            return Err(bad("class counts do not sum to total_active".into()));
        }
        stocks.push(stock);
    }
    Ok(stocks)
}

pub const VOLUME_HEADER: &str = "date,region_code,total_events";

pub fn write_volume_csv<'a>(
    mut writer: impl io::Write,
    volumes: impl IntoIterator<Item = &'a VolumeRecord>,
) -> io::Result<()> {
    let mut rows: Vec<&VolumeRecord> = volumes.into_iter().collect();
    rows.sort_by(|a, b| (a.date, &a.region).cmp(&(b.date, &b.region)));
    writeln!(writer, "{VOLUME_HEADER}")?;
    for v in rows {
        writeln!(writer, "{},{},{}", v.date, v.region, v.total_events)?;
    }
    Ok(())
}
