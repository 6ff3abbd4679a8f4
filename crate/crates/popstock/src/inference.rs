//! Per-user region histograms over a study window and modal home-location
//! inference.
//!
//! A user's home region is the strictly most frequent region among their
//! observations in the window. Users with fewer than two observations, or
//! with two or more regions tied at the maximum, get no home (`Unknown`).
//! An optional n-day collapse counts at most one observation per
//! (region, n-day bucket), damping burst activity.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::ResolvedEvent;
use crate::regions::RegionCode;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid window: start {start} is after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("bad homes record on line {line}: {reason}")]
    BadHomesRecord { line: u64, reason: String },
    #[error("bad header: expected {expected:?}, got {got:?}")]
    BadHeader { expected: &'static str, got: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Inclusive date span over which histograms are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    start: NaiveDate,
    end: NaiveDate,
}

impl StudyWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<StudyWindow, InferenceError> {
        if start > end {
            return Err(InferenceError::InvalidWindow { start, end });
        }
        Ok(StudyWindow { start, end })
    }

    /// January 1 through December 31 of one year (the batch default).
    pub fn calendar_year(year: i32) -> StudyWindow {
        StudyWindow {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }

    /// The `days`-long window ending the day before `as_of` (streaming
    /// mode's one-day lag).
    pub fn trailing(as_of: NaiveDate, days: u32) -> StudyWindow {
        let end = as_of - chrono::Duration::days(1);
        StudyWindow {
            start: end - chrono::Duration::days(i64::from(days) - 1),
            end,
        }
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end
    }

    pub fn num_days(&self) -> u32 {
        (self.end - self.start).num_days() as u32 + 1
    }

    /// 0-based day offset within the window, `None` outside it.
    pub fn day_index(&self, date: NaiveDate) -> Option<u32> {
        self.contains(date)
            .then(|| (date - self.start).num_days() as u32)
    }

    pub fn iter_days(&self) -> impl Iterator<Item = NaiveDate> {
        self.start.iter_days().take(self.num_days() as usize)
    }
}

impl fmt::Display for StudyWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// Per-user counts of observations by region over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLocationHistogram {
    user_id: String,
    window: StudyWindow,
    counts: BTreeMap<RegionCode, u64>,
    total: u64,
}

impl UserLocationHistogram {
    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn window(&self) -> StudyWindow {
        self.window
    }

    pub fn counts(&self) -> &BTreeMap<RegionCode, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Build directly from (region, count) pairs; counts of zero are
    /// dropped. Convenient for rule-level tests.
    pub fn from_counts(
        user_id: impl Into<String>,
        window: StudyWindow,
        counts: impl IntoIterator<Item = (RegionCode, u64)>,
    ) -> UserLocationHistogram {
        let mut map = BTreeMap::new();
        for (region, count) in counts {
            if count > 0 {
                *map.entry(region).or_insert(0) += count;
            }
        }
        let total = map.values().sum();
        UserLocationHistogram {
            user_id: user_id.into(),
            window,
            counts: map,
            total,
        }
    }
}

/// Why no home region could be assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownReason {
    /// Fewer than two observations in the window.
    InsufficientHistory,
    /// Two or more regions tied at the maximum count.
    TiedMode,
}

impl UnknownReason {
    pub fn as_str(self) -> &'static str {
        match self {
            UnknownReason::InsufficientHistory => "insufficient_history",
            UnknownReason::TiedMode => "tied_mode",
        }
    }
}

impl FromStr for UnknownReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "insufficient_history" => Ok(UnknownReason::InsufficientHistory),
            "tied_mode" => Ok(UnknownReason::TiedMode),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HomeStatus {
    Resident(RegionCode),
    Unknown(UnknownReason),
}

/// The verdict for one user: home region or unknown, plus the mode count
/// and observation total the verdict was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeAssignment {
    pub user_id: String,
    pub status: HomeStatus,
    pub mode_count: u64,
    pub total_observations: u64,
}

impl HomeAssignment {
    pub fn home_region(&self) -> Option<&RegionCode> {
        match &self.status {
            HomeStatus::Resident(region) => Some(region),
            HomeStatus::Unknown(_) => None,
        }
    }
}

/// Reduce one user's events to countable observations.
///
/// With `n_days == 1` every in-window event is one observation. With
/// `n_days > 1` at most one observation is kept per (region, bucket), where
/// bucket `b` covers days `[start + b*n_days, start + (b+1)*n_days)` of the
/// window. Events outside the window are dropped.
pub fn collapse_observations<'a>(
    events: impl IntoIterator<Item = &'a ResolvedEvent>,
    window: StudyWindow,
    n_days: u32,
) -> Vec<RegionCode> {
    assert!(n_days >= 1, "n_days must be at least 1");
    if n_days == 1 {
        return events
            .into_iter()
            .filter(|e| window.contains(e.local_date))
            .map(|e| e.region.clone())
            .collect();
    }
    let mut seen: HashSet<(RegionCode, u32)> = HashSet::new();
    let mut observations = Vec::new();
    for event in events {
        let Some(day) = window.day_index(event.local_date) else {
            continue;
        };
        let bucket = day / n_days;
        if seen.insert((event.region.clone(), bucket)) {
            observations.push(event.region.clone());
        }
    }
    observations
}

/// Tally observations per region. Empty input yields an empty histogram
/// with total 0.
pub fn build_histogram(
    observations: impl IntoIterator<Item = RegionCode>,
    user_id: impl Into<String>,
    window: StudyWindow,
) -> UserLocationHistogram {
    let mut counts: BTreeMap<RegionCode, u64> = BTreeMap::new();
    let mut total = 0;
    for region in observations {
        *counts.entry(region).or_insert(0) += 1;
        total += 1;
    }
    UserLocationHistogram {
        user_id: user_id.into(),
        window,
        counts,
        total,
    }
}

/// Apply the home rule: fewer than two observations → unknown; a strictly
/// unique most-frequent region → resident there; a tie at the maximum →
/// unknown.
pub fn infer_home(histogram: &UserLocationHistogram) -> HomeAssignment {
    let mode_count = histogram.counts.values().copied().max().unwrap_or(0);
    let status = if histogram.total < 2 {
        HomeStatus::Unknown(UnknownReason::InsufficientHistory)
    } else {
        let mut at_max = histogram
            .counts
            .iter()
            .filter(|(_, &c)| c == mode_count)
            .map(|(region, _)| region);
        let first = at_max.next().expect("total >= 2 implies a mode");
        if at_max.next().is_some() {
            HomeStatus::Unknown(UnknownReason::TiedMode)
        } else {
            HomeStatus::Resident(first.clone())
        }
    };
    HomeAssignment {
        user_id: histogram.user_id.clone(),
        status,
        mode_count,
        total_observations: histogram.total,
    }
}

pub const HOMES_HEADER: &str = "user_id,status,region_code,mode_count,total_observations,reason";

/// Write assignments as `user_id,status,region_code,mode_count,
/// total_observations,reason`, sorted by user id.
pub fn write_homes_csv<'a>(
    mut writer: impl io::Write,
    homes: impl IntoIterator<Item = &'a HomeAssignment>,
) -> io::Result<()> {
    let mut rows: Vec<&HomeAssignment> = homes.into_iter().collect();
    rows.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    writeln!(writer, "{HOMES_HEADER}")?;
    for home in rows {
        let (status, region, reason) = match &home.status {
            HomeStatus::Resident(region) => ("resident", region.as_str(), ""),
            HomeStatus::Unknown(reason) => ("unknown", "", reason.as_str()),
        };
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            home.user_id, status, region, home.mode_count, home.total_observations, reason
        )?;
    }
    Ok(())
}

pub fn read_homes_csv(reader: impl io::Read) -> Result<Vec<HomeAssignment>, InferenceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let expected = [
        "user_id",
        "status",
        "region_code",
        "mode_count",
        "total_observations",
        "reason",
    ];
    let headers = rdr.headers()?;
    if !headers.iter().eq(expected.iter().copied()) {
        return Err(InferenceError::BadHeader {
            expected: HOMES_HEADER,
            got: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut homes = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| InferenceError::BadHomesRecord { line, reason };
        if record.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", record.len())));
        }
        let mode_count: u64 = record[3]
            .parse()
            .map_err(|_| bad(format!("bad mode_count {:?}", &record[3])))?;
        let total_observations: u64 = record[4]
            .parse()
            .map_err(|_| bad(format!("bad total_observations {:?}", &record[4])))?;
        let status = match &record[1] {
            "resident" => {
                let region = RegionCode::new(&record[2]).map_err(|e| bad(e.to_string()))?;
                HomeStatus::Resident(region)
            }
            "unknown" => {
                let reason = record[5]
                    .parse::<UnknownReason>()
                    .map_err(|()| bad(format!("unknown reason {:?}", &record[5])))?;
                HomeStatus::Unknown(reason)
            }
            other => return Err(bad(format!("unknown status {other:?}"))),
        };
        homes.push(HomeAssignment {
            user_id: record[0].to_owned(),
            status,
            mode_count,
            total_observations,
        });
    }
    Ok(homes)
}
