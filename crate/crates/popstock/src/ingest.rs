//! Parsing of geotagged event records and their resolution to a region code
//! and local calendar date.
//!
//! Events arrive as comma-separated rows
//! `event_id,user_id,timestamp_utc,lon,lat,place_id` with empty strings for
//! absent fields; exactly one of the coordinate pair / place id must be
//! present. Parsing is strictly per-record: a bad row yields a
//! [`RecordError`] carrying its line number and never aborts the stream.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Utc};
use thiserror::Error;

use crate::regions::{RegionCode, RegionSet};

pub const EVENTS_HEADER: &str = "event_id,user_id,timestamp_utc,lon,lat,place_id";
pub const PLACES_HEADER: &str = "place_id,region_code,precision";

const EVENT_FIELDS: [&str; 6] = [
    "event_id",
    "user_id",
    "timestamp_utc",
    "lon",
    "lat",
    "place_id",
];

/// Stream-level failures. Per-record problems are [`RecordError`]s instead.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad header: expected {expected:?}, got {got:?}")]
    BadHeader { expected: &'static str, got: String },
    #[error("duplicate place id {0:?}")]
    DuplicatePlace(String),
    #[error("bad place record on line {line}: {reason}")]
    BadPlaceRecord { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where an event was tagged: a coordinate pair or a reference into the
/// place registry.
#[derive(Debug, Clone, PartialEq)]
pub enum Geotag {
    Point { lon: f64, lat: f64 },
    Place(String),
}

/// One geotagged record, before region resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEvent {
    pub event_id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub geotag: Geotag,
}

/// Spatial precision of a registered place. Only entries finer than state
/// level can stand in for a county.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Point,
    City,
    County,
    State,
    Country,
}

impl Precision {
    pub fn county_resolvable(self) -> bool {
        !matches!(self, Precision::State | Precision::Country)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Point => "point",
            Precision::City => "city",
            Precision::County => "county",
            Precision::State => "state",
            Precision::Country => "country",
        }
    }
}

impl FromStr for Precision {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "point" => Ok(Precision::Point),
            "city" => Ok(Precision::City),
            "county" => Ok(Precision::County),
            "state" => Ok(Precision::State),
            "country" => Ok(Precision::Country),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceEntry {
    pub region: RegionCode,
    pub precision: Precision,
}

/// Maps externally-defined place ids to region codes. Kept outside the
/// engine so the semantics of upstream place tags stay data, not code.
#[derive(Debug, Clone, Default)]
pub struct PlaceRegistry {
    entries: HashMap<String, PlaceEntry>,
}

impl PlaceRegistry {
    pub fn new() -> PlaceRegistry {
        PlaceRegistry::default()
    }

    pub fn insert(
        &mut self,
        place_id: impl Into<String>,
        region: RegionCode,
        precision: Precision,
    ) -> Result<(), IngestError> {
        let place_id = place_id.into();
        if self.entries.contains_key(&place_id) {
            return Err(IngestError::DuplicatePlace(place_id));
        }
        self.entries
            .insert(place_id, PlaceEntry { region, precision });
        Ok(())
    }

    pub fn get(&self, place_id: &str) -> Option<&PlaceEntry> {
        self.entries.get(place_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PlaceEntry)> {
        self.entries.iter().map(|(id, entry)| (id.as_str(), entry))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load from a `place_id,region_code,precision` CSV.
    pub fn from_csv(reader: impl io::Read) -> Result<PlaceRegistry, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        check_header(&mut rdr, &["place_id", "region_code", "precision"], PLACES_HEADER)?;
        let mut registry = PlaceRegistry::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |reason: String| IngestError::BadPlaceRecord { line, reason };
            if record.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", record.len())));
            }
            let region = RegionCode::new(&record[1])
                .map_err(|e| bad(e.to_string()))?;
            let precision = record[2]
                .parse::<Precision>()
                .map_err(|()| bad(format!("unknown precision {:?}", &record[2])))?;
            registry.insert(&record[0], region, precision)?;
        }
        Ok(registry)
    }
}

/// An event after resolution: who, where (region), and on which local day.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEvent {
    pub user_id: String,
    pub region: RegionCode,
    pub local_date: NaiveDate,
    pub timestamp: DateTime<Utc>,
}

/// A rejected input row: the 1-based line number and what was wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    pub line: u64,
    pub kind: RecordErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordErrorKind {
    MissingField(&'static str),
    BadTimestamp(String),
    BadCoordinate(String),
    BothGeotagsPresent,
    NoGeotag,
    Malformed(String),
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: ", self.line)?;
        match &self.kind {
            RecordErrorKind::MissingField(field) => write!(f, "missing field {field}"),
            RecordErrorKind::BadTimestamp(ts) => write!(f, "bad timestamp {ts:?}"),
            RecordErrorKind::BadCoordinate(c) => write!(f, "bad coordinate {c:?}"),
            RecordErrorKind::BothGeotagsPresent => {
                write!(f, "both coordinates and place id present")
            }
            RecordErrorKind::NoGeotag => write!(f, "no geotag"),
            RecordErrorKind::Malformed(reason) => write!(f, "{reason}"),
        }
    }
}

/// Streaming reader over an events CSV; each row becomes exactly one
/// `Ok(GeoEvent)` or one `Err(RecordError)`.
pub struct EventReader<R: io::Read> {
    inner: csv::StringRecordsIntoIter<R>,
}

/// Open an events stream, validating the header. Records are parsed lazily.
pub fn parse_events<R: io::Read>(reader: R) -> Result<EventReader<R>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(&mut rdr, &EVENT_FIELDS, EVENTS_HEADER)?;
    Ok(EventReader {
        inner: rdr.into_records(),
    })
}

fn check_header<R: io::Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    expected_str: &'static str,
) -> Result<(), IngestError> {
    let headers = rdr.headers()?;
    if !headers.iter().eq(expected.iter().copied()) {
        return Err(IngestError::BadHeader {
            expected: expected_str,
            got: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

impl<R: io::Read> Iterator for EventReader<R> {
    type Item = Result<GeoEvent, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.inner.next()?;
        Some(match record {
            Ok(record) => parse_record(&record),
            Err(e) => {
                let line = e
                    .position()
                    .map_or(0, |p| p.line());
                Err(RecordError {
                    line,
                    kind: RecordErrorKind::Malformed(e.to_string()),
                })
            }
        })
    }
}

fn parse_record(record: &csv::StringRecord) -> Result<GeoEvent, RecordError> {
    let line = record.position().map_or(0, |p| p.line());
    let err = |kind| RecordError { line, kind };

    if record.len() < EVENT_FIELDS.len() {
        return Err(err(RecordErrorKind::MissingField(
            EVENT_FIELDS[record.len()],
        )));
    }
    if record.len() > EVENT_FIELDS.len() {
        return Err(err(RecordErrorKind::Malformed(format!(
            "expected 6 fields, got {}",
            record.len()
        ))));
    }

    let event_id = &record[0];
    if event_id.is_empty() {
        return Err(err(RecordErrorKind::MissingField("event_id")));
    }
    let user_id = &record[1];
    if user_id.is_empty() {
        return Err(err(RecordErrorKind::MissingField("user_id")));
    }
    let ts = &record[2];
    if ts.is_empty() {
        return Err(err(RecordErrorKind::MissingField("timestamp_utc")));
    }
    let timestamp = parse_timestamp(ts)
        .ok_or_else(|| err(RecordErrorKind::BadTimestamp(ts.to_owned())))?;

    let lon = &record[3];
    let lat = &record[4];
    let place = &record[5];

    let geotag = match (lon.is_empty(), lat.is_empty(), place.is_empty()) {
        (true, true, true) => return Err(err(RecordErrorKind::NoGeotag)),
        (true, true, false) => Geotag::Place(place.to_owned()),
        (false, false, false) => return Err(err(RecordErrorKind::BothGeotagsPresent)),
        (false, false, true) => {
            let lon: f64 = lon
                .parse()
                .map_err(|_| err(RecordErrorKind::BadCoordinate(lon.to_owned())))?;
            let lat: f64 = lat
                .parse()
                .map_err(|_| err(RecordErrorKind::BadCoordinate(lat.to_owned())))?;
            if !(-180.0..=180.0).contains(&lon) {
                return Err(err(RecordErrorKind::BadCoordinate(format!("lon {lon}"))));
            }
            if !(-90.0..=90.0).contains(&lat) {
                return Err(err(RecordErrorKind::BadCoordinate(format!("lat {lat}"))));
            }
            Geotag::Point { lon, lat }
        }
        (false, true, _) => return Err(err(RecordErrorKind::MissingField("lat"))),
        (true, false, _) => return Err(err(RecordErrorKind::MissingField("lon"))),
    };

    Ok(GeoEvent {
        event_id: event_id.to_owned(),
        user_id: user_id.to_owned(),
        timestamp,
        geotag,
    })
}

/// Strict `YYYY-MM-DDTHH:MM:SSZ`; seconds precision, UTC only.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
        .ok()
        .map(|naive| naive.and_utc())
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Why an otherwise well-formed event could not be attributed to a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unresolvable {
    /// Point geotag outside every loaded region.
    NoContainingRegion,
    /// Place id absent from the registry.
    UnknownPlace,
    /// Place registered at state/country precision; too coarse for
    /// county-level analysis.
    CoarsePlace,
}

impl fmt::Display for Unresolvable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unresolvable::NoContainingRegion => "no_containing_region",
            Unresolvable::UnknownPlace => "unknown_place",
            Unresolvable::CoarsePlace => "coarse_place",
        })
    }
}

/// Resolve one event to a region and local date. Pure: identical inputs
/// always produce identical outputs.
pub fn resolve_event(
    event: &GeoEvent,
    set: &RegionSet,
    places: &PlaceRegistry,
    utc_offset_minutes: i32,
) -> Result<ResolvedEvent, Unresolvable> {
    let region = match &event.geotag {
        Geotag::Point { lon, lat } => match set.locate_point(*lon, *lat) {
            Ok(Some(code)) => code.clone(),
            // Out-of-range coordinates cannot come from `parse_events`;
            // for hand-built events they are simply not contained.
            Ok(None) | Err(_) => return Err(Unresolvable::NoContainingRegion),
        },
        Geotag::Place(place_id) => match places.get(place_id) {
            None => return Err(Unresolvable::UnknownPlace),
            Some(entry) if !entry.precision.county_resolvable() => {
                return Err(Unresolvable::CoarsePlace)
            }
            Some(entry) => entry.region.clone(),
        },
    };
    Ok(ResolvedEvent {
        user_id: event.user_id.clone(),
        region,
        local_date: local_date(event.timestamp, utc_offset_minutes),
        timestamp: event.timestamp,
    })
}

/// Shift a UTC instant by the dataset-wide offset and truncate to a date.
pub fn local_date(timestamp: DateTime<Utc>, utc_offset_minutes: i32) -> NaiveDate {
    (timestamp + Duration::minutes(i64::from(utc_offset_minutes))).date_naive()
}
