//! Region boundaries, a read-only spatial index, and deterministic
//! point-to-region queries.
//!
//! Boundary data is a GeoJSON feature collection; every feature carries a
//! `code` property (county FIPS or country code), an optional `name`, and an
//! optional `group` naming a metro-equivalence group. Containment is
//! boundary-inclusive even-odd on planar lon/lat; when several regions
//! contain a point the lexicographically smallest code wins, which makes
//! `locate_point` deterministic regardless of index layout or thread count.

mod geometry;

pub use geometry::{Bbox, MultiPolygon, Polygon, Ring};

use std::collections::HashMap;
use std::fmt;
use std::io;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("malformed geometry in feature {feature}: {reason}")]
    MalformedGeometry { feature: usize, reason: String },
    #[error("duplicate region code {0:?}")]
    DuplicateCode(String),
    #[error("feature {feature} is missing the `code` property")]
    MissingCodeProperty { feature: usize },
    #[error("invalid region code {code:?}: {reason}")]
    InvalidCode { code: String, reason: &'static str },
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    CoordinateOutOfRange { lon: f64, lat: f64 },
    #[error("boundary document: {0}")]
    Document(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identifier of a region: a 5-digit county FIPS code ("45079") or a
/// two-letter country code ("FR"). Synthetic fixtures use free-form tokens,
/// so the type only enforces what every interchange format here needs: a
/// non-empty token without delimiters. [`RegionCode::syntax`] classifies the
/// two production syntaxes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionCode(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeSyntax {
    CountyFips,
    CountryAlpha2,
    Other,
}

impl RegionCode {
    pub fn new(code: impl Into<String>) -> Result<RegionCode, RegionError> {
        let code = code.into();
        if code.is_empty() {
            return Err(RegionError::InvalidCode {
                code,
                reason: "empty",
            });
        }
        if code
            .chars()
            .any(|c| c == ',' || c == '"' || c.is_whitespace() || c.is_control())
        {
            return Err(RegionError::InvalidCode {
                code,
                reason: "contains a delimiter or whitespace",
            });
        }
        Ok(RegionCode(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn syntax(&self) -> CodeSyntax {
        let bytes = self.0.as_bytes();
        if bytes.len() == 5 && bytes.iter().all(u8::is_ascii_digit) {
            CodeSyntax::CountyFips
        } else if bytes.len() == 2 && bytes.iter().all(u8::is_ascii_uppercase) {
            CodeSyntax::CountryAlpha2
        } else {
            CodeSyntax::Other
        }
    }
}

impl fmt::Display for RegionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for RegionCode {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A polygonal territory with its code, display name, and optional
/// metro-equivalence group.
#[derive(Debug, Clone)]
pub struct Region {
    code: RegionCode,
    name: Option<String>,
    group: Option<String>,
    geometry: MultiPolygon,
}

impl Region {
    pub fn new(
        code: RegionCode,
        name: Option<String>,
        group: Option<String>,
        geometry: MultiPolygon,
    ) -> Region {
        Region {
            code,
            name,
            group,
            geometry,
        }
    }

    pub fn code(&self) -> &RegionCode {
        &self.code
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn group(&self) -> Option<&str> {
        self.group.as_deref()
    }

    pub fn geometry(&self) -> &MultiPolygon {
        &self.geometry
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.geometry.contains(lon, lat)
    }
}

/// Supported boundary interchange formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFormat {
    GeoJson,
}

/// An immutable set of regions with a bounding-box index (one entry per
/// polygon ring). Safe for unlimited concurrent readers after load.
#[derive(Debug, Clone)]
pub struct RegionSet {
    regions: Vec<Region>,
    by_code: HashMap<String, u32>,
    index: Vec<(Bbox, u32)>,
}

impl RegionSet {
    pub fn from_regions(regions: Vec<Region>) -> Result<RegionSet, RegionError> {
        let mut by_code = HashMap::with_capacity(regions.len());
        for (i, region) in regions.iter().enumerate() {
            if by_code
                .insert(region.code.as_str().to_owned(), i as u32)
                .is_some()
            {
                return Err(RegionError::DuplicateCode(region.code.as_str().to_owned()));
            }
        }
        let mut index = Vec::new();
        for (i, region) in regions.iter().enumerate() {
            for ring in region.geometry.rings() {
                index.push((ring.bbox(), i as u32));
            }
        }
        Ok(RegionSet {
            regions,
            by_code,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter()
    }

    pub fn get(&self, code: &RegionCode) -> Option<&Region> {
        self.get_by_str(code.as_str())
    }

    pub fn get_by_str(&self, code: &str) -> Option<&Region> {
        self.by_code
            .get(code)
            .map(|&i| &self.regions[i as usize])
    }

    /// Region→group pairs for every region that has a group, keyed by code.
    pub fn group_map(&self) -> HashMap<RegionCode, String> {
        self.regions
            .iter()
            .filter_map(|r| r.group.clone().map(|g| (r.code.clone(), g)))
            .collect()
    }

    /// Regions whose ring bounding boxes contain the point, deduplicated.
    /// Superset of the containment answer; pruning only.
    pub fn candidates(&self, lon: f64, lat: f64) -> Vec<&Region> {
        let mut seen: Vec<u32> = Vec::new();
        for &(bbox, idx) in &self.index {
            if bbox.contains(lon, lat) && !seen.contains(&idx) {
                seen.push(idx);
            }
        }
        seen.into_iter()
            .map(|i| &self.regions[i as usize])
            .collect()
    }

    /// The region containing the point, or `None`. Boundary counts as
    /// contained; overlaps resolve to the lexicographically smallest code.
    pub fn locate_point(&self, lon: f64, lat: f64) -> Result<Option<&RegionCode>, RegionError> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(RegionError::CoordinateOutOfRange { lon, lat });
        }
        Ok(self.locate_index(lon, lat).map(|i| &self.regions[i as usize].code))
    }

    /// Index of the containing region; skips the range check, so callers
    /// must validate coordinates first.
    pub(crate) fn locate_index(&self, lon: f64, lat: f64) -> Option<u32> {
        let mut evaluated: Vec<u32> = Vec::new();
        let mut best: Option<u32> = None;
        for &(bbox, idx) in &self.index {
            if !bbox.contains(lon, lat) || evaluated.contains(&idx) {
                continue;
            }
            evaluated.push(idx);
            if !self.regions[idx as usize].geometry.contains(lon, lat) {
                continue;
            }
            best = match best {
                None => Some(idx),
                Some(b) if self.regions[idx as usize].code < self.regions[b as usize].code => {
                    Some(idx)
                }
                keep => keep,
            };
        }
        best
    }

    #[cfg(test)]
    pub(crate) fn index_entries(&self) -> usize {
        self.index.len()
    }
}

/// Load a region set from a boundary document. The load has no side effects
/// and is repeatable: the same bytes produce the same set.
pub fn load_regions(
    reader: impl io::Read,
    format: BoundaryFormat,
) -> Result<RegionSet, RegionError> {
    match format {
        BoundaryFormat::GeoJson => {
            let doc: Value = serde_json::from_reader(reader)?;
            parse_feature_collection(&doc)
        }
    }
}

fn parse_feature_collection(doc: &Value) -> Result<RegionSet, RegionError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| RegionError::Document("root is not an object".into()))?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(RegionError::Document(
            "expected a FeatureCollection".into(),
        ));
    }
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| RegionError::Document("missing `features` array".into()))?;

    let mut regions = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        regions.push(parse_feature(i, feature)?);
    }
    RegionSet::from_regions(regions)
}

fn parse_feature(i: usize, feature: &Value) -> Result<Region, RegionError> {
    let props = feature.get("properties").and_then(Value::as_object);
    let code = props
        .and_then(|p| p.get("code"))
        .and_then(Value::as_str)
        .ok_or(RegionError::MissingCodeProperty { feature: i })?;
    let code = RegionCode::new(code)?;
    let name = props
        .and_then(|p| p.get("name"))
        .and_then(Value::as_str)
        .map(str::to_owned);
    let group = props
        .and_then(|p| p.get("group"))
        .and_then(Value::as_str)
        .map(str::to_owned);

    let malformed = |reason: &str| RegionError::MalformedGeometry {
        feature: i,
        reason: reason.to_owned(),
    };

    let geometry = feature
        .get("geometry")
        .filter(|g| !g.is_null())
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("missing geometry"))?;
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| malformed("missing coordinates"))?;

    let polygons = match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords).map_err(|e| malformed(e))?],
        Some("MultiPolygon") => {
            let arr = coords
                .as_array()
                .ok_or_else(|| malformed("coordinates is not an array"))?;
            let mut polys = Vec::with_capacity(arr.len());
            for p in arr {
                polys.push(parse_polygon(p).map_err(|e| malformed(e))?);
            }
            polys
        }
        other => {
            return Err(malformed(&format!(
                "unsupported geometry type {:?}",
                other.unwrap_or("<none>")
            )))
        }
    };

    let geometry = MultiPolygon::new(polygons).map_err(malformed)?;
    Ok(Region::new(code, name, group, geometry))
}

fn parse_polygon(coords: &Value) -> Result<Polygon, &'static str> {
    let rings_json = coords.as_array().ok_or("polygon is not an array of rings")?;
    let mut rings = Vec::with_capacity(rings_json.len());
    for ring_json in rings_json {
        let positions = ring_json.as_array().ok_or("ring is not an array")?;
        let mut points = Vec::with_capacity(positions.len());
        for pos in positions {
            let pair = pos.as_array().ok_or("position is not an array")?;
            if pair.len() < 2 {
                return Err("position has fewer than 2 coordinates");
            }
            let lon = pair[0].as_f64().ok_or("longitude is not a number")?;
            let lat = pair[1].as_f64().ok_or("latitude is not a number")?;
            points.push((lon, lat));
        }
        rings.push(Ring::new(points)?);
    }
    Polygon::new(rings)
}

/// Serialize a region set back to a GeoJSON feature collection. Feature
/// order follows the set's load order, so output is deterministic.
pub fn write_geojson(set: &RegionSet, mut writer: impl io::Write) -> io::Result<()> {
    let mut features = Vec::with_capacity(set.len());
    for region in set.iter() {
        let mut props = serde_json::Map::new();
        props.insert("code".into(), Value::String(region.code.as_str().into()));
        if let Some(name) = region.name() {
            props.insert("name".into(), Value::String(name.into()));
        }
        if let Some(group) = region.group() {
            props.insert("group".into(), Value::String(group.into()));
        }

        let polys: Vec<Value> = region
            .geometry
            .polygons()
            .iter()
            .map(|p| {
                Value::Array(
                    p.rings()
                        .iter()
                        .map(|r| {
                            Value::Array(
                                r.points()
                                    .iter()
                                    .map(|&(x, y)| Value::Array(vec![x.into(), y.into()]))
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect();

        let mut geometry = serde_json::Map::new();
        geometry.insert("type".into(), Value::String("MultiPolygon".into()));
        geometry.insert("coordinates".into(), Value::Array(polys));

        let mut feature = serde_json::Map::new();
        feature.insert("type".into(), Value::String("Feature".into()));
        feature.insert("properties".into(), Value::Object(props));
        feature.insert("geometry".into(), Value::Object(geometry));
        features.push(Value::Object(feature));
    }

    let mut doc = serde_json::Map::new();
    doc.insert("type".into(), Value::String("FeatureCollection".into()));
    doc.insert("features".into(), Value::Array(features));

    serde_json::to_writer(&mut writer, &Value::Object(doc))?;
    writer.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_feature(code: &str, x0: f64, y0: f64, size: f64) -> String {
        format!(
            r#"{{"type":"Feature","properties":{{"code":"{code}"}},"geometry":{{"type":"Polygon","coordinates":[[[{x0},{y0}],[{x1},{y0}],[{x1},{y1}],[{x0},{y1}],[{x0},{y0}]]]}}}}"#,
            code = code,
            x0 = x0,
            y0 = y0,
            x1 = x0 + size,
            y1 = y0 + size,
        )
    }

    fn collection(features: &[String]) -> String {
        format!(
            r#"{{"type":"FeatureCollection","features":[{}]}}"#,
            features.join(",")
        )
    }

    fn load(doc: &str) -> Result<RegionSet, RegionError> {
        load_regions(doc.as_bytes(), BoundaryFormat::GeoJson)
    }

    #[test]
    fn single_region_loads() {
        let set = load(&collection(&[square_feature("A", 0.0, 0.0, 1.0)])).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.iter().next().unwrap().code().as_str(), "A");
    }

    #[test]
    fn duplicate_code_rejected() {
        let doc = collection(&[
            square_feature("45079", 0.0, 0.0, 1.0),
            square_feature("45079", 2.0, 0.0, 1.0),
        ]);
        match load(&doc) {
            Err(RegionError::DuplicateCode(code)) => assert_eq!(code, "45079"),
            other => panic!("expected DuplicateCode, got {other:?}"),
        }
    }

    #[test]
    fn missing_code_rejected() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"name":"x"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}}]}"#;
        assert!(matches!(
            load(doc),
            Err(RegionError::MissingCodeProperty { feature: 0 })
        ));
    }

    #[test]
    fn open_ring_rejected() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"code":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}}]}"#;
        match load(doc) {
            Err(RegionError::MalformedGeometry { feature: 0, reason }) => {
                assert!(reason.contains("not closed"), "{reason}");
            }
            other => panic!("expected MalformedGeometry, got {other:?}"),
        }
    }

    #[test]
    fn short_ring_rejected() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"code":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,0]]]}}]}"#;
        assert!(matches!(
            load(doc),
            Err(RegionError::MalformedGeometry { feature: 0, .. })
        ));
    }

    #[test]
    fn locate_interior_exterior() {
        let set = load(&collection(&[square_feature("A", 0.0, 0.0, 1.0)])).unwrap();
        assert_eq!(set.locate_point(0.5, 0.5).unwrap().unwrap().as_str(), "A");
        assert_eq!(set.locate_point(2.0, 2.0).unwrap(), None);
    }

    #[test]
    fn shared_edge_tie_breaks_to_smaller_code() {
        // "A" spans x in [0,1], "B" spans x in [1,2]; both own the edge x=1.
        let set = load(&collection(&[
            square_feature("B", 1.0, 0.0, 1.0),
            square_feature("A", 0.0, 0.0, 1.0),
        ]))
        .unwrap();
        let a = set.get_by_str("A").unwrap();
        let b = set.get_by_str("B").unwrap();
        assert!(a.contains(1.0, 0.5) && b.contains(1.0, 0.5));
        assert_eq!(set.locate_point(1.0, 0.5).unwrap().unwrap().as_str(), "A");
    }

    #[test]
    fn coordinate_out_of_range() {
        let set = load(&collection(&[square_feature("A", 0.0, 0.0, 1.0)])).unwrap();
        assert!(matches!(
            set.locate_point(200.0, 0.0),
            Err(RegionError::CoordinateOutOfRange { .. })
        ));
        assert!(matches!(
            set.locate_point(0.0, 91.0),
            Err(RegionError::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn county_sized_set_prunes() {
        let features: Vec<String> = (0..46)
            .map(|i| {
                let x = (i % 7) as f64 * 2.0;
                let y = (i / 7) as f64 * 2.0;
                square_feature(&format!("45{:03}", i * 2 + 1), x, y, 1.0)
            })
            .collect();
        let set = load(&collection(&features)).unwrap();
        assert_eq!(set.len(), 46);
        assert_eq!(set.index_entries(), 46);
        assert!(set.candidates(0.5, 0.5).len() <= 46);
        assert_eq!(set.candidates(0.5, 0.5).len(), 1);
    }

    #[test]
    fn multipolygon_and_group_load() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"code":"45079","name":"Richland","group":"columbia-metro"},"geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,1],[0,0]]],[[[3,3],[4,3],[4,4],[3,4],[3,3]]]]}}]}"#;
        let set = load(doc).unwrap();
        let region = set.get_by_str("45079").unwrap();
        assert_eq!(region.name(), Some("Richland"));
        assert_eq!(region.group(), Some("columbia-metro"));
        assert!(region.contains(0.5, 0.5));
        assert!(region.contains(3.5, 3.5));
        assert!(!region.contains(2.0, 2.0));
    }

    #[test]
    fn geojson_round_trip_is_deterministic() {
        let set = load(&collection(&[
            square_feature("A", 0.0, 0.0, 1.0),
            square_feature("B", 1.0, 0.0, 1.0),
        ]))
        .unwrap();
        let mut first = Vec::new();
        write_geojson(&set, &mut first).unwrap();
        let reloaded = load_regions(first.as_slice(), BoundaryFormat::GeoJson).unwrap();
        let mut second = Vec::new();
        write_geojson(&reloaded, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(reloaded.len(), 2);
    }

    #[test]
    fn region_set_is_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<RegionSet>();
    }

    #[test]
    fn code_syntax_classification() {
        assert_eq!(
            RegionCode::new("45079").unwrap().syntax(),
            CodeSyntax::CountyFips
        );
        assert_eq!(
            RegionCode::new("FR").unwrap().syntax(),
            CodeSyntax::CountryAlpha2
        );
        assert_eq!(RegionCode::new("A").unwrap().syntax(), CodeSyntax::Other);
        assert!(RegionCode::new("").is_err());
        assert!(RegionCode::new("a,b").is_err());
    }

    /// Brute-force linear scan with the same containment + tie-break rule.
    fn locate_brute_force<'a>(set: &'a RegionSet, lon: f64, lat: f64) -> Option<&'a RegionCode> {
        set.iter()
            .filter(|r| r.contains(lon, lat))
            .map(Region::code)
            .min()
    }

    proptest! {
        /// Index pruning never changes the answer relative to a full scan.
        #[test]
        fn indexed_lookup_matches_linear_scan(
            lon in -4.0f64..8.0,
            lat in -4.0f64..8.0,
            n_cols in 1usize..4,
            n_rows in 1usize..4,
            overlap in proptest::bool::ANY,
        ) {
            let size = if overlap { 1.5 } else { 1.0 };
            let mut features = Vec::new();
            for r in 0..n_rows {
                for c in 0..n_cols {
                    features.push(square_feature(
                        &format!("R{:02}", r * n_cols + c),
                        c as f64,
                        r as f64,
                        size,
                    ));
                }
            }
            let set = load(&collection(&features)).unwrap();
            let indexed = set.locate_point(lon, lat).unwrap();
            let brute = locate_brute_force(&set, lon, lat);
            prop_assert_eq!(indexed, brute);
        }
    }
}
