//! Road polylines from GeoJSON files or the Overpass API, cut into
//! normalized scenarios.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use diffroad_core::geo::{
    extract_scenario, normalize_metric, project_to_local, MetricScenario, RawRoad, RoadScenario, ScenarioType,
    ShapePoint, EARTH_RADIUS_M,
};
use diffroad_core::geometry::Point2;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const DEFAULT_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("request to {url} failed (retryable): {message}")]
    Network { url: String, message: String },
    #[error("malformed response at `{element}`: {message}")]
    Parse { element: String, message: String },
    #[error("offline and no cached response for query {key}")]
    OfflineMiss { key: String },
    #[error("invalid bounding box: {0}")]
    Bbox(String),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl Bbox {
    pub fn validate(&self) -> Result<(), IngestError> {
        let finite = [self.south, self.west, self.north, self.east].iter().all(|v| v.is_finite());
        if !finite || self.south > self.north || self.west > self.east {
            return Err(IngestError::Bbox(format!("{self:?}")));
        }
        if !(-90.0..=90.0).contains(&self.south) || !(-90.0..=90.0).contains(&self.north) {
            return Err(IngestError::Bbox(format!("latitude out of range in {self:?}")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.south >= self.north || self.west >= self.east
    }

    pub fn contains(&self, p: ShapePoint) -> bool {
        (self.south..=self.north).contains(&p.lat) && (self.west..=self.east).contains(&p.lng)
    }

    /// Square of half-side `half_extent_m` about `center`.
    pub fn around(center: ShapePoint, half_extent_m: f64) -> Self {
        let dlat = (half_extent_m / EARTH_RADIUS_M).to_degrees();
        let dlng = dlat / center.lat.to_radians().cos().max(1e-6);
        Self {
            south: center.lat - dlat,
            west: center.lng - dlng,
            north: center.lat + dlat,
            east: center.lng + dlng,
        }
    }
}

/// A labelled scenario center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    pub id: String,
    pub lat: f64,
    pub lng: f64,
    #[serde(rename = "type")]
    pub scenario_type: ScenarioType,
}

impl CenterSpec {
    pub fn point(&self) -> Result<ShapePoint, diffroad_core::Error> {
        ShapePoint::new(self.lat, self.lng)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeoInput {
    pub roads: Vec<RawRoad>,
    pub centers: Vec<CenterSpec>,
}

fn parse_err(element: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        element: element.into(),
        message: message.into(),
    }
}

fn position(v: &Value, element: &str) -> Result<ShapePoint, IngestError> {
    let arr = v.as_array().ok_or_else(|| parse_err(element, "position is not an array"))?;
    let (Some(lng), Some(lat)) = (arr.first().and_then(Value::as_f64), arr.get(1).and_then(Value::as_f64)) else {
        return Err(parse_err(element, "position needs numeric [lng, lat]"));
    };
    ShapePoint::new(lat, lng).map_err(|e| parse_err(element, e.to_string()))
}

/// FeatureCollection of `LineString` roads carrying a `highway` property and
/// `Point` centers carrying a `scenario_type` property. Other features are
/// ignored.
pub fn parse_geojson(text: &str) -> Result<GeoInput, IngestError> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("$", e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("$.type", "expected a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("$.features", "missing feature array"))?;
    let mut out = GeoInput::default();
    for (i, f) in features.iter().enumerate() {
        let el = format!("features[{i}]");
        let geom = f.get("geometry").ok_or_else(|| parse_err(&el, "missing geometry"))?;
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = f
            .get("id")
            .or_else(|| props.get("id"))
            .map(|v| v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string()))
            .unwrap_or_else(|| format!("f{i}"));
        match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => {
                let Some(class) = props.get("highway").and_then(Value::as_str) else {
                    continue;
                };
                let coords = geom
                    .get("coordinates")
                    .and_then(Value::as_array)
                    .ok_or_else(|| parse_err(format!("{el}.geometry"), "missing coordinates"))?;
                let pts = coords
                    .iter()
                    .enumerate()
                    .map(|(j, c)| position(c, &format!("{el}.geometry.coordinates[{j}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                let road = RawRoad::new(id, pts, class).map_err(|e| parse_err(&el, e.to_string()))?;
                out.roads.push(road);
            }
            Some("Point") => {
                let Some(ty) = props.get("scenario_type").and_then(Value::as_str) else {
                    continue;
                };
                let scenario_type = ScenarioType::from_name(ty)
                    .ok_or_else(|| parse_err(format!("{el}.properties.scenario_type"), format!("unknown type {ty:?}")))?;
                let p = position(
                    geom.get("coordinates").unwrap_or(&Value::Null),
                    &format!("{el}.geometry.coordinates"),
                )?;
                out.centers.push(CenterSpec {
                    id,
                    lat: p.lat,
                    lng: p.lng,
                    scenario_type,
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Blocking Overpass client with an on-disk response cache.
#[derive(Debug, Clone)]
pub struct OverpassClient {
    pub endpoint: String,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub timeout: Duration,
}

impl Default for OverpassClient {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            cache_dir: None,
            offline: false,
            timeout: Duration::from_secs(60),
        }
    }
}

pub fn overpass_query(bbox: &Bbox, classes: &[String]) -> String {
    let filter = if classes.is_empty() {
        "[\"highway\"]".to_string()
    } else {
        format!("[\"highway\"~\"^({})$\"]", classes.join("|"))
    };
    format!(
        "[out:json][timeout:60];way{filter}({},{},{},{});out geom;",
        bbox.south, bbox.west, bbox.north, bbox.east
    )
}

impl OverpassClient {
    /// Cache key: SHA-256 of endpoint and query.
    pub fn cache_key(&self, query: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.endpoint.as_bytes());
        h.update(b"\n");
        h.update(query.as_bytes());
        format!("{:x}", h.finalize())
    }

    fn raw(&self, query: &str) -> Result<String, IngestError> {
        let key = self.cache_key(query);
        let cached = self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(path) = &cached {
            if let Ok(text) = fs::read_to_string(path) {
                return Ok(text);
            }
        }
        if self.offline {
            return Err(IngestError::OfflineMiss { key });
        }
        let net = |message: String| IngestError::Network {
            url: self.endpoint.clone(),
            message,
        };
        let text = ureq::post(&self.endpoint)
            .timeout(self.timeout)
            .send_form(&[("data", query)])
            .map_err(|e| net(e.to_string()))?
            .into_string()
            .map_err(|e| net(e.to_string()))?;
        if let Some(path) = &cached {
            let io = |e: std::io::Error| IngestError::Cache {
                path: path.display().to_string(),
                message: e.to_string(),
            };
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io)?;
            }
            fs::write(path, &text).map_err(io)?;
        }
        Ok(text)
    }

    pub fn fetch_osm_roads(&self, bbox: &Bbox, classes: &[String]) -> Result<Vec<RawRoad>, IngestError> {
        bbox.validate()?;
        if bbox.is_empty() {
            return Ok(Vec::new());
        }
        let text = self.raw(&overpass_query(bbox, classes))?;
        parse_overpass(&text, bbox, classes)
    }
}

/// Ways from an Overpass `out geom` JSON response, kept when their class is
/// requested and they touch `bbox`. Each way is trimmed to its inside span
/// plus one vertex on either side.
pub fn parse_overpass(text: &str, bbox: &Bbox, classes: &[String]) -> Result<Vec<RawRoad>, IngestError> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("$", e.to_string()))?;
    let elements = root
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("$.elements", "missing element array"))?;
    let mut out = Vec::new();
    for (i, e) in elements.iter().enumerate() {
        if e.get("type").and_then(Value::as_str) != Some("way") {
            continue;
        }
        let el = format!("elements[{i}]");
        let id = e.get("id").and_then(Value::as_u64).ok_or_else(|| parse_err(format!("{el}.id"), "missing way id"))?;
        let class = e
            .pointer("/tags/highway")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(format!("{el}.tags.highway"), "missing highway tag"))?;
        if !classes.is_empty() && !classes.iter().any(|c| c == class) {
            continue;
        }
        let geom = e
            .get("geometry")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(format!("{el}.geometry"), "missing geometry"))?;
        let pts = geom
            .iter()
            .enumerate()
            .map(|(j, g)| {
                let gel = format!("{el}.geometry[{j}]");
                let (Some(lat), Some(lon)) = (g.get("lat").and_then(Value::as_f64), g.get("lon").and_then(Value::as_f64)) else {
                    return Err(parse_err(&gel, "needs numeric lat and lon"));
                };
                ShapePoint::new(lat, lon).map_err(|e| parse_err(&gel, e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let inside: Vec<usize> = (0..pts.len()).filter(|&j| bbox.contains(pts[j])).collect();
        let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
            continue;
        };
        let span = pts[first.saturating_sub(1)..(last + 2).min(pts.len())].to_vec();
        if let Ok(road) = RawRoad::new(format!("way/{id}"), span, class) {
            out.push(road);
        }
    }
    Ok(out)
}

/// Longest contiguous piece of `line` inside the square `[-h, h]^2`, with
/// the boundary crossings interpolated. `None` if no piece has length.
pub fn clip_to_window(line: &[Point2], h: f64) -> Option<Vec<Point2>> {
    // Liang-Barsky: parameter range of segment a->b inside the square.
    let clip = |a: Point2, b: Point2| -> Option<(f64, f64)> {
        let d = [b[0] - a[0], b[1] - a[1]];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for axis in 0..2 {
            for (p, q) in [(-d[axis], a[axis] + h), (d[axis], h - a[axis])] {
                if p == 0.0 {
                    if q < 0.0 {
                        return None;
                    }
                } else if p < 0.0 {
                    t0 = t0.max(q / p);
                } else {
                    t1 = t1.min(q / p);
                }
            }
        }
        (t0 < t1).then_some((t0, t1))
    };
    let lerp = |a: Point2, b: Point2, t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
    let mut pieces: Vec<Vec<Point2>> = Vec::new();
    let mut cur: Vec<Point2> = Vec::new();
    for w in line.windows(2) {
        let (a, b) = (w[0], w[1]);
        match clip(a, b) {
            Some((t0, t1)) => {
                let start = if t0 == 0.0 { a } else { lerp(a, b, t0) };
                let end = if t1 == 1.0 { b } else { lerp(a, b, t1) };
                if cur.is_empty() {
                    cur.push(start);
                }
                cur.push(end);
                if t1 < 1.0 {
                    pieces.push(std::mem::take(&mut cur));
                }
            }
            None => {
                if !cur.is_empty() {
                    pieces.push(std::mem::take(&mut cur));
                }
            }
        }
    }
    if !cur.is_empty() {
        pieces.push(cur);
    }
    pieces
        .into_iter()
        .map(|p| {
            let mut d: Vec<Point2> = Vec::with_capacity(p.len());
            for q in p {
                if d.last() != Some(&q) {
                    d.push(q);
                }
            }
            d
        })
        .filter(|p| p.len() >= 2)
        .max_by(|a, b| {
            let la = diffroad_core::geometry::polyline_length(a);
            let lb = diffroad_core::geometry::polyline_length(b);
            la.partial_cmp(&lb).unwrap_or(std::cmp::Ordering::Equal)
        })
}

/// Scenario tensor shape and extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioShape {
    pub roads: usize,
    pub points: usize,
    pub half_extent_m: f64,
}

impl Default for ScenarioShape {
    fn default() -> Self {
        Self {
            roads: diffroad_core::geo::DEFAULT_ROADS,
            points: diffroad_core::geo::DEFAULT_POINTS,
            half_extent_m: diffroad_core::geo::DEFAULT_HALF_EXTENT_M,
        }
    }
}

/// Outcome for one center.
#[derive(Debug, Clone, PartialEq)]
pub enum Built {
    Scenario(Box<RoadScenario>),
    /// No road reaches into the window.
    Empty,
}

/// Picks the nearest roads around `center`, clips them to the window and
/// normalizes. Roads with a vertex more than 1 degree away cannot be
/// projected and are not candidates.
pub fn build_scenario(roads: &[RawRoad], center: &CenterSpec, shape: &ScenarioShape) -> Result<Built, diffroad_core::Error> {
    let origin = center.point()?;
    let candidates: Vec<RawRoad> = roads
        .iter()
        .filter(|r| r.points.iter().all(|p| (p.lat - origin.lat).abs() <= 1.0 && (p.lng - origin.lng).abs() <= 1.0))
        .cloned()
        .collect();
    if candidates.is_empty() {
        return Ok(Built::Empty);
    }
    // Extra candidates make up for roads that miss the window entirely.
    let raw = extract_scenario(&candidates, origin, candidates.len(), center.scenario_type)?;
    let mut clipped = Vec::new();
    for road in &raw.roads {
        let local = project_to_local(&road.points, origin)?;
        if let Some(piece) = clip_to_window(&local, shape.half_extent_m) {
            clipped.push(piece);
        }
        if clipped.len() == shape.roads {
            break;
        }
    }
    if clipped.is_empty() {
        return Ok(Built::Empty);
    }
    let metric = MetricScenario {
        origin,
        scenario_type: center.scenario_type,
        roads: clipped,
    };
    Ok(Built::Scenario(Box::new(normalize_metric(&metric, shape.roads, shape.points, shape.half_extent_m)?)))
}
