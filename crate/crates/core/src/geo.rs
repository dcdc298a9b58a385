//! Zone geometry: GeoJSON loading, point-in-zone assignment and
//! great-circle distances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Mean Earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lon}, {lat})")]
    InvalidPoint { lon: f64, lat: f64 },
    #[error("malformed zone document: {0}")]
    Document(String),
    #[error("feature {index}: {message}")]
    Feature { index: usize, message: String },
    #[error("duplicate zone_id `{0}`")]
    DuplicateZone(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        let ok = lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat);
        if ok {
            Ok(GeoPoint { lon, lat })
        } else {
            Err(GeoError::InvalidPoint { lon, lat })
        }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Closed ring of `(lon, lat)` vertices.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    fn of<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let mut bb = BBox {
            min_lon: f64::INFINITY,
            min_lat: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
            max_lat: f64::NEG_INFINITY,
        };
        for p in points {
            bb.min_lon = bb.min_lon.min(p[0]);
            bb.max_lon = bb.max_lon.max(p[0]);
            bb.min_lat = bb.min_lat.min(p[1]);
            bb.max_lat = bb.max_lat.max(p[1]);
        }
        bb
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub zone_id: String,
    /// Polygons, each an outer ring followed by optional holes.
    pub polygons: Vec<Vec<Ring>>,
    pub centroid: GeoPoint,
    pub bbox: BBox,
}

impl Zone {
    pub fn new(zone_id: impl Into<String>, polygons: Vec<Vec<Ring>>) -> Result<Self, String> {
        if polygons.is_empty() || polygons.iter().any(|p| p.is_empty()) {
            return Err("zone has no rings".into());
        }
        for ring in polygons.iter().flatten() {
            validate_ring(ring)?;
        }
        let bbox = BBox::of(polygons.iter().flat_map(|p| p[0].iter()));
        let centroid = area_weighted_centroid(&polygons)
            .unwrap_or_else(|| vertex_mean(polygons.iter().flat_map(|p| p[0].iter())));
        Ok(Zone { zone_id: zone_id.into(), polygons, centroid, bbox })
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        self.polygons.iter().any(|poly| {
            if poly.iter().any(|ring| on_ring_boundary(ring, p)) {
                return true;
            }
            // even-odd over outer ring and holes
            poly.iter().filter(|ring| ray_crossings_odd(ring, p)).count() % 2 == 1
        })
    }
}

fn validate_ring(ring: &Ring) -> Result<(), String> {
    if ring.len() < 4 {
        return Err(format!("ring has {} vertices, need at least 4", ring.len()));
    }
    if ring.first() != ring.last() {
        return Err("ring is not closed".into());
    }
    for v in ring {
        GeoPoint::new(v[0], v[1]).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn ring_area_centroid(ring: &Ring) -> (f64, f64, f64) {
    let mut a = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    // shift to the first vertex for numerical stability
    let [ox, oy] = ring[0];
    for w in ring.windows(2) {
        let (x0, y0) = (w[0][0] - ox, w[0][1] - oy);
        let (x1, y1) = (w[1][0] - ox, w[1][1] - oy);
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let a = a / 2.0;
    if a == 0.0 {
        return (0.0, ox, oy);
    }
    (a.abs(), cx / (6.0 * a) + ox, cy / (6.0 * a) + oy)
}

fn area_weighted_centroid(polygons: &[Vec<Ring>]) -> Option<GeoPoint> {
    let (mut area, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for poly in polygons {
        for (i, ring) in poly.iter().enumerate() {
            let (a, cx, cy) = ring_area_centroid(ring);
            let sign = if i == 0 { 1.0 } else { -1.0 };
            area += sign * a;
            sx += sign * a * cx;
            sy += sign * a * cy;
        }
    }
    (area > 0.0).then(|| GeoPoint { lon: sx / area, lat: sy / area })
}

fn vertex_mean<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> GeoPoint {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for p in points {
        n += 1.0;
        sx += p[0];
        sy += p[1];
    }
    GeoPoint { lon: sx / n, lat: sy / n }
}

fn on_ring_boundary(ring: &Ring, p: GeoPoint) -> bool {
    const EPS: f64 = 1e-12;
    ring.windows(2).any(|w| {
        let [ax, ay] = w[0];
        let [bx, by] = w[1];
        let cross = (bx - ax) * (p.lat - ay) - (by - ay) * (p.lon - ax);
        let scale = (bx - ax).abs().max((by - ay).abs()).max(1.0);
        cross.abs() <= EPS * scale
            && p.lon >= ax.min(bx) - EPS
            && p.lon <= ax.max(bx) + EPS
            && p.lat >= ay.min(by) - EPS
            && p.lat <= ay.max(by) + EPS
    })
}

fn ray_crossings_odd(ring: &Ring, p: GeoPoint) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let [xi, yi] = w[0];
        let [xj, yj] = w[1];
        if (yi > p.lat) != (yj > p.lat) {
            let x_cross = xi + (p.lat - yi) * (xj - xi) / (yj - yi);
            if p.lon < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Immutable collection of zones ordered by ascending `zone_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneSet {
    zones: Vec<Zone>,
}

impl ZoneSet {
    pub fn new(mut zones: Vec<Zone>) -> Result<Self, GeoError> {
        zones.sort_by(|a, b| a.zone_id.cmp(&b.zone_id));
        if let Some(w) = zones.windows(2).find(|w| w[0].zone_id == w[1].zone_id) {
            return Err(GeoError::DuplicateZone(w[0].zone_id.clone()));
        }
        Ok(ZoneSet { zones })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Zone> {
        self.zones.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.zones.iter().map(|z| z.zone_id.as_str())
    }

    pub fn get(&self, zone_id: &str) -> Option<&Zone> {
        self.zones
            .binary_search_by(|z| z.zone_id.as_str().cmp(zone_id))
            .ok()
            .map(|i| &self.zones[i])
    }

    pub fn centroid(&self, zone_id: &str) -> Option<GeoPoint> {
        self.get(zone_id).map(|z| z.centroid)
    }

    /// First zone by ascending id whose polygon contains `p`.
    pub fn point_to_zone(&self, p: GeoPoint) -> Option<&str> {
        self.zones.iter().find(|z| z.contains(p)).map(|z| z.zone_id.as_str())
    }

    /// Serializes as an RFC 7946 feature collection with a `zone_id` property.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .zones
            .iter()
            .map(|z| {
                let geometry = if z.polygons.len() == 1 {
                    json!({ "type": "Polygon", "coordinates": z.polygons[0] })
                } else {
                    json!({ "type": "MultiPolygon", "coordinates": z.polygons })
                };
                json!({
                    "type": "Feature",
                    "properties": { "zone_id": z.zone_id },
                    "geometry": geometry,
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

/// Loads zones from a GeoJSON feature collection. Each feature needs a string
/// `zone_id` property and Polygon or MultiPolygon geometry.
pub fn load_zones(document: &[u8]) -> Result<ZoneSet, GeoError> {
    let root: Value =
        serde_json::from_slice(document).map_err(|e| GeoError::Document(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::Document("expected a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::Document("missing `features` array".into()))?;

    let mut zones = Vec::with_capacity(features.len());
    let mut seen = BTreeMap::new();
    for (index, feature) in features.iter().enumerate() {
        let err = |message: String| GeoError::Feature { index, message };
        let zone_id = feature
            .pointer("/properties/zone_id")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing string property `zone_id`".into()))?;
        if seen.insert(zone_id.to_string(), index).is_some() {
            return Err(GeoError::DuplicateZone(zone_id.to_string()));
        }
        let geometry = feature.get("geometry").ok_or_else(|| err("missing geometry".into()))?;
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or_default();
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| err("missing coordinates".into()))?;
        let polygons = match kind {
            "Polygon" => vec![parse_polygon(coords).map_err(err)?],
            "MultiPolygon" => coords
                .as_array()
                .ok_or_else(|| err("MultiPolygon coordinates must be an array".into()))?
                .iter()
                .map(parse_polygon)
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?,
            other => return Err(err(format!("unsupported geometry type `{other}`"))),
        };
        zones.push(Zone::new(zone_id, polygons).map_err(err)?);
    }
    ZoneSet::new(zones)
}

fn parse_polygon(v: &Value) -> Result<Vec<Ring>, String> {
    let rings = v.as_array().ok_or("polygon must be an array of rings")?;
    rings
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| "ring must be an array".to_string())?
                .iter()
                .map(|pos| {
                    let pos = pos.as_array().ok_or("position must be an array")?;
                    match (pos.first().and_then(Value::as_f64), pos.get(1).and_then(Value::as_f64)) {
                        (Some(x), Some(y)) => Ok([x, y]),
                        _ => Err("position needs two numbers".to_string()),
                    }
                })
                .collect()
        })
        .collect()
}
