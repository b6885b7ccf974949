//! Geodesy, POI retrieval, street-graph pathfinding, geofence segmentation
//! and progress projection along a planned route.
//!
//! Distances use a spherical earth (haversine, R = 6,371,000 m). Routes are
//! polylines of [`GeoPoint`]s whose arc length is the sum of the haversine
//! distances between consecutive vertices; every offset in this module is
//! measured along that arc.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ValidationError;
use crate::profile::{FrequencyPref, UserProfile};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Origin and waypoints must lie this close to a graph node.
pub const SNAP_RADIUS_M: f64 = 100.0;
/// Projection never searches further back than this behind the previous offset.
pub const BACKTRACK_TOLERANCE_M: f64 = 25.0;
pub const OFF_ROUTE_THRESHOLD_M: f64 = 200.0;
/// A projected offset this close to the route end counts as arrival.
pub const ARRIVAL_SNAP_M: f64 = 0.5;
/// Minimum result count before POI lookup escalates to the provider.
pub const DEFAULT_POI_FLOOR: usize = 5;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("snap error: {what} is {distance_m:.1} m from the nearest graph node (limit {SNAP_RADIUS_M} m)")]
    Snap { what: String, distance_m: f64 },
    #[error("planning error: waypoint `{waypoint}` is unreachable")]
    Unreachable { waypoint: String },
    #[error("planning error: {0}")]
    Planning(String),
    #[error("invalid street graph: {0}")]
    Graph(String),
    #[error("invalid POI store: {0}")]
    Store(String),
    #[error("segment {index} does not exist (route has {count})")]
    NoSuchSegment { index: usize, count: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Points and great-circle helpers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = ValidationError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ValidationError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(ValidationError::new(format!(
                "coordinate ({lat}, {lon}) out of range"
            )));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(ValidationError::new(format!(
                "coordinate ({lat}, {lon}) out of range"
            )));
        }
        Ok(Self { lat, lon })
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `a` to `b`, degrees clockwise from north.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Point reached by travelling `distance_m` along a great circle.
pub fn destination(start: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = start.lat.to_radians();
    let lambda1 = start.lon.to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint {
        lat: phi2.to_degrees().clamp(-90.0, 90.0),
        lon,
    }
}

fn lerp(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    GeoPoint {
        lat: a.lat + (b.lat - a.lat) * t,
        lon: a.lon + (b.lon - a.lon) * t,
    }
}

// ---------------------------------------------------------------------------
// POIs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoiSource {
    LocalDb,
    Provider,
    GapFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub name: String,
    pub category: String,
    pub location: GeoPoint,
    #[serde(default)]
    pub tags: Vec<String>,
    pub source: PoiSource,
}

impl Poi {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        category: impl Into<String>,
        location: GeoPoint,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            category: category.into(),
            location,
            tags: Vec::new(),
            source: PoiSource::LocalDb,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    /// True when the tag equals the category or one of the free tags.
    pub fn has_tag(&self, tag: &str) -> bool {
        self.category.eq_ignore_ascii_case(tag) || self.tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }

    fn matches_any(&self, query_tags: &[String]) -> bool {
        query_tags.is_empty() || query_tags.iter().any(|t| self.has_tag(t))
    }
}

/// On-disk POI record: `{id, name, category, lat, lon, tags[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoiRecord {
    id: String,
    name: String,
    category: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    tags: Vec<String>,
}

/// Read-only local POI database.
#[derive(Debug, Clone, Default)]
pub struct PoiStore {
    pois: Vec<Poi>,
}

impl PoiStore {
    pub fn new(pois: Vec<Poi>) -> Result<Self, GeoError> {
        let mut seen = HashSet::new();
        for p in &pois {
            if !seen.insert(p.id.as_str()) {
                return Err(GeoError::Store(format!("duplicate poi id `{}`", p.id)));
            }
        }
        Ok(Self { pois })
    }

    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        let records: Vec<PoiRecord> = serde_json::from_str(text)?;
        let pois = records
            .into_iter()
            .map(|r| {
                Ok(Poi {
                    location: GeoPoint::new(r.lat, r.lon)?,
                    id: r.id,
                    name: r.name,
                    category: r.category,
                    tags: r.tags,
                    source: PoiSource::LocalDb,
                })
            })
            .collect::<Result<Vec<_>, GeoError>>()?;
        Self::new(pois)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<PoiRecord> = self
            .pois
            .iter()
            .map(|p| PoiRecord {
                id: p.id.clone(),
                name: p.name.clone(),
                category: p.category.clone(),
                lat: p.location.lat,
                lon: p.location.lon,
                tags: p.tags.clone(),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("poi records serialize")
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn get(&self, id: &str) -> Option<&Poi> {
        self.pois.iter().find(|p| p.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    /// POIs within `radius_m` of `center` matching any query tag, nearest first.
    pub fn within(&self, center: GeoPoint, radius_m: f64, query_tags: &[String]) -> Vec<Poi> {
        let mut hits: Vec<(f64, &Poi)> = self
            .pois
            .iter()
            .filter(|p| p.matches_any(query_tags))
            .map(|p| (haversine_m(center, p.location), p))
            .filter(|(d, _)| *d <= radius_m)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        hits.into_iter().map(|(_, p)| p.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

/// External POI source probed when the local store runs short.
pub trait PoiProvider: Send + Sync {
    fn probe(
        &self,
        center: GeoPoint,
        radius_m: f64,
        query_tags: &[String],
    ) -> Result<Vec<Poi>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiLookup {
    pub pois: Vec<Poi>,
    pub provider_called: bool,
    /// Set when the provider failed and the result is local-only.
    pub degraded: Option<ProviderError>,
}

/// Hierarchical retrieval: local store, then the provider, then placeholders.
pub fn poi_lookup(
    center: GeoPoint,
    radius_m: f64,
    query_tags: &[String],
    store: &PoiStore,
    provider: Option<&dyn PoiProvider>,
    floor: usize,
) -> Result<PoiLookup, GeoError> {
    if !(radius_m > 0.0) || !radius_m.is_finite() {
        return Err(ValidationError::new(format!("radius must be positive, got {radius_m}")).into());
    }
    let mut pois = store.within(center, radius_m, query_tags);
    let mut provider_called = false;

    if pois.len() < floor {
        if let Some(provider) = provider {
            provider_called = true;
            match provider.probe(center, radius_m, query_tags) {
                Ok(found) => {
                    let mut extra: Vec<(f64, Poi)> = found
                        .into_iter()
                        .filter(|p| p.matches_any(query_tags))
                        .filter(|p| !pois.iter().any(|q| q.id == p.id))
                        .map(|mut p| {
                            p.source = PoiSource::Provider;
                            (haversine_m(center, p.location), p)
                        })
                        .filter(|(d, _)| *d <= radius_m)
                        .collect();
                    extra.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
                    extra.dedup_by(|a, b| a.1.id == b.1.id);
                    pois.extend(extra.into_iter().map(|(_, p)| p));
                }
                Err(err) => {
                    return Ok(PoiLookup {
                        pois,
                        provider_called,
                        degraded: Some(err),
                    })
                }
            }
        }
    }

    let mut n = 0;
    while pois.len() < floor {
        n += 1;
        let category = query_tags.first().cloned().unwrap_or_else(|| "stop".to_string());
        pois.push(Poi {
            id: format!("gapfill-{n}"),
            name: format!("Unlisted {category} stop {n}"),
            category,
            location: center,
            tags: vec!["gapfill".to_string()],
            source: PoiSource::GapFill,
        });
    }

    Ok(PoiLookup {
        pois,
        provider_called,
        degraded: None,
    })
}

// ---------------------------------------------------------------------------
// Street graph and pathfinding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: String,
    pub v: String,
    pub length_m: f64,
}

/// Undirected walkable network. Edge lengths never undercut the
/// great-circle distance, which keeps the A* heuristic admissible.
#[derive(Debug, Clone)]
pub struct StreetGraph {
    ids: Vec<String>,
    points: Vec<GeoPoint>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: Vec<Edge>,
}

#[derive(Deserialize, Serialize)]
struct GraphFile {
    nodes: BTreeMap<String, [f64; 2]>,
    edges: Vec<serde_json::Value>,
}

impl StreetGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = (String, GeoPoint)>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, GeoError> {
        let mut ids = Vec::new();
        let mut points = Vec::new();
        let mut index = BTreeMap::new();
        for (id, p) in nodes {
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(GeoError::Graph(format!("duplicate node `{id}`")));
            }
            ids.push(id);
            points.push(p);
        }
        let mut adjacency = vec![Vec::new(); ids.len()];
        let mut kept = Vec::new();
        for e in edges {
            let (&u, &v) = match (index.get(&e.u), index.get(&e.v)) {
                (Some(u), Some(v)) => (u, v),
                _ => {
                    return Err(GeoError::Graph(format!(
                        "edge {}-{} references an unknown node",
                        e.u, e.v
                    )))
                }
            };
            let crow = haversine_m(points[u], points[v]);
            if !e.length_m.is_finite() || e.length_m < 0.0 {
                return Err(GeoError::Graph(format!(
                    "edge {}-{} has invalid length {}",
                    e.u, e.v, e.length_m
                )));
            }
            if e.length_m < crow * (1.0 - 1e-9) - 1e-6 {
                return Err(GeoError::Graph(format!(
                    "edge {}-{} length {:.3} m is shorter than the great-circle distance {:.3} m",
                    e.u, e.v, e.length_m, crow
                )));
            }
            adjacency[u].push((v, e.length_m));
            adjacency[v].push((u, e.length_m));
            kept.push(e);
        }
        Ok(Self {
            ids,
            points,
            adjacency,
            edges: kept,
        })
    }

    /// Parse `{nodes: {id: [lat, lon]}, edges: [[u, v, length_m]]}`.
    /// A missing or null length is replaced by the great-circle distance.
    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for (id, [lat, lon]) in file.nodes {
            nodes.push((id, GeoPoint::new(lat, lon)?));
        }
        let lookup: BTreeMap<&str, GeoPoint> = nodes.iter().map(|(id, p)| (id.as_str(), *p)).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for raw in &file.edges {
            let arr = raw
                .as_array()
                .filter(|a| a.len() == 2 || a.len() == 3)
                .ok_or_else(|| GeoError::Graph(format!("malformed edge {raw}")))?;
            let name = |v: &serde_json::Value| -> Result<String, GeoError> {
                match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    _ => Err(GeoError::Graph(format!("malformed edge {raw}"))),
                }
            };
            let (u, v) = (name(&arr[0])?, name(&arr[1])?);
            let length_m = match arr.get(2) {
                Some(serde_json::Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
                Some(serde_json::Value::Null) | None => {
                    match (lookup.get(u.as_str()), lookup.get(v.as_str())) {
                        (Some(a), Some(b)) => haversine_m(*a, *b),
                        _ => f64::NAN,
                    }
                }
                Some(_) => return Err(GeoError::Graph(format!("malformed edge {raw}"))),
            };
            edges.push(Edge { u, v, length_m });
        }
        Self::new(nodes, edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .ids
                .iter()
                .zip(&self.points)
                .map(|(id, p)| (id.clone(), [p.lat, p.lon]))
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| serde_json::json!([e.u, e.v, e.length_m]))
                .collect(),
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn node_point(&self, idx: usize) -> GeoPoint {
        self.points[idx]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|n| n == id)
    }

    pub fn neighbors(&self, idx: usize) -> &[(usize, f64)] {
        &self.adjacency[idx]
    }

    /// Nearest node and its distance.
    pub fn nearest_node(&self, p: GeoPoint) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, haversine_m(p, *q)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
    }

    /// Best-first (A*) search with the great-circle heuristic.
    /// Returns the node sequence and its network length.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<(Vec<usize>, f64)> {
        #[derive(PartialEq)]
        struct Open {
            f: f64,
            g: f64,
            node: usize,
        }
        impl Eq for Open {}
        impl Ord for Open {
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .f
                    .total_cmp(&self.f)
                    .then_with(|| other.node.cmp(&self.node))
            }
        }
        impl PartialOrd for Open {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let goal = self.points[to];
        let n = self.ids.len();
        let mut best = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();
        best[from] = 0.0;
        open.push(Open {
            f: haversine_m(self.points[from], goal),
            g: 0.0,
            node: from,
        });
        while let Some(Open { g, node, .. }) = open.pop() {
            if closed[node] {
                continue;
            }
            if node == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = parent[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some((path, g));
            }
            closed[node] = true;
            for &(next, w) in &self.adjacency[node] {
                let cand = g + w;
                if cand < best[next] {
                    best[next] = cand;
                    parent[next] = node;
                    open.push(Open {
                        f: cand + haversine_m(self.points[next], goal),
                        g: cand,
                        node: next,
                    });
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Routes and segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub start_offset_m: f64,
    pub end_offset_m: f64,
}

impl Segment {
    pub fn length_m(&self) -> f64 {
        self.end_offset_m - self.start_offset_m
    }

    pub fn midpoint_offset_m(&self) -> f64 {
        (self.start_offset_m + self.end_offset_m) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub polyline: Vec<GeoPoint>,
    pub waypoints: Vec<String>,
    /// Arc length of the polyline (sum of haversine legs).
    pub total_length_m: f64,
    /// Sum of street-edge lengths when planned on a graph; equals the
    /// arc length for straight edges.
    pub network_length_m: f64,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl RoutePlan {
    pub fn from_polyline(polyline: Vec<GeoPoint>, waypoints: Vec<String>) -> Result<Self, GeoError> {
        if polyline.len() < 2 {
            return Err(GeoError::Planning("a route needs at least two points".into()));
        }
        let total: f64 = polyline.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
        if !(total > 0.0) {
            return Err(GeoError::Planning("route has zero length".into()));
        }
        Ok(Self {
            polyline,
            waypoints,
            total_length_m: total,
            network_length_m: total,
            segments: Vec::new(),
        })
    }

    /// Cumulative arc length at every vertex.
    pub fn cumulative_offsets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.polyline.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.polyline.windows(2) {
            acc += haversine_m(w[0], w[1]);
            out.push(acc);
        }
        out
    }

    pub fn point_at(&self, offset_m: f64) -> GeoPoint {
        let cum = self.cumulative_offsets();
        let offset = offset_m.clamp(0.0, self.total_length_m);
        for i in 0..self.polyline.len() - 1 {
            let len = cum[i + 1] - cum[i];
            if offset <= cum[i + 1] || i == self.polyline.len() - 2 {
                let t = if len > 0.0 { ((offset - cum[i]) / len).clamp(0.0, 1.0) } else { 0.0 };
                return lerp(self.polyline[i], self.polyline[i + 1], t);
            }
        }
        *self.polyline.last().expect("non-empty polyline")
    }

    /// Bearing of the polyline leg containing `offset_m`.
    pub fn bearing_at(&self, offset_m: f64) -> f64 {
        let cum = self.cumulative_offsets();
        let last = self.polyline.len() - 2;
        let i = (0..=last)
            .find(|&i| offset_m < cum[i + 1] && cum[i + 1] > cum[i])
            .unwrap_or_else(|| (0..=last).rev().find(|&i| cum[i + 1] > cum[i]).unwrap_or(last));
        bearing_deg(self.polyline[i], self.polyline[i + 1])
    }

    pub fn segment_index_at(&self, offset_m: f64) -> usize {
        if self.segments.is_empty() {
            return 0;
        }
        self.segments
            .iter()
            .position(|s| offset_m < s.end_offset_m)
            .unwrap_or(self.segments.len() - 1)
    }

    pub fn segment(&self, index: usize) -> Result<&Segment, GeoError> {
        self.segments.get(index).ok_or(GeoError::NoSuchSegment {
            index,
            count: self.segments.len(),
        })
    }
}

/// Concatenate shortest paths origin → w1 → … → wk over the street graph.
pub fn plan_route(origin: GeoPoint, waypoints: &[Poi], graph: &StreetGraph) -> Result<RoutePlan, GeoError> {
    if waypoints.is_empty() {
        return Err(GeoError::Planning("no waypoints to route through".into()));
    }
    let snap = |p: GeoPoint, what: &str| -> Result<usize, GeoError> {
        match graph.nearest_node(p) {
            Some((idx, d)) if d <= SNAP_RADIUS_M => Ok(idx),
            Some((_, d)) => Err(GeoError::Snap {
                what: what.to_string(),
                distance_m: d,
            }),
            None => Err(GeoError::Graph("graph has no nodes".into())),
        }
    };
    let mut current = snap(origin, "origin")?;
    let mut nodes = vec![current];
    let mut network_length = 0.0;
    for w in waypoints {
        let target = snap(w.location, &format!("waypoint `{}`", w.id))?;
        let (path, length) = graph
            .shortest_path(current, target)
            .ok_or_else(|| GeoError::Unreachable {
                waypoint: w.id.clone(),
            })?;
        nodes.extend(path.into_iter().skip(1));
        network_length += length;
        current = target;
    }
    let polyline: Vec<GeoPoint> = nodes.iter().map(|&i| graph.node_point(i)).collect();
    let mut plan = RoutePlan::from_polyline(polyline, waypoints.iter().map(|w| w.id.clone()).collect())
        .map_err(|_| GeoError::Planning("route collapses to a single point".into()))?;
    plan.network_length_m = network_length;
    Ok(plan)
}

/// Split the route into equal geofence segments sized by the preference.
pub fn segment_route(mut route: RoutePlan, pref: FrequencyPref) -> RoutePlan {
    let total = route.total_length_m;
    let n = ((total / pref.target_spacing_m()).round() as usize).max(1);
    route.segments = (0..n)
        .map(|i| Segment {
            index: i,
            start_offset_m: if i == 0 { 0.0 } else { total * i as f64 / n as f64 },
            end_offset_m: if i + 1 == n { total } else { total * (i + 1) as f64 / n as f64 },
        })
        .collect();
    route
}

// ---------------------------------------------------------------------------
// Progress projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressInfo {
    pub fraction: f64,
    pub segment_index: usize,
    pub cross_track_m: f64,
    pub offset_m: f64,
    pub off_route: bool,
}

impl ProgressInfo {
    pub fn start() -> Self {
        Self {
            fraction: 0.0,
            segment_index: 0,
            cross_track_m: 0.0,
            offset_m: 0.0,
            off_route: false,
        }
    }
}

impl Default for ProgressInfo {
    fn default() -> Self {
        Self::start()
    }
}

/// Nearest point on the polyline restricted to `[from_offset, total]`.
/// Returns `(offset, distance)`; ties go to the smaller offset.
pub fn nearest_on_route(route: &RoutePlan, p: GeoPoint, from_offset: f64) -> (f64, f64) {
    let cum = route.cumulative_offsets();
    let lo = from_offset.clamp(0.0, route.total_length_m);
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut consider = |offset: f64, q: GeoPoint| {
        let d = haversine_m(p, q);
        if d < best.1 || (d == best.1 && offset < best.0) {
            best = (offset, d);
        }
    };
    for i in 0..route.polyline.len() - 1 {
        if cum[i + 1] < lo {
            continue;
        }
        let (a, b) = (route.polyline[i], route.polyline[i + 1]);
        let len = cum[i + 1] - cum[i];
        if cum[i] >= lo {
            consider(cum[i], a);
        }
        consider(cum[i + 1], b);
        if len <= 0.0 {
            continue;
        }
        // local equirectangular frame anchored at `a`
        let k = ((a.lat + b.lat) / 2.0).to_radians().cos();
        let (bx, by) = ((b.lon - a.lon) * k, b.lat - a.lat);
        let (px, py) = ((p.lon - a.lon) * k, p.lat - a.lat);
        let denom = bx * bx + by * by;
        let t_lo = ((lo - cum[i]) / len).clamp(0.0, 1.0);
        let t = if denom > 0.0 { ((px * bx + py * by) / denom).clamp(t_lo, 1.0) } else { t_lo };
        consider(cum[i] + t * len, lerp(a, b, t));
    }
    best
}

/// Project a position onto the route with a forward-biased search window.
pub fn project_progress(route: &RoutePlan, p: GeoPoint, prev: &ProgressInfo) -> ProgressInfo {
    let (mut offset, cross_track) =
        nearest_on_route(route, p, prev.offset_m - BACKTRACK_TOLERANCE_M);
    if route.total_length_m - offset <= ARRIVAL_SNAP_M {
        offset = route.total_length_m;
    }
    ProgressInfo {
        fraction: (offset / route.total_length_m).clamp(0.0, 1.0),
        segment_index: route.segment_index_at(offset),
        cross_track_m: cross_track,
        offset_m: offset,
        off_route: cross_track > OFF_ROUTE_THRESHOLD_M,
    }
}

/// Up to two POIs around the segment midpoint, ranked by preference score,
/// then distance, then id.
pub fn nearby_pois_in_segment(
    route: &RoutePlan,
    segment_index: usize,
    store: &PoiStore,
    profile: &UserProfile,
) -> Result<Vec<(Poi, f64)>, GeoError> {
    let seg = route.segment(segment_index)?;
    let center = route.point_at(seg.midpoint_offset_m());
    let radius = seg.length_m() / 2.0;
    let mut scored: Vec<(f64, f64, Poi)> = store
        .within(center, radius, &[])
        .into_iter()
        .map(|p| {
            let score = profile
                .interest_tags
                .iter()
                .filter(|it| p.has_tag(&it.tag))
                .map(|it| it.weight)
                .sum::<f64>();
            (score, haversine_m(center, p.location), p)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.total_cmp(&b.1))
            .then_with(|| a.2.id.cmp(&b.2.id))
    });
    Ok(scored.into_iter().take(2).map(|(s, _, p)| (p, s)).collect())
}
