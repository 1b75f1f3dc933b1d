//! Face triangulation.
//!
//! Three steps:
//!
//! 1. A Delaunay triangulation of the landmarks plus eight frame anchors
//!    (corners and edge midpoints of the image), so the band between the face
//!    and the image border is meshed too.
//! 2. The centroid dual of that triangulation. Every interior vertex of the
//!    initial mesh is surrounded by the centroids of its incident triangles;
//!    that ring of centroids becomes a polygon which is then cut into
//!    triangles. Along the frame the polygons are closed through the anchor
//!    vertices. Landmarks never become dual vertices, so facial features end
//!    up inside triangles instead of on their corners.
//! 3. Region labels: each dual triangle is assigned to an eye, the nose, the
//!    mouth, the rest of the face, or the outer band, by testing its centroid
//!    against the (slightly dilated) landmark polygons of each feature.
//!
//! Topology is computed once, on the base face. [`FaceMesh::dual_positions_for`]
//! evaluates the same topology on another face's landmarks, which is how
//! corresponding triangles are found in donor images.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{
    centroid, convex_hull, distance_to_polygon, point_in_polygon, signed_area, Point,
};
use crate::landmarks::{Landmarks, LANDMARK_COUNT, LEFT_EYE, MOUTH, NOSE, RIGHT_EYE};

pub const DEFAULT_REGION_MARGIN: f64 = 2.0;

/// Three indices into a vertex list, wound to positive [`signed_area`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triangle(pub [usize; 3]);

impl Triangle {
    /// Rotate so the smallest index leads, keeping the winding.
    fn canonical(self) -> Triangle {
        let [a, b, c] = self.0;
        if a <= b && a <= c {
            Triangle([a, b, c])
        } else if b <= a && b <= c {
            Triangle([b, c, a])
        } else {
            Triangle([c, a, b])
        }
    }

    pub fn points(&self, vertices: &[Point]) -> [Point; 3] {
        [vertices[self.0[0]], vertices[self.0[1]], vertices[self.0[2]]]
    }

    pub fn area(&self, vertices: &[Point]) -> f64 {
        let [a, b, c] = self.points(vertices);
        signed_area(a, b, c)
    }

    pub fn edges(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.0;
        [(a, b), (b, c), (c, a)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    /// The eye on the left side of the image.
    LeftEye,
    RightEye,
    Nose,
    Mouth,
    CheekJaw,
    Outer,
}

impl Region {
    pub const KEY: [Region; 4] = [Region::LeftEye, Region::RightEye, Region::Nose, Region::Mouth];
    pub const ALL: [Region; 6] = [
        Region::LeftEye,
        Region::RightEye,
        Region::Nose,
        Region::Mouth,
        Region::CheekJaw,
        Region::Outer,
    ];

    pub fn is_key(self) -> bool {
        matches!(self, Region::LeftEye | Region::RightEye | Region::Nose | Region::Mouth)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::LeftEye => "left_eye",
            Region::RightEye => "right_eye",
            Region::Nose => "nose",
            Region::Mouth => "mouth",
            Region::CheekJaw => "cheek_jaw",
            Region::Outer => "outer",
        }
    }

    fn svg_color(self) -> &'static str {
        match self {
            Region::LeftEye => "#1f77b4",
            Region::RightEye => "#17becf",
            Region::Nose => "#2ca02c",
            Region::Mouth => "#d62728",
            Region::CheekJaw => "#ff7f0e",
            Region::Outer => "#7f7f7f",
        }
    }
}

/// How a dual vertex was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualSource {
    /// Centroid of this initial triangle.
    Centroid(usize),
    /// This initial hull vertex, reused as is.
    Hull(usize),
}

#[derive(Clone, Debug)]
pub struct MeshConfig {
    /// 0-based landmark indices used as initial vertices.
    pub landmark_subset: Vec<usize>,
    /// Dilation of the feature polygons, in pixels.
    pub region_margin: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            landmark_subset: (0..LANDMARK_COUNT).collect(),
            region_margin: DEFAULT_REGION_MARGIN,
        }
    }
}

impl MeshConfig {
    /// Full landmark set minus the given 0-based indices.
    pub fn without(drop: &[usize]) -> Self {
        MeshConfig {
            landmark_subset: (0..LANDMARK_COUNT).filter(|i| !drop.contains(i)).collect(),
            ..Default::default()
        }
    }
}

/// Corners and edge midpoints of the pixel area of a `side x side` image.
pub fn frame_anchors(side: u32) -> [Point; 8] {
    let lo = -0.5;
    let hi = side as f64 - 0.5;
    let mid = (side as f64 - 1.0) / 2.0;
    [
        Point::new(lo, lo),
        Point::new(mid, lo),
        Point::new(hi, lo),
        Point::new(hi, mid),
        Point::new(hi, hi),
        Point::new(mid, hi),
        Point::new(lo, hi),
        Point::new(lo, mid),
    ]
}

/// Delaunay triangulation of `points`, triangles indexing into `points`,
/// positively wound and sorted.
pub fn delaunay(points: &[Point]) -> Result<Vec<Triangle>> {
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    for (i, p) in points.iter().enumerate() {
        let h = dt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::Geometry(format!("point {i} {p:?}: {e:?}")))?;
        if h.index() != i {
            return Err(Error::Geometry(format!(
                "point {i} {p:?} duplicates point {}",
                h.index()
            )));
        }
    }
    let mut tris: Vec<Triangle> = dt
        .inner_faces()
        .map(|f| {
            let [a, b, c] = f.vertices().map(|v| v.fix().index());
            let t = if signed_area(points[a], points[b], points[c]) > 0.0 {
                Triangle([a, b, c])
            } else {
                Triangle([a, c, b])
            };
            t.canonical()
        })
        .collect();
    if tris.is_empty() {
        return Err(Error::Geometry("points are collinear; nothing to triangulate".into()));
    }
    if let Some(t) = tris.iter().find(|t| t.area(points) <= 0.0) {
        return Err(Error::Geometry(format!("degenerate triangle {:?}", t.0)));
    }
    tris.sort();
    Ok(tris)
}

/// Initial triangulation: the landmark subset followed by the eight frame
/// anchors.
pub fn triangulate_initial(
    landmarks: &Landmarks,
    side: u32,
    subset: &[usize],
) -> Result<(Vec<Point>, Vec<Triangle>)> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= LANDMARK_COUNT) {
        return Err(Error::Config(format!("landmark index {bad} out of range")));
    }
    let mut vertices: Vec<Point> = subset.iter().map(|&i| landmarks.get(i)).collect();
    vertices.extend(frame_anchors(side));
    let tris = delaunay(&vertices)?;
    Ok((vertices, tris))
}

/// Result of [`centroid_dual`].
#[derive(Clone, Debug)]
pub struct DualMesh {
    pub vertices: Vec<Point>,
    pub sources: Vec<DualSource>,
    pub triangles: Vec<Triangle>,
}

type EdgeMap = BTreeMap<(usize, usize), Vec<usize>>;

fn edge_map(triangles: &[Triangle]) -> Result<EdgeMap> {
    let mut edges: EdgeMap = BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for (a, b) in tri.edges() {
            edges.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    if let Some((e, ts)) = edges.iter().find(|(_, ts)| ts.len() > 2) {
        return Err(Error::Topology(format!(
            "edge {e:?} is shared by {} triangles",
            ts.len()
        )));
    }
    Ok(edges)
}

/// Cut a simple, positively wound polygon into triangles, each step clipping
/// the ear with the largest minimum angle (lowest position on ties).
fn ear_clip(polygon: &[usize], pos: &[Point]) -> Result<Vec<Triangle>> {
    let mut ring = polygon.to_vec();
    let mut out = Vec::with_capacity(ring.len().saturating_sub(2));
    let scale = ring
        .iter()
        .map(|&i| pos[i].distance(pos[ring[0]]))
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale * scale;
    let min_angle = |a: Point, b: Point, c: Point| {
        let ang = |p: Point, q: Point, r: Point| {
            let (u, v) = (q - p, r - p);
            u.cross(v).abs().atan2(u.dot(v))
        };
        ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
    };
    while ring.len() > 3 {
        let n = ring.len();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let (p, c, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            let (pa, pb, pc) = (pos[p], pos[c], pos[q]);
            if signed_area(pa, pb, pc) <= eps {
                continue;
            }
            let blocked = ring.iter().any(|&k| {
                k != p
                    && k != c
                    && k != q
                    && signed_area(pa, pb, pos[k]) >= 0.0
                    && signed_area(pb, pc, pos[k]) >= 0.0
                    && signed_area(pc, pa, pos[k]) >= 0.0
            });
            if blocked {
                continue;
            }
            let quality = min_angle(pa, pb, pc);
            if best.is_none_or(|(_, bq)| quality > bq) {
                best = Some((i, quality));
            }
        }
        match best {
            Some((i, _)) => {
                let n = ring.len();
                out.push(Triangle([ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]]).canonical());
                ring.remove(i);
            }
            None => {
                // Only collinear runs left to peel off.
                let flat = (0..n).find(|&i| {
                    let (p, c, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
                    signed_area(pos[p], pos[c], pos[q]).abs() <= eps
                });
                match flat {
                    Some(i) => {
                        ring.remove(i);
                    }
                    None => {
                        return Err(Error::Topology(format!(
                            "dual cell {polygon:?} is not a simple polygon"
                        )))
                    }
                }
            }
        }
    }
    if ring.len() == 3 {
        let t = Triangle([ring[0], ring[1], ring[2]]);
        if t.area(pos) > eps {
            out.push(t.canonical());
        } else if t.area(pos) < -eps {
            return Err(Error::Topology(format!("dual cell {polygon:?} is inverted")));
        }
    }
    Ok(out)
}

/// Centroid dual of a triangulation. Dual vertices are the centroids (one
/// per input triangle, same order) followed by the input hull vertices in
/// ascending index order.
pub fn centroid_dual(vertices: &[Point], triangles: &[Triangle]) -> Result<DualMesh> {
    let edges = edge_map(triangles)?;
    let t_count = triangles.len();

    let mut dual_vertices: Vec<Point> = triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.points(vertices);
            centroid(a, b, c)
        })
        .collect();
    let mut sources: Vec<DualSource> = (0..t_count).map(DualSource::Centroid).collect();

    let mut hull_vertices: Vec<usize> = edges
        .iter()
        .filter(|(_, ts)| ts.len() == 1)
        .flat_map(|(&(a, b), _)| [a, b])
        .collect();
    hull_vertices.sort_unstable();
    hull_vertices.dedup();
    let mut hull_index: HashMap<usize, usize> = HashMap::new();
    for &v in &hull_vertices {
        hull_index.insert(v, dual_vertices.len());
        dual_vertices.push(vertices[v]);
        sources.push(DualSource::Hull(v));
    }

    // For each vertex v: triangles (v, x, y) keyed by x.
    let mut fans: BTreeMap<usize, BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.0;
        for (v, x, y) in [(a, b, c), (b, c, a), (c, a, b)] {
            if fans.entry(v).or_default().insert(x, (t, y)).is_some() {
                return Err(Error::Topology(format!("vertex {v} has a folded fan")));
            }
        }
    }

    let mut dual_triangles = Vec::new();
    for (&v, fan) in &fans {
        let ys: Vec<usize> = fan.values().map(|&(_, y)| y).collect();
        let starts: Vec<usize> = fan.keys().copied().filter(|x| !ys.contains(x)).collect();
        let interior = starts.is_empty();
        if starts.len() > 1 {
            return Err(Error::Topology(format!("vertex {v} is not manifold")));
        }
        let mut x = if interior { *fan.keys().next().unwrap() } else { starts[0] };
        let mut ring = Vec::with_capacity(fan.len());
        while let Some(&(t, y)) = fan.get(&x) {
            ring.push(t);
            x = y;
            if ring.len() > fan.len() {
                return Err(Error::Topology(format!("fan around vertex {v} does not close")));
            }
            if interior && ring.len() == fan.len() {
                break;
            }
        }
        if ring.len() != fan.len() {
            return Err(Error::Topology(format!("vertex {v} has a split fan")));
        }
        let polygon: Vec<usize> = if interior {
            ring
        } else {
            if ring.len() < 2 {
                continue;
            }
            std::iter::once(hull_index[&v]).chain(ring).collect()
        };
        dual_triangles.extend(ear_clip(&polygon, &dual_vertices)?);
    }

    // Slivers between each hull edge and the centroid of its triangle.
    for (t, tri) in triangles.iter().enumerate() {
        for (a, b) in tri.edges() {
            if edges[&(a.min(b), a.max(b))].len() == 1 {
                dual_triangles.push(Triangle([hull_index[&a], hull_index[&b], t]).canonical());
            }
        }
    }
    dual_triangles.sort();
    Ok(DualMesh {
        vertices: dual_vertices,
        sources,
        triangles: dual_triangles,
    })
}

/// Landmark polygons of the four key regions, in [`Region::KEY`] order.
pub fn region_polygons(landmarks: &Landmarks) -> [Vec<Point>; 4] {
    let pts = landmarks.points();
    [
        convex_hull(&pts[LEFT_EYE]),
        convex_hull(&pts[RIGHT_EYE]),
        convex_hull(&pts[NOSE]),
        convex_hull(&pts[MOUTH]),
    ]
}

/// Label each dual triangle by the region containing its centroid.
pub fn label_regions(
    vertices: &[Point],
    triangles: &[Triangle],
    landmarks: &Landmarks,
    subset: &[usize],
    margin: f64,
) -> Result<Vec<Region>> {
    let polys = region_polygons(landmarks);
    let face: Vec<Point> = subset.iter().map(|&i| landmarks.get(i)).collect();
    let face_hull = convex_hull(&face);
    let mut labels = Vec::with_capacity(triangles.len());
    let mut fallback = Vec::with_capacity(triangles.len());
    for tri in triangles {
        let [a, b, c] = tri.points(vertices);
        let p = centroid(a, b, c);
        let rest = if point_in_polygon(p, &face_hull) {
            Region::CheekJaw
        } else {
            Region::Outer
        };
        fallback.push(rest);
        let mut best: Option<(Region, f64)> = None;
        for (region, poly) in Region::KEY.iter().zip(&polys) {
            let d = if point_in_polygon(p, poly) {
                0.0
            } else {
                distance_to_polygon(p, poly)
            };
            if d <= margin && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*region, d));
            }
        }
        labels.push(best.map_or(rest, |(r, _)| r));
    }
    // The margin can catch lone triangles detached from a feature; hand them
    // back so every key region is one edge-connected patch.
    for region in Region::KEY {
        let comps = region_components(triangles, &labels, region);
        let keep = comps.iter().enumerate().max_by_key(|(i, c)| (c.len(), usize::MAX - i)).map(|(i, _)| i);
        for (i, comp) in comps.iter().enumerate() {
            if Some(i) != keep {
                for &t in comp {
                    labels[t] = fallback[t];
                }
            }
        }
    }
    for region in Region::KEY {
        if !labels.contains(&region) {
            return Err(Error::Labeling(format!("no triangle falls in the {} region", region.as_str())));
        }
    }
    Ok(labels)
}

/// Edge-connected components of the triangles carrying `region`.
pub fn region_components(triangles: &[Triangle], labels: &[Region], region: Region) -> Vec<Vec<usize>> {
    let members: Vec<usize> = (0..triangles.len()).filter(|&t| labels[t] == region).collect();
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &t in &members {
        for (a, b) in triangles[t].edges() {
            by_edge.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let mut seen: HashMap<usize, bool> = members.iter().map(|&t| (t, false)).collect();
    let mut comps = Vec::new();
    for &start in &members {
        if seen[&start] {
            continue;
        }
        let mut comp = vec![start];
        seen.insert(start, true);
        let mut i = 0;
        while i < comp.len() {
            let t = comp[i];
            for (a, b) in triangles[t].edges() {
                for &n in &by_edge[&(a.min(b), a.max(b))] {
                    if !seen[&n] {
                        seen.insert(n, true);
                        comp.push(n);
                    }
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

#[derive(Clone, Debug)]
pub struct FaceMesh {
    pub side: u32,
    /// Landmarks the mesh geometry was evaluated on.
    pub landmarks: Landmarks,
    pub landmark_subset: Vec<usize>,
    pub initial_vertices: Vec<Point>,
    pub initial_triangles: Vec<Triangle>,
    pub dual_vertices: Vec<Point>,
    pub dual_sources: Vec<DualSource>,
    pub dual_triangles: Vec<Triangle>,
    pub region_labels: Vec<Region>,
}

impl FaceMesh {
    pub fn build(landmarks: &Landmarks, side: u32, config: &MeshConfig) -> Result<FaceMesh> {
        let (initial_vertices, initial_triangles) =
            triangulate_initial(landmarks, side, &config.landmark_subset)?;
        let dual = centroid_dual(&initial_vertices, &initial_triangles)?;
        let region_labels = label_regions(
            &dual.vertices,
            &dual.triangles,
            landmarks,
            &config.landmark_subset,
            config.region_margin,
        )?;
        Ok(FaceMesh {
            side,
            landmarks: landmarks.clone(),
            landmark_subset: config.landmark_subset.clone(),
            initial_vertices,
            initial_triangles,
            dual_vertices: dual.vertices,
            dual_sources: dual.sources,
            dual_triangles: dual.triangles,
            region_labels,
        })
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.dual_triangles[t].points(&self.dual_vertices)
    }

    /// Dual vertex positions of this mesh's topology evaluated on another
    /// face's landmarks.
    pub fn dual_positions_for(&self, landmarks: &Landmarks) -> Vec<Point> {
        let mut initial: Vec<Point> = self.landmark_subset.iter().map(|&i| landmarks.get(i)).collect();
        initial.extend(frame_anchors(self.side));
        self.dual_sources
            .iter()
            .map(|s| match *s {
                DualSource::Centroid(t) => {
                    let [a, b, c] = self.initial_triangles[t].points(&initial);
                    centroid(a, b, c)
                }
                DualSource::Hull(v) => initial[v],
            })
            .collect()
    }

    pub fn triangles_in(&self, region: Region) -> Vec<usize> {
        (0..self.dual_triangles.len())
            .filter(|&t| self.region_labels[t] == region)
            .collect()
    }

    pub fn initial_area(&self) -> f64 {
        self.initial_triangles.iter().map(|t| t.area(&self.initial_vertices)).sum()
    }

    pub fn dual_area(&self) -> f64 {
        self.dual_triangles.iter().map(|t| t.area(&self.dual_vertices)).sum()
    }

    /// Smallest signed dual triangle area; negative means a fold.
    pub fn min_dual_area(&self) -> f64 {
        self.dual_triangles
            .iter()
            .map(|t| t.area(&self.dual_vertices))
            .fold(f64::INFINITY, f64::min)
    }

    /// SVG overlay of the mesh. `background` may name an image to draw under
    /// it.
    pub fn to_svg(&self, background: Option<&str>, show_initial: bool) -> String {
        let s = self.side;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{s}" height="{s}" viewBox="-0.5 -0.5 {s} {s}">"#
        );
        if let Some(href) = background {
            let _ = writeln!(
                out,
                r#"<image x="-0.5" y="-0.5" width="{s}" height="{s}" xlink:href="{href}"/>"#
            );
        }
        for (t, tri) in self.dual_triangles.iter().enumerate() {
            let [a, b, c] = tri.points(&self.dual_vertices);
            let region = self.region_labels[t];
            let _ = writeln!(
                out,
                r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{}" fill-opacity="{}" stroke="black" stroke-width="0.6"><title>{t} {}</title></polygon>"#,
                a.x, a.y, b.x, b.y, c.x, c.y,
                region.svg_color(),
                if region.is_key() { 0.55 } else { 0.2 },
                region.as_str()
            );
        }
        if show_initial {
            for tri in &self.initial_triangles {
                let [a, b, c] = tri.points(&self.initial_vertices);
                let _ = writeln!(
                    out,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="white" stroke-width="0.4" stroke-dasharray="2,2"/>"#,
                    a.x, a.y, b.x, b.y, c.x, c.y
                );
            }
        }
        for p in self.landmarks.points() {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="yellow"/>"#, p.x, p.y);
        }
        out.push_str("</svg>\n");
        out
    }
}
