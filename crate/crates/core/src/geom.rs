//! Sketch-and-extrude interpreter over a voxel lattice.
//!
//! Profiles are extruded along the sketch-plane normal and rasterized by
//! sampling voxel centers; booleans are exact set operations on the voxel
//! occupancy. A triangle mesh of every additive extrusion is kept for
//! rendering only.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{validate_grammar, BooleanOp, CadOp, CadProgram, Plane};
use crate::vector::{arc_center, chain_points, Point2, VectorError};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Loop closure tolerance, normalized units.
pub const CLOSE_EPS: f64 = 1e-6;
/// Gaps up to two quantization steps of a `[-1, 1]` coordinate are snapped shut.
pub const SNAP_CLOSE: f64 = 2.0 * (2.0 / 256.0);
/// World-unit margin added around the `[-s, s]^3` working cube.
pub const LATTICE_MARGIN: f64 = 2.0;
pub const ARC_CHORDS: usize = 64;
pub const CIRCLE_SEGMENTS: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("profile does not close (gap {gap:.6})")]
    OpenProfile { gap: f64 },
    #[error("profile intersects itself")]
    SelfIntersecting,
    #[error("profile encloses no area")]
    DegenerateProfile,
    #[error("arc start and end coincide")]
    DegenerateChord,
    #[error("invalid arc sweep {0} degrees")]
    InvalidSweep(f64),
    #[error("sketch has no profile {index}")]
    NoProfile { index: usize },
    #[error("boolean result has no occupied voxels")]
    EmptyResult,
    #[error("program produces no solid body")]
    NonSolid,
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("voxel resolution must be at least 1")]
    BadResolution,
    #[error("voxel lattices differ")]
    LatticeMismatch,
    #[error("malformed voxel file: {0}")]
    MalformedVoxels(String),
}

impl From<VectorError> for GeomError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::DegenerateChord => GeomError::DegenerateChord,
            VectorError::InvalidSweep(s) => GeomError::InvalidSweep(s),
            other => GeomError::InvalidProgram(other.to_string()),
        }
    }
}

/// Failure to turn a program into at least one non-empty solid.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("program does not parse: {0}")]
pub struct ParseFailure(pub GeomError);

/// One of the canonical planes with its world basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchPlane {
    pub plane: Plane,
    pub u: Vector3,
    pub v: Vector3,
    pub normal: Vector3,
}

impl SketchPlane {
    pub fn new(plane: Plane) -> SketchPlane {
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        match plane {
            Plane::XY => SketchPlane {
                plane,
                u: x,
                v: y,
                normal: z,
            },
            Plane::XZ => SketchPlane {
                plane,
                u: x,
                v: z,
                normal: -y,
            },
            Plane::YZ => SketchPlane {
                plane,
                u: y,
                v: z,
                normal: x,
            },
        }
    }

    pub fn to_world(&self, p: Point2, w: f64) -> Point3 {
        Point3::from(self.u * p.x + self.v * p.y + self.normal * w)
    }

    /// Lattice axes carrying u, v and the normal, plus the normal's sign.
    fn axes(&self) -> (usize, usize, usize, f64) {
        match self.plane {
            Plane::XY => (0, 1, 2, 1.0),
            Plane::XZ => (0, 2, 1, -1.0),
            Plane::YZ => (1, 2, 0, 1.0),
        }
    }
}

/// A sketch curve with its start point already resolved by chaining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchCurve {
    Line {
        start: Point2,
        end: Point2,
    },
    Arc {
        start: Point2,
        end: Point2,
        sweep_deg: f64,
    },
    Circle {
        center: Point2,
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line {
        start: Point2,
        end: Point2,
    },
    Arc {
        start: Point2,
        end: Point2,
        center: Point2,
        radius: f64,
        sweep_deg: f64,
    },
}

impl Segment {
    pub fn start(&self) -> Point2 {
        match *self {
            Segment::Line { start, .. } | Segment::Arc { start, .. } => start,
        }
    }

    pub fn end(&self) -> Point2 {
        match *self {
            Segment::Line { end, .. } | Segment::Arc { end, .. } => end,
        }
    }

    /// Appends the polyline vertices of this segment, excluding its end point.
    fn tessellate_into(&self, out: &mut Vec<Point2>) {
        match *self {
            Segment::Line { start, .. } => out.push(start),
            Segment::Arc {
                start,
                center,
                radius,
                sweep_deg,
                ..
            } => {
                let a0 = (start.y - center.y).atan2(start.x - center.x);
                let step = sweep_deg.to_radians() / ARC_CHORDS as f64;
                out.push(start);
                for k in 1..ARC_CHORDS {
                    let a = a0 + step * k as f64;
                    out.push(Point2::new(
                        center.x + radius * a.cos(),
                        center.y + radius * a.sin(),
                    ));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    Loop(Vec<Segment>),
    Circle { center: Point2, radius: f64 },
}

/// A closed region in sketch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: ProfileKind,
    pub closure_gap: f64,
    polygon: Vec<Point2>,
}

impl Profile {
    pub fn circle(center: Point2, radius: f64) -> Profile {
        let polygon = (0..CIRCLE_SEGMENTS)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / CIRCLE_SEGMENTS as f64;
                Point2::new(center.x + radius * a.cos(), center.y + radius * a.sin())
            })
            .collect();
        Profile {
            kind: ProfileKind::Circle { center, radius },
            closure_gap: 0.0,
            polygon,
        }
    }

    /// Tessellated boundary (arcs at 64 chords, circles at 64 segments).
    pub fn polygon(&self) -> &[Point2] {
        &self.polygon
    }

    /// Axis-aligned bounds `(min, max)` in sketch coordinates.
    pub fn bounds(&self) -> (Point2, Point2) {
        if let ProfileKind::Circle { center, radius } = self.kind {
            return (
                Point2::new(center.x - radius, center.y - radius),
                Point2::new(center.x + radius, center.y + radius),
            );
        }
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.polygon {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    const EPS: f64 = 1e-12;
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    let straddle = |p: f64, q: f64| (p > EPS && q < -EPS) || (p < -EPS && q > EPS);
    if straddle(d1, d2) && straddle(d3, d4) {
        return true;
    }
    (d1.abs() <= EPS && on_segment(c, d, a))
        || (d2.abs() <= EPS && on_segment(c, d, b))
        || (d3.abs() <= EPS && on_segment(a, b, c))
        || (d4.abs() <= EPS && on_segment(a, b, d))
}

fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

fn self_intersects(poly: &[Point2]) -> bool {
    let n = poly.len();
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        let (_, c) = edge((i + 1) % n);
        // adjacent edges folding back onto each other
        if orient(a, b, c).abs() <= 1e-12 && (b - a).dot(&(c - b)) < 0.0 {
            return true;
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = edge(j);
            if segments_touch(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn close_loop(chain: &[SketchCurve]) -> Result<Profile, GeomError> {
    let mut curves: Vec<SketchCurve> = chain
        .iter()
        .copied()
        .filter(|c| !matches!(c, SketchCurve::Line { start, end } if (end - start).norm() < 1e-12))
        .collect();
    let (first, last) = match (curves.first(), curves.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(GeomError::DegenerateProfile),
    };
    let start_of = |c: &SketchCurve| match *c {
        SketchCurve::Line { start, .. } | SketchCurve::Arc { start, .. } => start,
        SketchCurve::Circle { .. } => unreachable!("circles are not chained"),
    };
    let end_of = |c: &SketchCurve| match *c {
        SketchCurve::Line { end, .. } | SketchCurve::Arc { end, .. } => end,
        SketchCurve::Circle { .. } => unreachable!("circles are not chained"),
    };
    let origin = start_of(&first);
    let gap = (end_of(&last) - origin).norm();
    if gap > SNAP_CLOSE {
        return Err(GeomError::OpenProfile { gap });
    }
    if gap > CLOSE_EPS {
        let n = curves.len();
        match &mut curves[n - 1] {
            SketchCurve::Line { end, .. } | SketchCurve::Arc { end, .. } => *end = origin,
            SketchCurve::Circle { .. } => unreachable!(),
        }
    }

    let mut segments = Vec::with_capacity(curves.len());
    for c in &curves {
        segments.push(match *c {
            SketchCurve::Line { start, end } => Segment::Line { start, end },
            SketchCurve::Arc {
                start,
                end,
                sweep_deg,
            } => {
                let (center, radius) = arc_center(start, end, sweep_deg)?;
                Segment::Arc {
                    start,
                    end,
                    center,
                    radius,
                    sweep_deg,
                }
            }
            SketchCurve::Circle { .. } => unreachable!(),
        });
    }
    // a snapped closing line may have collapsed to nothing
    segments.retain(|s| !matches!(s, Segment::Line { start, end } if (end - start).norm() < 1e-12));
    let all_lines = segments.iter().all(|s| matches!(s, Segment::Line { .. }));
    if segments.is_empty() || (all_lines && segments.len() < 3) {
        return Err(GeomError::DegenerateProfile);
    }

    let mut polygon = Vec::new();
    for s in &segments {
        s.tessellate_into(&mut polygon);
    }
    if self_intersects(&polygon) {
        return Err(GeomError::SelfIntersecting);
    }
    if signed_area(&polygon).abs() < 1e-12 {
        return Err(GeomError::DegenerateProfile);
    }
    Ok(Profile {
        kind: ProfileKind::Loop(segments),
        closure_gap: gap,
        polygon,
    })
}

/// Groups one sketch's curves into closed profiles: each circle is its own
/// profile, each maximal run of lines and arcs must form a closed loop.
pub fn build_profiles(curves: &[SketchCurve]) -> Result<Vec<Profile>, GeomError> {
    let mut profiles = Vec::new();
    let mut chain: Vec<SketchCurve> = Vec::new();
    for c in curves {
        match *c {
            SketchCurve::Circle { center, radius } => {
                if !chain.is_empty() {
                    profiles.push(close_loop(&chain)?);
                    chain.clear();
                }
                if radius.is_nan() || radius <= 0.0 {
                    return Err(GeomError::DegenerateProfile);
                }
                profiles.push(Profile::circle(center, radius));
            }
            _ => chain.push(*c),
        }
    }
    if !chain.is_empty() {
        profiles.push(close_loop(&chain)?);
    }
    Ok(profiles)
}

/// Even-odd containment. Circles use the exact disk; loops use the
/// tessellated boundary with the half-open crossing convention.
pub fn point_in_profile(p: Point2, profile: &Profile) -> bool {
    if let ProfileKind::Circle { center, radius } = profile.kind {
        return (p - center).norm_squared() <= radius * radius;
    }
    let poly = &profile.polygon;
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Cubic voxel lattice `[-h, h]^3` with `resolution` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub resolution: usize,
    pub half_extent: f64,
}

impl Lattice {
    pub fn for_scale(scale: f64, resolution: usize) -> Lattice {
        Lattice {
            resolution,
            half_extent: scale + LATTICE_MARGIN,
        }
    }

    pub fn pitch(&self) -> f64 {
        2.0 * self.half_extent / self.resolution as f64
    }

    /// World coordinate of the center of cell `i` along any axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_extent + (i as f64 + 0.5) * self.pitch()
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        let r = self.resolution;
        ijk[0] + r * (ijk[1] + r * ijk[2])
    }

    /// Cells whose centers fall in `[lo, hi]` along an axis.
    fn cell_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let p = self.pitch();
        let first = ((lo + self.half_extent) / p - 0.5).ceil().max(0.0) as usize;
        let last = ((hi + self.half_extent) / p - 0.5).floor();
        if last < 0.0 {
            return 0..0;
        }
        first..(last as usize + 1).min(self.resolution)
    }
}

/// Occupancy over a [`Lattice`], x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub lattice: Lattice,
    cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(lattice: Lattice) -> VoxelGrid {
        VoxelGrid {
            lattice,
            cells: vec![false; lattice.cell_count()],
        }
    }

    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(Point3) -> bool) -> VoxelGrid {
        let mut g = VoxelGrid::empty(lattice);
        let r = lattice.resolution;
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let p = Point3::new(lattice.center(i), lattice.center(j), lattice.center(k));
                    g.cells[lattice.index([i, j, k])] = f(p);
                }
            }
        }
        g
    }

    pub fn get(&self, ijk: [usize; 3]) -> bool {
        self.cells[self.lattice.index(ijk)]
    }

    pub fn set(&mut self, ijk: [usize; 3], value: bool) {
        let idx = self.lattice.index(ijk);
        self.cells[idx] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Occupied volume in world units.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.lattice.pitch().powi(3)
    }

    fn zip_with(
        &mut self,
        other: &VoxelGrid,
        f: impl Fn(bool, bool) -> bool,
    ) -> Result<(), GeomError> {
        if self.lattice != other.lattice {
            return Err(GeomError::LatticeMismatch);
        }
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a = f(*a, b);
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &VoxelGrid) -> Result<(), GeomError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn subtract(&mut self, other: &VoxelGrid) -> Result<(), GeomError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn intersect_with(&mut self, other: &VoxelGrid) -> Result<(), GeomError> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Run-length encoded binary form.
    ///
    /// Layout (little endian): magic `CSVX`, `u8` version 1, `u32` resolution,
    /// `f64` half extent, `u32` run count, then `u32` run lengths alternating
    /// empty/occupied starting with empty, over cells in x-fastest order.
    pub fn to_rle_bytes(&self) -> Vec<u8> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &c in &self.cells {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        runs.push(len);
        let mut out = Vec::with_capacity(21 + runs.len() * 4);
        out.extend_from_slice(b"CSVX");
        out.push(1);
        out.extend_from_slice(&(self.lattice.resolution as u32).to_le_bytes());
        out.extend_from_slice(&self.lattice.half_extent.to_le_bytes());
        out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
        for r in runs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }

    pub fn from_rle_bytes(bytes: &[u8]) -> Result<VoxelGrid, GeomError> {
        let bad = |m: &str| GeomError::MalformedVoxels(m.to_string());
        if bytes.len() < 21 || &bytes[..4] != b"CSVX" {
            return Err(bad("missing header"));
        }
        if bytes[4] != 1 {
            return Err(bad("unsupported version"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let resolution = u32_at(5) as usize;
        let half_extent = f64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
        let runs = u32_at(17) as usize;
        if bytes.len() != 21 + runs * 4 {
            return Err(bad("run table length mismatch"));
        }
        let lattice = Lattice {
            resolution,
            half_extent,
        };
        let mut cells = Vec::with_capacity(lattice.cell_count());
        for r in 0..runs {
            let len = u32_at(21 + r * 4) as usize;
            cells.extend(std::iter::repeat_n(r % 2 == 1, len));
        }
        if cells.len() != lattice.cell_count() {
            return Err(bad("runs do not cover the lattice"));
        }
        Ok(VoxelGrid { lattice, cells })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub triangles: Vec<[Point3; 3]>,
}

impl Mesh {
    pub fn append(&mut self, other: &Mesh) {
        self.triangles.extend_from_slice(&other.triangles);
    }

    pub fn to_ascii_stl(&self, name: &str) -> String {
        let mut out = format!("solid {name}\n");
        for t in &self.triangles {
            let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            let _ = writeln!(out, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
            out.push_str("    outer loop\n");
            for v in t {
                let _ = writeln!(out, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z);
            }
            out.push_str("    endloop\n  endfacet\n");
        }
        let _ = writeln!(out, "endsolid {name}");
        out
    }
}

fn point_in_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    let eps = -1e-14;
    orient(a, b, p) >= eps && orient(b, c, p) >= eps && orient(c, a, p) >= eps
}

/// Ear-clipping triangulation of a simple polygon.
fn triangulate(poly: &[Point2]) -> Vec<[usize; 3]> {
    let n = poly.len();
    if n < 3 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if signed_area(poly) < 0.0 {
        idx.reverse();
    }
    let mut tris = Vec::with_capacity(n - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (ia, ib, ic) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            let turn = orient(a, b, c);
            if turn.abs() <= 1e-15 {
                idx.remove(i);
                clipped = true;
                break;
            }
            if turn < 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&k| {
                let p = poly[k];
                k != ia
                    && k != ib
                    && k != ic
                    && p != a
                    && p != b
                    && p != c
                    && point_in_triangle(p, a, b, c)
            });
            if !blocked {
                tris.push([ia, ib, ic]);
                idx.remove(i);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // numerically stuck: fan out the remainder
            for k in 1..idx.len() - 1 {
                tris.push([idx[0], idx[k], idx[k + 1]]);
            }
            return tris;
        }
    }
    if idx.len() == 3 {
        tris.push([idx[0], idx[1], idx[2]]);
    }
    tris
}

fn extrusion_mesh(profile: &Profile, plane: &SketchPlane, depth: f64, scale: f64) -> Mesh {
    let poly: Vec<Point2> = profile
        .polygon
        .iter()
        .map(|p| Point2::new(p.x * scale, p.y * scale))
        .collect();
    let top = depth * scale;
    let n = poly.len();
    let mut mesh = Mesh::default();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (a0, b0) = (plane.to_world(a, 0.0), plane.to_world(b, 0.0));
        let (a1, b1) = (plane.to_world(a, top), plane.to_world(b, top));
        mesh.triangles.push([a0, b0, b1]);
        mesh.triangles.push([a0, b1, a1]);
    }
    for [i, j, k] in triangulate(&poly) {
        mesh.triangles.push([
            plane.to_world(poly[i], 0.0),
            plane.to_world(poly[k], 0.0),
            plane.to_world(poly[j], 0.0),
        ]);
        mesh.triangles.push([
            plane.to_world(poly[i], top),
            plane.to_world(poly[j], top),
            plane.to_world(poly[k], top),
        ]);
    }
    mesh
}

fn rasterize(
    profile: &Profile,
    plane: &SketchPlane,
    depth: f64,
    scale: f64,
    lattice: Lattice,
) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(lattice);
    let (ua, va, na, sign) = plane.axes();
    let (lo, hi) = profile.bounds();
    let urange = lattice.cell_range(lo.x * scale, hi.x * scale);
    let vrange = lattice.cell_range(lo.y * scale, hi.y * scale);
    let (w0, w1) = if depth > 0.0 {
        (0.0, depth * scale)
    } else {
        (depth * scale, 0.0)
    };
    let layers: Vec<usize> = (0..lattice.resolution)
        .filter(|&k| {
            let w = sign * lattice.center(k);
            w0 <= w && w < w1
        })
        .collect();
    for iu in urange {
        let u = lattice.center(iu) / scale;
        for iv in vrange.clone() {
            let v = lattice.center(iv) / scale;
            if !point_in_profile(Point2::new(u, v), profile) {
                continue;
            }
            for &k in &layers {
                let mut ijk = [0; 3];
                ijk[ua] = iu;
                ijk[va] = iv;
                ijk[na] = k;
                grid.set(ijk, true);
            }
        }
    }
    grid
}

/// A solid body: exact voxel occupancy plus the meshes of its additive extrusions.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub voxels: VoxelGrid,
    pub meshes: Vec<Mesh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolidScene {
    pub bodies: Vec<Body>,
    pub scale: f64,
    pub lattice: Lattice,
}

impl SolidScene {
    pub fn empty(scale: f64, resolution: usize) -> SolidScene {
        SolidScene {
            bodies: Vec::new(),
            scale,
            lattice: Lattice::for_scale(scale, resolution),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.iter().all(|b| b.voxels.is_empty())
    }

    /// Union of all body occupancies.
    pub fn occupancy(&self) -> VoxelGrid {
        let mut g = VoxelGrid::empty(self.lattice);
        for b in &self.bodies {
            g.union_with(&b.voxels)
                .expect("bodies share the scene lattice");
        }
        g
    }

    pub fn volume(&self) -> f64 {
        self.occupancy().volume()
    }

    /// All render meshes merged.
    pub fn mesh(&self) -> Mesh {
        let mut m = Mesh::default();
        for b in &self.bodies {
            for part in &b.meshes {
                m.append(part);
            }
        }
        m
    }
}

/// Extrudes `profile` by `depth` (normalized, signed, along the plane normal)
/// and combines the result with `scene`.
pub fn extrude(
    profile: &Profile,
    plane: Plane,
    depth: f64,
    boolean: BooleanOp,
    scale: f64,
    mut scene: SolidScene,
) -> Result<SolidScene, GeomError> {
    if depth == 0.0 || !depth.is_finite() {
        return Err(GeomError::EmptyResult);
    }
    let plane = SketchPlane::new(plane);
    let tool = rasterize(profile, &plane, depth, scale, scene.lattice);
    match boolean {
        BooleanOp::Add => {
            if tool.is_empty() {
                return Err(GeomError::EmptyResult);
            }
            let mesh = extrusion_mesh(profile, &plane, depth, scale);
            scene.bodies.push(Body {
                voxels: tool,
                meshes: vec![mesh],
            });
        }
        BooleanOp::Join => {
            let mesh = extrusion_mesh(profile, &plane, depth, scale);
            match scene.bodies.last_mut() {
                Some(body) => {
                    body.voxels.union_with(&tool)?;
                    body.meshes.push(mesh);
                }
                None => scene.bodies.push(Body {
                    voxels: tool,
                    meshes: vec![mesh],
                }),
            }
        }
        BooleanOp::Cut => {
            for body in &mut scene.bodies {
                body.voxels.subtract(&tool)?;
            }
        }
        BooleanOp::Intersect => {
            for body in &mut scene.bodies {
                body.voxels.intersect_with(&tool)?;
            }
        }
    }
    scene.bodies.retain(|b| !b.voxels.is_empty());
    if scene.bodies.is_empty() {
        return Err(GeomError::EmptyResult);
    }
    Ok(scene)
}

/// Runs a program and returns its solids. Fails unless at least one
/// non-empty body results.
pub fn evaluate_program(
    program: &CadProgram,
    resolution: usize,
) -> Result<SolidScene, ParseFailure> {
    if resolution == 0 {
        return Err(ParseFailure(GeomError::BadResolution));
    }
    let report = validate_grammar(program);
    if !report.ok() {
        return Err(ParseFailure(GeomError::InvalidProgram(report.to_string())));
    }
    let starts: HashMap<usize, Point2> = chain_points(program)
        .into_iter()
        .map(|c| (c.op_index, c.start))
        .collect();
    let mut scene = SolidScene::empty(program.scale, resolution);
    let mut plane = Plane::XY;
    let mut pending: Vec<SketchCurve> = Vec::new();
    for (i, op) in program.ops.iter().enumerate() {
        match *op {
            CadOp::Sop => {}
            CadOp::Eop => break,
            CadOp::Sketch { plane: p } => {
                plane = p;
                pending.clear();
            }
            CadOp::Line { x, y } => pending.push(SketchCurve::Line {
                start: starts[&i],
                end: Point2::new(x, y),
            }),
            CadOp::Arc { x, y, sweep } => pending.push(SketchCurve::Arc {
                start: starts[&i],
                end: Point2::new(x, y),
                sweep_deg: sweep * 180.0,
            }),
            CadOp::Circle { x, y, radius } => pending.push(SketchCurve::Circle {
                center: Point2::new(x, y),
                radius,
            }),
            CadOp::Extrude {
                depth,
                profile,
                boolean,
            } => {
                let profiles = build_profiles(&pending).map_err(ParseFailure)?;
                let index = profile as usize;
                let chosen = profiles
                    .get(index)
                    .ok_or(ParseFailure(GeomError::NoProfile { index }))?;
                scene = extrude(chosen, plane, depth, boolean, program.scale, scene)
                    .map_err(ParseFailure)?;
                pending.clear();
            }
        }
    }
    if scene.is_empty() {
        return Err(ParseFailure(GeomError::NonSolid));
    }
    Ok(scene)
}

/// Largest absolute normalized coordinate reached by any extruded profile.
pub fn program_extent(program: &CadProgram) -> Result<f64, ParseFailure> {
    let starts: HashMap<usize, Point2> = chain_points(program)
        .into_iter()
        .map(|c| (c.op_index, c.start))
        .collect();
    let mut pending = Vec::new();
    let mut extent: f64 = 0.0;
    for (i, op) in program.ops.iter().enumerate() {
        match *op {
            CadOp::Sketch { .. } => pending.clear(),
            CadOp::Line { x, y } => pending.push(SketchCurve::Line {
                start: starts[&i],
                end: Point2::new(x, y),
            }),
            CadOp::Arc { x, y, sweep } => pending.push(SketchCurve::Arc {
                start: starts[&i],
                end: Point2::new(x, y),
                sweep_deg: sweep * 180.0,
            }),
            CadOp::Circle { x, y, radius } => pending.push(SketchCurve::Circle {
                center: Point2::new(x, y),
                radius,
            }),
            CadOp::Extrude { depth, .. } => {
                for p in build_profiles(&pending).map_err(ParseFailure)? {
                    let (lo, hi) = p.bounds();
                    extent = extent
                        .max(lo.x.abs())
                        .max(lo.y.abs())
                        .max(hi.x.abs())
                        .max(hi.y.abs());
                }
                extent = extent.max(depth.abs());
                pending.clear();
            }
            CadOp::Sop => {}
            CadOp::Eop => break,
        }
    }
    Ok(extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cylinder() -> CadProgram {
        CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Circle {
                x: 0.0,
                y: 0.0,
                radius: 0.5,
            },
            CadOp::extrude(1.0),
        ])
    }

    fn line(x0: f64, y0: f64, x1: f64, y1: f64) -> SketchCurve {
        SketchCurve::Line {
            start: Point2::new(x0, y0),
            end: Point2::new(x1, y1),
        }
    }

    fn triangle() -> Profile {
        build_profiles(&[
            line(0.0, 0.0, 0.8, 0.0),
            line(0.8, 0.0, 0.0, 0.8),
            line(0.0, 0.8, 0.0, 0.0),
        ])
        .unwrap()
        .remove(0)
    }

    #[test]
    fn plane_bases_are_right_handed() {
        for p in Plane::ALL {
            let sp = SketchPlane::new(p);
            assert_eq!(sp.u.cross(&sp.v), sp.normal, "{p:?}");
            assert_eq!(sp.u.dot(&sp.v), 0.0);
        }
    }

    #[test]
    fn circle_and_triangle_profiles() {
        let ps = build_profiles(&[SketchCurve::Circle {
            center: Point2::origin(),
            radius: 0.5,
        }])
        .unwrap();
        assert_eq!(ps.len(), 1);
        assert!(matches!(ps[0].kind, ProfileKind::Circle { radius, .. } if radius == 0.5));

        let t = triangle();
        assert!(matches!(&t.kind, ProfileKind::Loop(s) if s.len() == 3));
        assert_eq!(t.closure_gap, 0.0);
    }

    #[test]
    fn open_chain_is_rejected() {
        let err =
            build_profiles(&[line(0.0, 0.0, 1.0, 0.0), line(1.0, 0.0, 1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, GeomError::OpenProfile { gap } if (gap - 2f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn near_closure_snaps() {
        let e = 0.005;
        let p = build_profiles(&[
            line(0.0, 0.0, 0.8, 0.0),
            line(0.8, 0.0, 0.0, 0.8),
            line(0.0, 0.8, e, e),
        ])
        .unwrap()
        .remove(0);
        assert!((p.closure_gap - e * 2f64.sqrt()).abs() < 1e-12);
        match &p.kind {
            ProfileKind::Loop(s) => assert_eq!(s[2].end(), Point2::origin()),
            _ => panic!(),
        }
    }

    #[test]
    fn self_intersection_detected() {
        // bow tie
        let err = build_profiles(&[
            line(0.0, 0.0, 0.5, 0.5),
            line(0.5, 0.5, 0.5, 0.0),
            line(0.5, 0.0, 0.0, 0.5),
            line(0.0, 0.5, 0.0, 0.0),
        ])
        .unwrap_err();
        assert_eq!(err, GeomError::SelfIntersecting);
        // out and back along the same line
        let err =
            build_profiles(&[line(0.0, 0.0, 0.5, 0.0), line(0.5, 0.0, 0.0, 0.0)]).unwrap_err();
        assert!(matches!(
            err,
            GeomError::DegenerateProfile | GeomError::SelfIntersecting
        ));
    }

    #[test]
    fn arc_lens_profile() {
        let a = Point2::new(0.5, 0.0);
        let p = build_profiles(&[
            SketchCurve::Arc {
                start: Point2::origin(),
                end: a,
                sweep_deg: 90.0,
            },
            SketchCurve::Arc {
                start: a,
                end: Point2::origin(),
                sweep_deg: 90.0,
            },
        ])
        .unwrap()
        .remove(0);
        assert_eq!(p.polygon().len(), 2 * ARC_CHORDS);
        assert!(point_in_profile(Point2::new(0.25, 0.0), &p));
        assert!(!point_in_profile(Point2::new(0.25, 0.3), &p));
    }

    #[test]
    fn containment() {
        let unit = Profile::circle(Point2::origin(), 1.0);
        assert!(point_in_profile(Point2::origin(), &unit));
        assert!(!point_in_profile(Point2::new(2.0, 0.0), &unit));
        let t = triangle();
        assert!(point_in_profile(Point2::new(0.8 / 3.0, 0.8 / 3.0), &t));
        assert!(!point_in_profile(Point2::new(0.5, 0.5), &t));
    }

    #[test]
    fn cylinder_volume_within_three_percent() {
        let scene = evaluate_program(&cylinder(), 64).unwrap();
        assert_eq!(scene.bodies.len(), 1);
        let exact = PI * 25.0 * 10.0;
        let rel = (scene.volume() - exact).abs() / exact;
        assert!(rel < 0.03, "relative error {rel}");
    }

    #[test]
    fn cylinder_volume_converges() {
        let exact = PI * 25.0 * 10.0;
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&r| (evaluate_program(&cylinder(), r).unwrap().volume() - exact).abs() / exact)
            .collect();
        assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "{errs:?}");
    }

    #[test]
    fn tri_prism_volume() {
        let p = CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Line { x: 0.8, y: 0.0 },
            CadOp::Line { x: 0.0, y: 0.8 },
            CadOp::Line { x: 0.0, y: 0.0 },
            CadOp::extrude(1.0),
        ]);
        let scene = evaluate_program(&p, 64).unwrap();
        let exact = 0.5 * 8.0 * 8.0 * 10.0;
        let rel = (scene.volume() - exact).abs() / exact;
        assert!(rel < 0.03, "relative error {rel}");
    }

    #[test]
    fn negative_depth_mirrors() {
        let mut down = cylinder();
        down.ops[3] = CadOp::extrude(-1.0);
        let up = evaluate_program(&cylinder(), 32).unwrap().occupancy();
        let dn = evaluate_program(&down, 32).unwrap().occupancy();
        assert_eq!(up.count(), dn.count());
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    assert_eq!(up.get([i, j, k]), dn.get([i, j, 31 - k]));
                }
            }
        }
    }

    #[test]
    fn planes_place_extrusion_along_normal() {
        for (plane, axis, sign) in [
            (Plane::XY, 2, 1.0),
            (Plane::XZ, 1, -1.0),
            (Plane::YZ, 0, 1.0),
        ] {
            let mut p = cylinder();
            p.ops[1] = CadOp::Sketch { plane };
            let g = evaluate_program(&p, 32).unwrap().occupancy();
            let l = g.lattice;
            for k in 0..32 {
                for j in 0..32 {
                    for i in 0..32 {
                        if g.get([i, j, k]) {
                            let c = [l.center(i), l.center(j), l.center(k)];
                            let w = sign * c[axis];
                            assert!((0.0..10.0).contains(&w), "{plane:?} w={w}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn empty_program_fails_to_parse() {
        let err = evaluate_program(&CadProgram::default(), 32).unwrap_err();
        assert_eq!(err, ParseFailure(GeomError::NonSolid));
        let sketch_only = CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Circle {
                x: 0.0,
                y: 0.0,
                radius: 0.5,
            },
        ]);
        assert_eq!(
            evaluate_program(&sketch_only, 32).unwrap_err(),
            ParseFailure(GeomError::NonSolid)
        );
        let open = CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Line { x: 1.0, y: 0.0 },
            CadOp::Line { x: 1.0, y: 1.0 },
            CadOp::extrude(0.5),
        ]);
        assert!(matches!(
            evaluate_program(&open, 32),
            Err(ParseFailure(GeomError::OpenProfile { .. }))
        ));
        let invalid = CadProgram::from_body([CadOp::extrude(0.5)]);
        assert!(matches!(
            evaluate_program(&invalid, 32),
            Err(ParseFailure(GeomError::InvalidProgram(_)))
        ));
        assert_eq!(
            evaluate_program(&cylinder(), 0),
            Err(ParseFailure(GeomError::BadResolution))
        );
    }

    #[test]
    fn tiny_profile_is_empty_result() {
        let p = CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Circle {
                x: 0.01,
                y: 0.01,
                radius: 0.001,
            },
            CadOp::extrude(0.5),
        ]);
        assert_eq!(
            evaluate_program(&p, 16).unwrap_err(),
            ParseFailure(GeomError::EmptyResult)
        );
    }

    #[test]
    fn determinism() {
        let a = evaluate_program(&cylinder(), 48).unwrap();
        let b = evaluate_program(&cylinder(), 48).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn circle_shift_moves_one_layer() {
        let lattice = Lattice::for_scale(10.0, 32);
        let pitch = lattice.pitch() / 10.0;
        let base = |x: f64| {
            CadProgram::from_body([
                CadOp::Sketch { plane: Plane::XY },
                CadOp::Circle {
                    x,
                    y: 0.013,
                    radius: 0.3,
                },
                CadOp::extrude(0.5),
            ])
        };
        let a = evaluate_program(&base(0.011), 32).unwrap().occupancy();
        let b = evaluate_program(&base(0.011 + pitch), 32)
            .unwrap()
            .occupancy();
        assert_eq!(a.count(), b.count());
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..31 {
                    assert_eq!(a.get([i, j, k]), b.get([i + 1, j, k]));
                }
            }
        }
    }

    #[test]
    fn mesh_has_walls_and_caps() {
        let scene = evaluate_program(&cylinder(), 16).unwrap();
        let mesh = scene.mesh();
        // 64 wall quads plus two 62-triangle caps
        assert_eq!(mesh.triangles.len(), 2 * 64 + 2 * 62);
        let stl = mesh.to_ascii_stl("cyl");
        assert!(stl.starts_with("solid cyl\n"));
        assert_eq!(stl.matches("facet normal").count(), mesh.triangles.len());
    }

    #[test]
    fn triangulation_covers_area() {
        let t = triangle();
        let poly = t.polygon().to_vec();
        let tris = triangulate(&poly);
        let area: f64 = tris
            .iter()
            .map(|[a, b, c]| orient(poly[*a], poly[*b], poly[*c]).abs() / 2.0)
            .sum();
        assert!((area - 0.32).abs() < 1e-12);

        // L-shaped, non-convex
        let l = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        let tris = triangulate(&l);
        let area: f64 = tris
            .iter()
            .map(|[a, b, c]| orient(l[*a], l[*b], l[*c]).abs() / 2.0)
            .sum();
        assert!((area - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rle_round_trip() {
        let g = evaluate_program(&cylinder(), 24).unwrap().occupancy();
        let bytes = g.to_rle_bytes();
        assert_eq!(&bytes[..4], b"CSVX");
        assert_eq!(VoxelGrid::from_rle_bytes(&bytes).unwrap(), g);
        assert!(VoxelGrid::from_rle_bytes(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn program_extent_reports_circle_reach() {
        let p = CadProgram::from_body([
            CadOp::Sketch { plane: Plane::XY },
            CadOp::Circle {
                x: 0.9,
                y: 0.0,
                radius: 0.5,
            },
            CadOp::extrude(0.2),
        ]);
        assert!((program_extent(&p).unwrap() - 1.4).abs() < 1e-12);
    }
}
