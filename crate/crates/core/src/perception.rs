//! Point cloud → occupancy grid → Hough line segments.
//!
//! The pipeline crops the cloud to a vertical band and a horizontal window,
//! projects the survivors onto a binary grid and extracts straight segments
//! with a Hough accumulator. Each accumulator peak is refined by a total
//! least-squares fit of its supporting cells, then walked along its axis and
//! split wherever consecutive cells are further apart than `max_gap`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{rotation_matrix, VesselState};
use crate::geometry::{distance_to_segment, Point};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned body-frame box whose interior is discarded (wake, own hull).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepOut {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl KeepOut {
    fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub keep_out: Option<KeepOut>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            z_min: -0.5,
            z_max: 2.5,
            x_min: -50.0,
            x_max: 50.0,
            y_min: -50.0,
            y_max: 50.0,
            // 3 m behind a 7.9 m hull centered on the body origin
            keep_out: Some(KeepOut {
                x_min: -6.95,
                x_max: -3.95,
                y_min: -2.0,
                y_max: 2.0,
            }),
        }
    }
}

impl FilterSpec {
    pub fn accepts(&self, p: &[f64; 3]) -> bool {
        let [x, y, z] = *p;
        let in_band = z >= self.z_min
            && z <= self.z_max
            && x >= self.x_min
            && x <= self.x_max
            && y >= self.y_min
            && y <= self.y_max;
        in_band && !self.keep_out.is_some_and(|k| k.contains(x, y))
    }
}

pub fn filter_points(cloud: &PointCloud, spec: &FilterSpec) -> PointCloud {
    PointCloud::new(cloud.points.iter().copied().filter(|p| spec.accepts(p)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    /// Body-frame coordinates of the lower-left corner of cell (0, 0).
    pub origin: (f64, f64),
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the lowest y.
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(resolution: f64, origin: (f64, f64), width: usize, height: usize) -> Self {
        Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin.0) / self.resolution).floor();
        let j = ((y - self.origin.1) / self.resolution).floor();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.0 + (i as f64 + 0.5) * self.resolution,
            self.origin.1 + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.cells[j * self.width + i] = true;
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn occupied_centers(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for j in 0..self.height {
            for i in 0..self.width {
                if self.is_occupied(i, j) {
                    out.push(self.cell_center(i, j));
                }
            }
        }
        out
    }
}

/// Projects the cloud onto a square grid spanning ±`extent` around the body
/// origin. Points outside the window are dropped.
pub fn rasterize(cloud: &PointCloud, resolution: f64, extent: f64) -> OccupancyGrid {
    assert!(resolution > 0.0, "grid resolution must be positive");
    let n = (2.0 * extent / resolution).ceil().max(1.0) as usize;
    let mut grid = OccupancyGrid::empty(resolution, (-extent, -extent), n, n);
    for p in &cloud.points {
        if let Some((i, j)) = grid.cell_of(p[0], p[1]) {
            grid.set(i, j);
        }
    }
    grid
}

/// Straight obstacle segment given by center, direction angle and length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x_c: f64,
    pub y_c: f64,
    /// Direction angle in [0, π).
    pub theta: f64,
    pub length: f64,
}

/// Normalizes a line direction to [0, π).
pub fn normalize_direction(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

impl LineSegment {
    pub fn new(x_c: f64, y_c: f64, theta: f64, length: f64) -> Self {
        Self {
            x_c,
            y_c,
            theta: normalize_direction(theta),
            length,
        }
    }

    pub fn from_endpoints(a: Point, b: Point) -> Self {
        let d = b - a;
        let c = (a + b) / 2.0;
        Self::new(c.x, c.y, d.y.atan2(d.x), d.norm())
    }

    pub fn center(&self) -> Point {
        Point::new(self.x_c, self.y_c)
    }

    pub fn direction(&self) -> Point {
        Point::new(self.theta.cos(), self.theta.sin())
    }

    pub fn endpoints(&self) -> (Point, Point) {
        let h = self.direction() * (self.length / 2.0);
        (self.center() - h, self.center() + h)
    }
}

pub fn point_segment_distance(x: f64, y: f64, seg: &LineSegment) -> f64 {
    let (a, b) = seg.endpoints();
    distance_to_segment(&Point::new(x, y), &a, &b)
}

/// Body-frame segments to the inertial frame.
pub fn segments_to_world(segs: &[LineSegment], pose: &VesselState) -> Vec<LineSegment> {
    let r = rotation_matrix(pose.psi);
    segs.iter()
        .map(|s| {
            let x = r[(0, 0)] * s.x_c + r[(0, 1)] * s.y_c + pose.x;
            let y = r[(1, 0)] * s.x_c + r[(1, 1)] * s.y_c + pose.y;
            LineSegment::new(x, y, s.theta + pose.psi, s.length)
        })
        .collect()
}

/// Inertial-frame segments to the body frame of `pose`.
pub fn segments_to_body(segs: &[LineSegment], pose: &VesselState) -> Vec<LineSegment> {
    let r = rotation_matrix(pose.psi);
    segs.iter()
        .map(|s| {
            let dx = s.x_c - pose.x;
            let dy = s.y_c - pose.y;
            let x = r[(0, 0)] * dx + r[(1, 0)] * dy;
            let y = r[(0, 1)] * dx + r[(1, 1)] * dy;
            LineSegment::new(x, y, s.theta - pose.psi, s.length)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub theta_bins: usize,
    pub rho_resolution: f64,
    pub vote_threshold: usize,
    pub max_gap: f64,
    pub min_length: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            theta_bins: 180,
            rho_resolution: 0.2,
            vote_threshold: 10,
            max_gap: 1.0,
            min_length: 2.0,
        }
    }
}

/// A detected segment together with the cells that voted for it.
#[derive(Debug, Clone)]
pub struct Detection {
    pub segment: LineSegment,
    pub support: Vec<Point>,
}

struct LineFit {
    centroid: Point,
    direction: Point,
}

impl LineFit {
    fn normal(&self) -> Point {
        Point::new(-self.direction.y, self.direction.x)
    }

    fn offset(&self, p: &Point) -> f64 {
        (p - self.centroid).dot(&self.normal())
    }

    fn axial(&self, p: &Point) -> f64 {
        (p - self.centroid).dot(&self.direction)
    }
}

/// Total least-squares line through `pts`.
fn fit_line(pts: &[Point]) -> LineFit {
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Point::zeros(), |acc, p| acc + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = p - centroid;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    // principal axis angle of the scatter matrix
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    LineFit {
        centroid,
        direction: Point::new(angle.cos(), angle.sin()),
    }
}

struct Accumulator {
    cos: Vec<f64>,
    sin: Vec<f64>,
    rho_max: f64,
    rho_res: f64,
    n_rho: usize,
    votes: Vec<i32>,
}

impl Accumulator {
    fn new(theta_bins: usize, rho_res: f64, rho_max: f64) -> Self {
        let angles: Vec<f64> = (0..theta_bins).map(|k| k as f64 * PI / theta_bins as f64).collect();
        let n_rho = (2.0 * rho_max / rho_res).ceil() as usize + 1;
        Self {
            cos: angles.iter().map(|a| a.cos()).collect(),
            sin: angles.iter().map(|a| a.sin()).collect(),
            rho_max,
            rho_res,
            n_rho,
            votes: vec![0; theta_bins * n_rho],
        }
    }

    fn vote(&mut self, p: &Point, delta: i32) {
        for k in 0..self.cos.len() {
            let rho = p.x * self.cos[k] + p.y * self.sin[k];
            let j = ((rho + self.rho_max) / self.rho_res).round() as usize;
            self.votes[k * self.n_rho + j.min(self.n_rho - 1)] += delta;
        }
    }

    fn peak(&self, suppressed: &[bool]) -> Option<(usize, i32)> {
        let mut best: Option<(usize, i32)> = None;
        for (idx, &v) in self.votes.iter().enumerate() {
            if suppressed[idx] {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((idx, v));
            }
        }
        best
    }

    /// Normal angle and offset of bin `idx`.
    fn line(&self, idx: usize) -> (Point, f64) {
        let k = idx / self.n_rho;
        let j = idx % self.n_rho;
        let rho = j as f64 * self.rho_res - self.rho_max;
        (Point::new(self.cos[k], self.sin[k]), rho)
    }
}

/// Detects line segments (body frame) with their supporting cells.
pub fn hough_detect(grid: &OccupancyGrid, hp: &HoughParams) -> Vec<Detection> {
    assert!(
        hp.theta_bins >= 2 && hp.rho_resolution > 0.0,
        "invalid Hough parameters"
    );
    let cells = grid.occupied_centers();
    if cells.len() < hp.vote_threshold.max(2) {
        return Vec::new();
    }
    let rho_max = cells.iter().map(|p| p.norm()).fold(0.0, f64::max) + hp.rho_resolution;
    let mut acc = Accumulator::new(hp.theta_bins, hp.rho_resolution, rho_max);
    for p in &cells {
        acc.vote(p, 1);
    }
    let mut active = vec![true; cells.len()];
    let mut suppressed = vec![false; acc.votes.len()];
    let support_band = hp.rho_resolution + grid.resolution / 2.0;
    let mut out = Vec::new();

    while let Some((idx, votes)) = acc.peak(&suppressed) {
        if votes < hp.vote_threshold as i32 {
            break;
        }
        let (normal, rho) = acc.line(idx);
        let mut members: Vec<usize> = (0..cells.len())
            .filter(|&i| active[i] && (cells[i].dot(&normal) - rho).abs() <= hp.rho_resolution)
            .collect();
        if members.len() < hp.vote_threshold {
            suppressed[idx] = true;
            continue;
        }
        // refine the peak line on its own support
        let mut fit = fit_line(&members.iter().map(|&i| cells[i]).collect::<Vec<_>>());
        for _ in 0..2 {
            let refined: Vec<usize> = (0..cells.len())
                .filter(|&i| active[i] && fit.offset(&cells[i]).abs() <= hp.rho_resolution)
                .collect();
            if refined.len() < hp.vote_threshold {
                break;
            }
            members = refined;
            fit = fit_line(&members.iter().map(|&i| cells[i]).collect::<Vec<_>>());
        }

        members.sort_by(|&a, &b| fit.axial(&cells[a]).total_cmp(&fit.axial(&cells[b])));
        let mut runs: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for &i in &members {
            if let Some(&last) = current.last() {
                if fit.axial(&cells[i]) - fit.axial(&cells[last]) > hp.max_gap {
                    runs.push(std::mem::take(&mut current));
                }
            }
            current.push(i);
        }
        runs.push(current);

        let mut accepted = false;
        for run in runs {
            if run.len() < hp.vote_threshold {
                continue;
            }
            let pts: Vec<Point> = run.iter().map(|&i| cells[i]).collect();
            let seg_fit = fit_line(&pts);
            let kept: Vec<usize> = run
                .iter()
                .copied()
                .filter(|&i| seg_fit.offset(&cells[i]).abs() <= support_band)
                .collect();
            if kept.len() < hp.vote_threshold {
                continue;
            }
            let (lo, hi) = kept.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let t = seg_fit.axial(&cells[i]);
                (lo.min(t), hi.max(t))
            });
            let length = hi - lo + grid.resolution;
            if length < hp.min_length {
                continue;
            }
            let center = seg_fit.centroid + seg_fit.direction * ((lo + hi) / 2.0);
            let theta = seg_fit.direction.y.atan2(seg_fit.direction.x);
            for &i in &kept {
                active[i] = false;
                acc.vote(&cells[i], -1);
            }
            out.push(Detection {
                segment: LineSegment::new(center.x, center.y, theta, length),
                support: kept.iter().map(|&i| cells[i]).collect(),
            });
            accepted = true;
        }
        if !accepted {
            suppressed[idx] = true;
        }
    }
    out
}

/// Body-frame line segments detected in `grid`.
pub fn hough_lines(grid: &OccupancyGrid, hp: &HoughParams) -> Vec<LineSegment> {
    hough_detect(grid, hp).into_iter().map(|d| d.segment).collect()
}

/// Full detection chain in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub filter: FilterSpec,
    pub hough: HoughParams,
    pub resolution: f64,
    pub extent: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            hough: HoughParams::default(),
            resolution: 0.2,
            extent: 50.0,
        }
    }
}

pub fn detect_segments(cloud: &PointCloud, cfg: &PerceptionConfig) -> (OccupancyGrid, Vec<LineSegment>) {
    let kept = filter_points(cloud, &cfg.filter);
    let grid = rasterize(&kept, cfg.resolution, cfg.extent);
    let segs = hough_lines(&grid, &cfg.hough);
    (grid, segs)
}
