//! Synthetic registration pairs with known motion and matching.
//!
//! Base shapes are sampled procedurally so nothing needs downloading; an
//! OFF mesh can be sampled instead when a model collection is available.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assignment::PartialPermutationMatrix;
use crate::error::{Error, Result};
use crate::geometry::{apply_motion, EulerAngles, PointCloud, RigidMotion};

pub const MIN_SHAPE_POINTS: usize = 8;
/// Points kept before viewpoint cropping in partial-view pairs.
pub const PARTIAL_VIEW_POOL: usize = 896;
pub const VIEWPOINT_RADIUS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Box,
    Torus,
    Blade,
    /// Fuselage, swept wings, tailplane and fin.
    Composite,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Torus, ShapeKind::Blade, ShapeKind::Composite];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Torus => "torus",
            ShapeKind::Blade => "blade",
            ShapeKind::Composite => "composite",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(ShapeKind::Sphere),
            "box" | "cube" => Ok(ShapeKind::Box),
            "torus" => Ok(ShapeKind::Torus),
            "blade" => Ok(ShapeKind::Blade),
            "composite" | "airplane" => Ok(ShapeKind::Composite),
            _ => Err(Error::UnknownShape(s.to_string())),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Half extents of the procedural box; the corners lie on the unit sphere.
pub fn box_half_extents() -> Vector3<f64> {
    Vector3::new(0.8, 0.5, 0.3).normalize()
}

const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.3;

/// `n` points on the surface of `kind`, inside the unit ball. Bit-identical
/// for equal arguments.
pub fn procedural_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < MIN_SHAPE_POINTS {
        return Err(Error::CloudSize {
            size: n,
            min: MIN_SHAPE_POINTS,
            max: usize::MAX,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| match kind {
            ShapeKind::Sphere => sphere_point(&mut rng),
            ShapeKind::Box => box_point(&mut rng),
            ShapeKind::Torus => torus_point(&mut rng),
            ShapeKind::Blade => blade_point(&mut rng),
            ShapeKind::Composite => composite_point(&mut rng),
        })
        .collect();
    PointCloud::new(points)
}

fn sphere_point(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let norm: f64 = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

fn box_point(rng: &mut impl Rng) -> Vector3<f64> {
    let h = box_half_extents();
    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 2;
    for (k, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = k;
            break;
        }
        pick -= a;
    }
    let mut p = Vector3::new(rng.random_range(-h.x..=h.x), rng.random_range(-h.y..=h.y), rng.random_range(-h.z..=h.z));
    p[axis] = if rng.random_bool(0.5) { h[axis] } else { -h[axis] };
    p
}

fn torus_point(rng: &mut impl Rng) -> Vector3<f64> {
    // area element is proportional to R + r cos(v)
    loop {
        let u = rng.random_range(0.0..2.0 * PI);
        let v = rng.random_range(0.0..2.0 * PI);
        let accept = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.random_range(0.0..1.0) <= accept {
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            return Vector3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
        }
    }
}

fn blade_point(rng: &mut impl Rng) -> Vector3<f64> {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let v: f64 = rng.random_range(-1.0..=1.0);
    let chord = 0.35 * (1.0 - 0.5 * u.abs());
    let twist = 0.8 * u;
    let camber = 0.08 * (1.0 - v * v) * if rng.random_bool(0.5) { 1.0 } else { 0.4 };
    let (s, c) = twist.sin_cos();
    Vector3::new(0.85 * u, chord * v * c - camber * s, chord * v * s + camber * c)
}

fn composite_point(rng: &mut impl Rng) -> Vector3<f64> {
    // rough surface areas: fuselage, wings, tailplane, fin
    let weights = [0.55, 0.3, 0.08, 0.07];
    let mut pick = rng.random_range(0.0..1.0);
    let mut part = 3;
    for (k, w) in weights.iter().enumerate() {
        if pick < *w {
            part = k;
            break;
        }
        pick -= w;
    }
    match part {
        0 => {
            // fuselage along x, blunt tail and pointed nose
            let x: f64 = rng.random_range(-0.85..0.9);
            let taper = if x > 0.55 {
                ((0.9 - x) / 0.35).sqrt()
            } else if x < -0.5 {
                0.45 + 0.55 * (x + 0.85) / 0.35
            } else {
                1.0
            };
            let radius = 0.12 * taper;
            let a = rng.random_range(0.0..2.0 * PI);
            Vector3::new(x, radius * a.cos(), 0.8 * radius * a.sin())
        }
        1 => {
            // swept, tapered main wing below the fuselage axis
            let s: f64 = rng.random_range(-1.0..1.0);
            let span = 0.75 * s;
            let chord = 0.32 - 0.18 * s.abs();
            let lead = 0.22 - 0.25 * s.abs();
            let c: f64 = rng.random_range(0.0..1.0);
            let thickness = 0.02 * (1.0 - (2.0 * c - 1.0).powi(2));
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Vector3::new(lead - chord * c, span, -0.04 + 0.06 * s.abs() + side * thickness)
        }
        2 => {
            let s: f64 = rng.random_range(-1.0..1.0);
            let chord = 0.14 - 0.06 * s.abs();
            let c = rng.random_range(0.0..1.0);
            let side = if rng.random_bool(0.5) { 0.008 } else { -0.008 };
            Vector3::new(-0.62 - 0.08 * s.abs() - chord * c, 0.28 * s, 0.03 + side)
        }
        _ => {
            let h: f64 = rng.random_range(0.0..1.0);
            let chord = 0.2 - 0.1 * h;
            let c = rng.random_range(0.0..1.0);
            let side = if rng.random_bool(0.5) { 0.008 } else { -0.008 };
            Vector3::new(-0.6 - 0.15 * h - chord * c, side, 0.05 + 0.3 * h)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Source and target are independent subsamples of the base cloud.
    Random,
    /// Each side keeps the points nearest its own random viewpoint.
    PartialView,
    /// The source keeps every base point; only the target is subsampled.
    Asymmetric,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplingMode::Random),
            "partial_view" | "partial-view" => Ok(SamplingMode::PartialView),
            "asymmetric" => Ok(SamplingMode::Asymmetric),
            _ => Err(Error::InvalidInput(format!("unknown sampling mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSpec {
    pub seed: u64,
    pub base_size: usize,
    pub sample_size: usize,
    /// Each Euler angle is drawn from `[0, rotation_max_deg]`.
    pub rotation_max_deg: f64,
    /// Each translation component is drawn from `[-t, t]`.
    pub translation_max: f64,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise_std: f64,
    pub noise_clip: f64,
    pub mode: SamplingMode,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            base_size: 1024,
            sample_size: 768,
            rotation_max_deg: 45.0,
            translation_max: 0.5,
            noise_std: 0.0,
            noise_clip: 0.05,
            mode: SamplingMode::Random,
        }
    }
}

impl PairSpec {
    pub fn validate(&self, base_len: usize) -> Result<()> {
        if base_len != self.base_size {
            return Err(Error::InvalidInput(format!(
                "base cloud has {base_len} points, spec expects {}",
                self.base_size
            )));
        }
        if self.sample_size == 0 || self.sample_size > self.base_size {
            return Err(Error::InvalidInput(format!(
                "sample size {} must be in [1, {}]",
                self.sample_size, self.base_size
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_clip >= 0.0 && self.rotation_max_deg >= 0.0 && self.translation_max >= 0.0) {
            return Err(Error::InvalidInput("noise, clip and motion ranges must be >= 0".into()));
        }
        if self.mode == SamplingMode::PartialView && (self.base_size < PARTIAL_VIEW_POOL || self.sample_size > PARTIAL_VIEW_POOL) {
            return Err(Error::InvalidInput(format!(
                "partial views need >= {PARTIAL_VIEW_POOL} base points and sample size <= {PARTIAL_VIEW_POOL}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps the source onto the target frame.
    pub motion: RigidMotion,
    pub gt: PartialPermutationMatrix,
    pub source_inlier: Vec<bool>,
    pub target_inlier: Vec<bool>,
    pub spec: PairSpec,
}

impl LabeledPair {
    pub fn outlier_fraction(&self) -> (f64, f64) {
        let frac = |flags: &[bool]| flags.iter().filter(|f| !**f).count() as f64 / flags.len() as f64;
        (frac(&self.source_inlier), frac(&self.target_inlier))
    }
}

/// [`random_motion`] from its own seeded generator.
pub fn seeded_motion(seed: u64, rotation_max_deg: f64, translation_max: f64) -> RigidMotion {
    random_motion(&mut ChaCha8Rng::seed_from_u64(seed), rotation_max_deg, translation_max)
}

pub fn random_motion(rng: &mut impl Rng, rotation_max_deg: f64, translation_max: f64) -> RigidMotion {
    let mut angle = || if rotation_max_deg > 0.0 { rng.random_range(0.0..=rotation_max_deg) } else { 0.0 };
    let (yaw, pitch, roll) = (angle(), angle(), angle());
    let mut offset = || if translation_max > 0.0 { rng.random_range(-translation_max..=translation_max) } else { 0.0 };
    let t = Vector3::new(offset(), offset(), offset());
    RigidMotion::from_euler(EulerAngles::new(yaw, pitch, roll), t)
}

/// Gaussian noise per coordinate, each component clipped to `[-clip, clip]`.
fn add_noise(points: &mut [Vector3<f64>], std: f64, clip: f64, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    for p in points.iter_mut() {
        for k in 0..3 {
            p[k] += normal.sample(rng).clamp(-clip, clip);
        }
    }
}

/// Builds the pair from base indices kept on each side.
fn assemble(
    base: &PointCloud,
    moved: &PointCloud,
    source_idx: &[usize],
    target_idx: &[usize],
    motion: RigidMotion,
    spec: &PairSpec,
    rng: &mut impl Rng,
) -> Result<LabeledPair> {
    let mut slot_in_target = vec![None; base.len()];
    for (c, &b) in target_idx.iter().enumerate() {
        slot_in_target[b] = Some(c);
    }
    let mut pairs = Vec::new();
    let mut source_inlier = vec![false; source_idx.len()];
    let mut target_inlier = vec![false; target_idx.len()];
    for (a, &b) in source_idx.iter().enumerate() {
        if let Some(c) = slot_in_target[b] {
            pairs.push((a, c));
            source_inlier[a] = true;
            target_inlier[c] = true;
        }
    }
    let mut src: Vec<_> = source_idx.iter().map(|&i| *base.point(i)).collect();
    let mut tgt: Vec<_> = target_idx.iter().map(|&i| *moved.point(i)).collect();
    add_noise(&mut src, spec.noise_std, spec.noise_clip, rng);
    add_noise(&mut tgt, spec.noise_std, spec.noise_clip, rng);
    Ok(LabeledPair {
        source: PointCloud::new(src)?,
        target: PointCloud::new(tgt)?,
        motion,
        gt: PartialPermutationMatrix::from_pairs(source_idx.len(), target_idx.len(), pairs)?,
        source_inlier,
        target_inlier,
        spec: spec.clone(),
    })
}

/// Random-order subsample of `size` base indices. Drawn as the prefix of a
/// full shuffle, so smaller sizes under the same stream are nested subsets.
fn shuffled_prefix(rng: &mut impl Rng, base: usize, size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..base).collect();
    order.shuffle(rng);
    order.truncate(size);
    order
}

/// Random or asymmetric sampling; partial-view specs are delegated to
/// [`partial_view_pair`].
pub fn make_pair(base: &PointCloud, spec: &PairSpec) -> Result<LabeledPair> {
    if spec.mode == SamplingMode::PartialView {
        return partial_view_pair(base, spec);
    }
    spec.validate(base.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = random_motion(&mut rng, spec.rotation_max_deg, spec.translation_max);
    let moved = apply_motion(base, &motion);
    let source_idx = match spec.mode {
        SamplingMode::Asymmetric => shuffled_prefix(&mut rng, base.len(), base.len()),
        _ => shuffled_prefix(&mut rng, base.len(), spec.sample_size),
    };
    let target_idx = shuffled_prefix(&mut rng, base.len(), spec.sample_size);
    assemble(base, &moved, &source_idx, &target_idx, motion, spec, &mut rng)
}

/// A pair of `size`-point clouds sharing exactly `size - outliers` points:
/// the source takes a shuffled window of the base, the target the window
/// shifted by `outliers`.
pub fn overlap_pair(base: &PointCloud, size: usize, outliers: usize, spec: &PairSpec) -> Result<LabeledPair> {
    if size == 0 || outliers > size || size + outliers > base.len() {
        return Err(Error::InvalidInput(format!(
            "cannot take {size} points with {outliers} outliers from {} base points",
            base.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = random_motion(&mut rng, spec.rotation_max_deg, spec.translation_max);
    let moved = apply_motion(base, &motion);
    let order = shuffled_prefix(&mut rng, base.len(), size + outliers);
    let mut source_idx = order[..size].to_vec();
    let mut target_idx = order[outliers..].to_vec();
    source_idx.shuffle(&mut rng);
    target_idx.shuffle(&mut rng);
    let spec = PairSpec {
        base_size: base.len(),
        sample_size: size,
        ..spec.clone()
    };
    assemble(base, &moved, &source_idx, &target_idx, motion, &spec, &mut rng)
}

/// Where the partial view is taken from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Viewpoint {
    At(Vector3<f64>),
    /// Infinitely far away in this direction.
    Toward(Vector3<f64>),
}

/// Indices (into `candidates`) of the `k` points closest to the viewpoint;
/// ties by index.
pub fn visible_subset(points: &[Vector3<f64>], candidates: &[usize], view: Viewpoint, k: usize) -> Vec<usize> {
    let key = |i: usize| match view {
        Viewpoint::At(v) => (points[i] - v).norm_squared(),
        Viewpoint::Toward(d) => -points[i].dot(&d),
    };
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Keeps a random pool of 896 base points, then for each side the
/// `sample_size` pool points nearest an independent random viewpoint on the
/// radius-3 sphere (the target's view is taken after the motion).
pub fn partial_view_pair(base: &PointCloud, spec: &PairSpec) -> Result<LabeledPair> {
    spec.validate(base.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = random_motion(&mut rng, spec.rotation_max_deg, spec.translation_max);
    let moved = apply_motion(base, &motion);
    let mut pool = shuffled_prefix(&mut rng, base.len(), PARTIAL_VIEW_POOL);
    pool.sort_unstable();
    let source_view = Viewpoint::At(VIEWPOINT_RADIUS * sphere_point(&mut rng));
    let target_view = Viewpoint::At(motion.apply(&(VIEWPOINT_RADIUS * sphere_point(&mut rng))));
    let mut source_idx = visible_subset(base.points(), &pool, source_view, spec.sample_size);
    let mut target_idx = visible_subset(moved.points(), &pool, target_view, spec.sample_size);
    source_idx.shuffle(&mut rng);
    target_idx.shuffle(&mut rng);
    assemble(base, &moved, &source_idx, &target_idx, motion, spec, &mut rng)
}

/// Sample size giving an expected per-cloud outlier fraction of `ratio`.
///
/// A source point survives in an independent target subsample of size `s`
/// with probability `s / b`, so its outlier probability is `1 - s / b`.
/// Solving `1 - s / b = ratio` gives `s = b (1 - ratio)`.
pub fn sample_size_for_outlier_ratio(base: usize, ratio: f64) -> usize {
    ((base as f64) * (1.0 - ratio)).round() as usize
}

/// One random-mode pair per ratio, all from the same seed (same motion,
/// nested subsamples).
pub fn outlier_sweep(base: &PointCloud, ratios: &[f64], spec: &PairSpec) -> Result<Vec<LabeledPair>> {
    ratios
        .iter()
        .map(|&ratio| {
            if !(0.0..=0.9).contains(&ratio) {
                return Err(Error::InvalidInput(format!("outlier ratio {ratio} outside [0, 0.9]")));
            }
            let spec = PairSpec {
                sample_size: sample_size_for_outlier_ratio(base.len(), ratio).max(1),
                mode: SamplingMode::Random,
                ..spec.clone()
            };
            make_pair(base, &spec)
        })
        .collect()
}

/// Triangle mesh read from an OFF file.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

/// ASCII OFF; polygons are fan-triangulated. Comments (`#`) are skipped and
/// the `OFF` keyword may share its line with the counts.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let parse_err = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };
    let (first_no, first) = lines.next().ok_or_else(|| parse_err(1, "empty OFF file"))?;
    let counts_text = first
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(first_no, "missing OFF header"))?
        .trim()
        .to_string();
    let (counts_no, counts_text) = if counts_text.is_empty() {
        let (n, l) = lines.next().ok_or_else(|| parse_err(first_no, "missing counts"))?;
        (n, l.to_string())
    } else {
        (first_no, counts_text)
    };
    let counts: Vec<usize> = counts_text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(counts_no, "bad count")))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(counts_no, "expected vertex and face counts"));
    }
    let mut vertices = Vec::with_capacity(counts[0]);
    for _ in 0..counts[0] {
        let (n, l) = lines.next().ok_or_else(|| parse_err(counts_no, "truncated vertex list"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| parse_err(n, "bad coordinate")))
            .collect::<Result<_>>()?;
        if v.len() != 3 || !v.iter().all(|x| x.is_finite()) {
            return Err(parse_err(n, "vertex needs 3 finite coordinates"));
        }
        vertices.push(Vector3::new(v[0], v[1], v[2]));
    }
    let mut triangles = Vec::new();
    for _ in 0..counts[1] {
        let (n, l) = lines.next().ok_or_else(|| parse_err(counts_no, "truncated face list"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(n, "bad face index")))
            .collect::<Result<_>>()?;
        let k = *idx.first().ok_or_else(|| parse_err(n, "empty face"))?;
        if k < 3 || idx.len() < k + 1 || idx[1..=k].iter().any(|&v| v >= vertices.len()) {
            return Err(parse_err(n, "malformed face"));
        }
        for t in 1..k - 1 {
            triangles.push([idx[1], idx[1 + t], idx[2 + t]]);
        }
    }
    Ok(Mesh { vertices, triangles })
}

/// Area-weighted surface samples, recentered on the bounding-box center
/// and scaled into the unit ball.
pub fn sample_mesh(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    let areas: Vec<f64> = mesh
        .triangles
        .iter()
        .map(|t| 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(&(mesh.vertices[t[2]] - mesh.vertices[t[0]])).norm())
        .collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) || n == 0 {
        return Err(Error::InvalidInput("mesh has no area to sample".into()));
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.random_range(0.0..total);
        let t = cumulative.partition_point(|&c| c <= pick).min(areas.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let (mut u, mut v): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + u * (b - a) + v * (c - a));
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in &points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = 0.5 * (lo + hi);
    let radius = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    PointCloud::new(points.into_iter().map(|p| (p - center) / radius).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: ShapeKind) -> PointCloud {
        procedural_shape(kind, 1024, 11).unwrap()
    }

    #[test]
    fn sphere_radius_exact() {
        let s = base(ShapeKind::Sphere);
        assert!(s.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn shapes_are_deterministic_and_bounded() {
        for kind in ShapeKind::ALL {
            let a = procedural_shape(kind, 300, 5).unwrap();
            let b = procedural_shape(kind, 300, 5).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, procedural_shape(kind, 300, 6).unwrap());
            assert!(a.points().iter().all(|p| p.norm() <= 1.0 + 1e-12), "{kind}");
            assert_eq!(kind.name().parse::<ShapeKind>().unwrap(), kind);
        }
        assert!(matches!("teapot".parse::<ShapeKind>(), Err(Error::UnknownShape(_))));
        assert!(procedural_shape(ShapeKind::Sphere, 7, 0).is_err());
    }

    #[test]
    fn box_points_lie_on_faces() {
        let h = box_half_extents();
        for p in base(ShapeKind::Box).points() {
            let inside = (0..3).all(|k| p[k].abs() <= h[k] + 1e-15);
            let on_face = (0..3).any(|k| p[k].abs() == h[k]);
            assert!(inside && on_face, "{p:?}");
        }
    }

    #[test]
    fn torus_points_satisfy_implicit_equation() {
        for p in base(ShapeKind::Torus).points() {
            let ring = (p.x * p.x + p.y * p.y).sqrt() - TORUS_MAJOR;
            assert!((ring * ring + p.z * p.z - TORUS_MINOR * TORUS_MINOR).abs() < 1e-12);
        }
    }

    #[test]
    fn full_sample_is_consistent() {
        let b = base(ShapeKind::Composite);
        let spec = PairSpec {
            sample_size: 1024,
            seed: 3,
            ..Default::default()
        };
        let pair = make_pair(&b, &spec).unwrap();
        assert_eq!(pair.gt.inlier_count(), 1024);
        assert!(pair.source_inlier.iter().all(|f| *f));
    }

    #[test]
    fn noise_free_pairs_are_exact() {
        let b = base(ShapeKind::Composite);
        for seed in 0..20 {
            let pair = make_pair(&b, &PairSpec { seed, ..Default::default() }).unwrap();
            for (i, j) in pair.gt.pairs() {
                assert!((pair.motion.apply(pair.source.point(i)) - pair.target.point(j)).norm() < 1e-12);
            }
            // flags agree with the matching
            for i in 0..pair.source.len() {
                assert_eq!(pair.source_inlier[i], pair.gt.target_of(i).is_some());
            }
            for j in 0..pair.target.len() {
                assert_eq!(pair.target_inlier[j], pair.gt.source_of(j).is_some());
            }
        }
    }

    #[test]
    fn shared_count_follows_hypergeometric() {
        // shared = |A ∩ B| for independent 768-subsets of 1024:
        // mean 768^2/1024 = 576, var = 576 * (256/1024) * (256/1023)
        let b = base(ShapeKind::Sphere);
        let var = 576.0 * 0.25 * (256.0 / 1023.0);
        let sd: f64 = f64::sqrt(var);
        let counts: Vec<f64> = (0..200)
            .map(|seed| make_pair(&b, &PairSpec { seed, ..Default::default() }).unwrap().gt.inlier_count() as f64)
            .collect();
        for c in &counts {
            assert!((c - 576.0).abs() <= 4.0 * sd, "{c}");
        }
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        assert!((mean - 576.0).abs() < 3.0 * sd / (200f64).sqrt());
    }

    #[test]
    fn noise_is_clipped() {
        let b = base(ShapeKind::Sphere);
        let spec = PairSpec {
            sample_size: 1024,
            noise_std: 0.01,
            noise_clip: 0.05,
            seed: 9,
            ..Default::default()
        };
        let pair = make_pair(&b, &spec).unwrap();
        let mut clean_spec = spec.clone();
        clean_spec.noise_std = 0.0;
        let clean = make_pair(&b, &clean_spec).unwrap();
        let mut clipped = 0;
        for (p, q) in pair.source.points().iter().zip(clean.source.points()) {
            for k in 0..3 {
                let e = (p[k] - q[k]).abs();
                assert!(e <= 0.05 + 1e-15);
                if e >= 0.05 - 1e-15 {
                    clipped += 1;
                }
            }
        }
        // 5 sigma clipping is rare
        assert!(clipped < 3);
        // both clouds are perturbed per coordinate, so a gt pair can be off
        // by up to 2 * clip * sqrt(3)
        for (i, j) in pair.gt.pairs() {
            assert!((pair.motion.apply(pair.source.point(i)) - pair.target.point(j)).norm() <= 2.0 * 3f64.sqrt() * 0.05 + 1e-12);
        }
    }

    #[test]
    fn motions_differ_across_seeds() {
        let b = base(ShapeKind::Box);
        let mut seen: Vec<RigidMotion> = Vec::new();
        for seed in 0..100 {
            let m = make_pair(&b, &PairSpec { seed, sample_size: 64, ..Default::default() }).unwrap().motion;
            assert!(seen.iter().all(|s| *s != m));
            let e = crate::geometry::rotation_to_euler(m.rotation());
            for a in e.as_array() {
                assert!((-1e-9..=45.0 + 1e-9).contains(&a));
            }
            assert!(m.translation().iter().all(|t| t.abs() <= 0.5));
            seen.push(m);
        }
    }

    #[test]
    fn asymmetric_mode_keeps_every_source_point() {
        let b = base(ShapeKind::Blade);
        let pair = make_pair(&b, &PairSpec { mode: SamplingMode::Asymmetric, seed: 1, ..Default::default() }).unwrap();
        assert_eq!(pair.source.len(), 1024);
        assert_eq!(pair.target.len(), 768);
        assert_eq!(pair.gt.inlier_count(), 768);
    }

    #[test]
    fn far_viewpoint_keeps_highest_points() {
        let b = base(ShapeKind::Sphere);
        let all: Vec<usize> = (0..b.len()).collect();
        let kept = visible_subset(b.points(), &all, Viewpoint::Toward(Vector3::z()), 768);
        let mut z: Vec<f64> = b.points().iter().map(|p| p.z).collect();
        z.sort_by(|a, c| c.total_cmp(a));
        let threshold = z[767];
        assert!(kept.iter().all(|&i| b.point(i).z >= threshold));
        // a very distant point viewpoint agrees with the direction limit
        let far = visible_subset(b.points(), &all, Viewpoint::At(Vector3::new(0.0, 0.0, 1e7)), 768);
        let (mut a, mut c) = (kept.clone(), far);
        a.sort_unstable();
        c.sort_unstable();
        assert_eq!(a, c);
    }

    #[test]
    fn partial_view_pairs() {
        let b = base(ShapeKind::Composite);
        let spec = PairSpec { mode: SamplingMode::PartialView, seed: 4, ..Default::default() };
        let a = make_pair(&b, &spec).unwrap();
        assert_eq!(a, make_pair(&b, &spec).unwrap());
        assert_eq!((a.source.len(), a.target.len()), (768, 768));
        assert!(a.gt.inlier_count() >= 640 - 128);
        for (i, j) in a.gt.pairs() {
            assert!((a.motion.apply(a.source.point(i)) - a.target.point(j)).norm() < 1e-12);
        }
    }

    #[test]
    fn sweep_matches_expected_rates() {
        assert_eq!(sample_size_for_outlier_ratio(1024, 0.25), 768);
        assert_eq!(sample_size_for_outlier_ratio(1024, 0.0), 1024);
        let b = base(ShapeKind::Torus);
        let ratios = [0.0, 0.1, 0.25, 0.4, 0.6];
        let pairs = outlier_sweep(&b, &ratios, &PairSpec { seed: 2, ..Default::default() }).unwrap();
        assert_eq!(pairs[0].gt.inlier_count(), 1024);
        for w in pairs.windows(2) {
            assert!(w[1].gt.inlier_count() <= w[0].gt.inlier_count());
            assert_eq!(w[0].motion, w[1].motion);
        }
        assert!(outlier_sweep(&b, &[0.95], &PairSpec::default()).is_err());
    }

    #[test]
    fn off_round_trip() {
        let text = "OFF\n# unit square and a triangle\n5 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n4 0 1 2 3\n3 0 1 4\n";
        let mesh = parse_off(text).unwrap();
        assert_eq!(mesh.vertices.len(), 5);
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 4]]);
        let cloud = sample_mesh(&mesh, 500, 1).unwrap();
        assert_eq!(cloud.len(), 500);
        assert!(cloud.points().iter().all(|p| p.norm() <= 1.0 + 1e-12));
        assert!(parse_off("OFF\n1 1 0\n0 0 0\n3 0 1 2\n").is_err());
        assert!(parse_off("PLY\n").is_err());
        assert!(parse_off("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").is_ok());
    }
}
