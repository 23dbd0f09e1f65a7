//! Anchor location selecting: anchors are kept only at cells whose
//! pedestrian probability exceeds the root mean square of the whole map, so
//! sampled negatives concentrate on human-like structures instead of flat
//! background.
//!
//! Also builds the positive / ignored / negative target grid for the
//! location branch from full-body and visible boxes, and the focal loss on
//! that grid.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{focal_loss, CompositeConfig};
use crate::error::{Error, Result};
use crate::evalkit::format_real;
use crate::geometry::{iou, BBox, Point};
use crate::scalar::Scalar;
use crate::simulator::Scene;

/// IoU below which an anchor counts as a negative for every ground truth.
pub const NEGATIVE_IOU: f64 = 0.3;

/// Row-major grid of probabilities; cell `(row, col)` covers
/// `[col * stride, (col + 1) * stride) x [row * stride, (row + 1) * stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T = f64> {
    width: usize,
    height: usize,
    stride: T,
    values: Vec<T>,
}

fn cell_center<T: Scalar>(row: usize, col: usize, stride: T) -> Point<T> {
    Point::new(
        (T::lit(col as f64) + T::half()) * stride,
        (T::lit(row as f64) + T::half()) * stride,
    )
}

fn check_grid<T: Scalar>(width: usize, height: usize, stride: T) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("grid must be at least 1 x 1".into()));
    }
    if !(stride > T::zero() && stride.is_finite()) {
        return Err(Error::InvalidInput(format!("stride must be positive, got {stride}")));
    }
    Ok(())
}

impl<T: Scalar> ProbabilityMap<T> {
    pub fn new(width: usize, height: usize, stride: T, values: Vec<T>) -> Result<Self> {
        check_grid(width, height, stride)?;
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} values for a {width} x {height} grid",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { width, height, stride, values })
    }

    pub fn constant(width: usize, height: usize, stride: T, value: T) -> Result<Self> {
        Self::new(width, height, stride, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn stride(&self) -> T {
        self.stride
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point<T> {
        cell_center(row, col, self.stride)
    }

    /// Multiplies every value by `k` in `[0, 1]`.
    pub fn scaled(&self, k: T) -> Result<Self> {
        Self::new(self.width, self.height, self.stride, self.values.iter().map(|v| *v * k).collect())
    }

    /// `width height stride` header, then one row of values per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.width, self.height, format_real(self.stride.as_f64()));
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format_real(v.as_f64())).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (w, h, stride, tokens) = parse_grid_header(text)?;
        let values = tokens
            .iter()
            .map(|&(line, t)| {
                t.parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| Error::Parse { line, message: format!("bad value {t:?}: {e}") })
            })
            .collect::<Result<Vec<T>>>()?;
        if values.len() != w * h {
            return Err(Error::Parse { line: 0, message: format!("expected {} values, found {}", w * h, values.len()) });
        }
        Self::new(w, h, T::lit(stride), values)
    }
}

fn parse_grid_header(text: &str) -> Result<(usize, usize, f64, Vec<(usize, &str)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse { line: 0, message: "empty grid file".into() })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad = |m: String| Error::Parse { line: hl, message: m };
    if parts.len() != 3 {
        return Err(bad(format!("header needs `width height stride`, got {header:?}")));
    }
    let w = parts[0].parse().map_err(|e| bad(format!("width: {e}")))?;
    let h = parts[1].parse().map_err(|e| bad(format!("height: {e}")))?;
    let s = parts[2].parse().map_err(|e| bad(format!("stride: {e}")))?;
    let tokens = lines.flat_map(|(n, l)| l.split_whitespace().map(move |t| (n, t))).collect();
    Ok((w, h, s, tokens))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetLabel {
    Positive,
    Ignored,
    Negative,
}

impl TargetLabel {
    pub fn symbol(self) -> char {
        match self {
            Self::Positive => 'P',
            Self::Ignored => 'I',
            Self::Negative => 'N',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "P" => Some(Self::Positive),
            "I" => Some(Self::Ignored),
            "N" => Some(Self::Negative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap<T = f64> {
    pub width: usize,
    pub height: usize,
    pub stride: T,
    pub labels: Vec<TargetLabel>,
}

impl<T: Scalar> TargetMap<T> {
    pub fn get(&self, row: usize, col: usize) -> TargetLabel {
        self.labels[row * self.width + col]
    }

    pub fn count(&self, label: TargetLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.width, self.height, format_real(self.stride.as_f64()));
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|l| l.symbol().to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (w, h, stride, tokens) = parse_grid_header(text)?;
        check_grid(w, h, stride)?;
        let labels = tokens
            .iter()
            .map(|&(line, t)| {
                TargetLabel::from_symbol(t).ok_or_else(|| Error::Parse { line, message: format!("bad label {t:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != w * h {
            return Err(Error::Parse { line: 0, message: format!("expected {} labels, found {}", w * h, labels.len()) });
        }
        Ok(Self { width: w, height: h, stride: T::lit(stride), labels })
    }
}

/// Anchor shapes instantiated at each retained cell center: for scale `s`
/// and ratio `r = w / h`, an anchor is `s * sqrt(r)` wide and `s / sqrt(r)`
/// tall.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec<T = f64> {
    pub scales: Vec<T>,
    pub ratios: Vec<T>,
}

/// Two pedestrian-shaped anchors sized for a 100-unit scene.
impl<T: Scalar> Default for AnchorSpec<T> {
    fn default() -> Self {
        Self { scales: vec![T::lit(20.0), T::lit(30.0)], ratios: vec![T::lit(0.41)] }
    }
}

impl<T: Scalar> AnchorSpec<T> {
    fn shapes(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.scales.len() * self.ratios.len());
        for &s in &self.scales {
            for &r in &self.ratios {
                let sr = r.sqrt();
                out.push((s * sr, s / sr));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor<T = f64> {
    pub row: usize,
    pub col: usize,
    pub bbox: BBox<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<T = f64> {
    pub anchors: Vec<Anchor<T>>,
    /// Cells whose anchors were instantiated, row-major order.
    pub cells: Vec<(usize, usize)>,
    /// The threshold the cells were compared against.
    pub threshold: T,
    /// Set when no cell beat the threshold and every cell was kept instead.
    pub fallback: bool,
    pub total_cells: usize,
}

/// Root mean square of every cell of the map.
pub fn dynamic_threshold<T: Scalar>(map: &ProbabilityMap<T>) -> T {
    let sum_sq = map.values.iter().fold(T::zero(), |acc, v| acc + *v * *v);
    (sum_sq / T::lit(map.values.len() as f64)).sqrt()
}

fn anchors_at<T: Scalar>(cells: &[(usize, usize)], stride: T, spec: &AnchorSpec<T>) -> Vec<Anchor<T>> {
    let shapes = spec.shapes();
    let mut out = Vec::with_capacity(cells.len() * shapes.len());
    for &(row, col) in cells {
        let c = cell_center(row, col, stride);
        for &(w, h) in &shapes {
            if let Ok(bbox) = BBox::from_center_size(c.x, c.y, w, h) {
                out.push(Anchor { row, col, bbox });
            }
        }
    }
    out
}

fn all_cells(width: usize, height: usize) -> Vec<(usize, usize)> {
    (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect()
}

/// Keeps cells with probability strictly above [`dynamic_threshold`] and
/// instantiates `spec` anchors at their centers. If no cell survives, every
/// cell is kept and `fallback` is set.
pub fn select_anchors<T: Scalar>(map: &ProbabilityMap<T>, spec: &AnchorSpec<T>) -> AnchorSet<T> {
    let threshold = dynamic_threshold(map);
    let mut cells: Vec<(usize, usize)> = all_cells(map.width, map.height)
        .into_iter()
        .filter(|&(r, c)| map.get(r, c) > threshold)
        .collect();
    let fallback = cells.is_empty();
    if fallback {
        log::warn!("no cell exceeds the dynamic threshold {threshold}; keeping all locations");
        cells = all_cells(map.width, map.height);
    }
    AnchorSet {
        anchors: anchors_at(&cells, map.stride, spec),
        cells,
        threshold,
        fallback,
        total_cells: map.width * map.height,
    }
}

/// Every anchor of the grid, as uniform sampling would see it.
pub fn uniform_anchors<T: Scalar>(map: &ProbabilityMap<T>, spec: &AnchorSpec<T>) -> Vec<Anchor<T>> {
    anchors_at(&all_cells(map.width, map.height), map.stride, spec)
}

/// Labels each cell by its center: positive inside any visible box, else
/// ignored inside any full box, else negative.
pub fn build_target_map<T: Scalar>(scene: &Scene<T>, width: usize, height: usize, stride: T) -> Result<TargetMap<T>> {
    check_grid(width, height, stride)?;
    if let Some(index) = scene.pedestrians.iter().position(|p| !p.full.contains(&p.visible)) {
        return Err(Error::InvalidAnnotation { index });
    }
    let labels = all_cells(width, height)
        .into_iter()
        .map(|(r, c)| {
            let pt = cell_center(r, c, stride);
            if scene.pedestrians.iter().any(|p| p.visible.contains_point(pt)) {
                TargetLabel::Positive
            } else if scene.pedestrians.iter().any(|p| p.full.contains_point(pt)) {
                TargetLabel::Ignored
            } else {
                TargetLabel::Negative
            }
        })
        .collect();
    Ok(TargetMap { width, height, stride, labels })
}

/// Mean focal loss over positive and negative cells; ignored cells are
/// skipped and an all-ignored map scores 0.
pub fn location_branch_loss<T: Scalar>(
    map: &ProbabilityMap<T>,
    targets: &TargetMap<T>,
    cfg: &CompositeConfig<T>,
) -> Result<T> {
    if (map.width, map.height) != (targets.width, targets.height) {
        return Err(Error::ShapeMismatch {
            left: (map.width, map.height),
            right: (targets.width, targets.height),
        });
    }
    let (mut sum, mut n) = (T::zero(), 0usize);
    for (v, l) in map.values.iter().zip(&targets.labels) {
        let label = match l {
            TargetLabel::Positive => true,
            TargetLabel::Negative => false,
            TargetLabel::Ignored => continue,
        };
        sum = sum + focal_loss(*v, label, cfg.focal_gamma, cfg.focal_alpha);
        n += 1;
    }
    Ok(if n == 0 { T::zero() } else { sum / T::lit(n as f64) })
}

/// Whether the location restriction applies to every anchor or only to the
/// negatives drawn for the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionScope {
    #[default]
    AllAnchors,
    NegativesOnly,
}

/// Anchors used for training split into positives (IoU >= `positive_iou`
/// with some ground truth) and negatives (IoU < [`NEGATIVE_IOU`] with all).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingAnchors<T = f64> {
    pub positives: Vec<Anchor<T>>,
    pub negatives: Vec<Anchor<T>>,
}

fn max_iou<T: Scalar>(b: &BBox<T>, gts: &[BBox<T>]) -> T {
    gts.iter().map(|g| iou(b, g)).fold(T::zero(), T::max)
}

pub fn training_anchors<T: Scalar>(
    map: &ProbabilityMap<T>,
    spec: &AnchorSpec<T>,
    gts: &[BBox<T>],
    positive_iou: T,
    scope: SelectionScope,
) -> TrainingAnchors<T> {
    let selected = select_anchors(map, spec).anchors;
    let neg = T::lit(NEGATIVE_IOU);
    let pos_pool = match scope {
        SelectionScope::AllAnchors => selected.clone(),
        SelectionScope::NegativesOnly => uniform_anchors(map, spec),
    };
    TrainingAnchors {
        positives: pos_pool.into_iter().filter(|a| max_iou(&a.bbox, gts) >= positive_iou).collect(),
        negatives: selected.into_iter().filter(|a| max_iou(&a.bbox, gts) < neg).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeStats {
    pub selected_negatives: usize,
    pub selected_hits: usize,
    pub selected_fraction: f64,
    pub uniform_negatives: usize,
    pub uniform_hits: usize,
    pub uniform_fraction: f64,
}

/// Fraction of negative anchors whose centers land on a distractor, for the
/// selected anchors and for every anchor of the same grid.
pub fn negative_informativeness<T: Scalar>(
    selected: &AnchorSet<T>,
    map: &ProbabilityMap<T>,
    spec: &AnchorSpec<T>,
    scene: &Scene<T>,
) -> NegativeStats {
    let gts = scene.gts();
    let neg = T::lit(NEGATIVE_IOU);
    let tally = |anchors: &[Anchor<T>]| {
        let negs: Vec<&Anchor<T>> = anchors.iter().filter(|a| max_iou(&a.bbox, &gts) < neg).collect();
        let hits = negs
            .iter()
            .filter(|a| scene.distractors.iter().any(|d| d.contains_point(a.bbox.center())))
            .count();
        let frac = if negs.is_empty() { 0.0 } else { hits as f64 / negs.len() as f64 };
        (negs.len(), hits, frac)
    };
    let (sn, sh, sf) = tally(&selected.anchors);
    let (un, uh, uf) = tally(&uniform_anchors(map, spec));
    NegativeStats {
        selected_negatives: sn,
        selected_hits: sh,
        selected_fraction: sf,
        uniform_negatives: un,
        uniform_hits: uh,
        uniform_fraction: uf,
    }
}

/// Synthetic location-branch output: an anisotropic Gaussian bump over each
/// pedestrian (peak in `[0.8, 1]`) and each distractor (peak in `[0.5, 0.9]`)
/// with standard deviations of a quarter of the box size, combined by
/// maximum over a faint uniform background below 0.05.
pub fn synthetic_bump_map<T: Scalar>(scene: &Scene<T>, width: usize, height: usize, stride: T, seed: u64) -> Result<ProbabilityMap<T>> {
    check_grid(width, height, stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut bumps: Vec<(Point<f64>, f64, f64, f64)> = Vec::new();
    for p in &scene.pedestrians {
        let b: BBox<f64> = p.full.cast()?;
        bumps.push((b.center(), b.width() / 4.0, b.height() / 4.0, rng.gen_range(0.8..=1.0)));
    }
    for d in &scene.distractors {
        let b: BBox<f64> = d.cast()?;
        bumps.push((b.center(), b.width() / 4.0, b.height() / 4.0, rng.gen_range(0.5..=0.9)));
    }
    let s = stride.as_f64();
    let values = all_cells(width, height)
        .into_iter()
        .map(|(r, c)| {
            let pt = cell_center(r, c, s);
            let bg: f64 = rng.gen_range(0.0..0.05);
            let v = bumps.iter().fold(bg, |acc, (ctr, sx, sy, amp)| {
                let dx = (pt.x - ctr.x) / sx;
                let dy = (pt.y - ctr.y) / sy;
                acc.max(amp * (-0.5 * (dx * dx + dy * dy)).exp())
            });
            T::lit(v.clamp(0.0, 1.0))
        })
        .collect();
    ProbabilityMap::new(width, height, stride, values)
}

/// 1 at cells whose centers fall inside any pedestrian or distractor box,
/// 0 elsewhere.
pub fn indicator_map<T: Scalar>(scene: &Scene<T>, width: usize, height: usize, stride: T) -> Result<ProbabilityMap<T>> {
    check_grid(width, height, stride)?;
    let values = all_cells(width, height)
        .into_iter()
        .map(|(r, c)| {
            let pt = cell_center(r, c, stride);
            let hit = scene.pedestrians.iter().any(|p| p.full.contains_point(pt))
                || scene.distractors.iter().any(|d| d.contains_point(pt));
            if hit { T::one() } else { T::zero() }
        })
        .collect();
    ProbabilityMap::new(width, height, stride, values)
}
