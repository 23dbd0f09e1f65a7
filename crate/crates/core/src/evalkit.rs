//! Detection evaluation: greedy NMS, greedy detection-to-ground-truth
//! matching, FPPI / miss-rate curves, and the log-average miss rate over
//! FPPI in `[1e-2, 1e0]`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::Scalar;
use crate::simulator::Scene;

/// Floor applied to miss rates before taking logarithms.
pub const MISS_RATE_FLOOR: f64 = 1e-4;
/// Number of log-spaced FPPI reference points.
pub const MR_REFERENCE_POINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T = f64> {
    pub bbox: BBox<T>,
    pub score: T,
    pub scene_id: usize,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BBox<T>, score: T, scene_id: usize) -> Result<Self> {
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::InvalidInput(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score, scene_id })
    }
}

/// Indices of `dets` sorted by descending score; equal scores keep input order.
fn score_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Keeps detections in descending score order, dropping any whose IoU with
/// an already kept detection of the same scene exceeds `threshold`.
pub fn greedy_nms<T: Scalar>(dets: &[Detection<T>], threshold: T) -> Vec<Detection<T>> {
    let mut kept: Vec<Detection<T>> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.scene_id == d.scene_id && iou(&k.bbox, &d.bbox) > threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionOutcome {
    TruePositive { gt: usize },
    FalsePositive,
    /// Matched an ignored ground truth; counts as neither.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    /// Outcome per detection, in input order.
    pub outcomes: Vec<DetectionOutcome>,
    /// Matched detection per ground truth.
    pub gt_matches: Vec<Option<usize>>,
}

/// Greedy matching in descending score: each detection takes the unmatched
/// ground truth of highest IoU, if that IoU is at least `iou_threshold`.
pub fn match_detections<T: Scalar>(dets: &[Detection<T>], gts: &[BBox<T>], iou_threshold: T) -> MatchResult {
    match_with_ignore(dets, gts, &vec![false; gts.len()], iou_threshold)
}

/// As [`match_detections`], with some ground truths marked ignored: they are
/// never counted as missed, and a detection that only matches an ignored
/// ground truth is neither a true nor a false positive.
pub fn match_with_ignore<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[BBox<T>],
    ignore: &[bool],
    iou_threshold: T,
) -> MatchResult {
    assert_eq!(gts.len(), ignore.len(), "one ignore flag per ground truth");
    let mut gt_matches = vec![None; gts.len()];
    let mut outcomes = vec![DetectionOutcome::FalsePositive; dets.len()];
    for di in score_order(dets) {
        let d = &dets[di].bbox;
        let mut best: Option<(usize, T)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if ignore[gi] || gt_matches[gi].is_some() {
                continue;
            }
            let v = iou(d, g);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_matches[gi] = Some(di);
            outcomes[di] = DetectionOutcome::TruePositive { gt: gi };
        } else if gts
            .iter()
            .zip(ignore)
            .any(|(g, &ig)| ig && iou(d, g) >= iou_threshold)
        {
            outcomes[di] = DetectionOutcome::Ignored;
        }
    }
    let true_positives = gt_matches.iter().filter(|m| m.is_some()).count();
    let counted = ignore.iter().filter(|&&i| !i).count();
    MatchResult {
        true_positives,
        false_positives: outcomes.iter().filter(|o| **o == DetectionOutcome::FalsePositive).count(),
        misses: counted - true_positives,
        outcomes,
        gt_matches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Points ordered by decreasing score threshold, so FPPI is non-decreasing
/// and miss rate non-increasing along the vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
}

/// FPPI / miss-rate curve over a scene set. `gts[s]` are the ground truths
/// of scene `s`; detections refer to scenes by `scene_id`.
pub fn fppi_curve<T: Scalar>(dets: &[Detection<T>], gts: &[Vec<BBox<T>>]) -> Result<EvalCurve> {
    let ignore: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    fppi_curve_with_ignore(dets, gts, &ignore)
}

pub fn fppi_curve_with_ignore<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[Vec<BBox<T>>],
    ignore: &[Vec<bool>],
) -> Result<EvalCurve> {
    if gts.is_empty() {
        return Err(Error::InvalidInput("at least one scene is required".into()));
    }
    if ignore.len() != gts.len() || gts.iter().zip(ignore).any(|(g, f)| g.len() != f.len()) {
        return Err(Error::InvalidInput("ignore flags must mirror the ground-truth lists".into()));
    }
    let total_gt: usize = ignore.iter().map(|f| f.iter().filter(|&&i| !i).count()).sum();
    if total_gt == 0 {
        return Err(Error::InvalidInput("no ground truths to evaluate".into()));
    }
    if let Some(d) = dets.iter().find(|d| d.scene_id >= gts.len()) {
        return Err(Error::InvalidInput(format!("detection refers to unknown scene {}", d.scene_id)));
    }

    // Greedy matching is prefix-consistent in score order, so one matching
    // per scene gives the outcome of every detection at every threshold.
    let mut scored: Vec<(f64, DetectionOutcome)> = Vec::with_capacity(dets.len());
    for (s, scene_gts) in gts.iter().enumerate() {
        let scene_dets: Vec<Detection<T>> = dets.iter().filter(|d| d.scene_id == s).copied().collect();
        let m = match_with_ignore(&scene_dets, scene_gts, &ignore[s], T::half());
        scored.extend(scene_dets.iter().map(|d| d.score.as_f64()).zip(m.outcomes));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_scenes = gts.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let thr = scored[i].0;
        while i < scored.len() && scored[i].0 == thr {
            match scored[i].1 {
                DetectionOutcome::TruePositive { .. } => tp += 1,
                DetectionOutcome::FalsePositive => fp += 1,
                DetectionOutcome::Ignored => {}
            }
            i += 1;
        }
        points.push(CurvePoint {
            threshold: thr,
            fppi: fp as f64 / n_scenes,
            miss_rate: (total_gt - tp) as f64 / total_gt as f64,
        });
    }
    Ok(EvalCurve { points })
}

/// FPPI reference points `10^(-2 + 2k/8)`, `k = 0..9`.
pub fn reference_fppi() -> [f64; MR_REFERENCE_POINTS] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + 2.0 * k as f64 / (MR_REFERENCE_POINTS - 1) as f64))
}

/// Log-average miss rate. At each reference FPPI the miss rate of the last
/// curve point with FPPI at or below the reference is used (the curve's
/// highest miss rate if there is none); the result is the geometric mean of
/// those miss rates, each floored at [`MISS_RATE_FLOOR`].
pub fn log_average_miss_rate(curve: &EvalCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::InvalidInput("empty curve".into()));
    }
    let highest = curve.points.iter().map(|p| p.miss_rate).fold(f64::NEG_INFINITY, f64::max);
    let sum_ln: f64 = reference_fppi()
        .iter()
        .map(|&r| {
            let mr = curve
                .points
                .iter()
                .rev()
                .find(|p| p.fppi <= r)
                .map_or(highest, |p| p.miss_rate);
            mr.max(MISS_RATE_FLOOR).ln()
        })
        .sum();
    Ok((sum_ln / MR_REFERENCE_POINTS as f64).exp())
}

/// FPPI of the curve point whose miss rate is nearest `miss_rate`; ties go
/// to the lower FPPI.
pub fn fppi_at_miss_rate(curve: &EvalCurve, miss_rate: f64) -> Option<f64> {
    curve
        .points
        .iter()
        .min_by(|a, b| {
            (a.miss_rate - miss_rate)
                .abs()
                .total_cmp(&(b.miss_rate - miss_rate).abs())
                .then(a.fppi.total_cmp(&b.fppi))
        })
        .map(|p| p.fppi)
}

/// Evaluation subset defined on full-box height and visible-area ratio.
/// Pedestrians outside the subset become ignore regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetFilter {
    pub min_height: f64,
    pub max_height: f64,
    pub min_visibility: f64,
    pub max_visibility: f64,
}

impl SubsetFilter {
    pub fn all() -> Self {
        Self { min_height: 0.0, max_height: f64::INFINITY, min_visibility: 0.0, max_visibility: 1.0 }
    }

    pub fn reasonable(min_height: f64) -> Self {
        Self { min_height, min_visibility: 0.65, ..Self::all() }
    }

    pub fn heavy(min_height: f64) -> Self {
        Self { min_height, min_visibility: 0.2, max_visibility: 0.65, ..Self::all() }
    }

    pub fn partial(min_height: f64) -> Self {
        Self { min_height, min_visibility: 0.65, max_visibility: 0.9, ..Self::all() }
    }

    pub fn bare(min_height: f64) -> Self {
        Self { min_height, min_visibility: 0.9, ..Self::all() }
    }

    pub fn accepts(&self, height: f64, visibility: f64) -> bool {
        height >= self.min_height
            && height <= self.max_height
            && visibility >= self.min_visibility
            && visibility <= self.max_visibility
    }

    /// `true` for pedestrians outside the subset.
    pub fn ignore_flags<T: Scalar>(&self, scene: &Scene<T>) -> Vec<bool> {
        scene
            .pedestrians
            .iter()
            .map(|p| {
                let vis = (p.visible.area() / p.full.area()).as_f64();
                !self.accepts(p.full.height().as_f64(), vis)
            })
            .collect()
    }
}

/// Real formatting for every CSV this crate writes: 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_detections_csv<T: Scalar, W: Write>(dets: &[Detection<T>], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scene_id", "x1", "y1", "x2", "y2", "score"])?;
    for d in dets {
        let b = d.bbox;
        w.write_record([
            d.scene_id.to_string(),
            format_real(b.x1().as_f64()),
            format_real(b.y1().as_f64()),
            format_real(b.x2().as_f64()),
            format_real(b.y2().as_f64()),
            format_real(d.score.as_f64()),
        ])?;
    }
    w.flush()
}

/// Reads `scene_id,x1,y1,x2,y2,score` rows; a header row is optional.
pub fn read_detections_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<Detection<T>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if line == 1 && rec.get(0) == Some("scene_id") {
            continue;
        }
        if rec.len() != 6 {
            return Err(Error::Parse { line, message: format!("expected 6 fields, found {}", rec.len()) });
        }
        let scene_id: usize = rec[0]
            .parse()
            .map_err(|e| Error::Parse { line, message: format!("scene_id: {e}") })?;
        let mut v = [0f64; 5];
        for k in 0..5 {
            v[k] = rec[k + 1]
                .parse()
                .map_err(|e| Error::Parse { line, message: format!("field {}: {e}", k + 2) })?;
        }
        let err = |e: Error| Error::Parse { line, message: e.to_string() };
        let bbox = BBox::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]), T::lit(v[3])).map_err(err)?;
        out.push(Detection::new(bbox, T::lit(v[4]), scene_id).map_err(err)?);
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(curve: &EvalCurve, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fppi", "miss_rate"])?;
    for p in &curve.points {
        w.write_record([format_real(p.threshold), format_real(p.fppi), format_real(p.miss_rate)])?;
    }
    w.flush()
}
