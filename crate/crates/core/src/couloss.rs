//! Coulomb loss: proposals are attracted to their target ground truth and
//! repelled from overlapping non-target ground truths.
//!
//! Each ground truth `G_i` forms triplets `<G_i, P_p, P_n>` with a proposal
//! `P_p` assigned to it and a proposal `P_n` assigned to some other ground
//! truth `G_j` that still overlaps `G_i`. Per triplet
//!
//! ```text
//! F_a = -ln IoU(G_i, P_p)          W_a = F_a * 1          * s(G_i, P_p)
//! F_r = -ln (1 - IoU(G_i, P_n))    W_r = F_r * cos(theta) * s(G_i, P_n)
//! ```
//!
//! with `theta` the angle at `G_i`'s center between `P_n`'s and `G_j`'s
//! centers and `s` the [`border_distance`]. Non-positive work is dropped and
//! the total is divided by the number of ground truths.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{
    border_distance, border_distance_with_grad, center, contains_center, cos_angle_at,
    cos_angle_with_grad, iou, iou_with_grad, BBox,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum `W_a + W_r` over every triplet, so `W_a` repeats once per negative.
    TripletLiteral,
    /// Count `W_a` once per `(G_i, P_p)` and `W_r` once per `(G_i, P_n)`.
    #[default]
    Deduplicated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouLossConfig<T = f64> {
    pub positive_iou_threshold: T,
    /// Floor applied to the argument of both logarithms.
    pub iou_floor: T,
    pub aggregation: Aggregation,
    /// Distance (scene units) below which a sub-expression counts as sitting
    /// on a non-differentiable point.
    pub kink_tolerance: T,
}

impl<T: Scalar> Default for CouLossConfig<T> {
    fn default() -> Self {
        Self {
            positive_iou_threshold: T::lit(0.5),
            iou_floor: T::lit(1e-6),
            aggregation: Aggregation::Deduplicated,
            kink_tolerance: T::lit(1e-9),
        }
    }
}

impl<T: Scalar> CouLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let t = self.positive_iou_threshold;
        if !(t > T::zero() && t < T::one()) {
            return Err(Error::InvalidInput(format!(
                "positive_iou_threshold must lie in (0, 1), got {t}"
            )));
        }
        let e = self.iou_floor;
        if !(e > T::zero() && e < T::one()) {
            return Err(Error::InvalidInput(format!("iou_floor must lie in (0, 1), got {e}")));
        }
        if !(self.kink_tolerance >= T::zero()) {
            return Err(Error::InvalidInput("kink_tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<T = f64> {
    pub proposal_index: usize,
    pub target_gt_index: usize,
    pub iou_with_target: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    /// `G_i`, the ground truth the triplet is built around.
    pub gt_index: usize,
    /// `P_p`, assigned to `G_i`.
    pub positive_proposal_index: usize,
    /// `P_n`, assigned to `negative_target_index`.
    pub negative_proposal_index: usize,
    /// `G_j`, the target of `P_n`.
    pub negative_target_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletWork<T = f64> {
    pub triplet: Triplet,
    pub attractive: T,
    pub repulsive: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T = f64> {
    /// `(attractive_work + repulsive_work) / num_gts`.
    pub total: T,
    /// Aggregated attractive work before normalization.
    pub attractive_work: T,
    /// Aggregated repulsive work before normalization.
    pub repulsive_work: T,
    pub num_gts: usize,
    pub triplets: Vec<TripletWork<T>>,
}

impl<T: Scalar> LossReport<T> {
    pub fn attractive_loss(&self) -> T {
        self.attractive_work / T::lit(self.num_gts as f64)
    }

    pub fn repulsive_loss(&self) -> T {
        self.repulsive_work / T::lit(self.num_gts as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinkKind {
    /// A proposal edge coincides with a ground-truth edge inside an IoU.
    EdgeAlignment,
    /// The intersection of an interacting pair is about to vanish.
    OverlapBoundary,
    /// `l == r` or `t == b` in the border distance.
    BorderSwitch,
    /// Proposal center on a ground-truth border line.
    BorderLine,
    /// A border-distance factor is at its zero clamp.
    BorderClamp,
    /// `P_n`'s center coincides with `G_i`'s center.
    CenterCoincidence,
    /// `cos(theta)` is at zero, where repulsive work switches on or off.
    RightAngle,
    /// Proposal IoU sits on the positive-set threshold.
    AssignmentThreshold,
    /// Two ground truths tie for a proposal's best IoU.
    AssignmentTie,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kink {
    pub kind: KinkKind,
    pub proposal_index: usize,
    pub gt_index: usize,
    /// How close the sub-expression is to the non-differentiable point.
    pub margin: f64,
}

impl std::fmt::Display for Kink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "kink {:?} proposal={} gt={} margin={:.3e}",
            self.kind, self.proposal_index, self.gt_index, self.margin
        )
    }
}

/// Per-proposal partial derivatives of the loss, split by term so callers
/// can weight attraction and repulsion independently.
#[derive(Debug, Clone, PartialEq)]
pub struct CouLossGradient<T = f64> {
    pub attractive: Vec<[T; 4]>,
    pub repulsive: Vec<[T; 4]>,
    pub kinks: Vec<Kink>,
}

impl<T: Scalar> CouLossGradient<T> {
    pub fn total(&self) -> Vec<[T; 4]> {
        self.attractive
            .iter()
            .zip(&self.repulsive)
            .map(|(a, r)| [a[0] + r[0], a[1] + r[1], a[2] + r[2], a[3] + r[3]])
            .collect()
    }
}

/// `-ln IoU(g, p)`, floored at `cfg.iou_floor`.
pub fn attractive_force<T: Scalar>(g: &BBox<T>, p: &BBox<T>, cfg: &CouLossConfig<T>) -> Result<T> {
    let v = iou(g, p);
    if v <= T::zero() {
        return Err(Error::NoOverlap);
    }
    Ok(attractive_from_iou(v, cfg.iou_floor))
}

/// `-ln (1 - IoU(g, p))`, floored at `cfg.iou_floor`.
pub fn repulsive_force<T: Scalar>(g: &BBox<T>, p: &BBox<T>, cfg: &CouLossConfig<T>) -> Result<T> {
    let v = iou(g, p);
    if v <= T::zero() {
        return Err(Error::NoOverlap);
    }
    Ok(repulsive_from_iou(v, cfg.iou_floor))
}

#[inline]
pub fn attractive_from_iou<T: Scalar>(iou: T, floor: T) -> T {
    -iou.max(floor).ln()
}

#[inline]
pub fn repulsive_from_iou<T: Scalar>(iou: T, floor: T) -> T {
    -(T::one() - iou).max(floor).ln()
}

/// `(cos theta_a, cos theta_r)` for a triplet. Attraction always acts along
/// the line to the target; repulsion is projected on the `G_i -> G_j` line.
pub fn effective_cos<T: Scalar>(gi: &BBox<T>, gj: &BBox<T>, pn: &BBox<T>) -> (T, T) {
    (T::one(), cos_angle_at(center(gi), center(pn), center(gj)))
}

/// `(W_a, W_r)` for a single triplet, each clamped at zero from below.
pub fn work_terms<T: Scalar>(
    gi: &BBox<T>,
    gj: &BBox<T>,
    pp: &BBox<T>,
    pn: &BBox<T>,
    cfg: &CouLossConfig<T>,
) -> Result<(T, T)> {
    let fa = attractive_force(gi, pp, cfg)?;
    let fr = repulsive_force(gi, pn, cfg)?;
    let (cos_a, cos_r) = effective_cos(gi, gj, pn);
    let wa = fa * cos_a * border_distance(gi, pp);
    let wr = fr * cos_r * border_distance(gi, pn);
    Ok((wa.max(T::zero()), wr.max(T::zero())))
}

fn check_gts<T: Scalar>(gts: &[BBox<T>]) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::InvalidInput("at least one ground truth is required".into()));
    }
    Ok(())
}

/// Assigns each proposal to its best-IoU ground truth (lowest index wins a
/// tie) when that IoU exceeds the positive threshold and the proposal's
/// center lies inside the ground truth. Unassigned proposals are omitted.
pub fn assign_proposals<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    cfg: &CouLossConfig<T>,
) -> Vec<Assignment<T>> {
    proposals
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let (best, best_iou) = gts
                .iter()
                .enumerate()
                .map(|(i, g)| (i, iou(g, p)))
                .fold(None, |acc: Option<(usize, T)>, (i, v)| match acc {
                    Some((_, bv)) if v <= bv => acc,
                    _ => Some((i, v)),
                })?;
            (best_iou > cfg.positive_iou_threshold && contains_center(&gts[best], p)).then_some(
                Assignment {
                    proposal_index: k,
                    target_gt_index: best,
                    iou_with_target: best_iou,
                },
            )
        })
        .collect()
}

/// Like [`assign_proposals`] but with a fixed target per proposal; the
/// positive-set test is still applied against that target.
pub fn assign_to_targets<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    targets: &[usize],
    cfg: &CouLossConfig<T>,
) -> Result<Vec<Assignment<T>>> {
    if targets.len() != proposals.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} proposals",
            targets.len(),
            proposals.len()
        )));
    }
    let mut out = Vec::new();
    for (k, (p, &t)) in proposals.iter().zip(targets).enumerate() {
        let g = gts
            .get(t)
            .ok_or_else(|| Error::InvalidInput(format!("target index {t} out of range")))?;
        let v = iou(g, p);
        if v > cfg.positive_iou_threshold && contains_center(g, p) {
            out.push(Assignment {
                proposal_index: k,
                target_gt_index: t,
                iou_with_target: v,
            });
        }
    }
    Ok(out)
}

/// Enumerates, per ground truth `G_i`, every positive of `G_i` crossed with
/// every proposal assigned elsewhere that overlaps `G_i`.
pub fn form_triplets<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    assignments: &[Assignment<T>],
) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (i, gi) in gts.iter().enumerate() {
        let negatives: Vec<&Assignment<T>> = assignments
            .iter()
            .filter(|a| a.target_gt_index != i && iou(gi, &proposals[a.proposal_index]) > T::zero())
            .collect();
        if negatives.is_empty() {
            continue;
        }
        for pos in assignments.iter().filter(|a| a.target_gt_index == i) {
            for neg in &negatives {
                out.push(Triplet {
                    gt_index: i,
                    positive_proposal_index: pos.proposal_index,
                    negative_proposal_index: neg.proposal_index,
                    negative_target_index: neg.target_gt_index,
                });
            }
        }
    }
    out
}

pub fn assemble_triplets<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    cfg: &CouLossConfig<T>,
) -> Result<(Vec<Triplet>, Vec<Assignment<T>>)> {
    check_gts(gts)?;
    let assignments = assign_proposals(gts, proposals, cfg);
    let triplets = form_triplets(gts, proposals, &assignments);
    Ok((triplets, assignments))
}

pub fn couloss<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    cfg: &CouLossConfig<T>,
) -> Result<LossReport<T>> {
    check_gts(gts)?;
    let assignments = assign_proposals(gts, proposals, cfg);
    couloss_with_assignments(gts, proposals, &assignments, cfg)
}

pub fn couloss_with_assignments<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    assignments: &[Assignment<T>],
    cfg: &CouLossConfig<T>,
) -> Result<LossReport<T>> {
    Ok(evaluate(gts, proposals, assignments, cfg, false)?.0)
}

pub fn couloss_gradient<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    cfg: &CouLossConfig<T>,
) -> Result<CouLossGradient<T>> {
    check_gts(gts)?;
    let assignments = assign_proposals(gts, proposals, cfg);
    Ok(couloss_and_gradient_with_assignments(gts, proposals, &assignments, cfg)?.1)
}

/// Loss and analytic gradient in one pass. Ground truths are constants and
/// assignments are treated as fixed; clamped terms contribute zero.
pub fn couloss_and_gradient_with_assignments<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    assignments: &[Assignment<T>],
    cfg: &CouLossConfig<T>,
) -> Result<(LossReport<T>, CouLossGradient<T>)> {
    let (report, grad) = evaluate(gts, proposals, assignments, cfg, true)?;
    let mut grad = grad.expect("gradient requested");
    grad.kinks = detect_kinks(gts, proposals, &report, cfg);
    for k in &grad.kinks {
        log::warn!("{k}");
    }
    Ok((report, grad))
}

struct TermGrad<T> {
    value: T,
    grad: [T; 4],
}

fn attractive_term<T: Scalar>(gi: &BBox<T>, pp: &BBox<T>, cfg: &CouLossConfig<T>, want: bool) -> TermGrad<T> {
    let (v, dv) = iou_with_grad(gi, pp);
    let fa = attractive_from_iou(v, cfg.iou_floor);
    let (s, ds) = border_distance_with_grad(gi, pp);
    let w = fa * s;
    let mut grad = [T::zero(); 4];
    if want && w > T::zero() {
        let dfa = if v > cfg.iou_floor { -T::one() / v } else { T::zero() };
        for k in 0..4 {
            grad[k] = dfa * dv[k] * s + fa * ds[k];
        }
    }
    TermGrad { value: w.max(T::zero()), grad }
}

fn repulsive_term<T: Scalar>(
    gi: &BBox<T>,
    gj: &BBox<T>,
    pn: &BBox<T>,
    cfg: &CouLossConfig<T>,
    want: bool,
) -> TermGrad<T> {
    let (v, dv) = iou_with_grad(gi, pn);
    let fr = repulsive_from_iou(v, cfg.iou_floor);
    let (cos, dcos) = cos_angle_with_grad(center(gi), center(pn), center(gj));
    let (s, ds) = border_distance_with_grad(gi, pn);
    let w = fr * cos * s;
    let mut grad = [T::zero(); 4];
    if w <= T::zero() {
        return TermGrad { value: T::zero(), grad };
    }
    if want {
        let dfr = if T::one() - v > cfg.iou_floor { T::one() / (T::one() - v) } else { T::zero() };
        // corners move the center by half their displacement
        let dcos4 = [dcos[0], dcos[1], dcos[0], dcos[1]].map(|d| d * T::half());
        for k in 0..4 {
            grad[k] = dfr * dv[k] * cos * s + fr * dcos4[k] * s + fr * cos * ds[k];
        }
    }
    TermGrad { value: w, grad }
}

fn add4<T: Scalar>(acc: &mut [T; 4], g: &[T; 4], scale: T) {
    for k in 0..4 {
        acc[k] = acc[k] + g[k] * scale;
    }
}

fn evaluate<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    assignments: &[Assignment<T>],
    cfg: &CouLossConfig<T>,
    want_grad: bool,
) -> Result<(LossReport<T>, Option<CouLossGradient<T>>)> {
    check_gts(gts)?;
    cfg.validate()?;
    let triplets = form_triplets(gts, proposals, assignments);
    let norm = T::one() / T::lit(gts.len() as f64);

    // Pair terms are cached so each (G_i, P) is evaluated once.
    let mut att: BTreeMap<(usize, usize), TermGrad<T>> = BTreeMap::new();
    let mut rep: BTreeMap<(usize, usize, usize), TermGrad<T>> = BTreeMap::new();
    let mut per_triplet = Vec::with_capacity(triplets.len());
    for t in &triplets {
        let gi = &gts[t.gt_index];
        let wa = att
            .entry((t.gt_index, t.positive_proposal_index))
            .or_insert_with(|| attractive_term(gi, &proposals[t.positive_proposal_index], cfg, want_grad))
            .value;
        let wr = rep
            .entry((t.gt_index, t.negative_proposal_index, t.negative_target_index))
            .or_insert_with(|| {
                repulsive_term(
                    gi,
                    &gts[t.negative_target_index],
                    &proposals[t.negative_proposal_index],
                    cfg,
                    want_grad,
                )
            })
            .value;
        per_triplet.push(TripletWork {
            triplet: *t,
            attractive: wa,
            repulsive: wr,
        });
    }

    let mut ga = vec![[T::zero(); 4]; proposals.len()];
    let mut gr = vec![[T::zero(); 4]; proposals.len()];
    let (mut aw, mut rw) = (T::zero(), T::zero());
    match cfg.aggregation {
        Aggregation::TripletLiteral => {
            for tw in &per_triplet {
                aw = aw + tw.attractive;
                rw = rw + tw.repulsive;
                if want_grad {
                    let t = &tw.triplet;
                    add4(&mut ga[t.positive_proposal_index], &att[&(t.gt_index, t.positive_proposal_index)].grad, norm);
                    let key = (t.gt_index, t.negative_proposal_index, t.negative_target_index);
                    add4(&mut gr[t.negative_proposal_index], &rep[&key].grad, norm);
                }
            }
        }
        Aggregation::Deduplicated => {
            // Deterministic order: BTreeMap iteration is sorted by key.
            for (&(_, p), term) in &att {
                aw = aw + term.value;
                if want_grad {
                    add4(&mut ga[p], &term.grad, norm);
                }
            }
            for (&(_, n, _), term) in &rep {
                rw = rw + term.value;
                if want_grad {
                    add4(&mut gr[n], &term.grad, norm);
                }
            }
        }
    }

    let report = LossReport {
        total: (aw + rw) * norm,
        attractive_work: aw,
        repulsive_work: rw,
        num_gts: gts.len(),
        triplets: per_triplet,
    };
    let grad = want_grad.then(|| CouLossGradient {
        attractive: ga,
        repulsive: gr,
        kinks: Vec::new(),
    });
    Ok((report, grad))
}

/// Reports every sub-expression of the loss at `proposals` that lies within
/// `cfg.kink_tolerance` of a non-differentiable point.
pub fn detect_kinks<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    report: &LossReport<T>,
    cfg: &CouLossConfig<T>,
) -> Vec<Kink> {
    let tol = cfg.kink_tolerance.as_f64();
    let mut out = Vec::new();
    let mut push = |kind, p: usize, g: usize, margin: f64| {
        if margin < tol {
            out.push(Kink {
                kind,
                proposal_index: p,
                gt_index: g,
                margin,
            });
        }
    };

    // assignment boundaries, for every proposal
    let thr = cfg.positive_iou_threshold.as_f64();
    for (k, p) in proposals.iter().enumerate() {
        let min_side = p.width().min(p.height()).as_f64();
        let iou_tol_scale = min_side / 2.0;
        let mut ious: Vec<(usize, f64)> = gts.iter().enumerate().map(|(i, g)| (i, iou(g, p).as_f64())).collect();
        ious.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (best, best_iou) = ious[0];
        push(KinkKind::AssignmentThreshold, k, best, (best_iou - thr).abs() * iou_tol_scale);
        if let Some(&(second, second_iou)) = ious.get(1) {
            if best_iou > thr - tol && second_iou > 0.0 {
                push(KinkKind::AssignmentTie, k, second, (best_iou - second_iou) * iou_tol_scale);
            }
        }
        if best_iou > thr {
            let g = &gts[best];
            let c = center(p);
            let m = [c.x - g.x1(), g.x2() - c.x, c.y - g.y1(), g.y2() - c.y]
                .iter()
                .map(|d| d.as_f64().abs())
                .fold(f64::INFINITY, f64::min);
            push(KinkKind::BorderLine, k, best, m);
        }
    }

    let mut pairs: Vec<(usize, usize, Option<usize>)> = Vec::new();
    for tw in &report.triplets {
        let t = tw.triplet;
        pairs.push((t.gt_index, t.positive_proposal_index, None));
        pairs.push((t.gt_index, t.negative_proposal_index, Some(t.negative_target_index)));
    }
    pairs.sort_unstable();
    pairs.dedup();

    for (i, k, other) in pairs {
        let g = &gts[i];
        let p = &proposals[k];
        let ga = g.to_array();
        let pa = p.to_array();
        let edge = (0..4).map(|e| (ga[e] - pa[e]).as_f64().abs()).fold(f64::INFINITY, f64::min);
        push(KinkKind::EdgeAlignment, k, i, edge);
        let iw = (g.x2().min(p.x2()) - g.x1().max(p.x1())).as_f64();
        let ih = (g.y2().min(p.y2()) - g.y1().max(p.y1())).as_f64();
        push(KinkKind::OverlapBoundary, k, i, iw.min(ih));

        let c = center(p);
        for (cv, lo, hi) in [(c.x, g.x1(), g.x2()), (c.y, g.y1(), g.y2())] {
            let (cv, lo, hi) = (cv.as_f64(), lo.as_f64(), hi.as_f64());
            let (dl, dh) = ((cv - lo).abs(), (hi - cv).abs());
            push(KinkKind::BorderSwitch, k, i, (dl - dh).abs() / 2.0);
            push(KinkKind::BorderLine, k, i, dl.min(dh));
            push(KinkKind::BorderClamp, k, i, (dl.min(dh) - (hi - lo) / 2.0).abs());
        }

        if let Some(j) = other {
            let b = center(g);
            let cj = center(&gts[j]);
            let (ux, uy) = ((c.x - b.x).as_f64(), (c.y - b.y).as_f64());
            let (vx, vy) = ((cj.x - b.x).as_f64(), (cj.y - b.y).as_f64());
            let nu = ux.hypot(uy);
            let nv = vx.hypot(vy);
            push(KinkKind::CenterCoincidence, k, i, nu);
            if nv > 0.0 {
                push(KinkKind::RightAngle, k, i, (ux * vx + uy * vy).abs() / nv);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn cfg() -> CouLossConfig {
        CouLossConfig::default()
    }

    /// Box with the given IoU against the unit square: same height,
    /// shifted right so that `(1 - d) / (1 + d) = v`.
    fn with_iou(v: f64) -> (BBox, BBox) {
        let d = (1.0 - v) / (1.0 + v);
        (b(0.0, 0.0, 1.0, 1.0), b(d, 0.0, 1.0 + d, 1.0))
    }

    #[test]
    fn attractive_force_values() {
        let g = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(attractive_force(&g, &g, &cfg()).unwrap(), 0.0);
        let (g, p) = with_iou((-1.0f64).exp());
        assert!((attractive_force(&g, &p, &cfg()).unwrap() - 1.0).abs() < 1e-12);
        assert!((attractive_from_iou(1e-6f64, 1e-6) - 13.815510557964274).abs() < 1e-9);
        assert!((attractive_from_iou(1e-9f64, 1e-6) - 13.815510557964274).abs() < 1e-9);
        assert_eq!(
            attractive_force(&g, &b(5.0, 5.0, 6.0, 6.0), &cfg()),
            Err(Error::NoOverlap)
        );
    }

    #[test]
    fn repulsive_force_values() {
        let (g, p) = with_iou(1.0 - (-1.0f64).exp());
        assert!((repulsive_force(&g, &p, &cfg()).unwrap() - 1.0).abs() < 1e-12);
        let (g, p) = with_iou(0.5);
        assert!((repulsive_force(&g, &p, &cfg()).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let (g, p) = with_iou(1e-9);
        assert!(repulsive_force(&g, &p, &cfg()).unwrap() < 1e-8);
        assert_eq!(
            repulsive_force(&g, &b(5.0, 5.0, 6.0, 6.0), &cfg()),
            Err(Error::NoOverlap)
        );
    }

    #[test]
    fn effective_cos_layouts() {
        let gi = BBox::from_center_size(0.0, 0.0, 2.0, 2.0).unwrap();
        let gj = BBox::from_center_size(5.0, 0.0, 2.0, 2.0).unwrap();
        let same = BBox::from_center_size(3.0, 0.0, 2.0, 2.0).unwrap();
        let opposite = BBox::from_center_size(-1.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(effective_cos(&gi, &gj, &same), (1.0, 1.0));
        assert_eq!(effective_cos(&gi, &gj, &opposite), (1.0, -1.0));
    }

    #[test]
    fn work_terms_fixtures() {
        let gi = b(0.0, 0.0, 4.0, 8.0);
        let pp = b(0.5, 1.0, 4.5, 9.0);
        // P_n's center sits on G_i's horizontal midline, so s = 0.
        let (wa, wr) = work_terms(&gi, &b(3.0, 0.0, 7.0, 8.0), &pp, &b(2.0, 0.0, 6.0, 8.0), &cfg()).unwrap();
        assert!((wa - 0.11940688858909873).abs() < 1e-12);
        assert_eq!(wr, 0.0);
        let (wa, wr) = work_terms(&gi, &b(3.0, 1.0, 7.0, 9.0), &pp, &b(2.5, 1.5, 6.5, 9.5), &cfg()).unwrap();
        assert!((wa - 0.11940688858909873).abs() < 1e-12);
        assert!((wr - 0.10256378685675722).abs() < 1e-12);
        // perfect alignment
        let (wa, _) = work_terms(&gi, &b(3.0, 1.0, 7.0, 9.0), &gi, &b(2.5, 1.5, 6.5, 9.5), &cfg()).unwrap();
        assert_eq!(wa, 0.0);
    }

    #[test]
    fn negative_cos_is_clamped() {
        let gi = b(0.0, 0.0, 4.0, 8.0);
        let gj = b(3.0, 1.0, 7.0, 9.0);
        // P_n center on the far side of G_i from G_j
        let pn = b(-1.0, -1.0, 3.0, 7.0);
        assert!(effective_cos(&gi, &gj, &pn).1 < 0.0);
        let (_, wr) = work_terms(&gi, &gj, &gi, &pn, &cfg()).unwrap();
        assert_eq!(wr, 0.0);
        let t = repulsive_term(&gi, &gj, &pn, &cfg(), true);
        assert_eq!(t.grad, [0.0; 4]);
    }

    #[test]
    fn triplet_enumeration() {
        let c = cfg();
        let g0 = b(0.0, 0.0, 4.0, 8.0);
        let (t, a) = assemble_triplets(&[g0], &[b(0.2, 0.1, 4.1, 8.2)], &c).unwrap();
        assert!(t.is_empty());
        assert_eq!(a.len(), 1);

        // disjoint ground truths
        let g1 = b(10.0, 0.0, 14.0, 8.0);
        let (t, a) = assemble_triplets(&[g0, g1], &[b(0.2, 0.1, 4.1, 8.2), b(10.1, 0.2, 14.3, 8.1)], &c).unwrap();
        assert!(t.is_empty());
        assert_eq!(a.len(), 2);

        let g1 = b(3.0, 1.0, 7.0, 9.0);
        let props = [b(0.5, 1.0, 4.5, 9.0), b(2.5, 1.5, 6.5, 9.5)];
        let (t, a) = assemble_triplets(&[g0, g1], &props, &c).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(
            t,
            vec![
                Triplet { gt_index: 0, positive_proposal_index: 0, negative_proposal_index: 1, negative_target_index: 1 },
                Triplet { gt_index: 1, positive_proposal_index: 1, negative_proposal_index: 0, negative_target_index: 0 },
            ]
        );

        assert!(assemble_triplets::<f64>(&[], &props, &c).is_err());
        let (t, a) = assemble_triplets(&[g0], &[], &c).unwrap();
        assert!(t.is_empty() && a.is_empty());
    }

    #[test]
    fn assignment_tie_prefers_lowest_index() {
        let g = b(0.0, 0.0, 2.0, 2.0);
        let a = assign_proposals(&[g, g], &[g], &cfg());
        assert_eq!(a[0].target_gt_index, 0);
    }

    #[test]
    fn center_filter_rejects_proposals() {
        let g = b(0.0, 0.0, 4.0, 4.0);
        let c = CouLossConfig { positive_iou_threshold: 0.3, ..cfg() };
        // IoU 16/36 clears the threshold but the center (4.5, 2) is outside
        let p = b(0.0, 0.0, 9.0, 4.0);
        assert!(iou(&g, &p) > 0.3);
        assert!(assign_proposals(&[g], &[p], &c).is_empty());
        let inside = b(-0.5, -0.5, 4.5, 4.5);
        assert_eq!(assign_proposals(&[g], &[inside], &c).len(), 1);
    }

    #[test]
    fn couloss_two_gt_scene() {
        let gts = [b(0.0, 0.0, 4.0, 8.0), b(3.0, 1.0, 7.0, 9.0)];
        let props = [b(0.5, 1.0, 4.5, 9.0), b(2.5, 1.5, 6.5, 9.5)];
        let dedup = couloss(&gts, &props, &cfg()).unwrap();
        let expect = (0.11940688858909873 + 0.10256378685675722 + 0.06422641818816589) / 2.0;
        assert!((dedup.total - expect).abs() < 1e-12);
        assert_eq!(dedup.triplets.len(), 2);

        // with a second negative for G_0 the literal form repeats W_a
        let props3 = [props[0], props[1], b(2.6, 1.4, 6.6, 9.4)];
        let lit_cfg = CouLossConfig { aggregation: Aggregation::TripletLiteral, ..cfg() };
        let d = couloss(&gts, &props3, &cfg()).unwrap();
        let l = couloss(&gts, &props3, &lit_cfg).unwrap();
        assert!(l.total > d.total);
    }

    #[test]
    fn perfect_and_single_scenes_are_zero() {
        let gts = [b(0.0, 0.0, 4.0, 8.0), b(10.0, 0.0, 14.0, 8.0)];
        assert_eq!(couloss(&gts, &gts, &cfg()).unwrap().total, 0.0);
        let one = [gts[0]];
        assert_eq!(couloss(&one, &[b(0.3, 0.2, 4.4, 8.1)], &cfg()).unwrap().total, 0.0);
        assert!(couloss::<f64>(&[], &[], &cfg()).is_err());
        let g = couloss_gradient(&gts, &gts, &cfg()).unwrap();
        assert!(g.total().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn kink_warning_on_aligned_edges() {
        let gts = [b(0.0, 0.0, 4.0, 8.0), b(3.0, 1.0, 7.0, 9.0)];
        // P_p shares G_0's left edge exactly
        let props = [b(0.0, 1.0, 4.5, 9.0), b(2.5, 1.5, 6.5, 9.5)];
        let g = couloss_gradient(&gts, &props, &cfg()).unwrap();
        assert!(g.kinks.iter().any(|k| k.kind == KinkKind::EdgeAlignment && k.proposal_index == 0));
    }

    #[test]
    fn config_validation() {
        let bad = CouLossConfig { positive_iou_threshold: 1.0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = CouLossConfig { iou_floor: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
