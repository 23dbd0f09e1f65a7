//! Reference regression losses and the composite objective that adds the
//! Coulomb loss (and optionally the anchor-location focal loss) on top of a
//! SmoothL1 box regression term.

use crate::couloss::{
    assign_proposals, couloss_and_gradient_with_assignments, couloss_with_assignments, Assignment,
    CouLossConfig, Kink, LossReport,
};
use crate::error::{Error, Result};
use crate::geometry::{iou_with_grad, BBox};
use crate::scalar::Scalar;

/// Floor applied inside `ln` by [`iou_loss`] and to probabilities by
/// [`focal_loss`].
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Which regression terms enter the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressionTerms {
    pub smooth_l1: bool,
    pub attraction: bool,
    pub repulsion: bool,
}

/// Named term selections used by the ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossVariant {
    Baseline,
    CouLoss,
    OnlyAtt,
    OnlyRep,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Baseline, Self::CouLoss, Self::OnlyAtt, Self::OnlyRep];

    pub fn terms(self) -> RegressionTerms {
        let (attraction, repulsion) = match self {
            Self::Baseline => (false, false),
            Self::CouLoss => (true, true),
            Self::OnlyAtt => (true, false),
            Self::OnlyRep => (false, true),
        };
        RegressionTerms {
            smooth_l1: true,
            attraction,
            repulsion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::CouLoss => "couloss",
            Self::OnlyAtt => "only_att",
            Self::OnlyRep => "only_rep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeConfig<T = f64> {
    /// Weight of the Coulomb loss on the regression stage.
    pub alpha: T,
    /// Weight of a second-stage Coulomb loss. The single-stage composite
    /// here has no second stage and does not read it.
    pub beta: T,
    /// Weight of the anchor-location focal loss.
    pub gamma: T,
    pub focal_gamma: T,
    pub focal_alpha: T,
    pub smoothl1_beta: T,
    pub terms: RegressionTerms,
    pub couloss: CouLossConfig<T>,
}

impl<T: Scalar> Default for CompositeConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
            gamma: T::one(),
            focal_gamma: T::two(),
            focal_alpha: T::lit(0.25),
            smoothl1_beta: T::one(),
            terms: LossVariant::CouLoss.terms(),
            couloss: CouLossConfig::default(),
        }
    }
}

impl<T: Scalar> CompositeConfig<T> {
    pub fn with_variant(mut self, v: LossVariant) -> Self {
        self.terms = v.terms();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= T::zero()) || !w.is_finite() {
                return Err(Error::InvalidInput(format!("weight {name} must be finite and >= 0")));
            }
        }
        if !(self.smoothl1_beta >= T::zero()) {
            return Err(Error::InvalidInput("smoothl1_beta must be >= 0".into()));
        }
        self.couloss.validate()
    }
}

#[inline]
fn smooth_l1_scalar<T: Scalar>(d: T, beta: T) -> (T, T) {
    let a = d.abs();
    if a < beta {
        (T::half() * d * d / beta, d / beta)
    } else {
        (a - T::half() * beta, d.signum())
    }
}

/// Sum over the four corners of the SmoothL1 penalty with transition at `beta`.
pub fn smooth_l1<T: Scalar>(pred: &BBox<T>, target: &BBox<T>, beta: T) -> T {
    smooth_l1_with_grad(pred, target, beta).0
}

/// SmoothL1 and its gradient with respect to `pred`.
pub fn smooth_l1_with_grad<T: Scalar>(pred: &BBox<T>, target: &BBox<T>, beta: T) -> (T, [T; 4]) {
    let p = pred.to_array();
    let t = target.to_array();
    let mut total = T::zero();
    let mut grad = [T::zero(); 4];
    for k in 0..4 {
        let (v, g) = smooth_l1_scalar(p[k] - t[k], beta);
        total = total + v;
        grad[k] = g;
    }
    (total, grad)
}

/// `-ln IoU(pred, target)`; undefined without overlap.
pub fn iou_loss<T: Scalar>(pred: &BBox<T>, target: &BBox<T>) -> Result<T> {
    Ok(iou_loss_with_grad(pred, target)?.0)
}

pub fn iou_loss_with_grad<T: Scalar>(pred: &BBox<T>, target: &BBox<T>) -> Result<(T, [T; 4])> {
    let (v, dv) = iou_with_grad(target, pred);
    if v <= T::zero() {
        return Err(Error::NoOverlap);
    }
    let floor = T::lit(DEFAULT_FLOOR);
    let loss = -v.max(floor).ln();
    let scale = if v > floor { -T::one() / v } else { T::zero() };
    Ok((loss, dv.map(|d| d * scale)))
}

/// Alpha-balanced focal loss `-alpha_t (1 - p_t)^gamma ln p_t`.
///
/// Probabilities at or beyond 0 or 1 are clamped into `[1e-6, 1 - 1e-6]`
/// with a logged warning.
pub fn focal_loss<T: Scalar>(prob: T, label: bool, focal_gamma: T, focal_alpha: T) -> T {
    let floor = T::lit(DEFAULT_FLOOR);
    let mut p = prob;
    if !(p > T::zero() && p < T::one()) {
        log::warn!("focal_loss: probability {prob} clamped into the open unit interval");
        p = p.max(floor).min(T::one() - floor);
    }
    let (pt, at) = if label {
        (p, focal_alpha)
    } else {
        (T::one() - p, T::one() - focal_alpha)
    };
    let pt = pt.max(floor);
    -at * (T::one() - pt).powf(focal_gamma) * pt.ln()
}

/// Breakdown of the composite regression objective. Every weighted part is
/// already multiplied by its weight (and zero when toggled off).
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeReport<T = f64> {
    pub total: T,
    /// Target-normalized SmoothL1 summed over positive proposals and divided
    /// by the number of ground truths, the same normalization as the Coulomb
    /// loss.
    pub smooth_l1: T,
    pub couloss_attractive: T,
    pub couloss_repulsive: T,
    /// `gamma * L_loc`, zero unless added with [`CompositeReport::with_location`].
    pub location: T,
    pub couloss: LossReport<T>,
    pub num_positives: usize,
}

impl<T: Scalar> CompositeReport<T> {
    /// Adds the weighted anchor-location loss to the objective.
    pub fn with_location(mut self, location_loss: T, cfg: &CompositeConfig<T>) -> Self {
        self.location = cfg.gamma * location_loss;
        self.total = self.smooth_l1 + self.couloss_attractive + self.couloss_repulsive + self.location;
        self
    }
}

/// Maps `pred` into the frame where `target` is the unit square.
fn normalized_pair<T: Scalar>(pred: &BBox<T>, target: &BBox<T>) -> Result<(BBox<T>, BBox<T>, [T; 4])> {
    let (w, h) = (target.width(), target.height());
    let (ox, oy) = (target.x1(), target.y1());
    let p = BBox::new(
        (pred.x1() - ox) / w,
        (pred.y1() - oy) / h,
        (pred.x2() - ox) / w,
        (pred.y2() - oy) / h,
    )?;
    let unit = BBox::new(T::zero(), T::zero(), T::one(), T::one())?;
    let inv = [T::one() / w, T::one() / h, T::one() / w, T::one() / h];
    Ok((p, unit, inv))
}

/// Composite regression objective on the positives found by
/// [`assign_proposals`].
pub fn composite_regression_loss<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    cfg: &CompositeConfig<T>,
) -> Result<CompositeReport<T>> {
    if gts.is_empty() {
        return Err(Error::InvalidInput("at least one ground truth is required".into()));
    }
    let assignments = assign_proposals(gts, proposals, &cfg.couloss);
    Ok(composite_with_assignments(gts, proposals, &assignments, cfg, false)?.0)
}

/// Gradient of the composite objective with respect to each proposal, with
/// any kink warnings raised by the Coulomb term.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGradient<T = f64> {
    pub grads: Vec<[T; 4]>,
    pub kinks: Vec<Kink>,
}

pub fn composite_with_assignments<T: Scalar>(
    gts: &[BBox<T>],
    proposals: &[BBox<T>],
    assignments: &[Assignment<T>],
    cfg: &CompositeConfig<T>,
    want_grad: bool,
) -> Result<(CompositeReport<T>, Option<CompositeGradient<T>>)> {
    cfg.validate()?;
    if gts.is_empty() {
        return Err(Error::InvalidInput("at least one ground truth is required".into()));
    }
    let n = proposals.len();
    let mut grads = vec![[T::zero(); 4]; n];

    let mut sl1 = T::zero();
    if cfg.terms.smooth_l1 {
        let inv_count = T::one() / T::lit(gts.len() as f64);
        for a in assignments {
            let (p, unit, inv) = normalized_pair(&proposals[a.proposal_index], &gts[a.target_gt_index])?;
            let (v, g) = smooth_l1_with_grad(&p, &unit, cfg.smoothl1_beta);
            sl1 = sl1 + v * inv_count;
            if want_grad {
                let acc = &mut grads[a.proposal_index];
                for k in 0..4 {
                    acc[k] = acc[k] + g[k] * inv[k] * inv_count;
                }
            }
        }
    }

    let use_cou = cfg.terms.attraction || cfg.terms.repulsion;
    let (report, cgrad) = if want_grad && use_cou {
        let (r, g) = couloss_and_gradient_with_assignments(gts, proposals, assignments, &cfg.couloss)?;
        (r, Some(g))
    } else {
        (couloss_with_assignments(gts, proposals, assignments, &cfg.couloss)?, None)
    };
    let att = if cfg.terms.attraction { cfg.alpha * report.attractive_loss() } else { T::zero() };
    let rep = if cfg.terms.repulsion { cfg.alpha * report.repulsive_loss() } else { T::zero() };

    let mut kinks = Vec::new();
    if let Some(cg) = cgrad {
        for (k, acc) in grads.iter_mut().enumerate() {
            for c in 0..4 {
                if cfg.terms.attraction {
                    acc[c] = acc[c] + cfg.alpha * cg.attractive[k][c];
                }
                if cfg.terms.repulsion {
                    acc[c] = acc[c] + cfg.alpha * cg.repulsive[k][c];
                }
            }
        }
        kinks = cg.kinks;
    }

    let out = CompositeReport {
        total: sl1 + att + rep,
        smooth_l1: sl1,
        couloss_attractive: att,
        couloss_repulsive: rep,
        location: T::zero(),
        couloss: report,
        num_positives: assignments.len(),
    };
    Ok((out, want_grad.then_some(CompositeGradient { grads, kinks })))
}
