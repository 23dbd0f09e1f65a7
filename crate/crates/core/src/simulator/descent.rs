use super::generate::{ProposalSet, SimConfig};
use super::scene::Scene;
use crate::baselines::{composite_with_assignments, CompositeConfig};
use crate::couloss::{assign_proposals, assign_to_targets};
use crate::error::{Error, Result};
use crate::geometry::{center, iou, BBox};
use crate::scalar::Scalar;

/// Loss above this multiple of the initial loss aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub total: f64,
    pub smooth_l1: f64,
    pub attractive: f64,
    pub repulsive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalTrace<T = f64> {
    pub initial: BBox<T>,
    pub final_box: BBox<T>,
    /// Pedestrian the proposal was spawned from.
    pub target: usize,
    pub initial_iou: f64,
    pub final_iou: f64,
    /// Highest final IoU with any other pedestrian.
    pub final_other_iou: f64,
}

impl<T> ProposalTrace<T> {
    pub fn drifted(&self) -> bool {
        self.final_other_iou > self.final_iou
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult<T = f64> {
    /// Number of descent updates applied.
    pub steps_taken: usize,
    /// Loss before each update and after the last one.
    pub loss_curve: Vec<LossPoint>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub mean_final_iou: f64,
    /// Fraction of proposals whose final IoU with some non-target pedestrian
    /// exceeds the IoU with their own.
    pub drift_rate: f64,
    /// Fraction of final proposal centers inside an overlap of two
    /// pedestrians' full boxes.
    pub overlap_occupancy: f64,
    pub proposals: Vec<ProposalTrace<T>>,
    pub kink_warnings: usize,
}

fn divide<T: Scalar>(b: &BBox<T>, l: T) -> Result<BBox<T>> {
    BBox::new(b.x1() / l, b.y1() / l, b.x2() / l, b.y2() / l)
}

fn multiply<T: Scalar>(b: &BBox<T>, l: T) -> Result<BBox<T>> {
    BBox::new(b.x1() * l, b.y1() * l, b.x2() * l, b.y2() * l)
}

/// Fixed-step gradient descent on raw proposal corners under the composite
/// regression objective.
///
/// Coordinates are divided by the scene width first, so `sim.step_size` is
/// relative to the extent and jointly scaling a scene scales the trajectory.
/// Assignments are recomputed every step unless `sim.freeze_assignments` is
/// set, in which case each proposal keeps its spawn target. Each proposal's
/// gradient is rescaled to at most `sim.grad_clip` in norm. The run stops
/// early when the gradient vanishes.
pub fn run_descent<T: Scalar>(
    scene: &Scene<T>,
    proposals: &ProposalSet<T>,
    loss: &CompositeConfig<T>,
    sim: &SimConfig,
) -> Result<SimResult<T>> {
    scene.validate()?;
    loss.validate()?;
    if proposals.boxes.len() != proposals.targets.len() {
        return Err(Error::InvalidInput("every proposal needs a spawn target".into()));
    }
    let gts_raw = scene.gts();
    if gts_raw.is_empty() {
        return Err(Error::InvalidInput("scene has no pedestrians".into()));
    }
    let unit = scene.width;
    let gts: Vec<BBox<T>> = gts_raw.iter().map(|g| divide(g, unit)).collect::<Result<_>>()?;
    let mut q: Vec<BBox<T>> = proposals.boxes.iter().map(|b| divide(b, unit)).collect::<Result<_>>()?;
    let eta = T::lit(sim.step_size);

    let mut loss_curve = Vec::with_capacity(sim.steps + 1);
    let mut steps_taken = 0;
    let mut kink_warnings = 0;
    let mut initial = 0.0;
    for step in 0..=sim.steps {
        let assignments = if sim.freeze_assignments {
            assign_to_targets(&gts, &q, &proposals.targets, &loss.couloss)?
        } else {
            assign_proposals(&gts, &q, &loss.couloss)
        };
        let want_grad = step < sim.steps;
        let (report, grad) = composite_with_assignments(&gts, &q, &assignments, loss, want_grad)?;
        let total = report.total.as_f64();
        loss_curve.push(LossPoint {
            total,
            smooth_l1: report.smooth_l1.as_f64(),
            attractive: report.couloss_attractive.as_f64(),
            repulsive: report.couloss_repulsive.as_f64(),
        });
        if !total.is_finite() {
            return Err(Error::Numerical { step, reason: format!("loss became {total}") });
        }
        if step == 0 {
            initial = total;
        } else if initial > 0.0 && total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged { step, loss: total, initial });
        }
        let Some(grad) = grad else { break };
        kink_warnings += grad.kinks.len();
        if grad.grads.iter().flatten().all(|g| *g == T::zero()) {
            break;
        }
        for (b, g) in q.iter_mut().zip(&grad.grads) {
            let mut g = *g;
            if let Some(clip) = sim.grad_clip {
                let norm = g.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
                let clip = T::lit(clip);
                if norm > clip {
                    g = g.map(|v| v * clip / norm);
                }
            }
            let c = b.to_array();
            let next = [c[0] - eta * g[0], c[1] - eta * g[1], c[2] - eta * g[2], c[3] - eta * g[3]];
            *b = BBox::from_array(next).map_err(|e| Error::Numerical { step, reason: e.to_string() })?;
        }
        steps_taken += 1;
    }

    let overlaps: Vec<BBox<T>> = (0..gts.len())
        .flat_map(|i| (i + 1..gts.len()).map(move |j| (i, j)))
        .filter_map(|(i, j)| gts[i].intersection(&gts[j]))
        .collect();

    let mut traces = Vec::with_capacity(q.len());
    let (mut drift, mut occupied, mut iou_sum) = (0usize, 0usize, 0.0);
    for (k, fin) in q.iter().enumerate() {
        let t = proposals.targets[k];
        let init = divide(&proposals.boxes[k], unit)?;
        let final_iou = iou(&gts[t], fin).as_f64();
        let final_other_iou = gts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != t)
            .map(|(_, g)| iou(g, fin).as_f64())
            .fold(0.0, f64::max);
        let trace = ProposalTrace {
            initial: proposals.boxes[k],
            final_box: multiply(fin, unit)?,
            target: t,
            initial_iou: iou(&gts[t], &init).as_f64(),
            final_iou,
            final_other_iou,
        };
        drift += trace.drifted() as usize;
        let c = center(fin);
        occupied += overlaps.iter().any(|o| o.contains_point(c)) as usize;
        iou_sum += final_iou;
        traces.push(trace);
    }
    let n = traces.len().max(1) as f64;

    Ok(SimResult {
        steps_taken,
        initial_loss: initial,
        final_loss: loss_curve.last().map_or(initial, |p| p.total),
        loss_curve,
        mean_final_iou: iou_sum / n,
        drift_rate: drift as f64 / n,
        overlap_occupancy: occupied as f64 / n,
        proposals: traces,
        kink_warnings,
    })
}
