//! Central finite-difference check of the analytic Coulomb-loss gradient.

use crate::couloss::{assign_proposals, couloss_and_gradient_with_assignments, couloss_with_assignments, Assignment, CouLossConfig, Kink};
use crate::error::Result;
use crate::geometry::BBox;
use crate::simulator::{generate_scene, spawn_proposals, SimConfig};

/// Gradient magnitudes below this are treated as zero when forming a
/// relative error.
pub const GRADIENT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Scenes that must be checked before the run stops.
    pub scenes: usize,
    pub first_seed: u64,
    /// Give up after drawing this many seeds.
    pub max_seeds: u64,
    /// Difference step as a fraction of the proposal's longer side.
    pub rel_step: f64,
    /// Kink margin as a fraction of the smallest ground-truth side; proposals
    /// closer than this to a non-differentiable point are skipped.
    pub kink_rel_tol: f64,
    pub tolerance: f64,
    pub sim: SimConfig,
    pub couloss: CouLossConfig<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            scenes: 1000,
            first_seed: 0,
            max_seeds: 100_000,
            rel_step: 1e-5,
            kink_rel_tol: 1e-3,
            tolerance: 1e-4,
            sim: SimConfig { proposals_per_gt: 4, ..SimConfig::default() },
            couloss: CouLossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermError {
    pub max: f64,
    pub mean: f64,
}

/// Relative errors of one proposal's attractive and repulsive gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalError {
    pub proposal_index: usize,
    pub attractive: f64,
    pub repulsive: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub scenes_checked: usize,
    pub seeds_drawn: u64,
    pub proposals_checked: usize,
    pub proposals_skipped: usize,
    pub attractive: TermError,
    pub repulsive: TermError,
    /// Kinks met along the way, tagged with their seed.
    pub kinks: Vec<(u64, Kink)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.attractive.max < tolerance && self.repulsive.max < tolerance
    }

    pub fn max_error(&self) -> f64 {
        self.attractive.max.max(self.repulsive.max)
    }
}

fn relative(fd: &[f64; 4], an: &[f64; 4]) -> f64 {
    let diff = (0..4).map(|c| (fd[c] - an[c]).abs()).fold(0.0, f64::max);
    let scale = (0..4).map(|c| fd[c].abs().max(an[c].abs())).fold(GRADIENT_FLOOR, f64::max);
    diff / scale
}

/// Compares the analytic gradient of every proposal not listed in `skip`
/// with central differences of step `rel_step * max(w, h)`, holding
/// `assignments` fixed. The error is the largest component difference over
/// the largest component magnitude.
pub fn proposal_errors(
    gts: &[BBox<f64>],
    proposals: &[BBox<f64>],
    assignments: &[Assignment<f64>],
    cfg: &CouLossConfig<f64>,
    rel_step: f64,
    skip: &[bool],
) -> Result<Vec<ProposalError>> {
    let (_, grad) = couloss_and_gradient_with_assignments(gts, proposals, assignments, cfg)?;
    let mut out = Vec::new();
    let mut moved = proposals.to_vec();
    for (k, b) in proposals.iter().enumerate() {
        if skip.get(k).copied().unwrap_or(false) {
            continue;
        }
        let h = rel_step * b.width().max(b.height());
        let mut fa = [0.0; 4];
        let mut fr = [0.0; 4];
        for c in 0..4 {
            let mut terms = [(0.0, 0.0); 2];
            for (slot, sign) in [(0, 1.0), (1, -1.0)] {
                let mut a = b.to_array();
                a[c] += sign * h;
                moved[k] = BBox::from_array(a)?;
                let r = couloss_with_assignments(gts, &moved, assignments, cfg)?;
                terms[slot] = (r.attractive_loss(), r.repulsive_loss());
            }
            fa[c] = (terms[0].0 - terms[1].0) / (2.0 * h);
            fr[c] = (terms[0].1 - terms[1].1) / (2.0 * h);
        }
        moved[k] = *b;
        out.push(ProposalError {
            proposal_index: k,
            attractive: relative(&fa, &grad.attractive[k]),
            repulsive: relative(&fr, &grad.repulsive[k]),
        });
    }
    Ok(out)
}

/// Result of checking one scene: per-proposal errors, kinks found, and the
/// number of proposals skipped because of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCheck {
    pub errors: Vec<ProposalError>,
    pub kinks: Vec<Kink>,
    pub skipped: usize,
    pub triplets: usize,
}

/// Checks one scene with kink margin `kink_rel_tol` times its smallest
/// ground-truth side.
pub fn check_scene(
    gts: &[BBox<f64>],
    proposals: &[BBox<f64>],
    cfg: &CouLossConfig<f64>,
    rel_step: f64,
    kink_rel_tol: f64,
) -> Result<SceneCheck> {
    let side = gts.iter().map(|g| g.width().min(g.height())).fold(f64::INFINITY, f64::min);
    let cfg = CouLossConfig { kink_tolerance: kink_rel_tol * side, ..*cfg };
    let assignments = assign_proposals(gts, proposals, &cfg);
    let (report, grad) = couloss_and_gradient_with_assignments(gts, proposals, &assignments, &cfg)?;
    let mut skip = vec![false; proposals.len()];
    for k in &grad.kinks {
        skip[k.proposal_index] = true;
    }
    let errors = proposal_errors(gts, proposals, &assignments, &cfg, rel_step, &skip)?;
    Ok(SceneCheck {
        errors,
        skipped: skip.iter().filter(|&&s| s).count(),
        kinks: grad.kinks,
        triplets: report.triplets.len(),
    })
}

/// Checks the simulator scene for `seed`.
pub fn check_seed(cfg: &GradCheckConfig, seed: u64) -> Result<SceneCheck> {
    let scene = generate_scene::<f64>(&cfg.sim, seed)?;
    let props = spawn_proposals(&scene, &cfg.sim, seed)?;
    check_scene(&scene.gts(), &props.boxes, &cfg.couloss, cfg.rel_step, cfg.kink_rel_tol)
}

/// Running totals over checked scenes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accumulator {
    report: GradCheckReport,
    sum_a: f64,
    sum_r: f64,
}

impl Accumulator {
    /// Adds one scene drawn from `seed`. Scenes without triplets or without
    /// any kink-free proposal are drawn but not counted as checked.
    pub fn add(&mut self, seed: u64, check: &SceneCheck) {
        let rep = &mut self.report;
        rep.seeds_drawn += 1;
        rep.kinks.extend(check.kinks.iter().map(|k| (seed, *k)));
        if check.triplets == 0 || check.errors.is_empty() {
            return;
        }
        rep.scenes_checked += 1;
        rep.proposals_skipped += check.skipped;
        for e in &check.errors {
            rep.proposals_checked += 1;
            self.sum_a += e.attractive;
            self.sum_r += e.repulsive;
            rep.attractive.max = rep.attractive.max.max(e.attractive);
            rep.repulsive.max = rep.repulsive.max.max(e.repulsive);
        }
    }

    pub fn scenes_checked(&self) -> usize {
        self.report.scenes_checked
    }

    pub fn finish(mut self) -> GradCheckReport {
        let n = self.report.proposals_checked;
        if n > 0 {
            self.report.attractive.mean = self.sum_a / n as f64;
            self.report.repulsive.mean = self.sum_r / n as f64;
        }
        self.report
    }
}

/// Draws simulator scenes from `first_seed` on until `scenes` of them have
/// been checked or `max_seeds` have been drawn.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.sim.validate()?;
    cfg.couloss.validate()?;
    let mut acc = Accumulator::default();
    let mut seed = cfg.first_seed;
    while acc.scenes_checked() < cfg.scenes && seed - cfg.first_seed < cfg.max_seeds {
        acc.add(seed, &check_seed(cfg, seed)?);
        seed += 1;
    }
    Ok(acc.finish())
}
