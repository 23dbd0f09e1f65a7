use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scene::{Pedestrian, Scene};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::Scalar;

/// Knobs for synthetic crowd scenes and the descent loop that runs on them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub width: f64,
    pub height: f64,
    pub pedestrians: usize,
    /// Band for the IoU between each new pedestrian and the one it crowds.
    pub crowd_iou_min: f64,
    pub crowd_iou_max: f64,
    /// Width over height of a pedestrian box.
    pub aspect_ratio: f64,
    /// Pedestrian height range as a fraction of the extent height.
    pub height_min: f64,
    pub height_max: f64,
    pub distractors: usize,
    /// Proposal jitter as a fraction of box size (center) and log-size.
    pub jitter: f64,
    pub proposals_per_gt: usize,
    pub steps: usize,
    /// Descent step in extent-normalized coordinates.
    pub step_size: f64,
    /// Per-proposal cap on the gradient norm before each step; `None` takes
    /// raw steps.
    pub grad_clip: Option<f64>,
    pub freeze_assignments: bool,
    pub max_placement_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            pedestrians: 2,
            crowd_iou_min: 0.3,
            crowd_iou_max: 0.5,
            aspect_ratio: 0.41,
            height_min: 0.3,
            height_max: 0.5,
            distractors: 3,
            jitter: 0.15,
            proposals_per_gt: 16,
            steps: 40,
            step_size: 0.002,
            grad_clip: None,
            freeze_assignments: false,
            max_placement_attempts: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("extent must be positive");
        }
        if self.pedestrians == 0 {
            return bad("pedestrian count must be positive");
        }
        if !(0.0 <= self.crowd_iou_min && self.crowd_iou_min <= self.crowd_iou_max && self.crowd_iou_max < 1.0) {
            return bad("crowd IoU band must satisfy 0 <= min <= max < 1");
        }
        if !(self.aspect_ratio > 0.0) {
            return bad("aspect_ratio must be positive");
        }
        if !(0.0 < self.height_min && self.height_min <= self.height_max && self.height_max <= 1.0) {
            return bad("height range must satisfy 0 < min <= max <= 1");
        }
        if !(self.jitter >= 0.0) || self.proposals_per_gt == 0 {
            return bad("jitter must be >= 0 and proposals_per_gt positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Proposals together with the pedestrian each was spawned from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet<T = f64> {
    pub boxes: Vec<BBox<T>>,
    pub targets: Vec<usize>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Distance along `dir` at which a `w x h` box centered `r * dir` away from
/// `partner`'s center reaches IoU `target`; IoU is non-increasing in `r`.
fn offset_for_iou(partner: &BBox<f64>, w: f64, h: f64, dir: (f64, f64), target: f64) -> Option<f64> {
    let c = partner.center();
    let at = |r: f64| {
        BBox::from_center_size(c.x + r * dir.0, c.y + r * dir.1, w, h)
            .map(|b| iou(partner, &b))
            .unwrap_or(0.0)
    };
    if at(0.0) < target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, partner.width() + partner.height() + w + h);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Visible part of `full` after removing every nearer occluder, keeping the
/// largest rectangular remainder each time.
fn carve_visible(full: &BBox<f64>, occluders: &[BBox<f64>]) -> Option<BBox<f64>> {
    let mut vis = *full;
    for occ in occluders {
        if vis.intersection(occ).is_none() {
            continue;
        }
        let candidates = [
            BBox::new(vis.x1(), vis.y1(), occ.x1().min(vis.x2()), vis.y2()),
            BBox::new(occ.x2().max(vis.x1()), vis.y1(), vis.x2(), vis.y2()),
            BBox::new(vis.x1(), vis.y1(), vis.x2(), occ.y1().min(vis.y2())),
            BBox::new(vis.x1(), occ.y2().max(vis.y1()), vis.x2(), vis.y2()),
        ];
        vis = candidates
            .into_iter()
            .flatten()
            .fold(None, |best: Option<BBox<f64>>, c| match best {
                Some(b) if b.area() >= c.area() => Some(b),
                _ => Some(c),
            })?;
    }
    Some(vis)
}

/// Generates a crowd scene. Each pedestrian after the first is placed next
/// to a random earlier one with IoU drawn from the configured band, and its
/// IoU with every other earlier pedestrian stays at or below the band's top.
/// Nearer pedestrians (larger bottom edge) occlude farther ones.
pub fn generate_scene<T: Scalar>(cfg: &SimConfig, seed: u64) -> Result<Scene<T>> {
    cfg.validate()?;
    let mut rng = rng_for(seed, 1);
    let extent = BBox::new(0.0, 0.0, cfg.width, cfg.height)?;
    let mut fulls: Vec<BBox<f64>> = Vec::with_capacity(cfg.pedestrians);

    let mut attempts = 0usize;
    while fulls.len() < cfg.pedestrians {
        attempts += 1;
        if attempts > cfg.max_placement_attempts {
            return Err(Error::Infeasible(format!(
                "placed {} of {} pedestrians after {} attempts",
                fulls.len(),
                cfg.pedestrians,
                cfg.max_placement_attempts
            )));
        }
        let candidate = if fulls.is_empty() {
            let h = cfg.height * rng.gen_range(cfg.height_min..=cfg.height_max);
            let w = h * cfg.aspect_ratio;
            if w >= cfg.width || h >= cfg.height {
                continue;
            }
            let cx = rng.gen_range(w / 2.0..cfg.width - w / 2.0);
            let cy = rng.gen_range(h / 2.0..cfg.height - h / 2.0);
            BBox::from_center_size(cx, cy, w, h)?
        } else {
            let partner = fulls[rng.gen_range(0..fulls.len())];
            let h = partner.height() * rng.gen_range(0.95..1.05);
            let w = h * cfg.aspect_ratio;
            let span = cfg.crowd_iou_max - cfg.crowd_iou_min;
            let target = cfg.crowd_iou_min + span * rng.gen_range(0.02..0.98);
            let angle: f64 = rng.gen_range(-0.35..0.35);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let dir = (sign * angle.cos(), angle.sin());
            let Some(r) = offset_for_iou(&partner, w, h, dir, target) else { continue };
            let c = partner.center();
            let b = BBox::from_center_size(c.x + r * dir.0, c.y + r * dir.1, w, h)?;
            let v = iou(&partner, &b);
            if v < cfg.crowd_iou_min || v > cfg.crowd_iou_max {
                continue;
            }
            if fulls.iter().any(|o| iou(o, &b) > cfg.crowd_iou_max) {
                continue;
            }
            b
        };
        if extent.contains(&candidate) {
            fulls.push(candidate);
        }
    }

    // nearer = larger bottom edge; ties resolved by index
    let mut pedestrians = Vec::with_capacity(fulls.len());
    for (i, f) in fulls.iter().enumerate() {
        let occluders: Vec<BBox<f64>> = fulls
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != i && (o.y2() > f.y2() || (o.y2() == f.y2() && j < i)))
            .map(|(_, o)| *o)
            .collect();
        let visible = carve_visible(f, &occluders)
            .ok_or_else(|| Error::Infeasible(format!("pedestrian {i} fully occluded")))?;
        pedestrians.push(Pedestrian { full: f.cast()?, visible: visible.cast()? });
    }

    let mut distractors: Vec<BBox<f64>> = Vec::with_capacity(cfg.distractors);
    let mut attempts = 0usize;
    while distractors.len() < cfg.distractors {
        attempts += 1;
        if attempts > cfg.max_placement_attempts {
            return Err(Error::Infeasible(format!(
                "placed {} of {} distractors",
                distractors.len(),
                cfg.distractors
            )));
        }
        let h = cfg.height * rng.gen_range(cfg.height_min..=cfg.height_max);
        let w = h * rng.gen_range(0.15..0.5);
        if w >= cfg.width || h >= cfg.height {
            continue;
        }
        let cx = rng.gen_range(w / 2.0..cfg.width - w / 2.0);
        let cy = rng.gen_range(h / 2.0..cfg.height - h / 2.0);
        let d = BBox::from_center_size(cx, cy, w, h)?;
        if fulls.iter().chain(&distractors).all(|o| o.intersection(&d).is_none()) {
            distractors.push(d);
        }
    }

    let scene = Scene {
        width: T::lit(cfg.width),
        height: T::lit(cfg.height),
        pedestrians,
        distractors: distractors.iter().map(|d| d.cast()).collect::<Result<_>>()?,
    };
    scene.validate()?;
    Ok(scene)
}

/// `proposals_per_gt` jittered copies of each pedestrian's full box: center
/// offsets `N(0, jitter * size)`, log-size offsets `N(0, jitter)`, clipped to
/// the extent.
pub fn spawn_proposals<T: Scalar>(scene: &Scene<T>, cfg: &SimConfig, seed: u64) -> Result<ProposalSet<T>> {
    let mut rng = rng_for(seed, 2);
    let (sw, sh) = (scene.width.as_f64(), scene.height.as_f64());
    let s = cfg.jitter;
    let mut boxes = Vec::new();
    let mut targets = Vec::new();
    for (t, p) in scene.pedestrians.iter().enumerate() {
        let g: BBox<f64> = p.full.cast()?;
        let c = g.center();
        for _ in 0..cfg.proposals_per_gt {
            let b = loop {
                let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let w = g.width() * (s * n[2]).exp();
                let h = g.height() * (s * n[3]).exp();
                let cx = c.x + s * g.width() * n[0];
                let cy = c.y + s * g.height() * n[1];
                let clipped = BBox::new(
                    (cx - w / 2.0).max(0.0),
                    (cy - h / 2.0).max(0.0),
                    (cx + w / 2.0).min(sw),
                    (cy + h / 2.0).min(sh),
                );
                if let Ok(b) = clipped {
                    break b;
                }
            };
            boxes.push(if s == 0.0 { p.full } else { b.cast()? });
            targets.push(t);
        }
    }
    Ok(ProposalSet { boxes, targets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pedestrian_fully_visible() {
        let cfg = SimConfig { pedestrians: 1, ..Default::default() };
        let s: Scene = generate_scene(&cfg, 3).unwrap();
        assert_eq!(s.pedestrians.len(), 1);
        assert_eq!(s.pedestrians[0].full, s.pedestrians[0].visible);
    }

    #[test]
    fn pair_iou_in_band_and_deterministic() {
        let cfg = SimConfig::default();
        for seed in 0..50 {
            let s: Scene = generate_scene(&cfg, seed).unwrap();
            let v = iou(&s.pedestrians[0].full, &s.pedestrians[1].full);
            assert!((0.3..=0.5).contains(&v), "seed {seed}: iou {v}");
            assert_eq!(s, generate_scene(&cfg, seed).unwrap());
            for p in &s.pedestrians {
                assert!(p.full.contains(&p.visible));
            }
            // the farther pedestrian is partially hidden
            assert!(s.pedestrians.iter().any(|p| p.visible != p.full));
        }
    }

    #[test]
    fn crowded_scenes_with_many_pedestrians() {
        let cfg = SimConfig { pedestrians: 5, width: 200.0, ..Default::default() };
        let s: Scene = generate_scene(&cfg, 11).unwrap();
        assert_eq!(s.pedestrians.len(), 5);
        s.validate().unwrap();
    }

    #[test]
    fn infeasible_band_errors() {
        // pedestrians wider than the extent can never be placed
        let cfg = SimConfig { height_min: 0.99, height_max: 1.0, aspect_ratio: 1.5, ..Default::default() };
        assert!(matches!(generate_scene::<f64>(&cfg, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn zero_jitter_copies_ground_truth() {
        let cfg = SimConfig { jitter: 0.0, proposals_per_gt: 3, ..Default::default() };
        let s: Scene = generate_scene(&cfg, 5).unwrap();
        let p = spawn_proposals(&s, &cfg, 5).unwrap();
        assert_eq!(p.boxes.len(), 6);
        for (b, &t) in p.boxes.iter().zip(&p.targets) {
            assert_eq!(*b, s.pedestrians[t].full);
        }
    }

    #[test]
    fn jitter_is_centered_and_deterministic() {
        let cfg = SimConfig { pedestrians: 1, jitter: 0.1, proposals_per_gt: 1000, width: 1000.0, height: 1000.0, ..Default::default() };
        let s: Scene = generate_scene(&cfg, 9).unwrap();
        let p = spawn_proposals(&s, &cfg, 9).unwrap();
        assert_eq!(p, spawn_proposals(&s, &cfg, 9).unwrap());
        let g = s.pedestrians[0].full;
        let gc = g.center();
        let n = p.boxes.len() as f64;
        let mx = p.boxes.iter().map(|b| b.center().x - gc.x).sum::<f64>() / n / g.width();
        let my = p.boxes.iter().map(|b| b.center().y - gc.y).sum::<f64>() / n / g.height();
        // standard error of the mean is 0.1 / sqrt(1000) ~ 0.003
        assert!(mx.abs() < 0.012 && my.abs() < 0.012, "{mx} {my}");
    }
}
