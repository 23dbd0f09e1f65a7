//! TOML run configuration. Every section and key is optional; missing values
//! take the library defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crowdloss::anchors::AnchorSpec;
use crowdloss::baselines::{CompositeConfig, LossVariant};
use crowdloss::couloss::{Aggregation, CouLossConfig};
use crowdloss::evalkit::SubsetFilter;
use crowdloss::gradcheck::GradCheckConfig;
use crowdloss::simulator::SimConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub sim: SimSection,
    pub loss: LossSection,
    pub gradcheck: GradCheckSection,
    pub simulate: VariantSection,
    pub nms: NmsSection,
    pub anchors: AnchorSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub width: f64,
    pub height: f64,
    pub pedestrians: usize,
    pub crowd_iou_min: f64,
    pub crowd_iou_max: f64,
    pub aspect_ratio: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub distractors: usize,
    pub jitter: f64,
    pub proposals_per_gt: usize,
    pub steps: usize,
    pub step_size: f64,
    pub grad_clip: Option<f64>,
    pub freeze_assignments: bool,
    pub max_placement_attempts: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            width: d.width,
            height: d.height,
            pedestrians: d.pedestrians,
            crowd_iou_min: d.crowd_iou_min,
            crowd_iou_max: d.crowd_iou_max,
            aspect_ratio: d.aspect_ratio,
            height_min: d.height_min,
            height_max: d.height_max,
            distractors: d.distractors,
            jitter: d.jitter,
            proposals_per_gt: d.proposals_per_gt,
            steps: d.steps,
            step_size: d.step_size,
            grad_clip: d.grad_clip,
            freeze_assignments: d.freeze_assignments,
            max_placement_attempts: d.max_placement_attempts,
        }
    }
}

impl SimSection {
    pub fn to_config(&self) -> SimConfig {
        SimConfig {
            width: self.width,
            height: self.height,
            pedestrians: self.pedestrians,
            crowd_iou_min: self.crowd_iou_min,
            crowd_iou_max: self.crowd_iou_max,
            aspect_ratio: self.aspect_ratio,
            height_min: self.height_min,
            height_max: self.height_max,
            distractors: self.distractors,
            jitter: self.jitter,
            proposals_per_gt: self.proposals_per_gt,
            steps: self.steps,
            step_size: self.step_size,
            grad_clip: self.grad_clip,
            freeze_assignments: self.freeze_assignments,
            max_placement_attempts: self.max_placement_attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationName {
    TripletLiteral,
    #[default]
    Deduplicated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub gamma: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub smoothl1_beta: f64,
    pub positive_iou_threshold: f64,
    pub iou_floor: f64,
    pub aggregation: AggregationName,
    pub kink_tolerance: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let c = CompositeConfig::<f64>::default();
        Self {
            alpha: c.alpha,
            gamma: c.gamma,
            focal_gamma: c.focal_gamma,
            focal_alpha: c.focal_alpha,
            smoothl1_beta: c.smoothl1_beta,
            positive_iou_threshold: c.couloss.positive_iou_threshold,
            iou_floor: c.couloss.iou_floor,
            aggregation: AggregationName::Deduplicated,
            kink_tolerance: c.couloss.kink_tolerance,
        }
    }
}

impl LossSection {
    pub fn couloss(&self) -> CouLossConfig<f64> {
        CouLossConfig {
            positive_iou_threshold: self.positive_iou_threshold,
            iou_floor: self.iou_floor,
            aggregation: match self.aggregation {
                AggregationName::TripletLiteral => Aggregation::TripletLiteral,
                AggregationName::Deduplicated => Aggregation::Deduplicated,
            },
            kink_tolerance: self.kink_tolerance,
        }
    }

    pub fn composite(&self) -> CompositeConfig<f64> {
        CompositeConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            focal_gamma: self.focal_gamma,
            focal_alpha: self.focal_alpha,
            smoothl1_beta: self.smoothl1_beta,
            couloss: self.couloss(),
            ..CompositeConfig::default()
        }
    }
}

/// A hand-written scene for the gradient check.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub gts: Vec<[f64; 4]>,
    pub proposals: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub scenes: usize,
    pub max_seeds: u64,
    pub rel_step: f64,
    pub kink_rel_tol: f64,
    pub tolerance: f64,
    pub proposals_per_gt: usize,
    pub fixtures: Vec<Fixture>,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        let d = GradCheckConfig::default();
        Self {
            scenes: d.scenes,
            max_seeds: d.max_seeds,
            rel_step: d.rel_step,
            kink_rel_tol: d.kink_rel_tol,
            tolerance: d.tolerance,
            proposals_per_gt: d.sim.proposals_per_gt,
            fixtures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSection {
    pub variants: Vec<String>,
}

impl Default for VariantSection {
    fn default() -> Self {
        Self { variants: LossVariant::ALL.iter().map(|v| v.name().to_string()).collect() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsSection {
    pub variants: Vec<String>,
    pub thresholds: Vec<f64>,
}

impl Default for NmsSection {
    fn default() -> Self {
        Self {
            variants: vec!["baseline".into(), "couloss".into()],
            thresholds: crowdloss::simulator::default_nms_thresholds(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    #[default]
    Bump,
    Indicator,
    Flat,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSection {
    pub grid_width: usize,
    pub grid_height: usize,
    pub stride: f64,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub map: MapKind,
    /// Probability map in the text grid format; replaces the synthesized map.
    pub map_file: Option<PathBuf>,
    /// Scene in the text scene format; replaces the generated scenes.
    pub scene_file: Option<PathBuf>,
}

impl Default for AnchorSection {
    fn default() -> Self {
        let spec = AnchorSpec::<f64>::default();
        Self {
            grid_width: 25,
            grid_height: 25,
            stride: 4.0,
            scales: spec.scales,
            ratios: spec.ratios,
            map: MapKind::Bump,
            map_file: None,
            scene_file: None,
        }
    }
}

impl AnchorSection {
    pub fn spec(&self) -> AnchorSpec<f64> {
        AnchorSpec { scales: self.scales.clone(), ratios: self.ratios.clone() }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsetName {
    #[default]
    All,
    Reasonable,
    Heavy,
    Partial,
    Bare,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Detection CSV; when absent the simulator's final proposals are used.
    pub detections: Option<PathBuf>,
    /// Directory of `scene_<id>.txt` files; when absent scenes are
    /// regenerated from the `[sim]` section with seed = scene id.
    pub scene_dir: Option<PathBuf>,
    pub variants: Vec<String>,
    pub subset: SubsetName,
    pub min_height: f64,
    pub nms_threshold: Option<f64>,
    pub miss_rate: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            detections: None,
            scene_dir: None,
            variants: vec!["baseline".into(), "couloss".into()],
            subset: SubsetName::All,
            min_height: 0.0,
            nms_threshold: Some(0.5),
            miss_rate: 0.1,
        }
    }
}

impl EvalSection {
    pub fn filter(&self) -> SubsetFilter {
        let h = self.min_height;
        match self.subset {
            SubsetName::All => SubsetFilter { min_height: h, ..SubsetFilter::all() },
            SubsetName::Reasonable => SubsetFilter::reasonable(h),
            SubsetName::Heavy => SubsetFilter::heavy(h),
            SubsetName::Partial => SubsetFilter::partial(h),
            SubsetName::Bare => SubsetFilter::bare(h),
        }
    }
}

pub fn parse_variants(names: &[String]) -> Result<Vec<LossVariant>> {
    if names.is_empty() {
        bail!("variant list is empty");
    }
    names
        .iter()
        .map(|n| {
            LossVariant::parse(n).with_context(|| {
                format!("unknown variant {n:?} (expected baseline, couloss, only_att or only_rep)")
            })
        })
        .collect()
}

/// Parses a seed list such as `0,1,2`; `a..b` stands for `a` up to but
/// excluding `b`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().with_context(|| format!("bad seed range {part:?}"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("bad seed range {part:?}"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        bail!("seed list is empty");
    }
    Ok(out)
}

impl RunConfig {
    /// Reads and validates the file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.anchors.map_file, &mut cfg.anchors.scene_file, &mut cfg.eval.detections, &mut cfg.eval.scene_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = cfg.out.as_mut() {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.to_config().validate()?;
        self.loss.composite().validate()?;
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            bail!("seed list is empty");
        }
        let g = &self.gradcheck;
        if !(g.rel_step > 0.0 && g.kink_rel_tol >= 0.0 && g.tolerance > 0.0) || g.proposals_per_gt == 0 {
            bail!("gradcheck: rel_step and tolerance must be positive, kink_rel_tol non-negative, proposals_per_gt positive");
        }
        parse_variants(&self.simulate.variants)?;
        parse_variants(&self.nms.variants)?;
        parse_variants(&self.eval.variants)?;
        if self.nms.thresholds.is_empty() || self.nms.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!("nms thresholds must be a non-empty list in [0, 1]");
        }
        let a = &self.anchors;
        if a.grid_width == 0 || a.grid_height == 0 || !(a.stride > 0.0) {
            bail!("anchors: grid must be non-empty with positive stride");
        }
        if a.scales.is_empty() || a.ratios.is_empty() || a.scales.iter().chain(&a.ratios).any(|v| !(*v > 0.0)) {
            bail!("anchors: scales and ratios must be non-empty and positive");
        }
        if a.map_file.is_some() && a.scene_file.is_none() {
            bail!("anchors: map_file needs a scene_file to score negatives against");
        }
        for p in [&a.map_file, &a.scene_file, &self.eval.detections].into_iter().flatten() {
            if !p.is_file() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        if let Some(d) = &self.eval.scene_dir {
            if !d.is_dir() {
                bail!("referenced directory {} does not exist", d.display());
            }
        }
        if let Some(t) = self.eval.nms_threshold {
            if !(0.0..=1.0).contains(&t) {
                bail!("eval nms_threshold must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.eval.miss_rate) {
            bail!("eval miss_rate must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        let g = &self.gradcheck;
        GradCheckConfig {
            scenes: g.scenes,
            first_seed: 0,
            max_seeds: g.max_seeds,
            rel_step: g.rel_step,
            kink_rel_tol: g.kink_rel_tol,
            tolerance: g.tolerance,
            sim: SimConfig { proposals_per_gt: g.proposals_per_gt, ..self.sim.to_config() },
            couloss: self.loss.couloss(),
        }
    }
}
