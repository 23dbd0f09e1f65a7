use super::descent::{run_descent, SimResult};
use super::generate::{generate_scene, spawn_proposals, ProposalSet, SimConfig};
use super::scene::Scene;
use crate::baselines::{CompositeConfig, LossVariant};
use crate::error::Result;
use crate::evalkit::{greedy_nms, match_detections, Detection};
use crate::geometry::iou;
use crate::scalar::Scalar;
use statrs::distribution::{Binomial, DiscreteCDF};

/// One seed: its scene, the shared initial proposals, and a descent result
/// per loss variant (in the order requested).
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun<T = f64> {
    pub seed: u64,
    pub scene: Scene<T>,
    pub proposals: ProposalSet<T>,
    pub results: Vec<(LossVariant, SimResult<T>)>,
}

impl<T: Scalar> SeedRun<T> {
    pub fn result(&self, v: LossVariant) -> Option<&SimResult<T>> {
        self.results.iter().find(|(rv, _)| *rv == v).map(|(_, r)| r)
    }
}

/// Generates the scene and proposals for `seed` and runs every variant on
/// identical starting boxes.
pub fn run_seed<T: Scalar>(
    sim: &SimConfig,
    loss: &CompositeConfig<T>,
    variants: &[LossVariant],
    seed: u64,
) -> Result<SeedRun<T>> {
    let scene = generate_scene(sim, seed)?;
    let proposals = spawn_proposals(&scene, sim, seed)?;
    let results = variants
        .iter()
        .map(|&v| Ok((v, run_descent(&scene, &proposals, &loss.with_variant(v), sim)?)))
        .collect::<Result<_>>()?;
    Ok(SeedRun { seed, scene, proposals, results })
}

pub fn run_suite<T: Scalar>(
    sim: &SimConfig,
    loss: &CompositeConfig<T>,
    variants: &[LossVariant],
    seeds: &[u64],
) -> Result<Vec<SeedRun<T>>> {
    seeds.iter().map(|&s| run_seed(sim, loss, variants, s)).collect()
}

/// Final proposals as detections scored by their best IoU with any
/// pedestrian, a stand-in for localization confidence.
pub fn detections_from_result<T: Scalar>(result: &SimResult<T>, scene: &Scene<T>, scene_id: usize) -> Vec<Detection<T>> {
    let gts = scene.gts();
    result
        .proposals
        .iter()
        .map(|p| {
            let score = gts.iter().map(|g| iou(g, &p.final_box)).fold(T::zero(), T::max);
            Detection { bbox: p.final_box, score, scene_id }
        })
        .collect()
}

/// NMS thresholds `0.30, 0.35, ..., 0.80`.
pub fn default_nms_thresholds() -> Vec<f64> {
    (0..=10).map(|k| (30 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsRow {
    pub variant: LossVariant,
    pub threshold: f64,
    pub kept: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub miss_rate: f64,
}

/// Spread of miss counts across the threshold grid for one variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsSummary {
    pub variant: LossVariant,
    pub min_misses: usize,
    pub max_misses: usize,
    pub spread: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NmsTable {
    pub rows: Vec<NmsRow>,
    pub summaries: Vec<NmsSummary>,
}

impl NmsTable {
    pub fn summary(&self, v: LossVariant) -> Option<&NmsSummary> {
        self.summaries.iter().find(|s| s.variant == v)
    }
}

/// For each variant and NMS threshold, applies NMS to every seed's final
/// proposals, matches at IoU 0.5, and totals the outcome over the suite.
pub fn nms_sensitivity_experiment<T: Scalar>(
    runs: &[SeedRun<T>],
    variants: &[LossVariant],
    thresholds: &[f64],
) -> NmsTable {
    let mut table = NmsTable::default();
    let total_gts: usize = runs.iter().map(|r| r.scene.pedestrians.len()).sum();
    for &v in variants {
        let per_scene: Vec<(Vec<Detection<T>>, Vec<_>)> = runs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.result(v).map(|res| (detections_from_result(res, &r.scene, i), r.scene.gts())))
            .collect();
        let mut misses_by_thr = Vec::with_capacity(thresholds.len());
        for &thr in thresholds {
            let mut row = NmsRow {
                variant: v,
                threshold: thr,
                kept: 0,
                true_positives: 0,
                false_positives: 0,
                misses: 0,
                miss_rate: 0.0,
            };
            for (dets, gts) in &per_scene {
                let kept = greedy_nms(dets, T::lit(thr));
                let m = match_detections(&kept, gts, T::half());
                row.kept += kept.len();
                row.true_positives += m.true_positives;
                row.false_positives += m.false_positives;
                row.misses += m.misses;
            }
            row.miss_rate = if total_gts > 0 { row.misses as f64 / total_gts as f64 } else { 0.0 };
            misses_by_thr.push(row.misses);
            table.rows.push(row);
        }
        if misses_by_thr.is_empty() {
            continue;
        }
        let min = *misses_by_thr.iter().min().unwrap();
        let max = *misses_by_thr.iter().max().unwrap();
        let n = misses_by_thr.len() as f64;
        let mean = misses_by_thr.iter().sum::<usize>() as f64 / n;
        let variance = misses_by_thr.iter().map(|&m| (m as f64 - mean).powi(2)).sum::<f64>() / n;
        table.summaries.push(NmsSummary {
            variant: v,
            min_misses: min,
            max_misses: max,
            spread: max - min,
            variance,
        });
    }
    table
}

/// Paired sign test of "`treated` is lower than `control`".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided exact binomial p-value over the non-tied pairs; 1 when every
    /// pair ties.
    pub p_value: f64,
}

impl SignTest {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

pub fn sign_test(treated: &[f64], control: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (t, c) in treated.iter().zip(control) {
        if t < c {
            wins += 1;
        } else if t > c {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p = match wins {
        0 => 1.0,
        w => Binomial::new(0.5, n as u64).expect("valid binomial").sf(w as u64 - 1),
    };
    SignTest { wins, losses, ties, p_value: p }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        let hi = vec![1.0; 20];
        let lo = vec![0.0; 20];
        let all = sign_test(&lo, &hi);
        assert_eq!((all.wins, all.losses), (20, 0));
        assert!((all.p_value / 0.5f64.powi(20) - 1.0).abs() < 1e-9);
        // 15 of 20: sum_{k>=15} C(20,k) / 2^20 = 21700 / 1048576
        let mixed: Vec<f64> = (0..20).map(|k| if k < 15 { 0.0 } else { 2.0 }).collect();
        let t = sign_test(&mixed, &hi);
        assert!((t.p_value / (21700.0 / 1048576.0) - 1.0).abs() < 1e-9, "{}", t.p_value);
        assert!(t.significant(0.05));
        let m14: Vec<f64> = (0..20).map(|k| if k < 14 { 0.0 } else { 2.0 }).collect();
        assert!(!sign_test(&m14, &hi).significant(0.05));
        let tied = sign_test(&hi, &hi);
        assert_eq!((tied.ties, tied.p_value), (20, 1.0));
    }
}
