//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{reference_couloss, to_boxes, Raw};
use crowdloss::anchors::{
    dynamic_threshold, negative_informativeness, select_anchors, synthetic_bump_map, AnchorSpec,
};
use crowdloss::baselines::{composite_regression_loss, CompositeConfig, LossVariant};
use crowdloss::couloss::{attractive_from_iou, couloss, effective_cos, repulsive_from_iou, Aggregation, CouLossConfig};
use crowdloss::evalkit::{greedy_nms, log_average_miss_rate, CurvePoint, Detection, EvalCurve};
use crowdloss::geometry::{border_distance, iou};
use crowdloss::gradcheck::{run_gradcheck, GradCheckConfig};
use crowdloss::simulator::{
    default_nms_thresholds, generate_scene, nms_sensitivity_experiment, run_suite, sign_test, SimConfig,
};
use crowdloss::BBox;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed < budget {
        Ok(())
    } else {
        Err(format!("took {elapsed:?}, budget {budget:?}"))
    }
}

fn gradient_oracle() -> Outcome {
    let cfg = GradCheckConfig::default();
    let t = Instant::now();
    let r = run_gradcheck(&cfg).map_err(|e| e.to_string())?;
    within(t.elapsed(), Duration::from_secs(60))?;
    ensure(
        r.scenes_checked == 1000 && r.passed(1e-4),
        format!(
            "{} scenes, {} proposals ({} near kinks skipped), max rel err att {:.2e} rep {:.2e}",
            r.scenes_checked, r.proposals_checked, r.proposals_skipped, r.attractive.max, r.repulsive.max
        ),
    )
}

fn fixture_suite() -> Vec<(Vec<Raw>, Vec<Raw>)> {
    let mut out = vec![
        (vec![[0.0, 0.0, 4.0, 8.0], [3.0, 0.0, 7.0, 8.0]], vec![[0.5, 1.0, 4.5, 9.0], [2.0, 0.0, 6.0, 8.0]]),
        (vec![[0.0, 0.0, 4.0, 8.0], [3.0, 1.0, 7.0, 9.0]], vec![[0.5, 1.0, 4.5, 9.0], [2.5, 1.5, 6.5, 9.5]]),
        (
            vec![[0.0, 0.0, 4.0, 8.0], [3.0, 1.0, 7.0, 9.0], [6.0, 0.0, 10.0, 8.0]],
            vec![[0.5, 1.0, 4.5, 9.0], [2.5, 1.5, 6.5, 9.5], [6.2, 0.3, 10.1, 8.4], [0.2, 0.0, 4.1, 8.2]],
        ),
    ];
    let mut rng = common::rng(2024);
    out.extend((0..2000).map(|_| common::random_crowd(&mut rng, 4, 8)));
    out
}

fn brute_force_equivalence() -> Outcome {
    let suite = fixture_suite();
    let mut worst = 0.0f64;
    let mut with_triplets = 0;
    for (gts, props) in &suite {
        let (g, p) = (to_boxes(gts), to_boxes(props));
        for (aggregation, literal) in [(Aggregation::TripletLiteral, true), (Aggregation::Deduplicated, false)] {
            let got = couloss(&g, &p, &CouLossConfig { aggregation, ..CouLossConfig::default() }).map_err(|e| e.to_string())?;
            let want = reference_couloss(gts, props, literal);
            if got.triplets.len() != want.triplets {
                return Err(format!("triplet count {} vs {}", got.triplets.len(), want.triplets));
            }
            worst = worst
                .max((got.total - want.total).abs())
                .max((got.attractive_work - want.attractive).abs())
                .max((got.repulsive_work - want.repulsive).abs());
        }
        with_triplets += (reference_couloss(gts, props, true).triplets > 0) as usize;
    }
    ensure(
        worst < 1e-9,
        format!("{} scenes ({with_triplets} with triplets), both modes, max abs diff {worst:.2e}", suite.len()),
    )
}

fn analytic_fixtures() -> Outcome {
    let floor = 1e-6;
    let g = BBox::new(0.0, 0.0, 4.0, 8.0).unwrap();
    let at = |cx: f64, cy: f64| BBox::from_center_size(cx, cy, 2.0, 2.0).unwrap();
    let gi = BBox::from_center_size(0.0, 0.0, 4.0, 8.0).unwrap();
    let gj = BBox::from_center_size(3.0, 0.0, 4.0, 8.0).unwrap();
    let checks = [
        ("F_a(IoU=1)", attractive_from_iou(iou(&g, &g), floor), 0.0),
        ("F_r(IoU=0)", repulsive_from_iou(0.0, floor), 0.0),
        ("F_r(IoU=1e-300)", repulsive_from_iou(1e-300, floor), 0.0),
        ("s(center)", border_distance(&g, &at(2.0, 4.0)), 0.0),
        ("s(corner)", border_distance(&g, &at(0.0, 0.0)), 1.0),
        ("s(opposite corner)", border_distance(&g, &at(4.0, 8.0)), 1.0),
        ("cos toward G_j", effective_cos(&gi, &gj, &at(1.0, 0.0)).1, 1.0),
        ("cos away from G_j", effective_cos(&gi, &gj, &at(-1.0, 0.0)).1, -1.0),
        ("cos perpendicular", effective_cos(&gi, &gj, &at(0.0, 2.0)).1, 0.0),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let bad: Vec<&str> = checks.iter().filter(|(_, g, w)| (g - w).abs() >= 1e-12).map(|c| c.0).collect();
    ensure(bad.is_empty(), if bad.is_empty() { format!("{} fixtures, max abs err {worst:.2e}", checks.len()) } else { format!("off: {bad:?}") })
}

fn crowd_drift_trend() -> Outcome {
    let sim = SimConfig::default();
    let seeds: Vec<u64> = (0..20).collect();
    let t = Instant::now();
    let variants = [LossVariant::Baseline, LossVariant::CouLoss];
    let runs = run_suite::<f64>(&sim, &CompositeConfig::default(), &variants, &seeds).map_err(|e| e.to_string())?;
    within(t.elapsed(), Duration::from_secs(300))?;
    let stat = |v: LossVariant, f: fn(&crowdloss::simulator::SimResult) -> f64| -> Vec<f64> {
        runs.iter().map(|r| f(r.result(v).unwrap())).collect()
    };
    let (db, dc) = (stat(LossVariant::Baseline, |r| r.drift_rate), stat(LossVariant::CouLoss, |r| r.drift_rate));
    let (ob, oc) = (
        stat(LossVariant::Baseline, |r| r.overlap_occupancy),
        stat(LossVariant::CouLoss, |r| r.overlap_occupancy),
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let drift = sign_test(&dc, &db);
    let occ = sign_test(&oc, &ob);
    let ok = mean(&dc) < mean(&db)
        && mean(&oc) < mean(&ob)
        && drift.significant(0.05)
        && occ.significant(0.05);
    ensure(
        ok,
        format!(
            "drift {:.4} vs {:.4} (wins {} losses {} ties {}, p={:.3}); occupancy {:.4} vs {:.4} (wins {} losses {} ties {}, p={:.2e})",
            mean(&dc),
            mean(&db),
            drift.wins,
            drift.losses,
            drift.ties,
            drift.p_value,
            mean(&oc),
            mean(&ob),
            occ.wins,
            occ.losses,
            occ.ties,
            occ.p_value
        ),
    )
}

fn nms_sensitivity() -> Outcome {
    let sim = SimConfig::default();
    let seeds: Vec<u64> = (0..20).collect();
    let variants = [LossVariant::Baseline, LossVariant::CouLoss];
    let runs = run_suite::<f64>(&sim, &CompositeConfig::default(), &variants, &seeds).map_err(|e| e.to_string())?;
    let table = nms_sensitivity_experiment(&runs, &variants, &default_nms_thresholds());
    let b = table.summary(LossVariant::Baseline).unwrap();
    let c = table.summary(LossVariant::CouLoss).unwrap();
    ensure(
        c.spread <= b.spread,
        format!(
            "miss spread couloss {} ({}..{}) vs baseline {} ({}..{})",
            c.spread, c.min_misses, c.max_misses, b.spread, b.min_misses, b.max_misses
        ),
    )
}

fn als_selection() -> Outcome {
    let sim = SimConfig::default();
    let spec = AnchorSpec::default();
    let (mut worst_rms, mut worst_keep) = (0.0f64, 0.0f64);
    let (mut sel, mut uni) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let scene = generate_scene::<f64>(&sim, seed).map_err(|e| e.to_string())?;
        let map = synthetic_bump_map(&scene, 25, 25, 4.0, seed).map_err(|e| e.to_string())?;
        let mut sq = 0.0;
        for v in map.values() {
            sq += v * v;
        }
        let brute = (sq / map.values().len() as f64).sqrt();
        worst_rms = worst_rms.max((dynamic_threshold(&map) - brute).abs());
        let set = select_anchors(&map, &spec);
        worst_keep = worst_keep.max(set.cells.len() as f64 / set.total_cells as f64);
        let stats = negative_informativeness(&set, &map, &spec, &scene);
        sel.push(stats.selected_fraction);
        uni.push(stats.uniform_fraction);
    }
    // a win is uniform < selected, so pass the uniform fractions as "treated"
    let t = sign_test(&uni, &sel);
    let ok = worst_rms < 1e-12 && worst_keep <= 0.2 && t.significant(0.05);
    ensure(
        ok,
        format!(
            "rms err {worst_rms:.1e}, max retained {:.1}%, selected > uniform on {} of 20 (p={:.1e})",
            100.0 * worst_keep,
            t.wins,
            t.p_value
        ),
    )
}

fn evaluation_protocol() -> Outcome {
    let pts = [(0.005, 0.9), (0.02, 0.6), (0.05, 0.5), (0.09, 0.4), (0.3, 0.3), (0.8, 0.2), (2.0, 0.1)];
    let curve = EvalCurve {
        points: pts
            .iter()
            .enumerate()
            .map(|(k, &(fppi, miss_rate))| CurvePoint { threshold: 1.0 - k as f64 / 10.0, fppi, miss_rate })
            .collect(),
    };
    // references 10^-2 .. 10^0: .9 .9 .6 .5 .4 .4 .3 .3 .2
    let hand = (0.9f64 * 0.9 * 0.6 * 0.5 * 0.4 * 0.4 * 0.3 * 0.3 * 0.2).powf(1.0 / 9.0);
    let got = log_average_miss_rate(&curve).map_err(|e| e.to_string())?;
    if (got - hand).abs() >= 1e-9 {
        return Err(format!("LAMR {got} vs hand {hand}"));
    }

    let mut rng = common::rng(77);
    for _ in 0..10_000 {
        let n = rng.gen_range(0..30);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
                let (w, h) = (rng.gen_range(2.0..30.0), rng.gen_range(2.0..60.0));
                Detection::new(BBox::new(x, y, x + w, y + h).unwrap(), rng.gen_range(0.0..1.0), 0).unwrap()
            })
            .collect();
        let thr = rng.gen_range(0.05..0.95);
        let kept = greedy_nms(&dets, thr);
        if greedy_nms(&kept, thr) != kept {
            return Err("NMS not idempotent".into());
        }
        for (i, a) in kept.iter().enumerate() {
            if kept[i + 1..].iter().any(|b| iou(&a.bbox, &b.bbox) > thr) {
                return Err("NMS output not an antichain".into());
            }
        }
    }
    Ok(format!("LAMR {got:.12} vs hand {hand:.12}; NMS idempotent and antichain on 10000 sets"))
}

fn ablation_linearity() -> Outcome {
    let suite = fixture_suite();
    let cfg = CompositeConfig::default();
    for (gts, props) in &suite {
        let (g, p) = (to_boxes(gts), to_boxes(props));
        let run = |v| composite_regression_loss(&g, &p, &cfg.with_variant(v)).unwrap();
        let (full, att, rep) = (run(LossVariant::CouLoss), run(LossVariant::OnlyAtt), run(LossVariant::OnlyRep));
        let exact = att.couloss_attractive == full.couloss_attractive
            && rep.couloss_repulsive == full.couloss_repulsive
            && att.couloss_repulsive == 0.0
            && rep.couloss_attractive == 0.0
            && att.couloss_attractive + rep.couloss_repulsive == full.couloss_attractive + full.couloss_repulsive
            && att.smooth_l1 == full.smooth_l1
            && rep.smooth_l1 == full.smooth_l1;
        if !exact {
            return Err(format!("decomposition broken on {gts:?} / {props:?}"));
        }
    }
    Ok(format!("{} fixtures, components equal bitwise", suite.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient oracle", gradient_oracle),
        ("brute-force loss equivalence", brute_force_equivalence),
        ("analytic fixtures", analytic_fixtures),
        ("crowd-drift trend", crowd_drift_trend),
        ("NMS-sensitivity trend", nms_sensitivity),
        ("ALS selection", als_selection),
        ("evaluation protocol", evaluation_protocol),
        ("ablation linearity", ablation_linearity),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {} {name} [{secs:.1}s]: {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name} [{secs:.1}s]: {d}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
