use std::fmt;

use anyhow::{bail, Context as _, Result};
use crowdloss::anchors::{
    build_target_map, indicator_map, location_branch_loss, negative_informativeness, select_anchors,
    synthetic_bump_map, ProbabilityMap,
};
use crowdloss::baselines::LossVariant;
use crowdloss::evalkit::{
    fppi_at_miss_rate, fppi_curve_with_ignore, greedy_nms, log_average_miss_rate, read_detections_csv,
    write_curve_csv, write_detections_csv, Detection, EvalCurve,
};
use crowdloss::gradcheck::{check_scene, check_seed, Accumulator, GradCheckReport};
use crowdloss::simulator::{
    detections_from_result, generate_scene, nms_sensitivity_experiment, run_seed, sign_test, Scene, SeedRun,
};
use crowdloss::BBox;
use rayon::prelude::*;

use crate::config::{parse_variants, MapKind, RunConfig};
use crate::output::{real, OutDir};
use crate::svg::{line_plot, scene_plot, Series};

/// A check ran to completion but missed its tolerance.
#[derive(Debug)]
pub struct ToleranceFailure(pub String);

impl fmt::Display for ToleranceFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ToleranceFailure {}

pub struct Ctx {
    pub cfg: RunConfig,
    pub seeds: Vec<u64>,
    /// Whether the seed list came from the command line or the config file.
    pub seeds_explicit: bool,
    pub out: OutDir,
    pub svg: bool,
}

fn run_seeds(ctx: &Ctx, variants: &[LossVariant]) -> Vec<crowdloss::Result<SeedRun>> {
    let sim = ctx.cfg.sim.to_config();
    let loss = ctx.cfg.loss.composite();
    ctx.seeds.par_iter().map(|&s| run_seed(&sim, &loss, variants, s)).collect()
}

/// Completed runs up to the first failure, and that failure.
fn split_runs(runs: Vec<crowdloss::Result<SeedRun>>) -> (Vec<SeedRun>, Option<crowdloss::Error>) {
    let mut ok = Vec::with_capacity(runs.len());
    for r in runs {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => return (ok, Some(e)),
        }
    }
    (ok, None)
}

fn all_runs(ctx: &Ctx, variants: &[LossVariant]) -> Result<Vec<SeedRun>> {
    let (runs, err) = split_runs(run_seeds(ctx, variants));
    match err {
        Some(e) => Err(e).with_context(|| format!("seed {}", ctx.seeds[runs.len()])),
        None => Ok(runs),
    }
}

pub fn gradcheck(ctx: &Ctx) -> Result<()> {
    let gc = ctx.cfg.gradcheck_config();
    gc.sim.validate()?;
    let mut acc = Accumulator::default();
    if ctx.seeds_explicit {
        let checks: Vec<_> = ctx.seeds.par_iter().map(|&s| check_seed(&gc, s)).collect();
        for (&s, c) in ctx.seeds.iter().zip(checks) {
            acc.add(s, &c?);
        }
    } else {
        const BATCH: u64 = 256;
        let mut next = gc.first_seed;
        while acc.scenes_checked() < gc.scenes && next - gc.first_seed < gc.max_seeds {
            let end = (next + BATCH).min(gc.first_seed + gc.max_seeds);
            let batch: Vec<u64> = (next..end).collect();
            let checks: Vec<_> = batch.par_iter().map(|&s| check_seed(&gc, s)).collect();
            for (&s, c) in batch.iter().zip(checks) {
                if acc.scenes_checked() < gc.scenes {
                    acc.add(s, &c?);
                }
            }
            next = end;
        }
    }
    let scenes = acc.finish();

    let mut fixtures = Accumulator::default();
    for (k, f) in ctx.cfg.gradcheck.fixtures.iter().enumerate() {
        let boxes = |v: &[[f64; 4]]| v.iter().map(|a| BBox::from_array(*a)).collect::<crowdloss::Result<Vec<_>>>();
        let (g, p) = (boxes(&f.gts)?, boxes(&f.proposals)?);
        let c = check_scene(&g, &p, &gc.couloss, gc.rel_step, gc.kink_rel_tol)
            .with_context(|| format!("fixture {k}"))?;
        fixtures.add(k as u64, &c);
    }
    let fixtures = fixtures.finish();

    let mut kink_rows = Vec::new();
    for (source, rep) in [("seed", &scenes), ("fixture", &fixtures)] {
        for (id, k) in &rep.kinks {
            eprintln!("warning: {source} {id}: {k}");
            kink_rows.push(vec![
                format!("{source} {id}"),
                format!("{:?}", k.kind),
                k.proposal_index.to_string(),
                k.gt_index.to_string(),
                real(k.margin),
            ]);
        }
    }
    ctx.out.write_csv("kinks.csv", &["source", "kind", "proposal", "gt", "margin"], &kink_rows)?;

    let tol = gc.tolerance;
    let mut rows = Vec::new();
    let mut push = |source: &str, rep: &GradCheckReport| {
        for (term, e) in [("attractive", rep.attractive), ("repulsive", rep.repulsive)] {
            rows.push(vec![
                source.to_string(),
                term.to_string(),
                rep.scenes_checked.to_string(),
                rep.proposals_checked.to_string(),
                rep.proposals_skipped.to_string(),
                real(e.max),
                real(e.mean),
                (e.max < tol).to_string(),
            ]);
        }
    };
    push("scenes", &scenes);
    if !ctx.cfg.gradcheck.fixtures.is_empty() {
        push("fixtures", &fixtures);
    }
    ctx.out.write_csv(
        "gradcheck.csv",
        &["source", "term", "scenes", "proposals_checked", "proposals_skipped", "max_rel_error", "mean_rel_error", "passed"],
        &rows,
    )?;

    println!(
        "gradcheck: {} scenes, {} proposals checked, {} skipped near kinks; max rel error attractive {:.3e} repulsive {:.3e} (tolerance {tol:.1e})",
        scenes.scenes_checked,
        scenes.proposals_checked,
        scenes.proposals_skipped,
        scenes.attractive.max,
        scenes.repulsive.max
    );
    let worst = scenes.max_error().max(fixtures.max_error());
    if worst >= tol {
        return Err(ToleranceFailure(format!("max relative gradient error {worst:.3e} >= {tol:.1e}")).into());
    }
    if !ctx.seeds_explicit && scenes.scenes_checked < gc.scenes {
        return Err(ToleranceFailure(format!(
            "only {} of {} scenes had triplets within {} seeds",
            scenes.scenes_checked, gc.scenes, gc.max_seeds
        ))
        .into());
    }
    Ok(())
}

const SIM_HEADER: [&str; 9] = [
    "seed",
    "variant",
    "steps_taken",
    "drift_rate",
    "mean_final_iou",
    "overlap_occupancy",
    "initial_loss",
    "final_loss",
    "kink_warnings",
];

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn simulate(ctx: &Ctx) -> Result<()> {
    let variants = parse_variants(&ctx.cfg.simulate.variants)?;
    let (runs, err) = split_runs(run_seeds(ctx, &variants));

    let mut rows = Vec::new();
    for r in &runs {
        for (v, res) in &r.results {
            rows.push(vec![
                r.seed.to_string(),
                v.name().to_string(),
                res.steps_taken.to_string(),
                real(res.drift_rate),
                real(res.mean_final_iou),
                real(res.overlap_occupancy),
                real(res.initial_loss),
                real(res.final_loss),
                res.kink_warnings.to_string(),
            ]);
        }
        ctx.out.write_text(&format!("scenes/scene_{}.txt", r.seed), &r.scene.to_text())?;
    }
    ctx.out.write_csv("simulate.csv", &SIM_HEADER, &rows)?;
    for &v in &variants {
        let dets: Vec<Detection> = runs
            .iter()
            .flat_map(|r| detections_from_result(r.result(v).unwrap(), &r.scene, r.seed as usize))
            .collect();
        write_detections_csv(&dets, ctx.out.create_file(&format!("detections_{}.csv", v.name()))?)?;
    }
    if let Some(e) = err {
        return Err(e).with_context(|| format!("seed {} (results of earlier seeds written)", ctx.seeds[runs.len()]));
    }

    let col = |v: LossVariant, f: fn(&crowdloss::simulator::SimResult) -> f64| -> Vec<f64> {
        runs.iter().map(|r| f(r.result(v).unwrap())).collect()
    };
    let mut summary = Vec::new();
    for &v in &variants {
        let drift = col(v, |r| r.drift_rate);
        let occ = col(v, |r| r.overlap_occupancy);
        let mut row = vec![
            v.name().to_string(),
            real(mean(drift.iter().copied())),
            real(mean(col(v, |r| r.mean_final_iou).into_iter())),
            real(mean(occ.iter().copied())),
            real(mean(col(v, |r| r.final_loss).into_iter())),
        ];
        if v != LossVariant::Baseline && variants.contains(&LossVariant::Baseline) {
            let d = sign_test(&drift, &col(LossVariant::Baseline, |r| r.drift_rate));
            let o = sign_test(&occ, &col(LossVariant::Baseline, |r| r.overlap_occupancy));
            for t in [d, o] {
                row.extend([t.wins.to_string(), t.losses.to_string(), t.ties.to_string(), real(t.p_value)]);
            }
        } else {
            row.extend(std::iter::repeat(String::new()).take(8));
        }
        println!(
            "{:<9} drift {:.4}  mean IoU {:.4}  occupancy {:.4}  final loss {:.4}",
            v.name(),
            mean(drift.iter().copied()),
            mean(col(v, |r| r.mean_final_iou).into_iter()),
            mean(occ.iter().copied()),
            mean(col(v, |r| r.final_loss).into_iter())
        );
        summary.push(row);
    }
    ctx.out.write_csv(
        "simulate_summary.csv",
        &[
            "variant",
            "mean_drift_rate",
            "mean_final_iou",
            "mean_overlap_occupancy",
            "mean_final_loss",
            "drift_wins",
            "drift_losses",
            "drift_ties",
            "drift_p_value",
            "occupancy_wins",
            "occupancy_losses",
            "occupancy_ties",
            "occupancy_p_value",
        ],
        &summary,
    )?;

    if ctx.svg {
        let series: Vec<Series> = variants
            .iter()
            .map(|&v| {
                let longest = runs.iter().map(|r| r.result(v).unwrap().loss_curve.len()).max().unwrap_or(0);
                let points = (0..longest)
                    .map(|k| {
                        let m = mean(runs.iter().filter_map(|r| r.result(v).unwrap().loss_curve.get(k)).map(|p| p.total));
                        (k as f64, m)
                    })
                    .collect();
                Series { name: v.name().to_string(), points }
            })
            .collect();
        ctx.out.write_text("simulate_loss.svg", &line_plot("mean loss", "step", "loss", &series, false))?;
    }
    Ok(())
}

pub fn nms_sweep(ctx: &Ctx) -> Result<()> {
    let variants = parse_variants(&ctx.cfg.nms.variants)?;
    let runs = all_runs(ctx, &variants)?;
    let thresholds = &ctx.cfg.nms.thresholds;
    let table = nms_sensitivity_experiment(&runs, &variants, thresholds);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name().to_string(),
                real(r.threshold),
                r.kept.to_string(),
                r.true_positives.to_string(),
                r.false_positives.to_string(),
                r.misses.to_string(),
                real(r.miss_rate),
            ]
        })
        .collect();
    ctx.out.write_csv(
        "nms_sweep.csv",
        &["variant", "threshold", "kept", "true_positives", "false_positives", "misses", "miss_rate"],
        &rows,
    )?;
    let summary: Vec<Vec<String>> = table
        .summaries
        .iter()
        .map(|s| {
            println!("{:<9} misses {}..{} spread {} variance {:.3}", s.variant.name(), s.min_misses, s.max_misses, s.spread, s.variance);
            vec![
                s.variant.name().to_string(),
                s.min_misses.to_string(),
                s.max_misses.to_string(),
                s.spread.to_string(),
                real(s.variance),
            ]
        })
        .collect();
    ctx.out.write_csv("nms_summary.csv", &["variant", "min_misses", "max_misses", "spread", "variance"], &summary)?;
    if ctx.svg {
        let series: Vec<Series> = variants
            .iter()
            .map(|&v| Series {
                name: v.name().to_string(),
                points: table.rows.iter().filter(|r| r.variant == v).map(|r| (r.threshold, r.miss_rate)).collect(),
            })
            .collect();
        ctx.out.write_text("nms_sweep.svg", &line_plot("miss rate vs NMS threshold", "NMS threshold", "miss rate", &series, false))?;
    }
    Ok(())
}

pub fn anchor_demo(ctx: &Ctx) -> Result<()> {
    let a = &ctx.cfg.anchors;
    let spec = a.spec();
    let sim = ctx.cfg.sim.to_config();
    let loss = ctx.cfg.loss.composite();

    let mut cases: Vec<(String, Scene, u64)> = Vec::new();
    if let Some(path) = &a.scene_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let scene = Scene::parse(&text).with_context(|| format!("invalid scene {}", path.display()))?;
        cases.push(("file".to_string(), scene, ctx.seeds[0]));
    } else {
        for &s in &ctx.seeds {
            cases.push((format!("seed_{s}"), generate_scene(&sim, s)?, s));
        }
    }
    let file_map = match &a.map_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            Some(ProbabilityMap::parse(&text).with_context(|| format!("invalid map {}", path.display()))?)
        }
        None => None,
    };

    let mut rows = Vec::new();
    let (mut sel, mut uni) = (Vec::new(), Vec::new());
    for (name, scene, seed) in &cases {
        let map = match (&file_map, a.map) {
            (Some(m), _) => m.clone(),
            (None, MapKind::Bump) => synthetic_bump_map(scene, a.grid_width, a.grid_height, a.stride, *seed)?,
            (None, MapKind::Indicator) => indicator_map(scene, a.grid_width, a.grid_height, a.stride)?,
            (None, MapKind::Flat) => ProbabilityMap::constant(a.grid_width, a.grid_height, a.stride, 0.5)?,
        };
        let targets = build_target_map(scene, map.width(), map.height(), map.stride())?;
        let set = select_anchors(&map, &spec);
        let stats = negative_informativeness(&set, &map, &spec, scene);
        let loc = location_branch_loss(&map, &targets, &loss)?;
        if set.fallback {
            eprintln!("warning: {name}: no cell above the dynamic threshold, all locations kept");
        }
        ctx.out.write_text(&format!("anchors/probability_{name}.txt"), &map.to_text())?;
        ctx.out.write_text(&format!("anchors/targets_{name}.txt"), &targets.to_text())?;
        if ctx.svg {
            let boxes: Vec<BBox> = set.anchors.iter().map(|x| x.bbox).collect();
            ctx.out.write_text(&format!("anchors/anchors_{name}.svg"), &scene_plot(scene, &boxes))?;
        }
        sel.push(stats.selected_fraction);
        uni.push(stats.uniform_fraction);
        rows.push(vec![
            name.clone(),
            real(set.threshold),
            set.cells.len().to_string(),
            set.total_cells.to_string(),
            real(set.cells.len() as f64 / set.total_cells as f64),
            set.fallback.to_string(),
            stats.selected_negatives.to_string(),
            stats.selected_hits.to_string(),
            real(stats.selected_fraction),
            stats.uniform_negatives.to_string(),
            stats.uniform_hits.to_string(),
            real(stats.uniform_fraction),
            real(loc),
        ]);
    }
    ctx.out.write_csv(
        "anchor_demo.csv",
        &[
            "source",
            "threshold",
            "retained_cells",
            "total_cells",
            "retained_fraction",
            "fallback",
            "selected_negatives",
            "selected_hits",
            "selected_fraction",
            "uniform_negatives",
            "uniform_hits",
            "uniform_fraction",
            "location_loss",
        ],
        &rows,
    )?;
    let t = sign_test(&uni, &sel);
    println!(
        "anchor-demo: {} maps; distractor-hit fraction selected {:.3} vs uniform {:.3}; selected higher on {} (p={:.2e})",
        cases.len(),
        mean(sel.iter().copied()),
        mean(uni.iter().copied()),
        t.wins,
        t.p_value
    );
    Ok(())
}

fn load_scenes(ctx: &Ctx) -> Result<Vec<Scene>> {
    let sim = ctx.cfg.sim.to_config();
    ctx.seeds
        .iter()
        .map(|&id| match &ctx.cfg.eval.scene_dir {
            Some(dir) => {
                let p = dir.join(format!("scene_{id}.txt"));
                let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                Scene::parse(&text).with_context(|| format!("invalid scene {}", p.display()))
            }
            None => Ok(generate_scene(&sim, id)?),
        })
        .collect()
}

fn evaluate(dets: Vec<Detection>, scenes: &[Scene], ctx: &Ctx) -> Result<EvalCurve> {
    let e = &ctx.cfg.eval;
    let dets = match e.nms_threshold {
        Some(t) => greedy_nms(&dets, t),
        None => dets,
    };
    let filter = e.filter();
    let gts: Vec<Vec<BBox>> = scenes.iter().map(|s| s.gts()).collect();
    let ignore: Vec<Vec<bool>> = scenes.iter().map(|s| filter.ignore_flags(s)).collect();
    Ok(fppi_curve_with_ignore(&dets, &gts, &ignore)?)
}

pub fn eval(ctx: &Ctx) -> Result<()> {
    let scenes = load_scenes(ctx)?;
    let mut sets: Vec<(String, Vec<Detection>)> = Vec::new();
    if let Some(path) = &ctx.cfg.eval.detections {
        let file = std::fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        let raw: Vec<Detection> = read_detections_csv(file).with_context(|| format!("invalid detections {}", path.display()))?;
        let mut dets = Vec::with_capacity(raw.len());
        for d in raw {
            let Some(k) = ctx.seeds.iter().position(|&s| s as usize == d.scene_id) else {
                bail!("detection refers to scene {} which is not in the seed list", d.scene_id);
            };
            dets.push(Detection { scene_id: k, ..d });
        }
        sets.push(("file".to_string(), dets));
    } else {
        let variants = parse_variants(&ctx.cfg.eval.variants)?;
        let runs = all_runs(ctx, &variants)?;
        for &v in &variants {
            let dets = runs
                .iter()
                .enumerate()
                .flat_map(|(k, r)| detections_from_result(r.result(v).unwrap(), &scenes[k], k))
                .collect();
            sets.push((v.name().to_string(), dets));
        }
    }

    let mut summary = Vec::new();
    let mut series = Vec::new();
    for (name, dets) in sets {
        let n = dets.len();
        let curve = evaluate(dets, &scenes, ctx)?;
        write_curve_csv(&curve, ctx.out.create_file(&format!("curve_{name}.csv"))?)?;
        let lamr = log_average_miss_rate(&curve)?;
        let at = fppi_at_miss_rate(&curve, ctx.cfg.eval.miss_rate);
        println!("{name:<9} MR-2 {:.4}  FPPI at MR {} = {}", lamr, ctx.cfg.eval.miss_rate, at.map_or("n/a".into(), |f| format!("{f:.4}")));
        summary.push(vec![name.clone(), n.to_string(), scenes.len().to_string(), real(lamr), at.map_or(String::new(), real)]);
        series.push(Series { name, points: curve.points.iter().map(|p| (p.fppi, p.miss_rate)).collect() });
    }
    ctx.out.write_csv(
        "eval_summary.csv",
        &["name", "detections", "scenes", "log_average_miss_rate", "fppi_at_miss_rate"],
        &summary,
    )?;
    if ctx.svg {
        ctx.out.write_text("eval_curves.svg", &line_plot("miss rate vs FPPI", "FPPI", "miss rate", &series, true))?;
    }
    Ok(())
}
