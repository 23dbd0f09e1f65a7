//! Straight-line reference evaluator for the Coulomb loss and random scene
//! builders shared by the integration tests. The evaluator works on raw
//! `[x1, y1, x2, y2]` arrays and does not call into the crate.

#![allow(dead_code)]

use crowdloss::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Raw = [f64; 4];

pub fn area(b: &Raw) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

pub fn raw_iou(a: &Raw, b: &Raw) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    inter / (area(a) + area(b) - inter)
}

fn mid(b: &Raw) -> (f64, f64) {
    ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)
}

/// Angle at `b` between `a` and `c` from the three side lengths.
fn law_of_cosines(b: (f64, f64), a: (f64, f64), c: (f64, f64)) -> f64 {
    let ab = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let cb = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
    let ac = ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt();
    if ab == 0.0 || cb == 0.0 {
        return 1.0;
    }
    ((ab * ab + cb * cb - ac * ac) / (2.0 * ab * cb)).clamp(-1.0, 1.0)
}

fn geometry_distance(g: &Raw, p: &Raw) -> f64 {
    let (cx, cy) = mid(p);
    let l = (cx - g[0]).abs();
    let r = (g[2] - cx).abs();
    let t = (cy - g[1]).abs();
    let bt = (g[3] - cy).abs();
    let fx = (1.0 - l.min(r) / ((g[2] - g[0]) / 2.0)).clamp(0.0, 1.0);
    let fy = (1.0 - t.min(bt) / ((g[3] - g[1]) / 2.0)).clamp(0.0, 1.0);
    (fx * fy).sqrt()
}

fn center_inside(g: &Raw, p: &Raw) -> bool {
    let (cx, cy) = mid(p);
    g[0] <= cx && cx <= g[2] && g[1] <= cy && cy <= g[3]
}

/// Best ground truth per proposal, or `None` if it is not a positive.
pub fn reference_assign(gts: &[Raw], props: &[Raw], threshold: f64) -> Vec<Option<usize>> {
    props
        .iter()
        .map(|p| {
            let mut best = 0;
            for i in 1..gts.len() {
                if raw_iou(&gts[i], p) > raw_iou(&gts[best], p) {
                    best = i;
                }
            }
            (raw_iou(&gts[best], p) > threshold && center_inside(&gts[best], p)).then_some(best)
        })
        .collect()
}

pub struct ReferenceLoss {
    pub total: f64,
    pub attractive: f64,
    pub repulsive: f64,
    pub triplets: usize,
}

/// `literal`: attraction counted once per triplet; otherwise once per
/// (ground truth, positive) pair, and repulsion once per (ground truth,
/// negative) pair.
pub fn reference_couloss(gts: &[Raw], props: &[Raw], literal: bool) -> ReferenceLoss {
    let eps = 1e-6;
    let assigned = reference_assign(gts, props, 0.5);
    let (mut att, mut rep, mut count) = (0.0, 0.0, 0);
    for i in 0..gts.len() {
        let positives: Vec<usize> = (0..props.len()).filter(|&k| assigned[k] == Some(i)).collect();
        let negatives: Vec<(usize, usize)> = (0..props.len())
            .filter_map(|k| match assigned[k] {
                Some(j) if j != i && raw_iou(&gts[i], &props[k]) > 0.0 => Some((k, j)),
                _ => None,
            })
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let wa = |k: usize| {
            let fa = -(raw_iou(&gts[i], &props[k]).max(eps)).ln();
            (fa * 1.0 * geometry_distance(&gts[i], &props[k])).max(0.0)
        };
        let wr = |k: usize, j: usize| {
            let fr = -((1.0 - raw_iou(&gts[i], &props[k])).max(eps)).ln();
            let cos = law_of_cosines(mid(&gts[i]), mid(&props[k]), mid(&gts[j]));
            (fr * cos * geometry_distance(&gts[i], &props[k])).max(0.0)
        };
        count += positives.len() * negatives.len();
        if literal {
            for &p in &positives {
                for &(n, j) in &negatives {
                    att += wa(p);
                    rep += wr(n, j);
                }
            }
        } else {
            att += positives.iter().map(|&p| wa(p)).sum::<f64>();
            rep += negatives.iter().map(|&(n, j)| wr(n, j)).sum::<f64>();
        }
    }
    let n = gts.len() as f64;
    ReferenceLoss { total: (att + rep) / n, attractive: att, repulsive: rep, triplets: count }
}

pub fn to_boxes(raw: &[Raw]) -> Vec<BBox> {
    raw.iter().map(|r| BBox::from_array(*r).unwrap()).collect()
}

/// 1 to `max_gts` pedestrian-like boxes, each after the first placed next
/// to an earlier one so that neighbors overlap, and 1 to `max_props`
/// proposals jittered around random ground truths.
pub fn random_crowd(rng: &mut ChaCha8Rng, max_gts: usize, max_props: usize) -> (Vec<Raw>, Vec<Raw>) {
    let n_gts = rng.gen_range(1..=max_gts);
    let mut gts: Vec<Raw> = Vec::with_capacity(n_gts);
    for k in 0..n_gts {
        let h: f64 = rng.gen_range(20.0..60.0);
        let w = h * rng.gen_range(0.35..0.6);
        let (cx, cy) = if k == 0 {
            (rng.gen_range(30.0..70.0), rng.gen_range(30.0..70.0))
        } else {
            let anchor = gts[rng.gen_range(0..k)];
            let (ax, ay) = mid(&anchor);
            let dx = (anchor[2] - anchor[0]) * rng.gen_range(-0.9..0.9);
            let dy = (anchor[3] - anchor[1]) * rng.gen_range(-0.3..0.3);
            (ax + dx, ay + dy)
        };
        gts.push([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]);
    }
    let n_props = rng.gen_range(1..=max_props);
    let props = (0..n_props)
        .map(|_| {
            let g = gts[rng.gen_range(0..n_gts)];
            jitter(rng, &g, 0.15)
        })
        .collect();
    (gts, props)
}

pub fn jitter(rng: &mut ChaCha8Rng, g: &Raw, sigma: f64) -> Raw {
    let (w, h) = (g[2] - g[0], g[3] - g[1]);
    let (cx, cy) = mid(g);
    let n = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) * sigma };
    let cx = cx + n(rng) * w;
    let cy = cy + n(rng) * h;
    let w = w * n(rng).exp();
    let h = h * n(rng).exp();
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
