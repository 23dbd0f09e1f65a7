mod common;

use common::{reference_assign, reference_couloss, to_boxes, Raw};
use crowdloss::couloss::{assemble_triplets, couloss, Aggregation, CouLossConfig};

fn cfg(aggregation: Aggregation) -> CouLossConfig {
    CouLossConfig { aggregation, ..CouLossConfig::default() }
}

fn check(gts: &[Raw], props: &[Raw]) {
    let (g, p) = (to_boxes(gts), to_boxes(props));
    for (agg, literal) in [(Aggregation::TripletLiteral, true), (Aggregation::Deduplicated, false)] {
        let got = couloss(&g, &p, &cfg(agg)).unwrap();
        let want = reference_couloss(gts, props, literal);
        assert_eq!(got.triplets.len(), want.triplets);
        assert!((got.total - want.total).abs() < 1e-9, "{agg:?}: {} vs {}", got.total, want.total);
        assert!((got.attractive_work - want.attractive).abs() < 1e-9);
        assert!((got.repulsive_work - want.repulsive).abs() < 1e-9);
    }
}

#[test]
fn hand_fixtures() {
    check(&[[0.0, 0.0, 4.0, 8.0], [3.0, 0.0, 7.0, 8.0]], &[[0.5, 1.0, 4.5, 9.0], [2.0, 0.0, 6.0, 8.0]]);
    check(&[[0.0, 0.0, 4.0, 8.0], [3.0, 1.0, 7.0, 9.0]], &[[0.5, 1.0, 4.5, 9.0], [2.5, 1.5, 6.5, 9.5]]);
    check(
        &[[0.0, 0.0, 4.0, 8.0], [3.0, 1.0, 7.0, 9.0], [6.0, 0.0, 10.0, 8.0]],
        &[[0.5, 1.0, 4.5, 9.0], [2.5, 1.5, 6.5, 9.5], [6.2, 0.3, 10.1, 8.4], [0.2, 0.0, 4.1, 8.2]],
    );
}

#[test]
fn random_fixture_suite() {
    let mut rng = common::rng(7);
    let mut with_triplets = 0;
    for _ in 0..2000 {
        let (gts, props) = common::random_crowd(&mut rng, 4, 8);
        check(&gts, &props);
        with_triplets += (reference_couloss(&gts, &props, true).triplets > 0) as usize;
    }
    // the suite must actually exercise the interaction terms
    assert!(with_triplets > 400, "only {with_triplets} scenes with triplets");
}

#[test]
fn assignments_match_reference() {
    let mut rng = common::rng(11);
    for _ in 0..500 {
        let (gts, props) = common::random_crowd(&mut rng, 4, 8);
        let (_, asg) = assemble_triplets(&to_boxes(&gts), &to_boxes(&props), &CouLossConfig::default()).unwrap();
        let mut got = vec![None; props.len()];
        for a in asg {
            got[a.proposal_index] = Some(a.target_gt_index);
        }
        assert_eq!(got, reference_assign(&gts, &props, 0.5));
    }
}

#[test]
fn triplet_enumeration_examples() {
    let c = CouLossConfig::default();
    let one = to_boxes(&[[0.0, 0.0, 4.0, 8.0]]);
    let (t, _) = assemble_triplets(&one, &to_boxes(&[[0.0, 0.0, 4.0, 8.0], [0.5, 0.5, 4.5, 8.5]]), &c).unwrap();
    assert!(t.is_empty());

    let disjoint = to_boxes(&[[0.0, 0.0, 4.0, 8.0], [10.0, 0.0, 14.0, 8.0]]);
    let (t, _) = assemble_triplets(&disjoint, &to_boxes(&[[0.2, 0.0, 4.2, 8.0], [10.2, 0.0, 14.2, 8.0]]), &c).unwrap();
    assert!(t.is_empty());

    let crowd = to_boxes(&[[0.0, 0.0, 4.0, 8.0], [3.0, 1.0, 7.0, 9.0]]);
    let (t, a) = assemble_triplets(&crowd, &to_boxes(&[[0.5, 1.0, 4.5, 9.0], [2.5, 1.5, 6.5, 9.5]]), &c).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(t.len(), 2);

    let (t, a) = assemble_triplets(&crowd, &[], &c).unwrap();
    assert!(t.is_empty() && a.is_empty());
}

#[test]
fn single_pedestrian_has_no_loss() {
    let mut rng = common::rng(3);
    for _ in 0..50 {
        let g: Raw = [10.0, 10.0, 30.0, 60.0];
        let props: Vec<Raw> = (0..8).map(|_| common::jitter(&mut rng, &g, 0.1)).collect();
        let r = couloss(&to_boxes(&[g]), &to_boxes(&props), &CouLossConfig::default()).unwrap();
        assert_eq!(r.total, 0.0);
    }
}
