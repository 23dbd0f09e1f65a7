use crowdloss::anchors::{build_target_map, synthetic_bump_map, ProbabilityMap, TargetMap};
use crowdloss::evalkit::{fppi_curve, read_detections_csv, write_curve_csv, write_detections_csv, Detection};
use crowdloss::simulator::{generate_scene, Scene, SimConfig};
use crowdloss::BBox;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_scenes_survive_text(seed in 0u64..10_000) {
        let scene = generate_scene::<f64>(&SimConfig::default(), seed).unwrap();
        prop_assert_eq!(Scene::parse(&scene.to_text()).unwrap(), scene);
    }

    #[test]
    fn detections_survive_csv(rows in prop::collection::vec((0usize..5, -1e3..1e3f64, -1e3..1e3f64, 1e-3..500.0f64, 1e-3..500.0f64, 0.0..=1.0f64), 0..30)) {
        let dets: Vec<Detection> = rows
            .iter()
            .map(|&(s, x, y, w, h, score)| Detection::new(BBox::new(x, y, x + w, y + h).unwrap(), score, s).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_detections_csv(&dets, &mut buf).unwrap();
        let back: Vec<Detection> = read_detections_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, dets);
    }
}

#[test]
fn maps_survive_text() {
    let scene = generate_scene::<f64>(&SimConfig::default(), 9).unwrap();
    let map = synthetic_bump_map(&scene, 25, 25, 4.0, 9).unwrap();
    assert_eq!(ProbabilityMap::parse(&map.to_text()).unwrap(), map);
    let t = build_target_map(&scene, 25, 25, 4.0).unwrap();
    assert_eq!(TargetMap::parse(&t.to_text()).unwrap(), t);
}

#[test]
fn headerless_and_commented_csv() {
    let text = "# produced by hand\n0, 1, 2, 11, 22, 0.75\n1,0,0,5,5,0.5\n";
    let dets: Vec<Detection> = read_detections_csv(text.as_bytes()).unwrap();
    assert_eq!(dets.len(), 2);
    assert_eq!(dets[0].bbox, BBox::new(1.0, 2.0, 11.0, 22.0).unwrap());
    assert_eq!(dets[1].scene_id, 1);

    assert!(read_detections_csv::<f64, _>("0,1,2,3\n".as_bytes()).is_err());
    assert!(read_detections_csv::<f64, _>("0,5,0,1,1,0.5\n".as_bytes()).is_err());
    assert!(read_detections_csv::<f64, _>("0,0,0,1,1,1.5\n".as_bytes()).is_err());
}

#[test]
fn curve_csv_layout() {
    let g = vec![vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()]];
    let dets = [
        Detection::new(BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9, 0).unwrap(),
        Detection::new(BBox::new(50.0, 50.0, 60.0, 60.0).unwrap(), 0.4, 0).unwrap(),
    ];
    let curve = fppi_curve(&dets, &g).unwrap();
    let mut buf = Vec::new();
    write_curve_csv(&curve, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "threshold,fppi,miss_rate");
    assert_eq!(lines[1], "9.0000000000000002e-1,0.0000000000000000e0,0.0000000000000000e0");
    assert_eq!(lines[2], "4.0000000000000002e-1,1.0000000000000000e0,0.0000000000000000e0");
}
