use proptest::prelude::*;

use tempscene::config::PipelineConfig;
use tempscene::eval::{assignment_cost, hungarian_assign, semantic_label_miou};
use tempscene::model::TemporalModel;
use tempscene::synth::{generate_sequence, suite_scene};
use tempscene::viz::{palette, VizMode, STATIC_GRAY};

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..6).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(0.0f64..5.0, m), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_beats_the_diagonal(cost in matrix(), shift in 0usize..5) {
        let n = cost.len();
        let m = cost[0].len();
        let best = assignment_cost(&cost, &hungarian_assign(&cost));
        // any other injective assignment: rows paired with shifted columns
        let k = n.min(m);
        let other: Vec<Option<usize>> = (0..n)
            .map(|i| if i < k { Some((i + shift) % m) } else { None })
            .collect();
        let mut seen = vec![false; m];
        let injective = other.iter().flatten().all(|&j| !std::mem::replace(&mut seen[j], true));
        prop_assume!(injective);
        prop_assert!(best <= assignment_cost(&cost, &other) + 1e-9);
    }

    #[test]
    fn semantic_miou_of_identical_labels_is_one(labels in prop::collection::vec(0u32..5, 1..200)) {
        prop_assume!(labels.iter().any(|&l| l != 0));
        prop_assert_eq!(semantic_label_miou(&labels, &labels, true).unwrap(), 1.0);
    }

    #[test]
    fn palette_never_grays_an_object(id in 1u32..1_000_000, semantic in any::<bool>()) {
        let mode = if semantic { VizMode::Semantic } else { VizMode::Instance };
        prop_assert_ne!(palette(id, mode), STATIC_GRAY);
        prop_assert_eq!(palette(id, mode), palette(id, mode));
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), coverage in 0.0f64..5.0, iterations in 1usize..100_000) {
        let mut cfg = PipelineConfig::default();
        cfg.anneal.seed = seed;
        cfg.anneal.iterations = iterations;
        cfg.objective.coverage = coverage;
        prop_assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn truth_poses_start_at_bootstrap() {
    let seq = generate_sequence(&suite_scene(0, 0.0)).unwrap();
    let model = TemporalModel::bootstrap(&seq.truth.scans[0]).unwrap();
    for o in model.objects() {
        let start = model.history()[0].get(o.id()).unwrap().pose;
        let p = seq.model_pose(o.id(), 0, &start).unwrap();
        assert!((p.translation() - start.translation()).norm() < 1e-9);
        assert!(p.yaw_distance(&start) < 1e-9);
        // every model point lands on the object's labeled points at t0
        let posed = o.geometry().transformed(&p);
        let truth: Vec<_> = seq.truth.scans[0]
            .points()
            .iter()
            .zip(seq.truth.scans[0].instance().unwrap())
            .filter(|(_, &u)| u == o.id())
            .map(|(q, _)| *q)
            .collect();
        assert_eq!(posed.len(), truth.len());
        for (a, b) in posed.points().iter().zip(&truth) {
            assert!((a - b).norm() < 1e-9);
        }
        // later scans resample the surface, so compare by proximity
        for t in 1..seq.truth.scans.len() {
            let Some(p) = seq.model_pose(o.id(), t, &start) else {
                continue;
            };
            let scan = &seq.truth.scans[t];
            let mine: Vec<_> = scan
                .points()
                .iter()
                .zip(scan.instance().unwrap())
                .filter(|(_, &u)| u == o.id())
                .map(|(q, _)| *q)
                .collect();
            let index = tempscene::geometry::SpatialIndex::new(&mine);
            let posed = o.geometry().transformed(&p);
            let near = posed.points().iter().filter(|q| index.nearest_within(q, 0.02).is_some()).count();
            assert!(near * 2 > posed.len(), "object {} at t{t}: {near}/{}", o.id(), posed.len());
        }
    }
}
