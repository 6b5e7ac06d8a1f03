//! Property tests for invariants that hold for any input.

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use osgrag::fusion::union_groups;
use osgrag::geometry::{
    convex_hull, fit_obb, fit_upright_obb, obb_iou, polygon_area, se3_exp, se3_log, Obb, Twist,
};
use osgrag::model_clients::EmbeddingVector;
use osgrag::pipeline::voxel_downsample;
use osgrag::rag_tasks::{parse_plan, Action, Step};
use osgrag::scene_model::{Confidence, ObjectNode, SceneGraph};
use osgrag::vector_store::{build_chunks, VectorDb, VectorRecord};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vector3<f64>> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    vec3(-3.0, 3.0).prop_map(|w| {
        let w = if w.norm() > 3.0 { w.normalize() * 3.0 } else { w };
        se3_exp(&Twist::new(Vector3::zeros(), w)).rotation
    })
}

fn obb() -> impl Strategy<Value = Obb> {
    (vec3(-1.0, 1.0), vec3(0.05, 2.0), rotation()).prop_map(|(c, e, r)| Obb::new(c, e, r).unwrap())
}

fn cloud() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(-2.0, 2.0), 4..120)
}

fn unit_embedding(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| EmbeddingVector::normalize_from(&v))
}

fn db_with(embeddings: Vec<EmbeddingVector>) -> VectorDb {
    let mut g = SceneGraph::empty(0);
    g.nodes.insert(
        1,
        ObjectNode {
            id: 1,
            label: "lamp".into(),
            description: "a lamp".into(),
            feature: vec![],
            obb: Obb::axis_aligned(Vector3::zeros(), Vector3::repeat(0.2)).unwrap(),
            best_view: None,
            confidence: Confidence { alpha: 1.0, beta: 1.0 },
            node_category: "object".into(),
            point_count: 1,
        },
    );
    let chunk = build_chunks(&g).remove(0);
    VectorDb {
        dim: embeddings[0].values.len(),
        encoder: "prop".into(),
        records: embeddings
            .into_iter()
            .enumerate()
            .map(|(i, embedding)| VectorRecord {
                record_id: i,
                embedding,
                chunk: chunk.clone(),
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn exp_log_round_trip(xi in vec3(-10.0, 10.0), w in vec3(-1.0, 1.0), angle in 0.0f64..3.1) {
        prop_assume!(w.norm() > 1e-3);
        let twist = Twist::new(xi, w.normalize() * angle);
        let pose = se3_exp(&twist);
        let back = se3_log(&pose).unwrap();
        prop_assert!((back.omega - twist.omega).norm() < 1e-8);
        prop_assert!((back.xi - twist.xi).norm() < 1e-7);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in obb(), b in obb()) {
        let ab = obb_iou(&a, &b);
        let ba = obb_iou(&b, &a);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn iou_with_itself_is_one(a in obb()) {
        prop_assert!((obb_iou(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fitted_boxes_enclose_their_points(points in cloud()) {
        for fit in [fit_obb(&points), fit_upright_obb(&points)] {
            let Ok(b) = fit else { continue };
            for p in &points {
                prop_assert!(b.contains(p, 1e-9));
            }
        }
    }

    #[test]
    fn hull_area_is_invariant_to_order(mut pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)) {
        let a: Vec<Vector2<f64>> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
        pts.reverse();
        let b: Vec<Vector2<f64>> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
        let (ha, hb) = (polygon_area(&convex_hull(&a)), polygon_area(&convex_hull(&b)));
        prop_assert!((ha - hb).abs() < 1e-9);
        prop_assert!(ha <= 100.0 + 1e-9);
    }

    #[test]
    fn voxel_thinning_never_grows(points in cloud(), size in 0.01f64..1.0) {
        let thinned = voxel_downsample(&points, size);
        prop_assert!(!thinned.is_empty());
        prop_assert!(thinned.len() <= points.len());
        prop_assert_eq!(voxel_downsample(&points, 0.0), points);
    }

    #[test]
    fn union_groups_partition_and_close(n in 1usize..30, edges in prop::collection::vec((0usize..30, 0usize..30), 0..40)) {
        let joined = |i: usize, j: usize| edges.iter().any(|&(a, b)| (a == i && b == j) || (a == j && b == i));
        let groups = union_groups(n, joined);
        let mut seen: Vec<usize> = groups.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let group_of = |x: usize| groups.iter().position(|g| g.contains(&x)).unwrap();
        for &(a, b) in &edges {
            if a < n && b < n {
                prop_assert_eq!(group_of(a), group_of(b));
            }
        }
    }

    #[test]
    fn search_is_sorted_and_bounded(
        embeddings in prop::collection::vec(unit_embedding(6), 1..30),
        query in unit_embedding(6),
        k in 1usize..40,
    ) {
        let db = db_with(embeddings);
        let hits = db.search(&query, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(db.records.len()));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].record_id < w[1].record_id));
        }
    }

    #[test]
    fn persistence_round_trips(embeddings in prop::collection::vec(unit_embedding(5), 1..20)) {
        let db = db_with(embeddings);
        let bytes = db.to_bytes();
        let back = VectorDb::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, db);
    }

    #[test]
    fn plans_round_trip_through_text(steps in prop::collection::vec((0usize..4, "[a-z]{2,8}( [a-z]{2,8})?"), 1..8)) {
        let actions = [Action::Find, Action::Navigate, Action::Grasp, Action::Place];
        let steps: Vec<Step> = steps.iter().map(|(a, t)| Step::new(actions[*a], t)).collect();
        prop_assume!(steps.iter().all(|s| !s.target.is_empty()));
        let text = steps.iter().map(Step::to_string).collect::<Vec<_>>().join(", ");
        let parsed = parse_plan(&text).unwrap();
        prop_assert_eq!(parsed, steps);
    }
}
