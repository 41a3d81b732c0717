use std::collections::BTreeSet;

use proptest::prelude::*;
use wledial::decoder::rank_by_scores;
use wledial::harness::{initial_model, Prepared, RunConfig};
use wledial::numerics::{Graph, NodeId, Tensor};
use wledial::synthworld::{export_visdial, generate_dataset, parse_question, DatasetSpec, Meaning, QuestionKind, Scene, Shape};

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn small_config(seed: u64) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
          "seed": {seed},
          "data": {{
            "train": {{"dialogues": 20, "feature_len": 10}},
            "val": {{"dialogues": 20, "feature_len": 10, "id_offset": 1000000}},
            "test": {{"dialogues": 20, "feature_len": 10, "id_offset": 2000000}},
            "min_count": 1
          }},
          "model": {{"embed_dim": 6, "hidden": 10, "i_max": 2}}
        }}"#
    ))
    .unwrap()
}

// Independent of the generator: scans the cells directly.
fn expected_answer(kind: QuestionKind, scene: &Scene, mentioned: &BTreeSet<Shape>) -> Meaning {
    let objects: Vec<_> = scene.cells().iter().flatten().copied().collect();
    let yes_no = |b: bool| if b { Meaning::Yes } else { Meaning::No };
    match kind {
        QuestionKind::Exists { color, shape } => yes_no(objects.iter().any(|o| o.color == color && o.shape == shape)),
        QuestionKind::Count { shape } => Meaning::Count(objects.iter().filter(|o| o.shape == shape).count()),
        QuestionKind::ColorOf { size, shape } => {
            let hits: Vec<_> = objects.iter().filter(|o| o.shape == shape && size.map_or(true, |s| o.size == s)).collect();
            assert_eq!(hits.len(), 1, "ambiguous referent");
            Meaning::Color(hits[0].color)
        }
        QuestionKind::SizeOf { color, shape } => {
            let hits: Vec<_> = objects.iter().filter(|o| o.shape == shape && o.color == color).collect();
            assert_eq!(hits.len(), 1, "ambiguous referent");
            Meaning::Size(hits[0].size)
        }
        QuestionKind::AnythingElse => yes_no(objects.iter().any(|o| !mentioned.contains(&o.shape))),
    }
}

fn two_branch(g: &mut Graph, x: NodeId, w: NodeId, which: u8) -> NodeId {
    let f = {
        let y = g.matmul(w, x).unwrap();
        let t = g.tanh(y);
        g.sum(t)
    };
    let h = {
        let s = g.sigmoid(x);
        g.sum(s)
    };
    match which {
        0 => f,
        1 => h,
        _ => g.add(f, h).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shift(x in vector(7), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::column(x.clone()).unwrap());
        let b = g.constant(Tensor::column(x.iter().map(|v| v + shift).collect()).unwrap());
        let sa = g.softmax(a);
        let sb = g.softmax(b);
        let (pa, pb) = (g.value(sa).to_vec(), g.value(sb).to_vec());
        prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (u, v) in pa.iter().zip(&pb) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_over_a_sum(x in vector(3), w in vector(6)) {
        let grad = |which: u8| {
            let mut g = Graph::new();
            let xn = g.param(Tensor::column(x.clone()).unwrap());
            let wn = g.param(Tensor::new(&[2, 3], w.clone()).unwrap());
            let root = two_branch(&mut g, xn, wn, which);
            let grads = g.backward(root).unwrap();
            (grads.get(xn).to_vec(), grads.get(wn).to_vec())
        };
        let (fx, fw) = grad(0);
        let (hx, hw) = grad(1);
        let (sx, sw) = grad(2);
        for i in 0..3 {
            prop_assert_eq!(sx[i].to_bits(), (fx[i] + hx[i]).to_bits());
        }
        for i in 0..6 {
            prop_assert_eq!(sw[i].to_bits(), (fw[i] + hw[i]).to_bits());
        }
    }

    #[test]
    fn graphs_are_deterministic(x in vector(3), w in vector(6)) {
        let run = || {
            let mut g = Graph::new();
            let xn = g.param(Tensor::column(x.clone()).unwrap());
            let wn = g.param(Tensor::new(&[2, 3], w.clone()).unwrap());
            let root = two_branch(&mut g, xn, wn, 2);
            let grads = g.backward(root).unwrap();
            let mut bits = vec![g.value(root).item().unwrap().to_bits()];
            bits.extend(grads.get(xn).data().iter().chain(grads.get(wn).data()).map(|v| v.to_bits()));
            bits
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn ranking_is_a_permutation(scores in prop::collection::vec(-20.0f64..0.0, 1..30), pick in any::<prop::sample::Index>()) {
        let gt = pick.index(scores.len());
        let r = rank_by_scores(&scores, gt).unwrap();
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        prop_assert_eq!(r.order[r.gt_rank - 1], gt);
        for pair in r.order.windows(2) {
            prop_assert!(scores[pair[0]] >= scores[pair[1]]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_dialogues_are_consistent(seed in any::<u64>()) {
        let spec = DatasetSpec { dialogues: 25, feature_len: 12, ..DatasetSpec::default() };
        let data = generate_dataset(&spec, seed).unwrap();
        for d in &data {
            let scene = d.scene.as_ref().unwrap();
            let caption_shape = d.caption.split_whitespace().last().and_then(Shape::parse).unwrap();
            let mut mentioned = BTreeSet::from([caption_shape]);
            for r in &d.rounds {
                let kind = parse_question(&r.question).unwrap();
                prop_assert_eq!(Some(expected_answer(kind, scene, &mentioned)), Meaning::of_answer(&r.answer));
                if let Some(s) = kind.shape() {
                    mentioned.insert(s);
                }
                let distinct: BTreeSet<&String> = r.candidates.options.iter().collect();
                prop_assert_eq!(distinct.len(), r.candidates.options.len());
            }
        }
        let again = generate_dataset(&spec, seed).unwrap();
        prop_assert_eq!(export_visdial(&data, "train").unwrap(), export_visdial(&again, "train").unwrap());
    }

    #[test]
    fn sequence_likelihoods_are_probabilities(seed in 0u64..1000) {
        let cfg = small_config(seed);
        let prepared = Prepared::new(&cfg).unwrap();
        let model = initial_model(&cfg, prepared.vocab.len()).unwrap();
        for round in prepared.test.iter().take(5) {
            let (ranking, scores) = model.rank(round, false).unwrap();
            prop_assert_eq!(ranking.order.len(), round.candidates.len());
            for s in &scores {
                let p = s.total.exp();
                prop_assert!(p > 0.0 && p <= 1.0, "{}", s.total);
            }
        }
    }
}
