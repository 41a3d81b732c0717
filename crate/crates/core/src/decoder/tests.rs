use super::*;
use crate::numerics::kernels::log_softmax;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(vocab: usize, embed: usize, hidden: usize, seed: u64) -> (ParamStore, DecoderParams, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = store.insert_uniform("embedding", &[vocab, embed], embed, &mut rng).unwrap();
    let params = DecoderParams::init(&mut store, emb, hidden, &mut rng).unwrap();
    let e = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (store, params, e)
}

fn graph_score(store: &ParamStore, params: &DecoderParams, e: &[f64], answer: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g, false);
    let en = g.constant(Tensor::column(e.to_vec()).unwrap());
    let scored = score_sequence(&mut g, &bound, params, en, answer)?;
    let per = scored.token_log_probs.iter().map(|&n| g.value(n).data()[0]).collect();
    Ok((g.value(scored.total).data()[0], per))
}

#[test]
fn value_path_matches_tape_bitwise() {
    let (store, params, e) = setup(9, 4, 5, 1);
    let runner = DecoderRunner::new(&store, &params, e.clone()).unwrap();
    for answer in [vec![4], vec![5, 6, 7], vec![8, 8, 4, 0]] {
        let (total, per) = graph_score(&store, &params, &e, &answer).unwrap();
        let s = runner.score(&answer).unwrap();
        assert_eq!(s.total, total);
        assert_eq!(s.token_log_probs, per);
        assert_eq!(s.token_count(), answer.len() + 1);
        let sum: f64 = s.token_log_probs.iter().sum();
        assert!((sum - s.total).abs() <= 1e-12);
        assert!(s.token_log_probs.iter().all(|&v| v <= 0.0));
    }
}

#[test]
fn uniform_logits_give_log_vocab() {
    let (mut store, params, e) = setup(7, 3, 4, 2);
    store.set(params.out_weight, Tensor::zeros(&[4, 7])).unwrap();
    store.set(params.out_bias, Tensor::zeros(&[1, 7])).unwrap();
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let s = runner.score(&[4, 5]).unwrap();
    for lp in s.token_log_probs {
        assert!((lp + (7f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn bad_answers_rejected() {
    let (store, params, e) = setup(6, 3, 4, 3);
    let runner = DecoderRunner::new(&store, &params, e.clone()).unwrap();
    assert!(runner.score(&[]).is_err());
    assert!(runner.score(&[6]).is_err());
    assert!(graph_score(&store, &params, &e, &[]).is_err());
    assert!(graph_score(&store, &params, &e, &[4, 99]).is_err());
    assert!(DecoderRunner::new(&store, &params, vec![0.0; 3]).is_err());
}

#[test]
fn appending_a_token_lowers_the_prefix_mass() {
    let (store, params, e) = setup(8, 3, 4, 4);
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let short = runner.score(&[4, 5]).unwrap();
    let long = runner.score(&[4, 5, 6]).unwrap();
    // Shared prefix terms agree; the longer answer adds one more non-positive term.
    assert_eq!(short.token_log_probs[..2], long.token_log_probs[..2]);
    let prefix: f64 = long.token_log_probs[..3].iter().sum();
    let short_prefix: f64 = short.token_log_probs[..2].iter().sum();
    assert!(prefix <= short_prefix);
}

#[test]
fn enumeration_accounts_for_all_mass() {
    // Content tokens are every id except EOS. Mass of all answers of length
    // ≤ 1 ending in EOS, plus every length-2 prefix, must be one.
    let (store, params, e) = setup(6, 3, 4, 5);
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let content: Vec<usize> = (0..6).filter(|&t| t != EOS).collect();
    let (_, first) = runner.start();
    let mut mass = first[EOS].exp();
    for &a in &content {
        mass += runner.score(&[a]).unwrap().total.exp();
        for &b in &content {
            let s = runner.score(&[a, b]).unwrap();
            mass += (s.token_log_probs[0] + s.token_log_probs[1]).exp();
        }
    }
    assert!((mass - 1.0).abs() < 1e-12, "{mass}");
}

#[test]
fn scores_do_not_depend_on_candidate_order() {
    let (store, params, e) = setup(10, 4, 5, 6);
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let cands = vec![vec![4, 5], vec![4], vec![6, 7, 8], vec![4, 5, 9], vec![6]];
    let forward = runner.score_many(&cands).unwrap();
    let reversed: Vec<Vec<usize>> = cands.iter().rev().cloned().collect();
    let mut backward = runner.score_many(&reversed).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
    for (c, s) in cands.iter().zip(&forward) {
        assert_eq!(&runner.score(c).unwrap(), s);
        assert!(s.total.exp() > 0.0 && s.total.exp() <= 1.0);
    }
}

#[test]
fn ranking_examples() {
    let r = rank_by_scores(&[-3.0, -1.0, -2.0], 1).unwrap();
    assert_eq!(r.gt_rank, 1);
    assert_eq!(r.order, vec![1, 2, 0]);
    let tied = rank_by_scores(&[-2.0; 5], 3).unwrap();
    assert_eq!(tied.gt_rank, 4);
    assert_eq!(tied.order, vec![0, 1, 2, 3, 4]);
    assert!(rank_by_scores(&[], 0).is_err());
    assert!(rank_by_scores(&[-1.0], 1).is_err());

    let (store, params, e) = setup(8, 3, 4, 7);
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let same = vec![vec![4, 5]; 6];
    let (ranking, _) = rank_candidates(&runner, &same, 2, false).unwrap();
    assert_eq!(ranking.gt_rank, 3);
}

proptest! {
    #[test]
    fn ranking_matches_counting_oracle(scores in prop::collection::vec(-5i32..0, 1..30), pick in any::<prop::sample::Index>()) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let gt = pick.index(scores.len());
        let r = rank_by_scores(&scores, gt).unwrap();
        let better = scores.iter().filter(|&&s| s > scores[gt]).count();
        let tied_before = scores[..gt].iter().filter(|&&s| s == scores[gt]).count();
        prop_assert_eq!(r.gt_rank, better + tied_before + 1);
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for w in r.order.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
    }
}

/// Next-token table keyed by prefix; other prefixes get a seeded random distribution.
struct TableModel {
    table: HashMap<Vec<usize>, Vec<f64>>,
    vocab: usize,
    seed: u64,
}

impl TableModel {
    fn dist(&self, prefix: &[usize]) -> Vec<f64> {
        if let Some(lp) = self.table.get(prefix) {
            return lp.clone();
        }
        let mut h = self.seed;
        for &t in prefix {
            h = crate::synthworld::derive_seed(h, t as u64 + 1, 7);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
        log_softmax(&logits)
    }
}

impl NextTokenModel for TableModel {
    type State = Vec<usize>;

    fn start(&self) -> (Vec<usize>, Vec<f64>) {
        (Vec::new(), self.dist(&[]))
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> (Vec<usize>, Vec<f64>) {
        let mut next = state.clone();
        next.push(token);
        let d = self.dist(&next);
        (next, d)
    }
}

/// Best finished sequence by exhaustive enumeration, with the same
/// accumulation order and tie rule as the search.
fn exhaustive<M: NextTokenModel>(model: &M, max_len: usize, vocab: usize) -> Generated {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |score: f64, toks: Vec<usize>| {
        let better = match &best {
            None => true,
            Some((s, t)) => score > *s || (score == *s && toks < *t),
        };
        if better {
            best = Some((score, toks));
        }
    };
    let mut frontier = vec![(0.0, Vec::new(), model.start())];
    for depth in 0..max_len {
        let mut next = Vec::new();
        for (score, toks, (state, lp)) in frontier {
            for t in 0..vocab {
                let s = score + lp[t];
                let mut seq: Vec<usize> = toks.clone();
                seq.push(t);
                if t == EOS {
                    consider(s, seq);
                } else if depth + 1 == max_len {
                    consider(s, seq);
                } else {
                    let adv = model.advance(&state, t);
                    next.push((s, seq, adv));
                }
            }
        }
        frontier = next;
    }
    let (log_prob, mut tokens) = best.unwrap();
    let ended = tokens.last() == Some(&EOS);
    if ended {
        tokens.pop();
    }
    Generated {
        tokens,
        log_prob,
        ended,
    }
}

#[test]
fn eos_first_gives_empty_answer() {
    let mut table = HashMap::new();
    table.insert(vec![], log_softmax(&[0.0, 0.0, 0.0, 5.0, 0.0]));
    let m = TableModel { table, vocab: 5, seed: 0 };
    for mode in [SearchMode::Greedy, SearchMode::Beam(3)] {
        let g = generate(&m, 4, mode).unwrap();
        assert!(g.tokens.is_empty() && g.ended);
    }
    assert!(generate(&m, 0, SearchMode::Greedy).is_err());
    assert!(generate(&m, 2, SearchMode::Beam(0)).is_err());
}

#[test]
fn beam_escapes_a_greedy_trap() {
    let ln = f64::ln;
    let mut table = HashMap::new();
    table.insert(vec![], vec![ln(0.4), ln(0.1), ln(0.1), ln(0.05), ln(0.35)]);
    table.insert(vec![0], vec![ln(0.2); 5]);
    table.insert(vec![4], vec![ln(0.025), ln(0.025), ln(0.025), ln(0.9), ln(0.025)]);
    let m = TableModel { table, vocab: 5, seed: 9 };
    let greedy = generate(&m, 3, SearchMode::Greedy).unwrap();
    let beam = generate(&m, 3, SearchMode::Beam(3)).unwrap();
    let oracle = exhaustive(&m, 3, 5);
    assert_eq!(greedy.tokens[0], 0);
    assert_eq!(beam, oracle);
    assert_eq!(beam.tokens, vec![4]);
    assert!(beam.log_prob > greedy.log_prob);
}

proptest! {
    #[test]
    fn greedy_equals_beam_of_one(seed in any::<u64>(), max_len in 1usize..5) {
        let m = TableModel { table: HashMap::new(), vocab: 6, seed };
        prop_assert_eq!(
            generate(&m, max_len, SearchMode::Greedy).unwrap(),
            generate(&m, max_len, SearchMode::Beam(1)).unwrap()
        );
    }

    #[test]
    fn wide_beam_is_exhaustive(seed in any::<u64>(), max_len in 1usize..4) {
        let m = TableModel { table: HashMap::new(), vocab: 5, seed };
        let wide = generate(&m, max_len, SearchMode::Beam(5usize.pow(max_len as u32))).unwrap();
        prop_assert_eq!(wide, exhaustive(&m, max_len, 5));
    }
}

#[test]
fn decoder_runner_drives_search() {
    let (store, params, e) = setup(8, 3, 4, 8);
    let runner = DecoderRunner::new(&store, &params, e).unwrap();
    let g = generate(&runner, 4, SearchMode::Beam(2)).unwrap();
    assert!(g.tokens.len() <= 4);
    if g.ended && !g.tokens.is_empty() {
        let s = runner.score(&g.tokens).unwrap();
        assert!((s.total - g.log_prob).abs() < 1e-12);
    }
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let (store, params, e) = setup(7, 3, 4, 10);
    let mut point: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    point.push(Tensor::column(e).unwrap());
    let report = grad_check(
        |g, ins| {
            let bound = BoundParams::from_nodes(ins[..ins.len() - 1].to_vec());
            let scored = score_sequence(g, &bound, &params, ins[ins.len() - 1], &[4, 5, 6])?;
            Ok(scored.total)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

use crate::numerics::grad_check;
