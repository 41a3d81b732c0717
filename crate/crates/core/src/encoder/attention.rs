//! Guide-conditioned attention over one modality's feature columns.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lstm::find;
use crate::numerics::{BoundParams, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Weights of one guided-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuidedAttentionParams {
    /// `N×N`, applied to the attended features.
    pub feature_proj: ParamId,
    /// `N×N`, applied to the guide.
    pub guide_proj: ParamId,
    /// `N×1` scoring vector.
    pub score: ParamId,
}

impl GuidedAttentionParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, n: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            feature_proj: store.insert_uniform(&format!("{prefix}.feature_proj"), &[n, n], n, rng)?,
            guide_proj: store.insert_uniform(&format!("{prefix}.guide_proj"), &[n, n], n, rng)?,
            score: store.insert_uniform(&format!("{prefix}.score"), &[n, 1], n, rng)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            feature_proj: find(store, &format!("{prefix}.feature_proj"))?,
            guide_proj: find(store, &format!("{prefix}.guide_proj"))?,
            score: find(store, &format!("{prefix}.score"))?,
        })
    }
}

/// Attention weights over the columns and the attended feature.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `M×1`, on the probability simplex.
    pub weights: NodeId,
    /// `N×1`, the weighted combination of feature columns.
    pub feature: NodeId,
}

/// Attends over the `M` columns of `features` (`N×M`) under `guide` (`N×1`):
///
/// ```text
/// E = tanh(W_feat · F + (W_guide · g) · 1ᵀ)
/// a = softmax(Eᵀ · w)
/// f = F · a
/// ```
pub fn guided_attention(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &GuidedAttentionParams,
    features: NodeId,
    guide: NodeId,
) -> Result<Attended> {
    let (n, m) = graph.value(features).dims2("guided_attention")?;
    if m == 0 {
        return Err(Error::Empty("guided_attention"));
    }
    let (gn, gc) = graph.value(guide).dims2("guided_attention")?;
    if gn != n || gc != 1 {
        return Err(Error::ShapeMismatch {
            op: "guided_attention",
            lhs: vec![n, m],
            rhs: vec![gn, gc],
        });
    }
    let projected = graph.matmul(bound.node(params.feature_proj), features)?;
    let guide_term = graph.matmul(bound.node(params.guide_proj), guide)?;
    let ones = graph.constant(Tensor::filled(&[1, m], 1.0));
    let broadcast = graph.matmul(guide_term, ones)?;
    let pre = graph.add(projected, broadcast)?;
    let energy = graph.tanh(pre);
    let energy_t = graph.transpose(energy)?;
    let logits = graph.matmul(energy_t, bound.node(params.score))?;
    let weights = graph.softmax(logits);
    let feature = graph.matmul(features, weights)?;
    Ok(Attended { weights, feature })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(n: usize, seed: u64) -> (ParamStore, GuidedAttentionParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = GuidedAttentionParams::init(&mut store, "att", n, &mut rng).unwrap();
        (store, p, rng)
    }

    #[test]
    fn single_column_gets_all_mass() {
        let (store, p, mut rng) = setup(4, 0);
        let f = random(&mut rng, &[4, 1]);
        let g0 = random(&mut rng, &[4, 1]);
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let fnode = g.constant(f.clone());
        let gnode = g.constant(g0);
        let out = guided_attention(&mut g, &bound, &p, fnode, gnode).unwrap();
        assert_eq!(g.value(out.weights).data(), &[1.0]);
        assert_eq!(g.value(out.feature).data(), f.data());
    }

    #[test]
    fn zero_projections_attend_uniformly() {
        let (mut store, p, mut rng) = setup(3, 1);
        store.set(p.feature_proj, Tensor::zeros(&[3, 3])).unwrap();
        store.set(p.guide_proj, Tensor::zeros(&[3, 3])).unwrap();
        let f = random(&mut rng, &[3, 5]);
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let fnode = g.constant(f.clone());
        let gnode = g.constant(random(&mut rng, &[3, 1]));
        let out = guided_attention(&mut g, &bound, &p, fnode, gnode).unwrap();
        for &w in g.value(out.weights).data() {
            assert!((w - 0.2).abs() < 1e-15);
        }
        for r in 0..3 {
            let mean: f64 = (0..5).map(|c| f.at(r, c)).sum::<f64>() / 5.0;
            assert!((g.value(out.feature).data()[r] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_guide_rejected() {
        let (store, p, mut rng) = setup(3, 2);
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let fnode = g.constant(random(&mut rng, &[3, 2]));
        let gnode = g.constant(random(&mut rng, &[2, 1]));
        assert!(guided_attention(&mut g, &bound, &p, fnode, gnode).is_err());
    }
}
