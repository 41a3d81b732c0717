//! Single-layer LSTM cell shared by the encoders, the reasoning recurrence
//! and the decoder. Vectors are rows (`1×D`); gates are packed `[i f g o]`.

use rand::Rng;

use crate::error::Result;
use crate::numerics::kernels;
use crate::numerics::{BoundParams, Graph, NodeId, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    /// `(input + hidden) × 4·hidden`
    pub weight: ParamId,
    /// `1 × 4·hidden`
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert_uniform(
            &format!("{prefix}.weight"),
            &[input + hidden, 4 * hidden],
            hidden,
            rng,
        )?;
        let bias = store.insert_uniform(&format!("{prefix}.bias"), &[1, 4 * hidden], hidden, rng)?;
        Ok(Self {
            weight,
            bias,
            input,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let weight = find(store, &format!("{prefix}.weight"))?;
        let bias = find(store, &format!("{prefix}.bias"))?;
        let (rows, cols) = store.get(weight).dims2("lstm weight")?;
        let hidden = cols / 4;
        Ok(Self {
            weight,
            bias,
            input: rows - hidden,
            hidden,
        })
    }
}

pub(crate) fn find(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| crate::Error::Checkpoint(format!("missing parameter `{name}`")))
}

/// Hidden and cell state nodes, both `1×hidden`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmParams {
    pub fn zero_state(&self, graph: &mut Graph) -> LstmState {
        let h = graph.constant(crate::numerics::Tensor::zeros(&[1, self.hidden]));
        let c = graph.constant(crate::numerics::Tensor::zeros(&[1, self.hidden]));
        LstmState { h, c }
    }

    /// One recorded step on `x` (`1×input`).
    pub fn step(&self, graph: &mut Graph, bound: &BoundParams, x: NodeId, state: LstmState) -> Result<LstmState> {
        let hs = self.hidden;
        let xh = graph.concat(&[x, state.h], 1)?;
        let z = graph.matmul(xh, bound.node(self.weight))?;
        let z = graph.add(z, bound.node(self.bias))?;
        let i = graph.slice(z, 1, 0, hs)?;
        let f = graph.slice(z, 1, hs, hs)?;
        let g = graph.slice(z, 1, 2 * hs, hs)?;
        let o = graph.slice(z, 1, 3 * hs, hs)?;
        let i = graph.sigmoid(i);
        let f = graph.sigmoid(f);
        let g = graph.tanh(g);
        let o = graph.sigmoid(o);
        let keep = graph.mul(f, state.c)?;
        let write = graph.mul(i, g)?;
        let c = graph.add(keep, write)?;
        let tc = graph.tanh(c);
        let h = graph.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over `inputs` from a zero state, returning every state.
    pub fn unroll(&self, graph: &mut Graph, bound: &BoundParams, inputs: &[NodeId]) -> Result<Vec<LstmState>> {
        let mut state = self.zero_state(graph);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(graph, bound, x, state)?;
            out.push(state);
        }
        Ok(out)
    }

    /// Value-only step with exactly the arithmetic of [`LstmParams::step`].
    pub fn step_values(&self, store: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden;
        let mut xh = Vec::with_capacity(x.len() + h.len());
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut z = vec![0.0; 4 * hs];
        kernels::matmul_acc(&xh, store.get(self.weight).data(), &mut z, 1, xh.len(), 4 * hs);
        for (zv, b) in z.iter_mut().zip(store.get(self.bias).data()) {
            *zv += b;
        }
        let mut h_new = vec![0.0; hs];
        let mut c_new = vec![0.0; hs];
        for k in 0..hs {
            let i = kernels::sigmoid(z[k]);
            let f = kernels::sigmoid(z[hs + k]);
            let g = z[2 * hs + k].tanh();
            let o = kernels::sigmoid(z[3 * hs + k]);
            c_new[k] = f * c[k] + i * g;
            h_new[k] = o * c_new[k].tanh();
        }
        (h_new, c_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_path_matches_graph_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lstm = LstmParams::init(&mut store, "cell", 3, 5, &mut rng).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let xn = g.constant(Tensor::row(x.clone()).unwrap());
        let hn = g.constant(Tensor::row(h.clone()).unwrap());
        let cn = g.constant(Tensor::row(c.clone()).unwrap());
        let out = lstm.step(&mut g, &bound, xn, LstmState { h: hn, c: cn }).unwrap();
        let (hv, cv) = lstm.step_values(&store, &x, &h, &c);
        assert_eq!(g.value(out.h).data(), hv.as_slice());
        assert_eq!(g.value(out.c).data(), cv.as_slice());
    }

    #[test]
    fn lookup_recovers_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let lstm = LstmParams::init(&mut store, "enc", 7, 4, &mut rng).unwrap();
        assert_eq!(LstmParams::lookup(&store, "enc").unwrap(), lstm);
    }

    #[test]
    fn unrolled_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let lstm = LstmParams::init(&mut store, "cell", 2, 3, &mut rng).unwrap();
        let inputs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::row((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let point: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
        let report = grad_check(
            |g, ins| {
                let bound = BoundParams::from_nodes(ins.to_vec());
                let xs: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
                let states = lstm.unroll(g, &bound, &xs)?;
                let last = states.last().unwrap();
                let s = g.mul(last.h, last.c)?;
                Ok(g.sum(s))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
