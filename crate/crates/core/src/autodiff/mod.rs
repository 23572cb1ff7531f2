//! Minimal reverse-mode differentiation over `f64` matrices.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, ParamError, Stencil};
pub use graph::{Gradients, Graph, NodeId};
pub use params::ParamSet;
pub use tensor::{log_sum_exp, sigmoid, softmax, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reduces any node to a scalar through fixed random weights so every
    /// output coordinate carries a distinct upstream gradient.
    fn weighted_sum(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
        let (r, c) = g.value(x).dims2().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.constant(rand_t(&mut rng, r, c));
        let p = g.mul(x, w).unwrap();
        g.sum(p).unwrap()
    }

    fn check(params: Vec<Tensor>, f: impl Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>) -> f64 {
        grad_check(f, &params, 1e-5).unwrap().max_rel_error
    }

    #[test]
    fn sum_and_square_gradients() {
        let x = Tensor::matrix(1, 3, vec![0.3, -2.0, 5.0]).unwrap();
        let err = check(vec![x], |g, p| g.sum(p[0]));
        assert!(err < 1e-10, "{err}");

        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let xi = g.param(x.clone());
        let sq = g.mul(xi, xi).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(xi).unwrap().data(), &[2.0, 4.0]);
        let err = check(vec![x], |g, p| {
            let sq = g.mul(p[0], p[0])?;
            g.sum(sq)
        });
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn primitive_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(1, 4));
        let s = g.softmax(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.25; 4]);
        let z1 = g.constant(Tensor::zeros(1, 1));
        let sg = g.sigmoid(z1).unwrap();
        assert_eq!(g.value(sg).data(), &[0.5]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(3, 4));
        let b = g.constant(Tensor::zeros(3, 2));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[3, 4]") && err.contains("[3, 2]"), "{err}");
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn every_primitive_passes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5u64 {
            let m = rng.gen_range(1..5);
            let k = rng.gen_range(1..5);
            let n = rng.gen_range(1..5);
            let a = rand_t(&mut rng, m, k);
            let b = rand_t(&mut rng, k, n);
            let bt = rand_t(&mut rng, n, k);
            let same = rand_t(&mut rng, m, k);
            let row = rand_t(&mut rng, 1, k);
            let col = rand_t(&mut rng, m, 1);
            let s = trial;
            let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>>)> = vec![
                ("matmul", vec![a.clone(), b.clone()], Box::new(move |g, p| { let y = g.matmul(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("matmul_bt", vec![a.clone(), bt.clone()], Box::new(move |g, p| { let y = g.matmul_bt(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("add", vec![a.clone(), same.clone()], Box::new(move |g, p| { let y = g.add(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("add_row", vec![a.clone(), row.clone()], Box::new(move |g, p| { let y = g.add(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("mul", vec![a.clone(), same.clone()], Box::new(move |g, p| { let y = g.mul(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("mul_col", vec![a.clone(), col.clone()], Box::new(move |g, p| { let y = g.mul(p[0], p[1])?; Ok(weighted_sum(g, y, s)) })),
                ("affine", vec![a.clone()], Box::new(move |g, p| { let y = g.affine(p[0], -1.7, 0.4)?; Ok(weighted_sum(g, y, s)) })),
                ("concat", vec![a.clone(), col.clone()], Box::new(move |g, p| { let y = g.concat(&[p[0], p[1]])?; Ok(weighted_sum(g, y, s)) })),
                ("softmax", vec![a.clone()], Box::new(move |g, p| { let y = g.softmax(p[0])?; Ok(weighted_sum(g, y, s)) })),
                ("sigmoid", vec![a.clone()], Box::new(move |g, p| { let y = g.sigmoid(p[0])?; Ok(weighted_sum(g, y, s)) })),
                ("tanh", vec![a.clone()], Box::new(move |g, p| { let y = g.tanh(p[0])?; Ok(weighted_sum(g, y, s)) })),
                ("row_mean", vec![a.clone()], Box::new(move |g, p| {
                    let rows = g.value(p[0]).rows();
                    let y = g.row_mean(p[0], vec![(0..rows).collect(), vec![rows - 1], vec![0, 0]])?;
                    Ok(weighted_sum(g, y, s))
                })),
                ("cross_entropy", vec![a.clone()], Box::new(move |g, p| {
                    let (r, c) = g.value(p[0]).dims2()?;
                    let t: Vec<usize> = (0..r).map(|i| i % c).collect();
                    g.cross_entropy(p[0], &t)
                })),
                ("nll_probs", vec![a.clone()], Box::new(move |g, p| {
                    let (r, c) = g.value(p[0]).dims2()?;
                    let sm = g.softmax(p[0])?;
                    let t: Vec<usize> = (0..r).map(|i| (i + 1) % c).collect();
                    g.nll_probs(sm, &t)
                })),
                ("bce", vec![col.clone()], Box::new(move |g, p| {
                    let r = g.value(p[0]).rows();
                    let y: Vec<f64> = (0..r).map(|i| (i % 2) as f64).collect();
                    g.bce_with_logits(p[0], &y)
                })),
            ];
            for (name, params, f) in cases {
                let err = check(params, |g, p| f(g, p));
                assert!(err < 1e-6, "{name} trial {trial}: {err}");
            }
            // layer norm needs at least two columns to be non-degenerate
            let wide = rand_t(&mut rng, m, k + 1);
            let err = check(vec![wide], |g, p| {
                let y = g.layer_norm(p[0], 1e-5)?;
                Ok(weighted_sum(g, y, s))
            });
            assert!(err < 1e-6, "layer_norm trial {trial}: {err}");
        }
    }

    #[test]
    fn concat_backward_splits_without_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_t(&mut rng, 2, 3);
        let b = rand_t(&mut rng, 2, 2);
        let w = rand_t(&mut rng, 2, 5);
        let mut g = Graph::new();
        let (ai, bi) = (g.param(a.clone()), g.param(b));
        let c = g.concat(&[ai, bi]).unwrap();
        let wi = g.constant(w.clone());
        let p = g.mul(c, wi).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        // unconcatenated formulation: sum(a * w[:, :3])
        let mut g2 = Graph::new();
        let a2 = g2.param(a);
        let wa: Vec<f64> = (0..2).flat_map(|r| w.row(r)[..3].to_vec()).collect();
        let wa = g2.constant(Tensor::matrix(2, 3, wa).unwrap());
        let p2 = g2.mul(a2, wa).unwrap();
        let s2 = g2.sum(p2).unwrap();
        let grads2 = g2.backward(s2).unwrap();
        assert_eq!(grads.get(ai).unwrap(), grads2.get(a2).unwrap());
    }

    #[test]
    fn checked_graph_rejects_overflow() {
        let mut g = Graph::checked();
        let x = g.constant(Tensor::full(1, 1, 1e200));
        let y = g.mul(x, x);
        assert!(y.is_err());
    }

    #[test]
    fn gradcheck_rejects_bad_step() {
        let x = Tensor::zeros(1, 1);
        assert!(grad_check(|g, p| g.sum(p[0]), &[x], 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let n = vals.len();
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(1, n, vals).unwrap());
            let y = g.softmax(x).unwrap();
            let total: f64 = g.value(y).data().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
