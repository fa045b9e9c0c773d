//! Randomized properties of the scheduler, eval-mode batch norm and gradient flow.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use woodvol_autodiff::{CosineWarmRestarts, Graph};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn scheduler_decreases_within_each_cycle(
        base in 1e-4f64..1e-1,
        t0 in 2u64..50,
        t_mult in 1u64..3,
        cycles in 1usize..4,
    ) {
        let s = CosineWarmRestarts { base_lr: base, t0, t_mult, eta_min: base * 1e-3 };
        let mut step = 0;
        for _ in 0..cycles {
            let (_, len) = s.cycle_position(step);
            prop_assert_eq!(s.lr_at(step), base);
            for t in 1..len {
                prop_assert!(s.lr_at(step + t) < s.lr_at(step + t - 1));
            }
            step += len;
        }
    }

    #[test]
    fn eval_batch_norm_is_a_fixed_affine_map(
        x in matrix(6, 3),
        y in matrix(6, 3),
        gamma in matrix(1, 3),
        beta in matrix(1, 3),
        mean in prop::collection::vec(-1.0f64..1.0, 3),
        var in prop::collection::vec(0.1f64..2.0, 3),
        a in -2.0f64..2.0,
    ) {
        let (mean, var) = (Array1::from(mean), Array1::from(var));
        let eval = |input: &Array2<f64>| {
            let mut g = Graph::new();
            let (xv, gv, bv) = (g.constant(input.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
            let out = g.batch_norm_eval(xv, gv, bv, &mean, &var, 1e-5).unwrap();
            g.value(out).clone()
        };
        // rows are transformed independently: no dependence on the other rows
        let fx = eval(&x);
        let mut stacked = x.clone();
        stacked.row_mut(0).assign(&y.row(0));
        prop_assert_eq!(eval(&stacked).row(1).to_owned(), fx.row(1).to_owned());
        // affine: f(a x + (1 - a) y) = a f(x) + (1 - a) f(y)
        let mix = &x * a + &y * (1.0 - a);
        let want = &fx * a + &eval(&y) * (1.0 - a);
        for (p, q) in eval(&mix).iter().zip(want.iter()) {
            prop_assert!((p - q).abs() <= 1e-9 * q.abs().max(1.0));
        }
        // deterministic
        prop_assert_eq!(eval(&x), fx);
    }

    #[test]
    fn detached_inputs_receive_no_gradient(x in matrix(4, 3), w in matrix(3, 2)) {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wv = g.variable(w);
        let h = g.matmul(xv, wv).unwrap();
        let h = g.relu(h);
        let l = g.mse(h, Array2::zeros((4, 2))).unwrap();
        g.backward(l).unwrap();
        prop_assert!(g.grad(xv).is_none());
        prop_assert!(g.grad(wv).is_some());
    }
}
