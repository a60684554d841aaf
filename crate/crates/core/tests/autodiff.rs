//! Gradient verification: every tape operation (and the composed blocks)
//! against central finite differences, plus the op-level contracts.

use stampnet_core::gradcheck::{finite_diff_grad_check, DEFAULT_H};
use stampnet_core::nn::{register_params, ResSeBlock, ResSeBlockConfig};
use stampnet_core::rng::Rng;
use stampnet_core::tape::{BatchNormState, BnMode, Tape, Var};
use stampnet_core::{ConvGeometry, Error, Tensor};
use std::cell::RefCell;

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.next_symmetric(scale)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Run the checker and require every checked coordinate within tolerance.
fn check<F>(f: F, point: &Tensor, what: &str)
where
    F: Fn(&mut Tape, Var) -> Result<Var, Error>,
{
    let report = finite_diff_grad_check(f, point, DEFAULT_H).unwrap();
    assert!(report.checked > 0, "{what}: no coordinates checked");
    assert!(
        report.max_rel_err < TOL,
        "{what}: max relative error {} (checked {}, skipped {})",
        report.max_rel_err,
        report.checked,
        report.skipped.len()
    );
}

#[test]
fn quadratic_is_exact_to_rounding() {
    // f(x) = sum(x * x): central differences are exact for quadratics.
    let point = Tensor::from_vec(vec![3], vec![3.0, -1.5, 0.25]).unwrap();
    let report = finite_diff_grad_check(
        |tape, x| {
            let sq = tape.square(x);
            Ok(tape.sum_all(sq))
        },
        &point,
        DEFAULT_H,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-10, "rel err {}", report.max_rel_err);
    assert!(report.skipped.is_empty());
}

#[test]
fn relu_kink_is_flagged_and_skipped() {
    // One coordinate sits exactly on the ReLU kink.
    let point = Tensor::from_vec(vec![3], vec![0.0, 1.0, -2.0]).unwrap();
    let report = finite_diff_grad_check(
        |tape, x| {
            let r = tape.relu(x);
            Ok(tape.sum_all(r))
        },
        &point,
        DEFAULT_H,
    )
    .unwrap();
    assert_eq!(report.skipped, vec![0]);
    assert_eq!(report.checked, 2);
    assert!(report.max_rel_err < TOL);
}

#[test]
fn elementwise_and_reduction_ops() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(seed);
        let p = rand_tensor(&mut rng, vec![2, 7], 1.0);
        check(
            |t, x| {
                let r = t.relu(x);
                Ok(t.mean_all(r))
            },
            &p,
            "relu",
        );
        check(
            |t, x| {
                let s = t.sigmoid(x);
                Ok(t.sum_all(s))
            },
            &p,
            "sigmoid",
        );
        check(
            |t, x| {
                let s = t.square(x);
                Ok(t.mean_all(s))
            },
            &p,
            "square",
        );
        let other = rand_tensor(&mut rng, vec![2, 7], 1.0);
        check(
            |t, x| {
                let o = t.leaf(other.clone(), false);
                let s = t.add(x, o)?;
                let s = t.square(s);
                Ok(t.mean_all(s))
            },
            &p,
            "add",
        );
        let target = rand_tensor(&mut rng, vec![2, 7], 1.0);
        check(|t, x| t.mse_loss(x, &target), &p, "mse_loss");
    }
}

#[test]
fn linear_all_roles() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(100 + seed);
        let x = rand_tensor(&mut rng, vec![3, 4], 1.0);
        let w = rand_tensor(&mut rng, vec![5, 4], 1.0);
        let b = rand_tensor(&mut rng, vec![5], 1.0);
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        check(
            |t, xv| {
                let wv = t.leaf(wc.clone(), false);
                let bv = t.leaf(bc.clone(), false);
                let y = t.linear(xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &x,
            "linear wrt input",
        );
        let (xc2, bc2) = (xc.clone(), bc.clone());
        check(
            |t, wv| {
                let xv = t.leaf(xc2.clone(), false);
                let bv = t.leaf(bc2.clone(), false);
                let y = t.linear(xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &w,
            "linear wrt weight",
        );
        check(
            |t, bv| {
                let xv = t.leaf(xc.clone(), false);
                let wv = t.leaf(wc.clone(), false);
                let y = t.linear(xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &b,
            "linear wrt bias",
        );
    }
}

fn conv_roles(transposed: bool) {
    for seed in 0..5u64 {
        let mut rng = Rng::new(200 + seed);
        let geom = ConvGeometry::new((3, 2), (2, 1), (1, 1)).unwrap();
        let x = rand_tensor(&mut rng, vec![2, 3, 5, 6], 1.0);
        let w = if transposed {
            rand_tensor(&mut rng, vec![3, 4, 3, 2], 0.5)
        } else {
            rand_tensor(&mut rng, vec![4, 3, 3, 2], 0.5)
        };
        let b = rand_tensor(&mut rng, vec![4], 0.5);
        let name = if transposed { "conv2d_transpose" } else { "conv2d" };
        let apply = move |t: &mut Tape, xv: Var, wv: Var, bv: Var| {
            if transposed {
                t.conv2d_transpose(xv, wv, bv, geom)
            } else {
                t.conv2d(xv, wv, bv, geom)
            }
        };
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        check(
            |t, xv| {
                let wv = t.leaf(wc.clone(), false);
                let bv = t.leaf(bc.clone(), false);
                let y = apply(t, xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &x,
            &format!("{name} wrt input"),
        );
        let (xc2, bc2) = (xc.clone(), bc.clone());
        check(
            |t, wv| {
                let xv = t.leaf(xc2.clone(), false);
                let bv = t.leaf(bc2.clone(), false);
                let y = apply(t, xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &w,
            &format!("{name} wrt weight"),
        );
        check(
            |t, bv| {
                let xv = t.leaf(xc.clone(), false);
                let wv = t.leaf(wc.clone(), false);
                let y = apply(t, xv, wv, bv)?;
                Ok(t.mean_all(y))
            },
            &b,
            &format!("{name} wrt bias"),
        );
    }
}

#[test]
fn conv2d_all_roles() {
    conv_roles(false);
}

#[test]
fn conv2d_transpose_all_roles() {
    conv_roles(true);
}

#[test]
fn batchnorm_train_and_eval_roles() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(300 + seed);
        let x = rand_tensor(&mut rng, vec![2, 3, 4, 4], 1.0);
        let gamma = rand_tensor(&mut rng, vec![3], 1.0);
        let beta = rand_tensor(&mut rng, vec![3], 1.0);
        for mode in [BnMode::Train, BnMode::Eval] {
            // Eval mode needs populated running moments.
            let mut seeded = BatchNormState::new(3);
            {
                let mut warm = Tape::new();
                let xv = warm.leaf(x.clone(), false);
                let gv = warm.leaf(gamma.clone(), false);
                let bv = warm.leaf(beta.clone(), false);
                warm.batchnorm2d(xv, gv, bv, &mut seeded, BnMode::Train).unwrap();
            }
            let state = RefCell::new(seeded);
            let what = format!("batchnorm {mode:?}");
            // A random target keeps the loss sensitive to the input: the
            // plain mean of the squared normalized output is invariant to
            // the batch by construction and has no gradient to resolve.
            let target = rand_tensor(&mut rng, vec![2, 3, 4, 4], 1.0);
            let (gc, bc, tc) = (gamma.clone(), beta.clone(), target.clone());
            let st = &state;
            check(
                |t, xv| {
                    let gv = t.leaf(gc.clone(), false);
                    let bv = t.leaf(bc.clone(), false);
                    let y = t.batchnorm2d(xv, gv, bv, &mut st.borrow_mut(), mode)?;
                    t.mse_loss(y, &tc)
                },
                &x,
                &format!("{what} wrt input"),
            );
            let xc = x.clone();
            let bc2 = beta.clone();
            let tc2 = target.clone();
            check(
                |t, gv| {
                    let xv = t.leaf(xc.clone(), false);
                    let bv = t.leaf(bc2.clone(), false);
                    let y = t.batchnorm2d(xv, gv, bv, &mut st.borrow_mut(), mode)?;
                    t.mse_loss(y, &tc2)
                },
                &gamma,
                &format!("{what} wrt gamma"),
            );
            let xc2 = x.clone();
            let gc2 = gamma.clone();
            check(
                |t, bv| {
                    let xv = t.leaf(xc2.clone(), false);
                    let gv = t.leaf(gc2.clone(), false);
                    let y = t.batchnorm2d(xv, gv, bv, &mut st.borrow_mut(), mode)?;
                    t.mse_loss(y, &target)
                },
                &beta,
                &format!("{what} wrt beta"),
            );
        }
    }
}

#[test]
fn pool_concat_broadcast() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(400 + seed);
        let x = rand_tensor(&mut rng, vec![2, 3, 4, 5], 1.0);
        check(
            |t, xv| {
                let p = t.global_avg_pool(xv)?;
                let p = t.square(p);
                Ok(t.sum_all(p))
            },
            &x,
            "global_avg_pool",
        );
        let other = rand_tensor(&mut rng, vec![2, 2, 4, 5], 1.0);
        check(
            |t, xv| {
                let o = t.leaf(other.clone(), false);
                let c = t.concat_channels(xv, o)?;
                let c = t.square(c);
                Ok(t.mean_all(c))
            },
            &x,
            "concat_channels lhs",
        );
        let e = rand_tensor(&mut rng, vec![2, 3], 1.0);
        check(
            |t, ev| {
                let b = t.broadcast_channels(ev, 4, 5)?;
                let b = t.square(b);
                Ok(t.mean_all(b))
            },
            &e,
            "broadcast_channels",
        );
    }
}

#[test]
fn composed_conv_bn_relu_pool_graph() {
    for seed in 0..5u64 {
        let mut rng = Rng::new(500 + seed);
        let x = rand_tensor(&mut rng, vec![2, 2, 6, 6], 1.0);
        let w = rand_tensor(&mut rng, vec![3, 2, 3, 3], 0.5);
        let b = rand_tensor(&mut rng, vec![3], 0.2);
        let gamma = rand_tensor(&mut rng, vec![3], 1.0);
        let beta = rand_tensor(&mut rng, vec![3], 0.3);
        let geom = ConvGeometry::new((3, 3), (1, 1), (1, 1)).unwrap();
        let state = RefCell::new(BatchNormState::new(3));
        check(
            |t, xv| {
                let wv = t.leaf(w.clone(), false);
                let bv = t.leaf(b.clone(), false);
                let gv = t.leaf(gamma.clone(), false);
                let bev = t.leaf(beta.clone(), false);
                let y = t.conv2d(xv, wv, bv, geom)?;
                let y = t.batchnorm2d(y, gv, bev, &mut state.borrow_mut(), BnMode::Train)?;
                let y = t.relu(y);
                let p = t.global_avg_pool(y)?;
                let p = t.square(p);
                Ok(t.sum_all(p))
            },
            &x,
            "conv->bn->relu->pool",
        );
    }
}

#[test]
fn res_se_block_full_check() {
    // Gradient through the complete residual SE block, input of 4x4x8.
    for seed in 0..5u64 {
        let (block, params, bn_count) =
            ResSeBlock::standalone(ResSeBlockConfig { channels: 8, se_reduction: 16 }, 900 + seed)
                .unwrap();
        let mut rng = Rng::new(700 + seed);
        let x = rand_tensor(&mut rng, vec![1, 8, 4, 4], 1.0);
        let states = RefCell::new(vec![BatchNormState::new(8); bn_count]);
        check(
            |t, xv| {
                let vars = register_params(t, &params, false);
                let y = block.forward(t, &vars, &mut states.borrow_mut(), BnMode::Train, xv)?;
                let y = t.square(y);
                Ok(t.mean_all(y))
            },
            &x,
            "res-se block wrt input",
        );
    }
}

#[test]
fn backward_examples_and_errors() {
    // d(x^2)/dx at 3 is 6.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.square(x);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);

    // Dead ReLU: mse(relu(x), 0) at x = -1 has zero gradient.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-1.0), true);
    let r = tape.relu(x);
    let loss = tape.mse_loss(r, &Tensor::scalar(0.0)).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0]);

    // Unused parameters receive explicit zero gradients.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let unused = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap(), true);
    let y = tape.square(x);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);

    // Backward demands a scalar.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
    let y = tape.square(x);
    assert!(matches!(tape.backward(y), Err(Error::NotScalar { .. })));

    // A consumed tape refuses a second traversal.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0), true);
    let y = tape.square(x);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
}

#[test]
fn conv_identity_and_ones_cases() {
    // 1x1 kernel, identity across channels: output equals input.
    let mut tape = Tape::new();
    let x_t = rand_tensor(&mut Rng::new(1), vec![1, 2, 3, 3], 1.0);
    let x = tape.leaf(x_t.clone(), false);
    let w = tape.leaf(
        Tensor::from_vec(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        false,
    );
    let b = tape.leaf(Tensor::zeros(vec![2]), false);
    let geom = ConvGeometry::new((1, 1), (1, 1), (0, 0)).unwrap();
    let y = tape.conv2d(x, w, b, geom).unwrap();
    assert_eq!(tape.value(y), &x_t);
    // Same for the transposed op (weight layout [cin, cout, 1, 1]).
    let yt = tape.conv2d_transpose(x, w, b, geom).unwrap();
    assert_eq!(tape.value(yt), &x_t);

    // 3x3 ones through a single 2x2 ones kernel: every output entry 4.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
    let w = tape.leaf(Tensor::full(vec![1, 1, 2, 2], 1.0), false);
    let b = tape.leaf(Tensor::zeros(vec![1]), false);
    let geom = ConvGeometry::new((2, 2), (1, 1), (0, 0)).unwrap();
    let y = tape.conv2d(x, w, b, geom).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
    assert!(tape.value(y).data().iter().all(|&v| v == 4.0));
}

#[test]
fn conv_linearity() {
    let mut rng = Rng::new(31);
    let geom = ConvGeometry::new((3, 3), (2, 2), (1, 1)).unwrap();
    let x = rand_tensor(&mut rng, vec![1, 2, 7, 7], 1.0);
    let z = rand_tensor(&mut rng, vec![1, 2, 7, 7], 1.0);
    let w_t = rand_tensor(&mut rng, vec![3, 2, 3, 3], 1.0);
    let (a, b) = (0.7, -1.3);
    let conv = |input: Tensor| {
        let mut tape = Tape::new();
        let x = tape.leaf(input, false);
        let w = tape.leaf(w_t.clone(), false);
        let bias = tape.leaf(Tensor::zeros(vec![3]), false);
        let y = tape.conv2d(x, w, bias, geom).unwrap();
        tape.value(y).clone()
    };
    let lhs = conv(x.scaled(a).axpy(b, &z).unwrap());
    let rhs = conv(x).scaled(a).axpy(b, &conv(z)).unwrap();
    for (l, r) in lhs.data().iter().zip(rhs.data()) {
        assert!((l - r).abs() < 1e-12, "linearity violated: {l} vs {r}");
    }
}

#[test]
fn conv_then_transpose_restores_extent_when_aligned() {
    let mut rng = Rng::new(17);
    for _ in 0..40 {
        let h = 6 + rng.next_below(20) as usize;
        let k = 1 + rng.next_below(4) as usize;
        let s = 1 + rng.next_below(3) as usize;
        let p = rng.next_below(3) as usize;
        if h + 2 * p < k || (h + 2 * p - k) % s != 0 {
            continue;
        }
        let geom = ConvGeometry::new((k, k), (s, s), (p, p)).unwrap();
        let (oh, _) = geom.out_extent((h, h)).unwrap();
        let (rh, _) = geom.out_extent_transposed((oh, oh)).unwrap();
        assert_eq!(rh, h, "h={h} k={k} s={s} p={p}");
    }
}

#[test]
fn conv_adjoint_identity_via_tape() {
    // <conv(x; W), y> == <x, conv_transpose(y; W)> for shared weights.
    let mut rng = Rng::new(91);
    let mut round = 0;
    while round < 20 {
        let cin = 1 + rng.next_below(3) as usize;
        let cout = 1 + rng.next_below(3) as usize;
        let h = 5 + rng.next_below(8) as usize;
        let k = 1 + rng.next_below(3) as usize;
        let s = 1 + rng.next_below(2) as usize;
        let p = rng.next_below(2) as usize;
        if h + 2 * p < k || (h + 2 * p - k) % s != 0 {
            // The transpose direction restores the input extent only for
            // aligned geometries; only those define the adjoint pairing.
            continue;
        }
        round += 1;
        let geom = ConvGeometry::new((k, k), (s, s), (p, p)).unwrap();
        let (oh, ow) = geom.out_extent((h, h)).unwrap();
        let x = rand_tensor(&mut rng, vec![1, cin, h, h], 1.0);
        let w_flat = rand_tensor(&mut rng, vec![cout * cin * k * k], 1.0);
        let y = rand_tensor(&mut rng, vec![1, cout, oh, ow], 1.0);

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let wv = tape.leaf(
            Tensor::from_vec(vec![cout, cin, k, k], w_flat.data().to_vec()).unwrap(),
            false,
        );
        let b0 = tape.leaf(Tensor::zeros(vec![cout]), false);
        let cx = tape.conv2d(xv, wv, b0, geom).unwrap();
        let lhs: f64 = tape.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();

        // The same buffer read as [cin_t = cout, cout_t = cin, kh, kw].
        let yv = tape.leaf(y, false);
        let wt = tape.leaf(
            Tensor::from_vec(vec![cout, cin, k, k], w_flat.data().to_vec()).unwrap(),
            false,
        );
        let b1 = tape.leaf(Tensor::zeros(vec![cin]), false);
        let aty = tape.conv2d_transpose(yv, wt, b1, geom).unwrap();
        assert_eq!(tape.value(aty).shape(), x.shape());
        let rhs: f64 = tape.value(aty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();

        let denom = lhs.abs().max(rhs.abs()).max(1e-30);
        assert!((lhs - rhs).abs() / denom < 1e-10, "round {round}: {lhs} vs {rhs}");
    }
}
