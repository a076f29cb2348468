//! Central-difference gradient checking.

use super::{Tape, Tensor, Var};

/// Maximum relative error between the reverse-mode gradient of `f` at `x`
/// and central differences with step `h`.
///
/// `f` must build a scalar loss on the given tape from the given input.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)` per element.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    grad_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs; checks every input's gradient.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).expect("grad_check backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let l = f(&mut t, &vs);
        t.value(l).item()
    };

    let mut worst = 0.0f64;
    for (xi, a) in analytic.iter().enumerate() {
        for i in 0..xs[xi].numel() {
            let mut plus = xs.to_vec();
            plus[xi].data_mut()[i] += h;
            let mut minus = xs.to_vec();
            minus[xi].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let av = a.data()[i];
            let rel = (av - numeric).abs() / av.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::super::conv::ConvSpec;
    use super::super::lstm::lstm_cell;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;
    const STEP: f64 = 1e-5;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1234)
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect())
    }

    /// Offset away from zero so relu/prelu kinks stay clear of the probe.
    fn random_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.1..0.9);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn elementwise_unary_primitives() {
        let mut r = rng();
        let x = random_off_zero(&[3, 4], &mut r);
        let pos = x.map(|v| v.abs() + 0.2);

        type Case<'a> = (&'a str, Box<dyn Fn(&mut Tape, Var) -> Var>, &'a Tensor);
        let cases: Vec<Case> = vec![
            ("relu", Box::new(|t: &mut Tape, v| { let y = t.relu(v); t.sum_all(y) }), &x),
            ("sigmoid", Box::new(|t: &mut Tape, v| { let y = t.sigmoid(v); t.sum_all(y) }), &x),
            ("tanh", Box::new(|t: &mut Tape, v| { let y = t.tanh(v); t.sum_all(y) }), &x),
            ("sqrt", Box::new(|t: &mut Tape, v| { let y = t.sqrt(v); t.sum_all(y) }), &pos),
            ("recip", Box::new(|t: &mut Tape, v| { let y = t.recip(v); t.sum_all(y) }), &pos),
            ("ln", Box::new(|t: &mut Tape, v| { let y = t.ln(v); t.sum_all(y) }), &pos),
            ("scale", Box::new(|t: &mut Tape, v| { let y = t.scale(v, -2.5); t.sum_all(y) }), &x),
            (
                "add_scalar",
                Box::new(|t: &mut Tape, v| {
                    let y = t.add_scalar(v, 1.5);
                    let z = t.mul(y, y).unwrap();
                    t.sum_all(z)
                }),
                &x,
            ),
        ];
        for (name, f, input) in cases {
            let err = grad_check(f, input, STEP);
            assert!(err < TOL, "{name}: rel err {err}");
        }
    }

    #[test]
    fn binary_and_broadcast_primitives() {
        let mut r = rng();
        let a = random(&[3, 4], &mut r);
        let b = random(&[3, 4], &mut r);
        let col = random(&[3, 1], &mut r);
        let scalar = random(&[1, 1], &mut r);

        let err = grad_check_multi(
            |t, vs| {
                let s = t.add(vs[0], vs[1]).unwrap();
                let p = t.mul(s, vs[2]).unwrap(); // (3,1) broadcast
                let d = t.sub(p, vs[3]).unwrap(); // (1,1) broadcast
                let q = t.mul(d, d).unwrap();
                t.sum_all(q)
            },
            &[a, b, col, scalar],
            STEP,
        );
        assert!(err < TOL, "broadcast chain: rel err {err}");
    }

    #[test]
    fn matmul_primitive() {
        let mut r = rng();
        let a = random(&[3, 4], &mut r);
        let b = random(&[4, 2], &mut r);
        let err = grad_check_multi(
            |t, vs| {
                let y = t.matmul(vs[0], vs[1]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum_all(sq)
            },
            &[a, b],
            STEP,
        );
        assert!(err < TOL, "matmul: rel err {err}");
    }

    #[test]
    fn conv1d_variants() {
        let mut r = rng();
        for (spec, c_in, c_out, k) in [
            (ConvSpec::plain(1), 2, 3, 3),
            (ConvSpec::plain(2), 2, 3, 4),
            (ConvSpec { stride: 1, dilation: 3, groups: 1, pad_left: 6, pad_right: 0 }, 2, 2, 3),
            (ConvSpec { stride: 1, dilation: 2, groups: 2, pad_left: 2, pad_right: 2 }, 4, 4, 3),
        ] {
            let x = random(&[c_in, 12], &mut r);
            let w = random(&[c_out, c_in / spec.groups, k], &mut r);
            let b = random(&[c_out], &mut r);
            let err = grad_check_multi(
                |t, vs| {
                    let y = t.conv1d(vs[0], vs[1], Some(vs[2]), spec).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                },
                &[x, w, b],
                STEP,
            );
            assert!(err < TOL, "conv1d {spec:?}: rel err {err}");
        }
    }

    #[test]
    fn conv_transpose1d_primitive() {
        let mut r = rng();
        let x = random(&[3, 6], &mut r);
        let w = random(&[3, 2, 4], &mut r);
        let b = random(&[2], &mut r);
        let err = grad_check_multi(
            |t, vs| {
                let y = t.conv_transpose1d(vs[0], vs[1], Some(vs[2]), 2).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum_all(sq)
            },
            &[x, w, b],
            STEP,
        );
        assert!(err < TOL, "conv_transpose1d: rel err {err}");
    }

    #[test]
    fn prelu_primitive() {
        let mut r = rng();
        let x = random_off_zero(&[2, 5], &mut r);
        let slope = Tensor::scalar(0.25);
        let err = grad_check_multi(
            |t, vs| {
                let y = t.prelu(vs[0], vs[1]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum_all(sq)
            },
            &[x, slope],
            STEP,
        );
        assert!(err < TOL, "prelu: rel err {err}");
    }

    #[test]
    fn reductions_and_layout_primitives() {
        let mut r = rng();
        let x = random(&[2, 3, 4], &mut r);
        let err = grad_check(
            |t, v| {
                let s = t.sum_axis(v, 1).unwrap();
                let m = t.mean_axis(v, 2).unwrap();
                let sm = t.mul(s, m).unwrap(); // broadcast (2,1,4)*(2,3,1)
                let c = t.cumsum(sm, 2).unwrap();
                let p = t.permute(c, &[2, 0, 1]).unwrap();
                let rs = t.reshape(p, &[4, 6]).unwrap();
                let sl = t.slice(rs, 0, 1, 2).unwrap();
                let m2 = t.mean_all(sl);
                let s2 = t.sum_all(rs);
                let both = t.add(m2, s2).unwrap();
                t.sum_all(both)
            },
            &x,
            STEP,
        );
        assert!(err < TOL, "reductions/layout: rel err {err}");
    }

    #[test]
    fn concat_chunk_unchunk_primitives() {
        let mut r = rng();
        let a = random(&[2, 5], &mut r);
        let b = random(&[2, 3], &mut r);
        let err = grad_check_multi(
            |t, vs| {
                let c = t.concat(&[vs[0], vs[1]], 1).unwrap();
                let ch = t.chunk(c, 4, 2).unwrap();
                let sq = t.mul(ch, ch).unwrap();
                let back = t.unchunk(sq, 2, 8).unwrap();
                t.sum_all(back)
            },
            &[a, b],
            STEP,
        );
        assert!(err < TOL, "concat/chunk/unchunk: rel err {err}");
    }

    #[test]
    fn lstm_seq_gradients() {
        let mut r = rng();
        let (t_len, batch, input, hidden) = (5, 2, 3, 4);
        let x = random(&[t_len, batch, input], &mut r);
        let w_ih = random(&[4 * hidden, input], &mut r);
        let w_hh = random(&[4 * hidden, hidden], &mut r);
        let bias = random(&[4 * hidden], &mut r);
        for reverse in [false, true] {
            let err = grad_check_multi(
                |t, vs| {
                    let h = t.lstm_seq(vs[0], vs[1], vs[2], vs[3], reverse).unwrap();
                    let sq = t.mul(h, h).unwrap();
                    t.sum_all(sq)
                },
                &[x.clone(), w_ih.clone(), w_hh.clone(), bias.clone()],
                STEP,
            );
            assert!(err < TOL, "lstm_seq reverse={reverse}: rel err {err}");
        }
    }

    #[test]
    fn lstm_cell_composition_gradients() {
        let mut r = rng();
        let (batch, input, hidden) = (2, 3, 2);
        let x = random(&[batch, input], &mut r);
        let h0 = random(&[batch, hidden], &mut r);
        let c0 = random(&[batch, hidden], &mut r);
        let w_ih = random(&[4 * hidden, input], &mut r);
        let w_hh = random(&[4 * hidden, hidden], &mut r);
        let bias = random(&[4 * hidden], &mut r);
        let err = grad_check_multi(
            |t, vs| {
                let (h, c) = lstm_cell(t, vs[0], vs[1], vs[2], vs[3], vs[4], vs[5]).unwrap();
                let hc = t.mul(h, c).unwrap();
                t.sum_all(hc)
            },
            &[x, h0, c0, w_ih, w_hh, bias],
            STEP,
        );
        assert!(err < TOL, "lstm_cell: rel err {err}");
    }

    #[test]
    fn conv_relu_chain() {
        let mut r = rng();
        let x = random(&[2, 10], &mut r);
        let w = random(&[3, 2, 3], &mut r);
        let err = grad_check_multi(
            |t, vs| {
                let y = t.conv1d(vs[0], vs[1], None, ConvSpec::plain(1)).unwrap();
                let a = t.relu(y);
                let sq = t.mul(a, a).unwrap();
                t.mean_all(sq)
            },
            &[x, w],
            STEP,
        );
        assert!(err < TOL, "conv+relu: rel err {err}");
    }
}
