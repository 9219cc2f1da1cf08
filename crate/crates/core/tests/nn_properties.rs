use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use woodpest::nn::ops::{
    conv1d_apply, dense_apply, dropout_apply, maxpool1d_apply, softmax, softmax_cross_entropy, DropoutMode,
};
use woodpest::nn::Tensor;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `(batch, steps, channels, kernel, filters)` plus input, kernel and bias values.
fn conv_case() -> impl Strategy<Value = ((usize, usize, usize, usize, usize), Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..3, 1usize..9, 1usize..4, prop::sample::select(vec![1usize, 3, 5]), 1usize..4).prop_flat_map(|d| {
        let (b, t, c, k, f) = d;
        (Just(d), values(b * t * c), values(k * c * f), values(f))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..6, shift in -50.0f64..50.0,
                                      data in values(36)) {
        let z = tensor(&[rows, cols], data[..rows * cols].to_vec());
        let p = softmax(&z).unwrap();
        let shifted = softmax(&z.map(|v| v + shift)).unwrap();
        for (row, srow) in p.data().chunks(cols).zip(shifted.data().chunks(cols)) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in row.iter().zip(srow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_matches_definition(batch in 1usize..5, data in values(10), classes in prop::collection::vec(0usize..2, 5)) {
        let z = tensor(&[batch, 2], data[..2 * batch].to_vec());
        let mut y = Tensor::zeros(&[batch, 2]);
        for (b, &c) in classes.iter().take(batch).enumerate() {
            y.data_mut()[2 * b + c] = 1.0;
        }
        let ce = softmax_cross_entropy(&z, &y).unwrap();
        let mut loss = 0.0;
        for b in 0..batch {
            let (z0, z1) = (z.data()[2 * b], z.data()[2 * b + 1]);
            let c = classes[b];
            let zc = if c == 0 { z0 } else { z1 };
            loss += (z0.exp() + z1.exp()).ln() - zc;
            for k in 0..2 {
                let want = (ce.probs.data()[2 * b + k] - y.data()[2 * b + k]) / batch as f64;
                prop_assert!((ce.grad.data()[2 * b + k] - want).abs() < 1e-12);
            }
        }
        prop_assert!((ce.loss - loss / batch as f64).abs() < 1e-9);
    }

    #[test]
    fn dense_matches_triple_loop(batch in 1usize..4, fan_in in 1usize..6, fan_out in 1usize..6, data in values(30 + 30 + 5)) {
        let x = tensor(&[batch, fan_in], data[..batch * fan_in].to_vec());
        let w = tensor(&[fan_in, fan_out], data[30..30 + fan_in * fan_out].to_vec());
        let b = tensor(&[fan_out], data[60..60 + fan_out].to_vec());
        let y = dense_apply(&x, &w, &b).unwrap();
        for i in 0..batch {
            for o in 0..fan_out {
                let mut acc = b.data()[o];
                for k in 0..fan_in {
                    acc += x.data()[i * fan_in + k] * w.data()[k * fan_out + o];
                }
                prop_assert!((y.data()[i * fan_out + o] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv1d_matches_direct_sum(case in conv_case()) {
        let ((batch, steps, channels, kernel, filters), xs, ks, bs) = case;
        let x = tensor(&[batch, steps, channels], xs);
        let k = tensor(&[kernel, channels, filters], ks);
        let b = tensor(&[filters], bs);
        let y = conv1d_apply(&x, &k, &b).unwrap();
        prop_assert_eq!(y.shape(), &[batch, steps, filters][..]);
        let half = (kernel - 1) as isize / 2;
        for n in 0..batch {
            for t in 0..steps {
                for f in 0..filters {
                    let mut acc = b.data()[f];
                    for j in 0..kernel {
                        let src = t as isize + j as isize - half;
                        if src < 0 || src >= steps as isize {
                            continue;
                        }
                        for c in 0..channels {
                            acc += x.data()[(n * steps + src as usize) * channels + c] * k.data()[(j * channels + c) * filters + f];
                        }
                    }
                    prop_assert!((y.data()[(n * steps + t) * filters + f] - acc).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn maxpool_takes_window_maxima(steps in 1usize..12, width in 1usize..4, data in values(24)) {
        let x = tensor(&[1, steps, 2], data[..2 * steps].to_vec());
        if steps < width {
            prop_assert!(maxpool1d_apply(&x, width).is_err());
            return Ok(());
        }
        let y = maxpool1d_apply(&x, width).unwrap();
        let out_steps = y.shape()[1];
        prop_assert_eq!(out_steps, steps / width);
        for t in 0..out_steps {
            for c in 0..2 {
                let want = (t * width..(t + 1) * width).map(|s| x.data()[s * 2 + c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(y.data()[t * 2 + c], want);
            }
        }
    }

    #[test]
    fn dropout_is_inverted_and_identity_at_inference(rate in 0.0f64..0.9, seed in any::<u64>()) {
        let x = Tensor::filled(&[50, 40], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inf, mask) = dropout_apply(&x, rate, DropoutMode::Infer, &mut rng).unwrap();
        prop_assert!(mask.is_none());
        prop_assert_eq!(inf, x.clone());
        let (y, _) = dropout_apply(&x, rate, DropoutMode::Train, &mut rng).unwrap();
        let scale = 1.0 / (1.0 - rate);
        prop_assert!(y.data().iter().all(|&v| v == 0.0 || (v - scale).abs() < 1e-12));
        // mean of 2000 scaled Bernoulli draws stays near 1
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        let sd = (rate / (1.0 - rate) / y.len() as f64).sqrt();
        prop_assert!((mean - 1.0).abs() <= 5.0 * sd + 1e-12, "mean {}", mean);
    }
}
