use super::*;
use crate::autodiff::{LossNorm, Padding, ParamId};
use crate::Shape4;

fn small(variant: Variant) -> ArchitectureConfig {
    ArchitectureConfig {
        cond_channels: 2,
        target_channels: 3,
        base_channels: 4,
        channel_multipliers: alloc::vec![1, 2],
        variant,
        attention_levels: alloc::vec![0, 1],
        blocks_per_level: 1,
        norm_groups: 2,
        embedding_dim: 8,
        padding: Padding::Zero,
    }
}

fn inputs(n: usize, hw: usize, seed: u64) -> (ImageTensor<f64>, ImageTensor<f64>) {
    let mut rng = RandomSource::seed_from_u64(seed);
    (
        ImageTensor::randn(Shape4::new(n, 2, hw, hw), &mut rng),
        ImageTensor::randn(Shape4::new(n, 3, hw, hw), &mut rng),
    )
}

#[test]
fn output_shape_matches_target() {
    for v in Variant::ALL {
        let m = DenoiserModel::<f64>::new(small(v), &mut RandomSource::seed_from_u64(1)).unwrap();
        let (x, y) = inputs(2, 8, 2);
        let out = m.forward(&x, &y, 0.3).unwrap();
        assert_eq!(out.shape(), y.shape(), "{v:?}");
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(m.in_channels(), 5);
    }
}

#[test]
fn forward_is_deterministic_and_chunked_consistently() {
    let m = DenoiserModel::<f64>::new(small(Variant::GlobalSelfAttention), &mut RandomSource::seed_from_u64(1)).unwrap();
    let (x, y) = inputs(INFERENCE_CHUNK + 3, 4, 3);
    let gammas: Vec<f64> = (0..y.shape().n).map(|i| 0.01 + i as f64 / 50.0).collect();
    let a = m.predict_noise(&x, &y, &gammas).unwrap();
    assert_eq!(a, m.predict_noise(&x, &y, &gammas).unwrap());
    let last = y.shape().n - 1;
    let single = m.net.forward(&m.params, &x.item(last), &y.item(last), &gammas[last..]).unwrap();
    assert!(single.max_abs_diff(&a.item(last)).unwrap() < 1e-12);
}

#[test]
fn zero_output_layer_gives_zero_output() {
    let mut m = DenoiserModel::<f64>::new(small(Variant::LocalSelfAttention), &mut RandomSource::seed_from_u64(4)).unwrap();
    let (w, b) = m.net.output_layer();
    m.params.get_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
    m.params.get_mut(b).data.iter_mut().for_each(|v| *v = 0.0);
    let (x, y) = inputs(1, 8, 5);
    assert!(m.forward(&x, &y, 0.5).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn rejects_bad_inputs() {
    let m = DenoiserModel::<f64>::new(small(Variant::GlobalSelfAttention), &mut RandomSource::seed_from_u64(1)).unwrap();
    let (x, y) = inputs(1, 6, 1);
    assert!(m.forward(&x.slice(0, 1), &y, 0.5).is_ok());
    let (x, y) = inputs(1, 5, 1);
    assert!(matches!(m.forward(&x, &y, 0.5), Err(Error::InvalidShape(_))));
    let (_, y) = inputs(1, 4, 1);
    let wrong = ImageTensor::zeros(Shape4::new(1, 3, 4, 4));
    assert!(matches!(m.forward(&wrong, &y, 0.5), Err(Error::ShapeMismatch { .. })));
    assert!(m.forward(&ImageTensor::zeros(Shape4::new(1, 2, 4, 4)), &y, 0.0).is_err());
    // Local attention needs quadrants at every attention level.
    let local = DenoiserModel::<f64>::new(small(Variant::LocalSelfAttention), &mut RandomSource::seed_from_u64(1)).unwrap();
    let (x, y) = inputs(1, 6, 1);
    assert!(local.forward(&x, &y, 0.5).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let mut c = small(Variant::GlobalSelfAttention);
    c.channel_multipliers = alloc::vec![1];
    assert!(UNet::new(c).is_err());
    let mut c = small(Variant::GlobalSelfAttention);
    c.attention_levels = alloc::vec![2];
    assert!(UNet::new(c).is_err());
    let mut c = small(Variant::GlobalSelfAttention);
    c.embedding_dim = 7;
    assert!(UNet::new(c).is_err());
}

fn loss_at(net: &UNet, params: &ParamStore<f64>, x: &ImageTensor<f64>, y: &ImageTensor<f64>, target: &[f64], g: &[f64]) -> f64 {
    let mut tape = Tape::new(params);
    let xv = tape.input_image(x.clone());
    let yv = tape.input_image(y.clone());
    let out = net.forward_tape(&mut tape, xv, yv, g).unwrap();
    let l = tape.lp_loss(out, target, None, LossNorm::L2);
    tape.scalar(l)
}

#[test]
fn gradients_match_finite_differences() {
    for v in Variant::ALL {
        let cfg = small(v);
        let net = UNet::new(cfg).unwrap();
        let mut rng = RandomSource::seed_from_u64(11);
        let mut params = net.init_params::<f64>(&mut rng);
        // Non-trivial norm affine parameters and biases.
        for p in params.iter_mut() {
            for d in p.data.iter_mut() {
                *d += 0.1 * rng.normal();
            }
        }
        let (x, y) = inputs(2, 4, 12);
        let target: Vec<f64> = (0..y.data().len()).map(|_| rng.normal()).collect();
        let gammas = [0.2, 0.9];

        let mut tape = Tape::new(&params);
        let xv = tape.input_image(x.clone());
        let yv = tape.input_image(y.clone());
        let out = net.forward_tape(&mut tape, xv, yv, &gammas).unwrap();
        let l = tape.lp_loss(out, &target, None, LossNorm::L2);
        let grads = tape.backward(l);

        let total = params.num_scalars();
        let h = 1e-5;
        for _ in 0..20 {
            let mut k = rng.below(total);
            let mut pid = 0;
            while k >= params.get(ParamId(pid)).data.len() {
                k -= params.get(ParamId(pid)).data.len();
                pid += 1;
            }
            let id = ParamId(pid);
            let analytic = grads.get(id).map_or(0.0, |g| g[k]);
            let orig = params.get(id).data[k];
            params.get_mut(id).data[k] = orig + h;
            let lp = loss_at(&net, &params, &x, &y, &target, &gammas);
            params.get_mut(id).data[k] = orig - h;
            let lm = loss_at(&net, &params, &x, &y, &target, &gammas);
            params.get_mut(id).data[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            assert!(rel < 1e-4, "{v:?} {}[{k}]: analytic {analytic} numeric {numeric} rel {rel}", params.get(id).name);
        }
    }
}

#[test]
fn parameter_count_ordering() {
    let count = |v| {
        let mut c = ArchitectureConfig::default();
        c.variant = v;
        UNet::new(c).unwrap().parameter_count()
    };
    let global = count(Variant::GlobalSelfAttention);
    let local = count(Variant::LocalSelfAttention);
    let more = count(Variant::MoreResNetBlocks);
    let dilated = count(Variant::DilatedConvolutions);
    assert_eq!(global, local);
    assert_eq!(more, dilated);
    assert!(more > global, "{more} vs {global}");
    let spec_total: usize = UNet::new(ArchitectureConfig::default())
        .unwrap()
        .param_specs()
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    assert_eq!(spec_total, global);
    let store = UNet::new(ArchitectureConfig::default()).unwrap().init_params::<f32>(&mut RandomSource::seed_from_u64(0));
    assert_eq!(store.num_scalars(), global);
}

fn roll(t: &ImageTensor<f64>, dy: usize, dx: usize) -> ImageTensor<f64> {
    let s = t.shape();
    let mut out = t.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    out.set(n, c, (y + dy) % s.h, (x + dx) % s.w, t.at(n, c, y, x));
                }
            }
        }
    }
    out
}

#[test]
fn circular_padding_is_translation_consistent() {
    for v in [Variant::MoreResNetBlocks, Variant::DilatedConvolutions] {
        let mut cfg = small(v);
        cfg.padding = Padding::Circular;
        let stride = cfg.spatial_multiple();
        let m = DenoiserModel::<f64>::new(cfg, &mut RandomSource::seed_from_u64(21)).unwrap();
        let (x, y) = inputs(1, 8, 22);
        let base = m.forward(&x, &y, 0.4).unwrap();
        let shifted = m.forward(&roll(&x, stride, 2 * stride), &roll(&y, stride, 2 * stride), 0.4).unwrap();
        assert!(shifted.max_abs_diff(&roll(&base, stride, 2 * stride)).unwrap() < 1e-10, "{v:?}");
    }
}

#[test]
fn gamma_embedding_properties() {
    let m = DenoiserModel::<f64>::new(ArchitectureConfig::default(), &mut RandomSource::seed_from_u64(3)).unwrap();
    let gamma_t = crate::NoiseSchedule::linear(1e-4, 0.09, 1000).unwrap().gamma(1000);
    let grid = [gamma_t, 1e-3, 0.1, 0.5, 0.9, 0.999, 1.0];
    let embs: Vec<Vec<f64>> = grid.iter().map(|&g| m.gamma_embedding(g).unwrap()).collect();
    for i in 0..grid.len() {
        assert_eq!(embs[i].len(), m.net.temb_dim());
        assert!(embs[i].iter().map(|v| v * v).sum::<f64>().is_finite());
        for j in 0..i {
            let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(d > 0.0, "{} vs {}", grid[i], grid[j]);
        }
    }
    assert_eq!(m.gamma_embedding(0.3).unwrap(), m.gamma_embedding(0.3).unwrap());
    assert!(sinusoidal_embedding(0.5, 3).is_err());
    assert!(sinusoidal_embedding(0.5, 0).is_err());
    assert!(sinusoidal_embedding(0.0, 4).is_err());
    assert!(sinusoidal_embedding(1.1, 4).is_err());
    assert_eq!(sinusoidal_embedding(1.0, 2).unwrap().len(), 2);
}

fn quadrant_swap(t: &ImageTensor<f64>) -> ImageTensor<f64> {
    // Exchanges the top-left and bottom-right quadrants and the other two.
    let s = t.shape();
    roll(t, s.h / 2, s.w / 2)
}

#[test]
fn local_attention_is_quadrant_equivariant() {
    let mut rng = RandomSource::seed_from_u64(30);
    let x = ImageTensor::<f64>::randn(Shape4::new(2, 3, 6, 4), &mut rng);
    let out = local_self_attention(&x).unwrap();
    let swapped = local_self_attention(&quadrant_swap(&x)).unwrap();
    assert!(swapped.max_abs_diff(&quadrant_swap(&out)).unwrap() < 1e-12);
}

#[test]
fn local_attention_on_two_by_two_is_identity() {
    let mut rng = RandomSource::seed_from_u64(31);
    let x = ImageTensor::<f64>::randn(Shape4::new(1, 4, 2, 2), &mut rng);
    assert!(local_self_attention(&x).unwrap().max_abs_diff(&x).unwrap() < 1e-15);
    assert!(local_self_attention(&ImageTensor::<f64>::zeros(Shape4::new(1, 1, 3, 4))).is_err());
}

/// Global attention over all positions with cross-quadrant logits masked to
/// negative infinity.
fn masked_global_attention(x: &ImageTensor<f64>) -> ImageTensor<f64> {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let quad = |p: usize| ((p / w) >= h / 2, (p % w) >= w / 2);
    let scale = 1.0 / (s.c as f64).sqrt();
    let mut out = ImageTensor::zeros(s);
    for n in 0..s.n {
        for i in 0..h * w {
            let mut logits = alloc::vec![f64::NEG_INFINITY; h * w];
            for (j, l) in logits.iter_mut().enumerate() {
                if quad(i) == quad(j) {
                    *l = (0..s.c).map(|c| x.at(n, c, i / w, i % w) * x.at(n, c, j / w, j % w)).sum::<f64>() * scale;
                }
            }
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..s.c {
                let v: f64 = (0..h * w).map(|j| e[j] / z * x.at(n, c, j / w, j % w)).sum();
                out.set(n, c, i / w, i % w, v);
            }
        }
    }
    out
}

#[test]
fn local_attention_matches_masked_global() {
    let mut rng = RandomSource::seed_from_u64(32);
    let x = ImageTensor::<f64>::randn(Shape4::new(2, 3, 4, 6), &mut rng);
    let a = local_self_attention(&x).unwrap();
    assert!(a.max_abs_diff(&masked_global_attention(&x)).unwrap() < 1e-6);
}

#[test]
fn network_attention_rows_sum_to_one() {
    let m = DenoiserModel::<f64>::new(small(Variant::GlobalSelfAttention), &mut RandomSource::seed_from_u64(40)).unwrap();
    let (x, y) = inputs(1, 4, 41);
    let probs = m.net.probe_attention_probs(&m.params, &x, &y, 0.5).unwrap();
    assert!(!probs.is_empty());
    assert!(probs.iter().any(|(m, _)| *m == 16));
    for (m, layer) in &probs {
        for row in layer.chunks(*m) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
