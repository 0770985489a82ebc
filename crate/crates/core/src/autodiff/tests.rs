use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::RandomSource;

fn random_store(shapes: &[Vec<usize>], rng: &mut RandomSource) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        let len = s.iter().product();
        let data = (0..len).map(|_| rng.normal() * 0.7).collect();
        store.add(alloc::format!("p{i}"), s.clone(), data);
    }
    store
}

/// Compares backprop against central differences of `sum(seed * f(params))`.
fn check_op(shapes: &[Vec<usize>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut rng = RandomSource::seed_from_u64(1234);
    let store = random_store(shapes, &mut rng);
    let eval = |store: &ParamStore<f64>| -> (Vec<f64>, Option<Gradients<f64>>, Vec<f64>) {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(ParamId(i))).collect();
        let out = f(&mut tape, &vars);
        (tape.value(out).to_vec(), None, vec![])
    };
    let (out0, _, _) = eval(&store);
    let seed: Vec<f64> = (0..out0.len()).map(|_| rng.normal()).collect();

    let grads = {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(ParamId(i))).collect();
        let out = f(&mut tape, &vars);
        tape.backward_with_seed(out, &seed)
    };
    let objective = |store: &ParamStore<f64>| -> f64 {
        let (o, _, _) = eval(store);
        o.iter().zip(&seed).map(|(a, b)| a * b).sum()
    };
    let h = 1e-5;
    for pid in 0..store.len() {
        let len = store.get(ParamId(pid)).data.len();
        for j in 0..len {
            let mut plus = store.clone();
            plus.get_mut(ParamId(pid)).data[j] += h;
            let mut minus = store.clone();
            minus.get_mut(ParamId(pid)).data[j] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let bp = grads.get(ParamId(pid)).map(|g| g[j]).unwrap_or(0.0);
            let denom = fd.abs().max(bp.abs()).max(1e-7);
            assert!(
                (fd - bp).abs() / denom < 1e-5,
                "param {pid}[{j}]: fd {fd} vs backprop {bp}"
            );
        }
    }
}

#[test]
fn conv_gradients_zero_and_circular_padding() {
    for padding in [Padding::Zero, Padding::Circular] {
        for dilation in [1, 2] {
            check_op(&[vec![2, 3, 4, 5], vec![2, 3, 3, 3], vec![2]], |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), dilation, padding)
            });
        }
    }
    check_op(&[vec![2, 3, 4, 4], vec![5, 3, 1, 1]], |t, v| t.conv2d(v[0], v[1], None, 1, Padding::Zero));
}

#[test]
fn group_norm_gradients() {
    check_op(&[vec![2, 4, 3, 3], vec![4], vec![4]], |t, v| t.group_norm(v[0], v[1], v[2], 2));
}

#[test]
fn attention_gradients_global_and_local() {
    for local in [false, true] {
        check_op(&[vec![2, 3, 4, 4], vec![2, 3, 4, 4], vec![2, 3, 4, 4]], |t, v| {
            t.attention(v[0], v[1], v[2], local)
        });
    }
}

#[test]
fn elementwise_and_layout_gradients() {
    check_op(&[vec![2, 3, 4, 4]], |t, v| t.silu(v[0]));
    check_op(&[vec![2, 3, 4, 4]], |t, v| t.avg_pool2(v[0]));
    check_op(&[vec![2, 3, 2, 3]], |t, v| t.upsample2(v[0]));
    check_op(&[vec![2, 3, 2, 2], vec![2, 1, 2, 2]], |t, v| t.concat_channels(v[0], v[1]));
    check_op(&[vec![2, 3, 2, 2], vec![2, 3]], |t, v| t.add_channel(v[0], v[1]));
    check_op(&[vec![2, 3, 2, 2]], |t, v| t.global_mean_pool(v[0]));
    check_op(&[vec![3, 4], vec![5, 4], vec![5]], |t, v| t.linear(v[0], v[1], v[2]));
    check_op(&[vec![2, 2], vec![2, 2]], |t, v| {
        let s = t.add(v[0], v[1]);
        let s2 = t.add(s, v[0]);
        t.scale(s2, 0.3)
    });
}

#[test]
fn loss_gradients() {
    let target: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let mask: Vec<f64> = (0..12).map(|i| (i % 3 != 0) as u8 as f64).collect();
    check_op(&[vec![1, 3, 2, 2]], |t, v| t.lp_loss(v[0], &target, None, LossNorm::L2));
    check_op(&[vec![1, 3, 2, 2]], |t, v| t.lp_loss(v[0], &target, Some(&mask), LossNorm::L2));
    check_op(&[vec![1, 3, 2, 2]], |t, v| t.lp_loss(v[0], &target, Some(&mask), LossNorm::L1));
    check_op(&[vec![3, 4]], |t, v| t.softmax_cross_entropy(v[0], &[0, 3, 1]));
}

#[test]
fn masked_loss_gradient_is_exactly_zero_outside_mask() {
    let mut store = ParamStore::new();
    let pred = store.add("pred", vec![1, 1, 2, 3], vec![0.3, -0.2, 1.0, 0.5, 0.1, -0.7]);
    let target = [0.0f64; 6];
    let mask = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    for norm in [LossNorm::L1, LossNorm::L2] {
        let mut tape = Tape::new(&store);
        let p = tape.param(pred);
        let l = tape.lp_loss(p, &target, Some(&mask), norm);
        let g = tape.backward(l);
        let g = g.get(pred).unwrap();
        for (gv, m) in g.iter().zip(mask) {
            if m == 0.0 {
                assert_eq!(*gv, 0.0);
            } else {
                assert!(*gv != 0.0);
            }
        }
    }
}

#[test]
fn empty_mask_gives_zero_loss() {
    let mut store = ParamStore::<f64>::new();
    let pred = store.add("pred", vec![1, 1, 1, 2], vec![1.0, 2.0]);
    let mut tape = Tape::new(&store);
    let p = tape.param(pred);
    let l = tape.lp_loss(p, &[0.0, 0.0], Some(&[0.0, 0.0]), LossNorm::L2);
    assert_eq!(tape.scalar(l), 0.0);
    assert_eq!(tape.backward(l).get(pred).unwrap(), &[0.0, 0.0]);
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = RandomSource::seed_from_u64(5);
    let (c, h, w) = (4, 4, 6);
    let q: Vec<f64> = (0..c * h * w).map(|_| rng.normal() * 3.0).collect();
    let k: Vec<f64> = (0..c * h * w).map(|_| rng.normal() * 3.0).collect();
    for local in [false, true] {
        for p in attention_probs(&q, &k, c, h, w, local) {
            let m = (p.len() as f64).sqrt() as usize;
            for row in p.chunks(m) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
