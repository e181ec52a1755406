use adn_core::adn::*;
use adn_core::error::Error;
use adn_core::tensor::gradcheck::{compare, random_tensor};
use adn_core::tensor::{Graph, Tensor, Var};
use std::collections::BTreeMap;

fn tiny() -> AdnConfig {
    AdnConfig { width: 2, res_blocks: 1 }
}

/// Parameter count from the layer table: weights, biases, and gain/shift for
/// normalized layers.
fn count_oracle(w: usize, res: usize) -> BTreeMap<&'static str, usize> {
    let conv =
        |cin: usize, cout: usize, k: usize, norm: bool| cout * cin * k * k + cout + if norm { 2 * cout } else { 0 };
    let downs = conv(1, w, 7, true) + conv(w, 2 * w, 4, true) + conv(2 * w, 4 * w, 4, true);
    let resblocks = res * 2 * conv(4 * w, 4 * w, 3, true);
    let ups = conv(4 * w, 2 * w, 5, true) + conv(2 * w, w, 5, true) + conv(w, 1, 7, false);
    let merges = conv(8 * w, 4 * w, 1, true) + conv(4 * w, 2 * w, 1, true) + conv(2 * w, w, 1, true);
    let disc =
        conv(1, w, 4, false) + conv(w, 2 * w, 4, false) + conv(2 * w, 4 * w, 4, false) + conv(4 * w, 1, 4, false);
    BTreeMap::from([
        ("E_I", downs + resblocks),
        ("E_c", downs + resblocks),
        ("E_a", downs),
        ("G_I", resblocks + ups),
        ("G_a", resblocks + ups + merges),
        ("D_I", disc),
        ("D_a", disc),
    ])
}

#[test]
fn parameter_count_is_frozen() {
    let p = ModelParams::<f32>::init(AdnConfig::default(), 0).unwrap();
    assert_eq!(p.count(), 24_429_124);
    let oracle = count_oracle(64, 4);
    for (net, n) in &oracle {
        assert_eq!(p.count_for(net), *n, "{net}");
    }
    assert_eq!(oracle.values().sum::<usize>(), p.count());
    assert_eq!(p.count_for("E_a"), 659_840);
    assert_eq!(p.count_for("G_a"), 5_925_825);
}

#[test]
fn parameter_count_follows_the_layer_table_at_other_sizes() {
    for (w, r) in [(1, 0), (2, 1), (8, 2), (16, 3)] {
        let p = ModelParams::<f32>::init(AdnConfig { width: w, res_blocks: r }, 0).unwrap();
        let oracle = count_oracle(w, r);
        for (net, n) in &oracle {
            assert_eq!(p.count_for(net), *n, "{net} at width {w}");
        }
    }
}

#[test]
fn shapes_at_128() {
    let p = ModelParams::<f32>::init(AdnConfig::default(), 0).unwrap();
    let img = random_tensor::<f32>(&[1, 1, 128, 128], -1.0, 1.0, 1);
    let mut s = Session::new(Trainable::Nothing);
    let x = s.input(&img).unwrap();
    let c = s.encode_content(&p, x).unwrap();
    assert_eq!(s.graph.value(c).shape(), &[1, 256, 32, 32]);
    let a = s.encode_artifact(&p, x).unwrap();
    let shapes: Vec<&[usize]> = a.iter().map(|&v| s.graph.value(v).shape()).collect();
    assert_eq!(shapes, vec![&[1, 64, 128, 128][..], &[1, 128, 64, 64], &[1, 256, 32, 32]]);
    let out = s.decode_clean(&p, c).unwrap();
    assert_eq!(s.graph.value(out).shape(), &[1, 1, 128, 128]);
    let out = s.decode_artifact(&p, c, &a).unwrap();
    assert_eq!(s.graph.value(out).shape(), &[1, 1, 128, 128]);
    for d in [Domain::Clean, Domain::Artifact] {
        let logits = s.discriminate(&p, x, d).unwrap();
        assert_eq!(s.graph.value(logits).shape(), &[1, 1, 30, 30]);
    }
}

#[test]
fn forward_pass_call_counts() {
    let p = ModelParams::<f32>::init(tiny(), 3).unwrap();
    let mut s = Session::new(Trainable::Nothing);
    let xa = s.input(&random_tensor(&[1, 1, 16, 16], -1.0, 1.0, 1)).unwrap();
    let y = s.input(&random_tensor(&[1, 1, 16, 16], -1.0, 1.0, 2)).unwrap();
    s.forward_translations(&p, xa, y).unwrap();
    let c = s.calls;
    assert_eq!((c.e_c, c.g_i, c.e_i, c.e_a, c.g_a, c.d_i, c.d_a), (2, 3, 1, 1, 2, 0, 0));
}

/// The bundle equals the same networks composed one call at a time.
#[test]
fn bundle_matches_scripted_composition() {
    let p = ModelParams::<f64>::init(tiny(), 5).unwrap();
    let xa = random_tensor::<f64>(&[2, 1, 12, 12], -1.0, 1.0, 7);
    let y = random_tensor::<f64>(&[2, 1, 12, 12], -1.0, 1.0, 8);
    let t = forward_translations(&p, &xa, &y).unwrap();

    let mut s = Session::new(Trainable::Nothing);
    let (xv, yv) = (s.input(&xa).unwrap(), s.input(&y).unwrap());
    let c_x = s.encode_content(&p, xv).unwrap();
    let c_y = s.encode_clean(&p, yv).unwrap();
    let a = s.encode_artifact(&p, xv).unwrap();
    let x_hat = s.decode_clean(&p, c_x).unwrap();
    let y_hat = s.decode_clean(&p, c_y).unwrap();
    let xa_hat = s.decode_artifact(&p, c_x, &a).unwrap();
    let ya_hat = s.decode_artifact(&p, c_y, &a).unwrap();
    let ya_value = s.graph.value(ya_hat).clone();
    let mut s2 = Session::new(Trainable::Nothing);
    let again = s2.input(&ya_value).unwrap();
    let c = s2.encode_content(&p, again).unwrap();
    let y_tilde = s2.decode_clean(&p, c).unwrap();

    assert_eq!(&t.x_hat, s.graph.value(x_hat));
    assert_eq!(&t.y_hat, s.graph.value(y_hat));
    assert_eq!(&t.xa_hat, s.graph.value(xa_hat));
    assert_eq!(t.ya_hat, ya_value);
    assert_eq!(&t.y_tilde, s2.graph.value(y_tilde));
    assert_eq!(&t.c_x, s.graph.value(c_x));
    assert_eq!(&t.c_y, s.graph.value(c_y));
    for k in 0..3 {
        assert_eq!(&t.a[k], s.graph.value(a[k]));
    }
}

#[test]
fn remove_and_transfer_match_the_bundle() {
    let p = ModelParams::<f32>::init(tiny(), 9).unwrap();
    let xa = random_tensor::<f32>(&[1, 1, 16, 16], -1.0, 1.0, 1);
    let y = random_tensor::<f32>(&[1, 1, 16, 16], -1.0, 1.0, 2);
    let t = forward_translations(&p, &xa, &y).unwrap();
    assert_eq!(remove_artifacts(&p, &xa).unwrap(), t.x_hat);
    assert_eq!(transfer_artifacts(&p, &xa, &y).unwrap(), t.ya_hat);
}

#[test]
fn zero_artifact_merge_weights_decouple_the_artifact_branch() {
    let mut p = ModelParams::<f64>::init(tiny(), 11).unwrap();
    let content = p.config.pyramid_channels();
    for (k, ch) in [(0, content[2]), (1, content[1]), (2, content[0])] {
        let w = p.get_mut(&format!("G_a/merge{k}.w")).unwrap();
        let (cout, cin) = (w.shape()[0], w.shape()[1]);
        assert_eq!(cin, 2 * ch);
        let data = w.data_mut();
        for o in 0..cout {
            // Content channels come first in the concatenation.
            for i in ch..cin {
                data[o * cin + i] = 0.0;
            }
        }
    }
    let y = random_tensor::<f64>(&[1, 1, 16, 16], -1.0, 1.0, 1);
    let base = transfer_artifacts(&p, &random_tensor(&[1, 1, 16, 16], -1.0, 1.0, 2), &y).unwrap();
    for seed in 3..6 {
        let other = transfer_artifacts(&p, &random_tensor(&[1, 1, 16, 16], -1.0, 1.0, seed), &y).unwrap();
        assert_eq!(other, base);
    }
    // The unmodified model does depend on the artifact input.
    let q = ModelParams::<f64>::init(tiny(), 11).unwrap();
    let a = transfer_artifacts(&q, &random_tensor(&[1, 1, 16, 16], -1.0, 1.0, 2), &y).unwrap();
    let b = transfer_artifacts(&q, &random_tensor(&[1, 1, 16, 16], -1.0, 1.0, 3), &y).unwrap();
    assert_ne!(a, b);
}

#[test]
fn multi_size_smoke() {
    let p = ModelParams::<f32>::init(AdnConfig { width: 4, res_blocks: 1 }, 2).unwrap();
    for n in [64, 128, 256] {
        let xa = random_tensor::<f32>(&[1, 1, n, n], -1.0, 1.0, n as u64);
        let y = random_tensor::<f32>(&[1, 1, n, n], -1.0, 1.0, n as u64 + 1);
        let t = forward_translations(&p, &xa, &y).unwrap();
        for img in [&t.x_hat, &t.xa_hat, &t.y_hat, &t.ya_hat, &t.y_tilde] {
            assert_eq!(img.shape(), &[1, 1, n, n]);
            assert!(img.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
        assert_eq!(t.c_x.shape(), &[1, 16, n / 4, n / 4]);
        let mut s = Session::new(Trainable::Nothing);
        let x = s.input(&xa).unwrap();
        let d = s.discriminate(&p, x, Domain::Clean).unwrap();
        assert_eq!(s.graph.value(d).shape(), &[1, 1, n / 4 - 2, n / 4 - 2]);
    }
}

#[test]
fn same_seed_same_model_and_outputs() {
    let a = ModelParams::<f32>::init(tiny(), 4).unwrap();
    let b = ModelParams::<f32>::init(tiny(), 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, ModelParams::<f32>::init(tiny(), 5).unwrap());
    let xa = random_tensor::<f32>(&[2, 1, 8, 8], -1.0, 1.0, 1);
    assert_eq!(remove_artifacts(&a, &xa).unwrap(), remove_artifacts(&b, &xa).unwrap());
}

#[test]
fn shape_errors() {
    let p = ModelParams::<f32>::init(tiny(), 0).unwrap();
    let odd = random_tensor::<f32>(&[1, 1, 10, 10], -1.0, 1.0, 1);
    assert!(matches!(remove_artifacts(&p, &odd), Err(Error::Argument(_))));
    let two_channel = random_tensor::<f32>(&[1, 2, 8, 8], -1.0, 1.0, 1);
    assert!(matches!(remove_artifacts(&p, &two_channel), Err(Error::Dimension(_))));
    let flat = random_tensor::<f32>(&[8, 8], -1.0, 1.0, 1);
    assert!(matches!(remove_artifacts(&p, &flat), Err(Error::Dimension(_))));
    let (a, b) =
        (random_tensor::<f32>(&[1, 1, 8, 8], -1.0, 1.0, 1), random_tensor::<f32>(&[1, 1, 12, 12], -1.0, 1.0, 2));
    assert!(matches!(transfer_artifacts(&p, &a, &b), Err(Error::Dimension(_))));
    assert!(matches!(forward_translations(&p, &a, &b), Err(Error::Dimension(_))));

    let mut s = Session::new(Trainable::Nothing);
    let small = s.input(&a).unwrap();
    assert!(matches!(s.discriminate(&p, small, Domain::Clean), Err(Error::Argument(_))));
    let wrong_code = s.graph.constant(Tensor::zeros([1, 3, 2, 2]));
    assert!(matches!(s.decode_clean(&p, wrong_code), Err(Error::Dimension(_))));
    assert!(ModelParams::<f32>::init(AdnConfig { width: 0, res_blocks: 1 }, 0).is_err());
}

/// Sum of `out ⊙ r` for a fixed random `r`, so every output element matters.
fn head(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let r = random_tensor::<f64>(g.value(out).shape(), -1.0, 1.0, seed);
    let v = g.mul_const(out, &r).unwrap();
    g.sum(v).unwrap()
}

type Path = fn(&mut Session<f64>, &ModelParams<f64>, Var) -> Var;

fn input_gradient(p: &ModelParams<f64>, x: &Tensor<f64>, path: Path) -> (Vec<f64>, Vec<f64>) {
    let mut s = Session::new(Trainable::Nothing);
    let v = s.graph.leaf(x.clone().with_grad());
    let out = path(&mut s, p, v);
    let loss = head(&mut s.graph, out, 77);
    s.graph.backward(loss).unwrap();
    let analytic = s.graph.grad(v).unwrap().into_data();
    let eval = |t: &Tensor<f64>| {
        let mut s = Session::new(Trainable::Nothing);
        let v = s.input(t).unwrap();
        let out = path(&mut s, p, v);
        let loss = head(&mut s.graph, out, 77);
        s.graph.value(loss).item()
    };
    let eps = 1e-6;
    let numeric = (0..x.numel())
        .map(|i| {
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi.data_mut()[i] += eps;
            lo.data_mut()[i] -= eps;
            (eval(&hi) - eval(&lo)) / (2.0 * eps)
        })
        .collect();
    (analytic, numeric)
}

#[test]
fn network_input_gradients_match_finite_differences() {
    let p = ModelParams::<f64>::init(tiny(), 21).unwrap();
    let paths: [(&str, usize, Path); 6] = [
        ("E_I", 8, |s, p, x| s.encode_clean(p, x).unwrap()),
        ("E_c then G_I", 8, |s, p, x| {
            let c = s.encode_content(p, x).unwrap();
            s.decode_clean(p, c).unwrap()
        }),
        ("E_a pyramid", 8, |s, p, x| {
            let a = s.encode_artifact(p, x).unwrap();
            let c = s.encode_clean(p, x).unwrap();
            s.decode_artifact(p, c, &a).unwrap()
        }),
        ("translations", 8, |s, p, x| {
            let b = s.forward_translations(p, x, x).unwrap();
            s.graph.add(b.y_tilde, b.xa_hat).unwrap()
        }),
        ("D_I", 16, |s, p, x| s.discriminate(p, x, Domain::Clean).unwrap()),
        ("D_a", 16, |s, p, x| s.discriminate(p, x, Domain::Artifact).unwrap()),
    ];
    for (name, n, path) in paths {
        let x = random_tensor::<f64>(&[1, 1, n, n], -1.0, 1.0, n as u64);
        let (a, num) = input_gradient(&p, &x, path);
        let report = compare(&a, &num);
        assert!(report.aggregate_error < 1e-4, "{name}: {report:?}");
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let p = ModelParams::<f64>::init(tiny(), 23).unwrap();
    let xa = random_tensor::<f64>(&[1, 1, 16, 16], -1.0, 1.0, 1);
    let y = random_tensor::<f64>(&[1, 1, 16, 16], -1.0, 1.0, 2);
    let loss_of = |p: &ModelParams<f64>, s: &mut Session<f64>| {
        let (xv, yv) = (s.input(&xa).unwrap(), s.input(&y).unwrap());
        let b = s.forward_translations(p, xv, yv).unwrap();
        let d1 = s.discriminate(p, b.x_hat, Domain::Clean).unwrap();
        let d2 = s.discriminate(p, b.ya_hat, Domain::Artifact).unwrap();
        let mut terms = vec![];
        for (k, v) in [b.xa_hat, b.y_tilde, b.y_hat, d1, d2].into_iter().enumerate() {
            terms.push(head(&mut s.graph, v, 100 + k as u64));
        }
        let weighted: Vec<(Var, f64)> = terms.into_iter().map(|t| (t, 1.0)).collect();
        s.graph.weighted_sum(&weighted).unwrap()
    };
    let mut s = Session::new(Trainable::Everything);
    let loss = loss_of(&p, &mut s);
    s.graph.backward(loss).unwrap();
    let grads: BTreeMap<String, Tensor<f64>> = s.gradients().into_iter().collect();
    assert_eq!(grads.len(), p.names().count());
    // Instance norm at init scales the first-layer gradients to ~50, so a
    // 1e-6 step can cross ReLU kinks downstream.
    let eps = 1e-8;
    let value = |p: &ModelParams<f64>| {
        let mut s = Session::new(Trainable::Nothing);
        let l = loss_of(p, &mut s);
        s.graph.value(l).item()
    };
    let names = [
        "D_I/conv0.w",
        "D_a/down1.b",
        "E_I/down0.w",
        "E_a/down2.gain",
        "E_c/res0/conv1.w",
        "G_I/final.w",
        "G_a/merge1.w",
        "G_a/up0.shift",
    ];
    for name in names {
        let n = p.get(name).unwrap().numel();
        let (mut a, mut num) = (vec![], vec![]);
        for i in (0..n).step_by((n / 6).max(1)) {
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi.get_mut(name).unwrap().data_mut()[i] += eps;
            lo.get_mut(name).unwrap().data_mut()[i] -= eps;
            num.push((value(&hi) - value(&lo)) / (2.0 * eps));
            a.push(grads[name].data()[i]);
        }
        let report = compare(&a, &num);
        assert!(report.aggregate_error < 1e-4, "{name}: {report:?}");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::<f32>::init(tiny(), 1).unwrap();
    let optimizer = BTreeMap::from([("g/step".to_string(), Tensor::scalar(3.0f32))]);
    let ck = Checkpoint { params, optimizer };
    let (a, b) = (dir.path().join("a.adnc"), dir.path().join("b.adnc"));
    write_checkpoint(&a, &ck).unwrap();
    let back = read_checkpoint(&a).unwrap();
    assert_eq!(back, ck);
    write_checkpoint(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(&std::fs::read(&a).unwrap()[..4], b"ADNC");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ck = Checkpoint { params: ModelParams::<f32>::init(tiny(), 1).unwrap(), optimizer: BTreeMap::new() };
    let bytes = encode_checkpoint(&ck).unwrap();
    for cut in [0, 3, 4, 5, 9, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 4, .. })));
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0, 0]);
    assert!(decode_checkpoint(&longer).is_err());
    // A checkpoint for another architecture loads as that architecture.
    let wide = Checkpoint {
        params: ModelParams::<f32>::init(AdnConfig { width: 3, res_blocks: 2 }, 1).unwrap(),
        optimizer: BTreeMap::new(),
    };
    let back = decode_checkpoint(&encode_checkpoint(&wide).unwrap()).unwrap();
    assert_eq!(back.params.config, AdnConfig { width: 3, res_blocks: 2 });
}
