//! Analytic gradients against central finite differences in f64, shared by
//! the gradient tests and the acceptance run.

use lwdinv::nn::layers::Dense;
use lwdinv::pipeline::NetworkConfig;
use lwdinv::nn::{l2_loss, Activation, Init, Layer, LayerSpec, Network, NetworkSpec, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
/// One-sided slopes further apart than this mark a stencil straddling a
/// ReLU or max-pool switch.
const KINK: f64 = 1e-6;
const H_KINK: f64 = 1e-7;
const TOL: f64 = 1e-5;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data.iter().zip(r).map(|(a, b)| a * b).sum()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Checks input and parameter gradients of `L = Σ r·layer(x)`, probing
/// at most `budget` coordinates per tensor.
fn check(name: &str, layer: &mut dyn Layer<f64>, x: Tensor<f64>, budget: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = layer.forward(&x).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&Tensor::new(y.shape.clone(), r.clone()).unwrap()).unwrap();
    assert_eq!(dx.shape, x.shape, "{name}: input gradient shape");

    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if n <= budget {
            (0..n).collect()
        } else {
            (0..budget).map(|_| rng.gen_range(0..n)).collect()
        }
    };

    let idx = pick(x.len(), &mut rng);
    let mut num = Vec::new();
    for &i in &idx {
        let mut xp = x.clone();
        xp.data[i] += H;
        let fp = project(&layer.forward(&xp).unwrap(), &r);
        xp.data[i] -= 2.0 * H;
        let fm = project(&layer.forward(&xp).unwrap(), &r);
        num.push((fp - fm) / (2.0 * H));
    }
    let ana: Vec<f64> = idx.iter().map(|&i| dx.data[i]).collect();
    let e = rel_err(&ana, &num);
    assert!(e < TOL, "{name}: input gradient relative error {e:e}");

    let grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone().unwrap()).collect();
    for (k, g) in grads.iter().enumerate() {
        let idx = pick(g.len(), &mut rng);
        let mut num = Vec::new();
        for &i in &idx {
            layer.params_mut()[k].data[i] += H;
            let fp = project(&layer.forward(&x).unwrap(), &r);
            layer.params_mut()[k].data[i] -= 2.0 * H;
            let fm = project(&layer.forward(&x).unwrap(), &r);
            layer.params_mut()[k].data[i] += H;
            num.push((fp - fm) / (2.0 * H));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
        let e = rel_err(&ana, &num);
        assert!(e < TOL, "{name}: parameter {k} gradient relative error {e:e}");
    }
}

fn build(spec: LayerSpec, input: &[usize]) -> Box<dyn Layer<f64>> {
    spec.build::<f64>(input, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
}

fn randomize_biases(layer: &mut dyn Layer<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in layer.params_mut() {
        if p.shape.len() == 1 {
            p.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
}

fn conv(filters: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv1d {
        filters,
        kernel_size: 3,
        padding: Padding::Same,
        bias,
        init: Init::GlorotNormal,
    }
}

pub fn dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = build(LayerSpec::Dense { units: 4, init: Init::GlorotUniform }, &[5]);
    randomize_biases(l.as_mut());
    check("dense", l.as_mut(), random(vec![3, 5], &mut rng), 100);
}

pub fn activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check("relu", build(LayerSpec::Relu, &[6]).as_mut(), random(vec![2, 6], &mut rng), 100);
    check("sigmoid", build(LayerSpec::Sigmoid, &[2, 3]).as_mut(), random(vec![2, 2, 3], &mut rng), 100);
}

pub fn conv1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = build(conv(4, true), &[7, 3]);
    randomize_biases(l.as_mut());
    check("conv1d", l.as_mut(), random(vec![2, 7, 3], &mut rng), 200);
    check("conv1d no bias", build(conv(2, false), &[5, 1]).as_mut(), random(vec![3, 5, 1], &mut rng), 200);
    let wide = LayerSpec::Conv1d {
        filters: 2,
        kernel_size: 5,
        padding: Padding::Same,
        bias: true,
        init: Init::GlorotUniform,
    };
    check("conv1d k5", build(wide, &[6, 2]).as_mut(), random(vec![2, 6, 2], &mut rng), 200);
}

pub fn pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check("maxpool", build(LayerSpec::MaxPool1d { pool: 2 }, &[7, 3]).as_mut(), random(vec![2, 7, 3], &mut rng), 100);
    check("avgpool", build(LayerSpec::AvgPool1d { pool: 3 }, &[7, 2]).as_mut(), random(vec![2, 7, 2], &mut rng), 100);
}

pub fn reshape_and_flatten() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check("reshape", build(LayerSpec::Reshape { shape: vec![6, 1] }, &[2, 3]).as_mut(), random(vec![2, 2, 3], &mut rng), 100);
    check("flatten", build(LayerSpec::Flatten, &[2, 3]).as_mut(), random(vec![2, 2, 3], &mut rng), 100);
}

pub fn residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let same = LayerSpec::Residual {
        body: vec![conv(3, true), LayerSpec::Relu, conv(3, true)],
    };
    let mut l = build(same, &[6, 3]);
    randomize_biases(l.as_mut());
    check("residual", l.as_mut(), random(vec![2, 6, 3], &mut rng), 200);
    let broadcast = LayerSpec::Residual {
        body: vec![conv(4, true), LayerSpec::Relu, conv(4, true)],
    };
    check("residual broadcast", build(broadcast, &[6, 1]).as_mut(), random(vec![2, 6, 1], &mut rng), 200);
}

pub fn rnn() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (seq, act) in [(true, Activation::Tanh), (false, Activation::Relu), (true, Activation::Sigmoid)] {
        let mut l = build(
            LayerSpec::Rnn {
                units: 3,
                return_sequences: seq,
                activation: act,
            },
            &[5, 2],
        );
        randomize_biases(l.as_mut());
        check(&format!("rnn {act:?}"), l.as_mut(), random(vec![2, 5, 2], &mut rng), 200);
    }
}

pub fn lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seq in [true, false] {
        let mut l = build(LayerSpec::Lstm { units: 4, return_sequences: seq }, &[6, 3]);
        randomize_biases(l.as_mut());
        check(&format!("lstm seq={seq}"), l.as_mut(), random(vec![2, 6, 3], &mut rng), 200);
    }
    let mut one = build(LayerSpec::Lstm { units: 2, return_sequences: false }, &[1, 1]);
    check("lstm single step", one.as_mut(), random(vec![3, 1, 1], &mut rng), 200);
}

pub fn bidirectional() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seq in [true, false] {
        let spec = LayerSpec::Bidirectional {
            layer: Box::new(LayerSpec::Lstm { units: 3, return_sequences: seq }),
        };
        check(&format!("bidirectional seq={seq}"), build(spec, &[5, 2]).as_mut(), random(vec![2, 5, 2], &mut rng), 200);
    }
    let spec = LayerSpec::Bidirectional {
        layer: Box::new(LayerSpec::Rnn {
            units: 2,
            return_sequences: true,
            activation: Activation::Tanh,
        }),
    };
    check("bidirectional rnn", build(spec, &[4, 2]).as_mut(), random(vec![2, 4, 2], &mut rng), 200);
}

pub fn dense_l2_closed_form() {
    // L = ‖W·x + b − t‖ for one sample: ∂L/∂W = e·xᵀ/‖e‖, ∂L/∂b = e/‖e‖
    let mut d = Dense::<f64>::new(3, 2, Init::GlorotNormal, &mut ChaCha8Rng::seed_from_u64(0));
    d.weight.data = vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.75];
    d.bias.data = vec![0.1, -0.2];
    let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, -1.0]).unwrap();
    let t = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let y = d.forward(&x).unwrap();
    let (loss, g) = l2_loss(&y, &t).unwrap();
    d.backward(&g).unwrap();
    let e = [y.data[0] - 1.0, y.data[1] - 1.0];
    let n = (e[0] * e[0] + e[1] * e[1]).sqrt();
    assert!((loss - n).abs() < 1e-15);
    let dw = d.weight.grad.as_ref().unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert!((dw[i * 3 + j] - e[i] * x.data[j] / n).abs() < 1e-14);
        }
        assert!((d.bias.grad.as_ref().unwrap()[i] - e[i] / n).abs() < 1e-14);
    }

    // at a zero-loss point the output layer gradient vanishes
    let target = d.forward(&x).unwrap();
    d.weight.zero_grad();
    d.bias.zero_grad();
    let (loss, g) = l2_loss(&target, &target).unwrap();
    assert_eq!(loss, 0.0);
    d.backward(&g).unwrap();
    assert!(d.weight.grad.as_ref().unwrap().iter().all(|&v| v == 0.0));
}

/// A reduced copy of the inversion network trained through the l2 loss.
pub fn composite_network_with_loss() {
    let spec = NetworkSpec {
        input: vec![8, 3],
        seed: 4,
        layers: vec![
            LayerSpec::Lstm { units: 8, return_sequences: false },
            LayerSpec::Reshape { shape: vec![8, 1] },
            LayerSpec::Residual {
                body: vec![conv(4, true), LayerSpec::Relu, conv(4, true), LayerSpec::Relu],
            },
            LayerSpec::MaxPool1d { pool: 2 },
            LayerSpec::Residual {
                body: vec![conv(4, true), LayerSpec::Relu, conv(4, true), LayerSpec::Relu],
            },
            LayerSpec::MaxPool1d { pool: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3, init: Init::GlorotNormal },
            LayerSpec::Sigmoid,
        ],
    };
    check_network("reduced network", spec, 3, 300);
}

/// The full inversion network at its training shape.
pub fn assembled_network() {
    let cfg = NetworkConfig {
        input_shape: Some([65, 9]),
        ..Default::default()
    };
    check_network("assembled network", cfg.spec(5).unwrap(), 2, 400);
}

fn check_network(name: &str, spec: NetworkSpec, batch: usize, budget: usize) {
    let [t_len, c] = [spec.input[0], spec.input[1]];
    let mut net = Network::<f64>::new(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(vec![batch, t_len, c], &mut rng);
    let outputs = net.forward(&x).unwrap().shape[1];
    let t = Tensor::new(vec![batch, outputs], (0..batch * outputs).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let loss_at = |net: &mut Network<f64>| l2_loss(&net.forward(&x).unwrap(), &t).unwrap().0;

    net.zero_grad();
    let (_, g) = l2_loss(&net.forward(&x).unwrap(), &t).unwrap();
    net.backward(&g).unwrap();
    let grads: Vec<f64> = net.params().iter().flat_map(|p| p.grad.clone().unwrap()).collect();
    let flat = net.flat_params();
    let idx: Vec<usize> = (0..budget).map(|_| rng.gen_range(0..flat.len())).collect();
    let mut kinks = 0;
    let mut num = Vec::new();
    for &i in &idx {
        let mut at = |d: f64| {
            let mut p = flat.clone();
            p[i] += d;
            net.set_flat_params(&p).unwrap();
            loss_at(&mut net)
        };
        let (fp, f0, fm) = (at(H), at(0.0), at(-H));
        if ((fp - f0) - (f0 - fm)).abs() / H > KINK {
            kinks += 1;
            num.push((at(H_KINK) - at(-H_KINK)) / (2.0 * H_KINK));
        } else {
            num.push((fp - fm) / (2.0 * H));
        }
    }
    net.set_flat_params(&flat).unwrap();
    assert!(kinks * 20 <= idx.len(), "{name}: {kinks} of {} probes straddle a kink", idx.len());
    let ana: Vec<f64> = idx.iter().map(|&i| grads[i]).collect();
    let e = rel_err(&ana, &num);
    assert!(e < TOL, "{name}: gradient relative error {e:e}");
}

pub fn backward_before_forward() {
    for spec in [
        LayerSpec::Lstm { units: 2, return_sequences: true },
        conv(2, true),
        LayerSpec::MaxPool1d { pool: 2 },
    ] {
        let mut l = build(spec, &[4, 2]);
        assert!(l.backward(&Tensor::zeros(vec![1, 4, 2])).is_err());
    }
}

#[allow(dead_code)]
pub const CASES: &[(&str, fn())] = &[
    ("dense", dense),
    ("activations", activations),
    ("conv1d", conv1d),
    ("pools", pools),
    ("reshape_and_flatten", reshape_and_flatten),
    ("residual", residual),
    ("rnn", rnn),
    ("lstm", lstm),
    ("bidirectional", bidirectional),
    ("dense_l2_closed_form", dense_l2_closed_form),
    ("composite_network_with_loss", composite_network_with_loss),
    ("assembled_network", assembled_network),
    ("backward_before_forward", backward_before_forward),
];
