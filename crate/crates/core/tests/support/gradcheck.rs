//! Finite-difference gradient checks against independent 64-bit reference
//! implementations of every tape op.
//!
//! Each check draws a random instance, computes the analytic gradient of
//! `Σ r ⊙ op(inputs)` for a random projection `r` with the tape, and compares
//! it entrywise with central differences (h = 1e-3) of the same projection
//! evaluated by the f64 reference.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfadv::tensor::{Tape, Tensor, Var};

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared absolutely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-2)
}

pub struct LayerResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

type Build = dyn Fn(&mut Tape<'static>, &[Var]) -> Var;
type Reference = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

struct Instance {
    inputs: Vec<Tensor>,
    diff: Vec<bool>,
    build: Box<Build>,
    reference: Box<Reference>,
}

fn tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_slice(shape, &(0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>()).unwrap()
}

/// Tensor whose dimensions are each drawn from an inclusive range.
fn random_tensor<R: Rng>(rng: &mut R, ranges: &[(usize, usize)], scale: f32) -> Tensor {
    let shape: Vec<usize> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
    tensor(rng, &shape, scale)
}

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn check(inst: &Instance, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inst
        .inputs
        .iter()
        .zip(&inst.diff)
        .map(|(t, &d)| tape.leaf(t.clone(), d))
        .collect();
    let out = (inst.build)(&mut tape, &vars);
    let out_shape = tape.value(out).shape().to_vec();
    let seed = tensor(rng, &out_shape, 1.0);
    let r = to64(&seed);
    let grads = tape.backward_with_seed(out, seed).unwrap();

    let base: Vec<Vec<f64>> = inst.inputs.iter().map(to64).collect();
    let project = |x: &[Vec<f64>]| -> f64 {
        let y = (inst.reference)(x);
        assert_eq!(y.len(), r.len(), "reference output size");
        y.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        if !inst.diff[i] {
            continue;
        }
        let analytic = grads
            .get(*var)
            .map(to64)
            .unwrap_or_else(|| vec![0.0; base[i].len()]);
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += H;
            let mut minus = base.clone();
            minus[i][j] -= H;
            let numeric = (project(&plus) - project(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

// ---- f64 reference ops -------------------------------------------------------

pub fn matmul(a: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * w[t * n + j]).sum();
        }
    }
    out
}

pub fn add_bias(x: &[f64], b: &[f64], inner: usize) -> Vec<f64> {
    let c = b.len();
    x.iter().enumerate().map(|(i, v)| v + b[(i / inner) % c]).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    b: usize,
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    pl: usize,
    pr: usize,
) -> Vec<f64> {
    let lout = len + pl + pr + 1 - k;
    let mut out = vec![0.0; b * cout * lout];
    for bi in 0..b {
        for o in 0..cout {
            for l in 0..lout {
                let mut s = 0.0;
                for c in 0..cin {
                    for t in 0..k {
                        let src = l as isize + t as isize - pl as isize;
                        if src >= 0 && (src as usize) < len {
                            s += w[(o * cin + c) * k + t] * x[(bi * cin + c) * len + src as usize];
                        }
                    }
                }
                out[(bi * cout + o) * lout + l] = s;
            }
        }
    }
    out
}

pub fn max_pool(x: &[f64], rows: usize, len: usize, size: usize) -> Vec<f64> {
    let lout = len / size;
    let mut out = Vec::new();
    for r in 0..rows {
        for p in 0..lout {
            let win = &x[r * len + p * size..r * len + (p + 1) * size];
            out.push(win.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    out
}

/// One LSTM step; `state` is `[b, 2h]` = `[h | c]`, gates ordered i, f, g, o.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell(x: &[f64], state: &[f64], wi: &[f64], wh: &[f64], bias: &[f64], b: usize, f: usize, h: usize) -> Vec<f64> {
    let g4 = 4 * h;
    let mut out = vec![0.0; b * 2 * h];
    for r in 0..b {
        let mut z = bias.to_vec();
        for (j, zj) in z.iter_mut().enumerate() {
            for k in 0..f {
                *zj += x[r * f + k] * wi[k * g4 + j];
            }
            for k in 0..h {
                *zj += state[r * 2 * h + k] * wh[k * g4 + j];
            }
        }
        for j in 0..h {
            let i = sigmoid(z[j]);
            let fg = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            let c = fg * state[r * 2 * h + h + j] + i * g;
            out[r * 2 * h + h + j] = c;
            out[r * 2 * h + j] = o * c.tanh();
        }
    }
    out
}

pub fn softmax_rows(z: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in z.chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out.extend(row.iter().map(|v| (v - m).exp() / s));
    }
    out
}

pub fn cross_entropy(z: &[f64], labels: &[usize], k: usize) -> f64 {
    let p = softmax_rows(z, k);
    labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -p[r * k + y].ln())
        .sum::<f64>()
        / labels.len() as f64
}

// ---- instance generators -----------------------------------------------------

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn near_zero(v: &[f64]) -> bool {
    v.iter().any(|x| x.abs() < 1e-2)
}

/// Draws one instance of layer `name`; `None` asks the caller to redraw
/// (instance too close to a kink for finite differences).
fn draw(name: &str, rng: &mut ChaCha8Rng) -> Option<Instance> {
    let inst = match name {
        "matmul" => {
            let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 5), dims(rng, 1, 4));
            Instance {
                inputs: vec![tensor(rng, &[m, k], 1.0), tensor(rng, &[k, n], 1.0)],
                diff: vec![true, true],
                build: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
                reference: Box::new(move |x| matmul(&x[0], &x[1], m, k, n)),
            }
        }
        "add_bias" => {
            let (b, c, l) = (dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 5));
            Instance {
                inputs: vec![tensor(rng, &[b, c, l], 1.0), tensor(rng, &[c], 1.0)],
                diff: vec![true, true],
                build: Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap()),
                reference: Box::new(move |x| add_bias(&x[0], &x[1], l)),
            }
        }
        "add" | "mul" => {
            let shape = [dims(rng, 1, 3), dims(rng, 1, 5)];
            let is_add = name == "add";
            Instance {
                inputs: vec![tensor(rng, &shape, 1.0), tensor(rng, &shape, 1.0)],
                diff: vec![true, true],
                build: Box::new(move |t, v| {
                    if is_add {
                        t.add(v[0], v[1]).unwrap()
                    } else {
                        t.mul(v[0], v[1]).unwrap()
                    }
                }),
                reference: Box::new(move |x| {
                    x[0].iter()
                        .zip(&x[1])
                        .map(|(a, b)| if is_add { a + b } else { a * b })
                        .collect()
                }),
            }
        }
        "scale" => {
            let f: f32 = rng.random_range(-2.0..2.0);
            Instance {
                inputs: vec![random_tensor(rng, &[(1, 3), (1, 5)], 1.0)],
                diff: vec![true],
                build: Box::new(move |t, v| t.scale(v[0], f)),
                reference: Box::new(move |x| x[0].iter().map(|a| a * f as f64).collect()),
            }
        }
        "sum" => Instance {
            inputs: vec![random_tensor(rng, &[(1, 3), (1, 5)], 1.0)],
            diff: vec![true],
            build: Box::new(|t, v| t.sum(v[0])),
            reference: Box::new(|x| vec![x[0].iter().sum()]),
        },
        "relu" | "sigmoid" | "tanh" => {
            let input = random_tensor(rng, &[(1, 3), (1, 6)], 2.0);
            if name == "relu" && near_zero(&to64(&input)) {
                return None;
            }
            let which = name.to_string();
            let which2 = which.clone();
            Instance {
                inputs: vec![input],
                diff: vec![true],
                build: Box::new(move |t, v| match which.as_str() {
                    "relu" => t.relu(v[0]),
                    "sigmoid" => t.sigmoid(v[0]),
                    _ => t.tanh(v[0]),
                }),
                reference: Box::new(move |x| match which2.as_str() {
                    "relu" => relu(&x[0]),
                    "sigmoid" => x[0].iter().map(|v| sigmoid(*v)).collect(),
                    _ => x[0].iter().map(|v| v.tanh()).collect(),
                }),
            }
        }
        "conv1d" => {
            let (b, cin, cout) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
            let k = dims(rng, 1, 4);
            let len = dims(rng, k, 8);
            let (pl, pr) = (rng.random_range(0..k), rng.random_range(0..k));
            Instance {
                inputs: vec![tensor(rng, &[b, cin, len], 1.0), tensor(rng, &[cout, cin, k], 1.0)],
                diff: vec![true, true],
                build: Box::new(move |t, v| t.conv1d(v[0], v[1], pl, pr).unwrap()),
                reference: Box::new(move |x| conv1d(&x[0], &x[1], b, cin, len, cout, k, pl, pr)),
            }
        }
        "max_pool1d" => {
            let (b, c, size) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 2, 3));
            let len = dims(rng, size, 9);
            let input = tensor(rng, &[b, c, len], 1.0);
            let v = to64(&input);
            let lout = len / size;
            for r in 0..b * c {
                for p in 0..lout {
                    let mut win: Vec<f64> = v[r * len + p * size..r * len + (p + 1) * size].to_vec();
                    win.sort_by(|a, b| b.total_cmp(a));
                    if win[0] - win[1] < 1e-2 {
                        return None;
                    }
                }
            }
            Instance {
                inputs: vec![input],
                diff: vec![true],
                build: Box::new(move |t, v| t.max_pool1d(v[0], size).unwrap()),
                reference: Box::new(move |x| max_pool(&x[0], b * c, len, size)),
            }
        }
        "flatten" => Instance {
            inputs: vec![random_tensor(rng, &[(1, 3), (1, 3), (1, 4)], 1.0)],
            diff: vec![true],
            build: Box::new(|t, v| t.flatten(v[0]).unwrap()),
            reference: Box::new(|x| x[0].clone()),
        },
        "mask" => {
            let input = random_tensor(rng, &[(1, 3), (1, 6)], 1.0);
            let mask: Vec<f32> = (0..input.len())
                .map(|_| if rng.random_bool(0.5) { 2.0 } else { 0.0 })
                .collect();
            let m64: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
            Instance {
                inputs: vec![input],
                diff: vec![true],
                build: Box::new(move |t, v| t.mask(v[0], mask.clone()).unwrap()),
                reference: Box::new(move |x| x[0].iter().zip(&m64).map(|(a, m)| a * m).collect()),
            }
        }
        "time_step" => {
            let (b, c, len) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 6));
            let step = rng.random_range(0..len);
            Instance {
                inputs: vec![tensor(rng, &[b, c, len], 1.0)],
                diff: vec![true],
                build: Box::new(move |t, v| t.time_step(v[0], step).unwrap()),
                reference: Box::new(move |x| (0..b * c).map(|r| x[0][r * len + step]).collect()),
            }
        }
        "slice_cols" => {
            let (b, n) = (dims(rng, 1, 3), dims(rng, 2, 7));
            let start = rng.random_range(0..n);
            let len = rng.random_range(1..=n - start);
            Instance {
                inputs: vec![tensor(rng, &[b, n], 1.0)],
                diff: vec![true],
                build: Box::new(move |t, v| t.slice_cols(v[0], start, len).unwrap()),
                reference: Box::new(move |x| {
                    (0..b).flat_map(|r| x[0][r * n + start..r * n + start + len].to_vec()).collect()
                }),
            }
        }
        "lstm_cell" => {
            let (b, f, h) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3));
            Instance {
                inputs: vec![
                    tensor(rng, &[b, f], 1.0),
                    tensor(rng, &[b, 2 * h], 1.0),
                    tensor(rng, &[f, 4 * h], 1.0),
                    tensor(rng, &[h, 4 * h], 1.0),
                    tensor(rng, &[4 * h], 1.0),
                ],
                diff: vec![true; 5],
                build: Box::new(|t, v| t.lstm_cell(v[0], v[1], v[2], v[3], v[4]).unwrap()),
                reference: Box::new(move |x| lstm_cell(&x[0], &x[1], &x[2], &x[3], &x[4], b, f, h)),
            }
        }
        "sequence_lstm" => {
            let (b, f, h, len) = (dims(rng, 1, 2), dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 5));
            Instance {
                inputs: vec![
                    tensor(rng, &[b, f, len], 1.0),
                    tensor(rng, &[f, 4 * h], 1.0),
                    tensor(rng, &[h, 4 * h], 1.0),
                    tensor(rng, &[4 * h], 1.0),
                ],
                diff: vec![true; 4],
                build: Box::new(|t, v| t.sequence_lstm(v[0], v[1], v[2], v[3]).unwrap()),
                reference: Box::new(move |x| {
                    let mut state = vec![0.0; b * 2 * h];
                    for s in 0..len {
                        let xt: Vec<f64> = (0..b * f).map(|r| x[0][r * len + s]).collect();
                        state = lstm_cell(&xt, &state, &x[1], &x[2], &x[3], b, f, h);
                    }
                    state
                }),
            }
        }
        "softmax" => {
            let (b, k) = (dims(rng, 1, 3), dims(rng, 2, 6));
            Instance {
                inputs: vec![tensor(rng, &[b, k], 3.0)],
                diff: vec![true],
                build: Box::new(|t, v| t.softmax(v[0]).unwrap()),
                reference: Box::new(move |x| softmax_rows(&x[0], k)),
            }
        }
        "cross_entropy" => {
            let (b, k) = (dims(rng, 1, 4), dims(rng, 2, 11));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let l2 = labels.clone();
            Instance {
                inputs: vec![tensor(rng, &[b, k], 3.0)],
                diff: vec![true],
                build: Box::new(move |t, v| t.cross_entropy(v[0], &labels).unwrap()),
                reference: Box::new(move |x| vec![cross_entropy(&x[0], &l2, k)]),
            }
        }
        "mlp3" => {
            let (b, d0, d1, d2, k) = (dims(rng, 1, 3), dims(rng, 2, 5), dims(rng, 2, 5), dims(rng, 2, 5), dims(rng, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let inputs = vec![
                tensor(rng, &[b, d0], 1.0),
                tensor(rng, &[d0, d1], 1.0),
                tensor(rng, &[d1], 0.5),
                tensor(rng, &[d1, d2], 1.0),
                tensor(rng, &[d2], 0.5),
                tensor(rng, &[d2, k], 1.0),
                tensor(rng, &[k], 0.5),
            ];
            let x64: Vec<Vec<f64>> = inputs.iter().map(to64).collect();
            let pre1 = add_bias(&matmul(&x64[0], &x64[1], b, d0, d1), &x64[2], 1);
            let pre2 = add_bias(&matmul(&relu(&pre1), &x64[3], b, d1, d2), &x64[4], 1);
            if near_zero(&pre1) || near_zero(&pre2) {
                return None;
            }
            let l2 = labels.clone();
            Instance {
                inputs,
                diff: vec![true; 7],
                build: Box::new(move |t, v| {
                    let h = t.matmul(v[0], v[1]).unwrap();
                    let h = t.add_bias(h, v[2]).unwrap();
                    let h = t.relu(h);
                    let h = t.matmul(h, v[3]).unwrap();
                    let h = t.add_bias(h, v[4]).unwrap();
                    let h = t.relu(h);
                    let h = t.matmul(h, v[5]).unwrap();
                    let z = t.add_bias(h, v[6]).unwrap();
                    t.cross_entropy(z, &labels).unwrap()
                }),
                reference: Box::new(move |x| {
                    let h = relu(&add_bias(&matmul(&x[0], &x[1], b, d0, d1), &x[2], 1));
                    let h = relu(&add_bias(&matmul(&h, &x[3], b, d1, d2), &x[4], 1));
                    let z = add_bias(&matmul(&h, &x[5], b, d2, k), &x[6], 1);
                    vec![cross_entropy(&z, &l2, k)]
                }),
            }
        }
        other => panic!("unknown layer {other}"),
    };
    Some(inst)
}

pub const LAYERS: [&str; 21] = [
    "matmul",
    "add_bias",
    "add",
    "mul",
    "scale",
    "sum",
    "relu",
    "sigmoid",
    "tanh",
    "conv1d",
    "max_pool1d",
    "flatten",
    "mask",
    "time_step",
    "slice_cols",
    "lstm_cell",
    "sequence_lstm",
    "softmax",
    "cross_entropy",
    "mlp3",
    "conv_pool_chain",
];

fn draw_chain(rng: &mut ChaCha8Rng) -> Option<Instance> {
    // conv -> bias -> relu -> pool -> flatten -> dense -> CE, the CNN block shape.
    let (b, cin, cout, k) = (dims(rng, 1, 2), 2, dims(rng, 1, 3), dims(rng, 2, 4));
    let len = 8;
    let (pl, pr) = ((k - 1) / 2, k - 1 - (k - 1) / 2);
    let classes = 3;
    let inputs = vec![
        tensor(rng, &[b, cin, len], 1.0),
        tensor(rng, &[cout, cin, k], 1.0),
        tensor(rng, &[cout], 0.5),
        tensor(rng, &[cout * len / 2, classes], 1.0),
    ];
    let x64: Vec<Vec<f64>> = inputs.iter().map(to64).collect();
    let pre = add_bias(&conv1d(&x64[0], &x64[1], b, cin, len, cout, k, pl, pr), &x64[2], len);
    if near_zero(&pre) {
        return None;
    }
    let act = relu(&pre);
    for w in act.chunks(2) {
        if (w[0] - w[1]).abs() < 1e-2 {
            return None;
        }
    }
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let l2 = labels.clone();
    Some(Instance {
        inputs,
        diff: vec![true; 4],
        build: Box::new(move |t, v| {
            let h = t.conv1d(v[0], v[1], pl, pr).unwrap();
            let h = t.add_bias(h, v[2]).unwrap();
            let h = t.relu(h);
            let h = t.max_pool1d(h, 2).unwrap();
            let h = t.flatten(h).unwrap();
            let z = t.matmul(h, v[3]).unwrap();
            t.cross_entropy(z, &labels).unwrap()
        }),
        reference: Box::new(move |x| {
            let h = relu(&add_bias(&conv1d(&x[0], &x[1], b, cin, len, cout, k, pl, pr), &x[2], len));
            let h = max_pool(&h, b * cout, len, 2);
            let z = matmul(&h, &x[3], b, cout * len / 2, classes);
            vec![cross_entropy(&z, &l2, classes)]
        }),
    })
}

/// Runs `instances` random checks for every layer.
pub fn run_suite(instances: usize, seed: u64) -> Vec<LayerResult> {
    LAYERS
        .iter()
        .enumerate()
        .map(|(li, &name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((li as u64 + 1) << 32));
            let mut worst = 0.0f64;
            let mut done = 0;
            while done < instances {
                let inst = if name == "conv_pool_chain" {
                    draw_chain(&mut rng)
                } else {
                    draw(name, &mut rng)
                };
                let Some(inst) = inst else { continue };
                worst = worst.max(check(&inst, &mut rng));
                done += 1;
            }
            LayerResult {
                name,
                instances: done,
                max_rel_err: worst,
            }
        })
        .collect()
}
