//! Tape gradients against central finite differences of independent f64
//! reference implementations. Every suite draws `cases` random micro-cases
//! with a random upstream gradient and returns the worst error, measured
//! relative to the largest numerical gradient entry.

use polypseg::autodiff::{BatchNormParams, ParamKind, ParamStore, Tape, Var};
use polypseg::tensor::{BatchNormConfig, ConvSpec, Shape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-3;
const H: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (&a, &n)| m.max((a as f64 - n).abs()));
    diff / scale
}

/// Numerical gradient of `sum(u * f(xs))` with respect to every input.
fn numeric_grads(xs: &[Vec<f64>], u: &[f64], f: &dyn Fn(&[Vec<f64>]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let loss = |xs: &[Vec<f64>]| f(xs).iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    let mut out = Vec::new();
    for i in 0..xs.len() {
        let mut g = vec![0.0; xs[i].len()];
        for k in 0..xs[i].len() {
            let mut p = xs.to_vec();
            p[i][k] += H;
            let mut m = xs.to_vec();
            m[i][k] -= H;
            g[k] = (loss(&p) - loss(&m)) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

/// Records `build` on inputs that keep their gradients, backpropagates a
/// random seed and returns the worst relative error over all inputs.
fn check(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    reference: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let n = tape.value(out).numel();
    let u: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut store = ParamStore::new();
    tape.backward_with_grad(out, &u, &mut store).unwrap();
    let xs: Vec<Vec<f64>> = inputs.iter().map(to64).collect();
    let u64s: Vec<f64> = u.iter().map(|&v| v as f64).collect();
    let num = numeric_grads(&xs, &u64s, &reference);
    vars.iter()
        .zip(&num)
        .map(|(v, n)| tape.grad(*v).map_or(f64::INFINITY, |a| rel_err(a, n)))
        .fold(0.0, f64::max)
}

pub fn conv_ref(x: &[f64], xs: Shape, w: &[f64], ws: Shape, b: &[f64], spec: &ConvSpec) -> Vec<f64> {
    let (oh, ow) = spec.output_size(xs.h, xs.w).unwrap();
    let mut out = Vec::new();
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..xs.c {
                        for i in 0..ws.h {
                            for j in 0..ws.w {
                                let iy = (oy * spec.stride + i * spec.dilation) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + j * spec.dilation) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    let xv = x[((n * xs.c + ci) * xs.h + iy as usize) * xs.w + ix as usize];
                                    acc += xv * w[((co * ws.c + ci) * ws.h + i) * ws.w + j];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn conv2d(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < cases {
        let k = rng.random_range(1..=3);
        let spec = ConvSpec::new(k, k)
            .with_stride(rng.random_range(1..=2))
            .with_dilation(rng.random_range(1..=3))
            .with_padding(rng.random_range(0..=2));
        let xs = Shape::new(rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(3..=7), rng.random_range(3..=7));
        if spec.output_size(xs.h, xs.w).is_none() {
            continue;
        }
        let ws = Shape::new(rng.random_range(1..=3), xs.c, k, k);
        let x = rand_tensor(&mut rng, xs, -1.0, 1.0);
        let w = rand_tensor(&mut rng, ws, -1.0, 1.0);
        let b = rand_tensor(&mut rng, Shape::new(ws.n, 1, 1, 1), -1.0, 1.0);
        worst = worst.max(check(
            &mut rng,
            vec![x, w, b],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), spec).unwrap(),
            |a| conv_ref(&a[0], xs, &a[1], ws, &a[2], &spec),
        ));
        done += 1;
    }
    worst
}

fn bn_ref(x: &[f64], s: Shape, gamma: &[f64], beta: &[f64], stats: Option<(&[f64], &[f64])>, eps: f64) -> Vec<f64> {
    let plane = s.h * s.w;
    let mut out = vec![0.0; x.len()];
    for c in 0..s.c {
        let idx: Vec<usize> = (0..s.n).flat_map(|n| (0..plane).map(move |k| (n * s.c + c) * plane + k)).collect();
        let (mean, var) = match stats {
            Some((m, v)) => (m[c], v[c]),
            None => {
                let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
                let v = idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
                (m, v)
            }
        };
        for &i in &idx {
            out[i] = gamma[c] * (x[i] - mean) / (var + eps).sqrt() + beta[c];
        }
    }
    out
}

/// Alternates training mode (batch statistics) and eval mode.
pub fn batch_norm(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = BatchNormConfig::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let training = case % 2 == 0;
        let s = Shape::new(rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=4), rng.random_range(2..=4));
        let x = rand_tensor(&mut rng, s, -2.0, 2.0);
        let cs = Shape::new(s.c, 1, 1, 1);
        let gamma = rand_tensor(&mut rng, cs, 0.5, 1.5);
        let beta = rand_tensor(&mut rng, cs, -0.5, 0.5);
        let rmean = rand_tensor(&mut rng, cs, -0.5, 0.5);
        let rvar = rand_tensor(&mut rng, cs, 0.5, 1.5);
        let mut store = ParamStore::new();
        let p = BatchNormParams {
            gamma: store.add("g", ParamKind::Trainable, gamma.clone()).unwrap(),
            beta: store.add("b", ParamKind::Trainable, beta.clone()).unwrap(),
            running_mean: store.add("rm", ParamKind::Buffer, rmean.clone()).unwrap(),
            running_var: store.add("rv", ParamKind::Buffer, rvar.clone()).unwrap(),
        };
        let mut tape = Tape::new();
        let xv = tape.input_with_grad(x.clone());
        let out = tape.batch_norm(xv, &p, &store, training, cfg).unwrap();
        let u: Vec<f32> = (0..s.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        tape.backward_with_grad(out, &u, &mut store).unwrap();

        let (rm, rv) = (to64(&rmean), to64(&rvar));
        let f = |a: &[Vec<f64>]| {
            let stats = (!training).then_some((rm.as_slice(), rv.as_slice()));
            bn_ref(&a[0], s, &a[1], &a[2], stats, cfg.eps as f64)
        };
        let u64s: Vec<f64> = u.iter().map(|&v| v as f64).collect();
        let num = numeric_grads(&[to64(&x), to64(&gamma), to64(&beta)], &u64s, &f);
        let analytic = [
            tape.grad(xv).map(<[f32]>::to_vec),
            store.tensor(p.gamma).grad().map(<[f32]>::to_vec),
            store.tensor(p.beta).grad().map(<[f32]>::to_vec),
        ];
        for (a, n) in analytic.iter().zip(&num) {
            worst = worst.max(a.as_ref().map_or(f64::INFINITY, |a| rel_err(a, n)));
        }
    }
    worst
}

pub fn relu(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(1, rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5));
        // keep clear of the kink at zero
        let data = (0..s.numel())
            .map(|_| {
                let m: f32 = rng.random_range(0.05..1.0);
                if rng.random() { m } else { -m }
            })
            .collect();
        worst = worst.max(check(
            &mut rng,
            vec![Tensor::from_vec(s, data).unwrap()],
            |t, v| t.relu(v[0]),
            |a| a[0].iter().map(|&v| v.max(0.0)).collect(),
        ));
    }
    worst
}

fn pool_ref(x: &[f64], s: Shape, k: usize, stride: usize, p: usize) -> Vec<f64> {
    let oh = (s.h + 2 * p - k) / stride + 1;
    let ow = (s.w + 2 * p - k) / stride + 1;
    let mut out = Vec::new();
    for nc in 0..s.n * s.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for i in 0..k {
                    for j in 0..k {
                        let (y, x_) = ((oy * stride + i) as isize - p as isize, (ox * stride + j) as isize - p as isize);
                        if y >= 0 && x_ >= 0 && (y as usize) < s.h && (x_ as usize) < s.w {
                            best = best.max(x[nc * s.h * s.w + y as usize * s.w + x_ as usize]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn max_pool(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < cases {
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let p = rng.random_range(0..=k / 2);
        let s = Shape::new(1, rng.random_range(1..=2), rng.random_range(2..=6), rng.random_range(2..=6));
        if s.h + 2 * p < k || s.w + 2 * p < k {
            continue;
        }
        // distinct values, far apart compared to the difference step
        let mut vals: Vec<f32> = (0..s.numel()).map(|i| i as f32 * 0.1 - 1.0).collect();
        vals.shuffle(&mut rng);
        worst = worst.max(check(
            &mut rng,
            vec![Tensor::from_vec(s, vals).unwrap()],
            |t, v| t.max_pool2d(v[0], k, stride, p).unwrap(),
            |a| pool_ref(&a[0], s, k, stride, p),
        ));
        done += 1;
    }
    worst
}

pub fn resize_ref(x: &[f64], s: Shape, oh: usize, ow: usize) -> Vec<f64> {
    let taps = |inp: usize, out: usize, d: usize| {
        let src = ((d as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(inp - 1), src - lo as f64)
    };
    let mut out = Vec::new();
    for nc in 0..s.n * s.c {
        let px = |y: usize, x_: usize| x[nc * s.h * s.w + y * s.w + x_];
        for y in 0..oh {
            let (y0, y1, fy) = taps(s.h, oh, y);
            for x_ in 0..ow {
                let (x0, x1, fx) = taps(s.w, ow, x_);
                let top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                let bot = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Up- and downsampling to random sizes.
pub fn resize_bilinear(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=5), rng.random_range(1..=5));
        let (oh, ow) = (rng.random_range(1..=9), rng.random_range(1..=9));
        let x = rand_tensor(&mut rng, s, -1.0, 1.0);
        worst = worst.max(check(
            &mut rng,
            vec![x],
            |t, v| t.resize_bilinear(v[0], oh, ow).unwrap(),
            |a| resize_ref(&a[0], s, oh, ow),
        ));
    }
    worst
}

pub fn concat(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
        let parts: Vec<Shape> = (0..rng.random_range(1..=3))
            .map(|_| Shape::new(n, rng.random_range(1..=3), h, w))
            .collect();
        let inputs: Vec<Tensor> = parts.iter().map(|&s| rand_tensor(&mut rng, s, -1.0, 1.0)).collect();
        worst = worst.max(check(
            &mut rng,
            inputs,
            |t, v| t.concat(v).unwrap(),
            |a| {
                let mut out = Vec::new();
                for b in 0..n {
                    for (x, s) in a.iter().zip(&parts) {
                        let len = s.c * h * w;
                        out.extend_from_slice(&x[b * len..(b + 1) * len]);
                    }
                }
                out
            },
        ));
    }
    worst
}

pub fn add(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let (a, b) = (rand_tensor(&mut rng, s, -1.0, 1.0), rand_tensor(&mut rng, s, -1.0, 1.0));
        worst = worst.max(check(
            &mut rng,
            vec![a, b],
            |t, v| t.add(v[0], v[1]).unwrap(),
            |a| a[0].iter().zip(&a[1]).map(|(x, y)| x + y).collect(),
        ));
    }
    worst
}

pub fn sigmoid_bce(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(rng.random_range(1..=2), 1, rng.random_range(1..=5), rng.random_range(1..=5));
        let z = rand_tensor(&mut rng, s, -4.0, 4.0);
        let targets: Vec<f32> = (0..s.numel()).map(|_| if rng.random() { 1.0 } else { 0.0 }).collect();
        let t64: Vec<f64> = targets.iter().map(|&v| v as f64).collect();
        let tt = Tensor::from_vec(s, targets).unwrap();
        worst = worst.max(check(
            &mut rng,
            vec![z],
            |t, v| t.sigmoid_bce(v[0], tt.clone()).unwrap(),
            |a| {
                // plain logistic loss, without the stable rearrangement
                let sum: f64 = a[0]
                    .iter()
                    .zip(&t64)
                    .map(|(&z, &t)| {
                        let p = 1.0 / (1.0 + (-z).exp());
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum();
                vec![sum / a[0].len() as f64]
            },
        ));
    }
    worst
}

/// conv -> resize -> add(x, x), differentiated as a whole.
pub fn chain(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(2, 2, 5, 5);
        let spec = ConvSpec::same(3, 1, rng.random_range(1..=2));
        let x = rand_tensor(&mut rng, s, -1.0, 1.0);
        let ws = Shape::new(2, 2, 3, 3);
        let w = rand_tensor(&mut rng, ws, -1.0, 1.0);
        let up = (7, 6);
        worst = worst.max(check(
            &mut rng,
            vec![x, w],
            |t, v| {
                let c = t.conv2d(v[0], v[1], None, spec).unwrap();
                let r = t.resize_bilinear(c, up.0, up.1).unwrap();
                t.add(r, r).unwrap()
            },
            |a| {
                let c = conv_ref(&a[0], s, &a[1], ws, &[0.0, 0.0], &spec);
                resize_ref(&c, s, up.0, up.1).iter().map(|v| 2.0 * v).collect()
            },
        ));
    }
    worst
}

/// Every suite by name.
pub const SUITES: [(&str, fn(usize) -> f64); 9] = [
    ("conv2d", conv2d),
    ("batch_norm", batch_norm),
    ("relu", relu),
    ("max_pool2d", max_pool),
    ("resize_bilinear", resize_bilinear),
    ("concat", concat),
    ("add", add),
    ("sigmoid_bce", sigmoid_bce),
    ("chain", chain),
];
