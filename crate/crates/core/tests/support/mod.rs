//! Shared helpers for integration tests: finite-difference gradient
//! verification machinery over the full op set.

use adsm_core::autodiff::{Tape, Var};
use adsm_core::rng::stream;
use adsm_core::tensor::Tensor;
use adsm_core::Result;
use rand_distr::{Distribution, StandardNormal, Uniform};

type Build = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

/// One scalar-valued test function built around a single focal op. The last
/// input usually acts as a random projection so the op's backward pass sees a
/// non-uniform incoming adjoint.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl OpCase {
    fn eval(&self, xs: &[Tensor<f64>]) -> f64 {
        let tape: Tape<f64> = Tape::new();
        let vars: Vec<Var<f64>> = xs.iter().map(|x| tape.constant(x)).collect();
        (self.build)(&tape, &vars)
            .expect("forward failed")
            .tensor()
            .scalar_value()
            .expect("test functions are scalar-valued")
    }

    /// Worst relative disagreement between reverse-mode and central
    /// finite-difference gradients, over every component of every input.
    pub fn max_rel_err(&self) -> f64 {
        let tape: Tape<f64> = Tape::new();
        let vars: Vec<Var<f64>> = self.inputs.iter().map(|x| tape.param(x)).collect();
        let out = (self.build)(&tape, &vars).expect("forward failed");
        let grads = out.grad(&vars).expect("backward failed");

        let h = 1e-4;
        let mut worst = 0.0f64;
        for (i, x) in self.inputs.iter().enumerate() {
            let mut fd = vec![0.0f64; x.numel()];
            for j in 0..x.numel() {
                let mut xs = self.inputs.clone();
                xs[i] = bump(x, j, h);
                let plus = self.eval(&xs);
                xs[i] = bump(x, j, -h);
                let minus = self.eval(&xs);
                fd[j] = (plus - minus) / (2.0 * h);
            }
            let ad = grads[i].data();
            let scale = fd
                .iter()
                .chain(ad)
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-8);
            for (a, f) in ad.iter().zip(&fd) {
                worst = worst.max((a - f).abs() / scale);
            }
        }
        worst
    }
}

fn bump(x: &Tensor<f64>, j: usize, h: f64) -> Tensor<f64> {
    let mut data = x.data().to_vec();
    data[j] += h;
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn normal(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in ±[0.2, 1.7]: keeps `abs` away from its kink at 0.
fn signed_away_from_zero(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let u = Uniform::new(0.2f64, 1.7).unwrap();
    let data = (0..n)
        .map(|_| u.sample(rng) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in [0.5, 2.0] for `log`/`sqrt`.
fn positive(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let u = Uniform::new(0.5f64, 2.0).unwrap();
    let data = (0..n).map(|_| u.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Normals with the maximum raised well clear of the runner-up, so ±h
/// perturbation cannot change the argmax of `max_reduce`.
fn unique_max(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let t = normal(rng, shape);
    let mut data = t.data().to_vec();
    let best = data
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    data[best] += 0.5;
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// All op cases for one random trial. Every differentiable op in the tape
/// appears at least once as the focal operation.
pub fn op_cases(trial: u64) -> Vec<OpCase> {
    let mut rng = stream(trial, "gradcheck", &[]);
    let r = &mut rng;
    vec![
        OpCase {
            name: "add",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].add(v[1])?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "sub",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].sub(v[1])?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "mul",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].mul(v[1])?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "add_row_broadcast",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].add(v[1])?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "add_scalar",
            inputs: vec![normal(r, &[2, 5]), normal(r, &[2, 5])],
            build: Box::new(|_, v| v[0].add_scalar(0.37)?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "mul_scalar",
            inputs: vec![normal(r, &[2, 5]), normal(r, &[2, 5])],
            build: Box::new(|_, v| v[0].mul_scalar(-1.91)?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "matmul",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[4, 2]), normal(r, &[3, 2])],
            build: Box::new(|_, v| v[0].matmul(v[1])?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "transpose",
            inputs: vec![normal(r, &[3, 5]), normal(r, &[5, 3])],
            build: Box::new(|_, v| v[0].transpose()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "reshape",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[2, 6])],
            build: Box::new(|_, v| v[0].reshape(&[2, 6])?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "split",
            inputs: vec![normal(r, &[4, 6]), normal(r, &[2, 6]), normal(r, &[4, 3])],
            build: Box::new(|_, v| {
                // both halves of an axis-0 split, plus one half of an axis-1
                // split, so partial consumption is exercised too
                let rows = v[0].split(0, 2)?;
                let cols = v[0].split(1, 2)?;
                let a = rows[0].mul(v[1])?.sum()?;
                let b = rows[1].mul(v[1])?.sum()?;
                let c = cols[1].mul(v[2])?.sum()?;
                a.add(b)?.add(c)
            }),
        },
        OpCase {
            name: "concat",
            inputs: vec![normal(r, &[2, 3]), normal(r, &[2, 3]), normal(r, &[4, 3])],
            build: Box::new(|t, v| t.concat(&[v[0], v[1]], 0)?.mul(v[2])?.sum()),
        },
        OpCase {
            name: "gather_rows",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[5, 4])],
            // duplicate indices make the backward accumulate
            build: Box::new(|_, v| v[0].gather_rows(&[2, 0, 2, 1, 0])?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "sum",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].mul(v[1])?.sum()),
        },
        OpCase {
            name: "mean",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].mul(v[1])?.mean()),
        },
        OpCase {
            name: "max_reduce",
            inputs: vec![unique_max(r, &[3, 4])],
            build: Box::new(|_, v| v[0].max_reduce()),
        },
        OpCase {
            name: "abs",
            inputs: vec![signed_away_from_zero(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].abs()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "exp",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].exp()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "log",
            inputs: vec![positive(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].log()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "sqrt",
            inputs: vec![positive(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].sqrt()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "gelu",
            inputs: vec![normal(r, &[3, 4]), normal(r, &[3, 4])],
            build: Box::new(|_, v| v[0].gelu()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "softmax",
            inputs: vec![normal(r, &[3, 5]), normal(r, &[3, 5])],
            build: Box::new(|_, v| v[0].softmax()?.mul(v[1])?.sum()),
        },
        OpCase {
            name: "layer_norm",
            inputs: vec![normal(r, &[3, 6]), normal(r, &[3, 6])],
            build: Box::new(|_, v| v[0].layer_norm()?.mul(v[1])?.sum()),
        },
    ]
}

/// Run `trials` random draws of every op case; returns (cases checked,
/// worst relative error, name of the worst case).
pub fn gradcheck_sweep(trials: u64) -> (usize, f64, &'static str) {
    let mut count = 0usize;
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for trial in 0..trials {
        for case in op_cases(trial) {
            let err = case.max_rel_err();
            if err > worst {
                worst = err;
                worst_name = case.name;
            }
            count += 1;
        }
    }
    (count, worst, worst_name)
}
