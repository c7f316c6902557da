//! Small full-batch logistic models on fixed features, used as probes and as
//! the AFLite partition classifier.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// Per-column mean and scale learned on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Mat) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let var = (x - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let scale = var.mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        (x - &self.mean) / &self.scale
    }
}

fn check_rows(x: &Mat, n: usize) -> Result<()> {
    if x.nrows() == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: n,
        })
    }
}

/// Adam on a dense weight matrix and bias row.
struct Adam2 {
    m: Mat,
    v: Mat,
    t: i32,
}

impl Adam2 {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Mat::zeros((rows, cols)),
            v: Mat::zeros((rows, cols)),
            t: 0,
        }
    }

    fn step(&mut self, p: &mut Mat, g: &Mat, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - 0.9f64.powi(self.t);
        let bc2 = 1.0 - 0.999f64.powi(self.t);
        ndarray::Zip::from(p).and(&mut self.m).and(&mut self.v).and(g).for_each(|p, m, v, &g| {
            *m = 0.9 * *m + 0.1 * g;
            *v = 0.999 * *v + 0.001 * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + 1e-8);
        });
    }
}

/// Weights include a trailing bias row.
fn with_bias(x: &Mat) -> Mat {
    let mut out = Mat::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}

/// Softmax regression over `num_classes` labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    std: Standardizer,
    w: Mat,
}

impl SoftmaxRegression {
    pub fn fit(x: &Mat, labels: &[usize], num_classes: usize, opts: &FitOptions) -> Result<Self> {
        check_rows(x, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        let std = Standardizer::fit(x);
        let xb = with_bias(&std.apply(x));
        let n = x.nrows().max(1) as f64;
        let mut w = Mat::zeros((xb.ncols(), num_classes));
        let mut opt = Adam2::new(xb.ncols(), num_classes);
        for _ in 0..opts.iterations {
            let mut p = xb.dot(&w);
            for mut row in p.outer_iter_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
                row.mapv_inplace(|v| (v - max).exp());
                let z = row.sum();
                row /= z;
            }
            for (i, &l) in labels.iter().enumerate() {
                p[[i, l]] -= 1.0;
            }
            let g = xb.t().dot(&p) / n + &w * opts.l2;
            opt.step(&mut w, &g, opts.learning_rate);
        }
        Ok(Self { std, w })
    }

    pub fn predict(&self, x: &Mat) -> Vec<usize> {
        let s = with_bias(&self.std.apply(x)).dot(&self.w);
        s.outer_iter()
            .map(|r| {
                let mut best = 0;
                for (j, v) in r.iter().enumerate() {
                    if *v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Mat, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self.predict(x).iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Independent per-column logistic regressions sharing one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelLogistic {
    std: Standardizer,
    w: Mat,
}

impl MultiLabelLogistic {
    pub fn fit(x: &Mat, y: &Mat, opts: &FitOptions) -> Result<Self> {
        check_rows(x, y.nrows())?;
        let std = Standardizer::fit(x);
        let xb = with_bias(&std.apply(x));
        let n = x.nrows().max(1) as f64;
        let mut w = Mat::zeros((xb.ncols(), y.ncols()));
        let mut opt = Adam2::new(xb.ncols(), y.ncols());
        for _ in 0..opts.iterations {
            let p = xb.dot(&w).mapv(sigmoid) - y;
            let g = xb.t().dot(&p) / n + &w * opts.l2;
            opt.step(&mut w, &g, opts.learning_rate);
        }
        Ok(Self { std, w })
    }

    pub fn logits(&self, x: &Mat) -> Mat {
        with_bias(&self.std.apply(x)).dot(&self.w)
    }

    /// Flags at probability 0.5.
    pub fn predict(&self, x: &Mat) -> Vec<Vec<bool>> {
        self.logits(x)
            .outer_iter()
            .map(|r| r.iter().map(|v| *v >= 0.0).collect())
            .collect()
    }
}
