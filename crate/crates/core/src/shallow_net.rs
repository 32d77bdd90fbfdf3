//! Single-hidden-layer, scalar-output network with a fixed sign output layer:
//! `f(W, x) = (1/mu) sum_r a_r act(w_r . x)`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{dot, norm, norm1};

const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative; relu uses 0 at the kink.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// First-layer weights plus the fixed output layer.
///
/// Neuron `r` occupies `weights[r*d .. (r+1)*d]`. `t` is the training clock,
/// the accumulated sum of learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    d: usize,
    m: usize,
    weights: Vec<f64>,
    signs: Vec<f64>,
    mu: f64,
    activation: Activation,
    pub t: f64,
}

impl NetworkState {
    /// Gaussian first layer with covariance `(2/m) I_d`, uniform signs.
    pub fn init(d: usize, m: usize, mu: f64, activation: Activation, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidParameter("d and m must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / m as f64).sqrt()).expect("positive std");
        let weights = (0..m * d).map(|_| normal.sample(&mut rng)).collect();
        let signs = (0..m)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Self::from_parts(d, weights, signs, mu, activation)
    }

    pub fn from_parts(
        d: usize,
        weights: Vec<f64>,
        signs: Vec<f64>,
        mu: f64,
        activation: Activation,
    ) -> Result<Self> {
        let m = signs.len();
        if d == 0 || m == 0 {
            return Err(Error::InvalidParameter("d and m must be at least 1".into()));
        }
        if weights.len() != m * d {
            return Err(Error::Dimension {
                expected: m * d,
                got: weights.len(),
            });
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if signs.iter().any(|&a| a != 1.0 && a != -1.0) {
            return Err(Error::InvalidParameter("output signs must be +1 or -1".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(Self {
            d,
            m,
            weights,
            signs,
            mu,
            activation,
            t: 0.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn width(&self) -> usize {
        self.m
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn neuron(&self, r: usize) -> &[f64] {
        &self.weights[r * self.d..(r + 1) * self.d]
    }

    /// `m / mu`, the admissible target magnitude.
    pub fn target_bound(&self) -> f64 {
        self.m as f64 / self.mu
    }

    /// `max_r ||w_r||`.
    pub fn max_neuron_norm(&self) -> f64 {
        (0..self.m)
            .map(|r| norm(self.neuron(r)))
            .fold(0.0, f64::max)
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let s: f64 = (0..self.m)
            .map(|r| self.signs[r] * self.activation.value(dot(self.neuron(r), x)))
            .sum();
        s / self.mu
    }

    /// Gradient of `f` with respect to `W`, laid out like the weights:
    /// neuron `r` gets `(a_r/mu) act'(w_r . x) x`.
    pub fn grad_weights(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.m * self.d];
        for r in 0..self.m {
            let scale =
                self.signs[r] * self.activation.derivative(dot(self.neuron(r), x)) / self.mu;
            for (gk, xk) in g[r * self.d..(r + 1) * self.d].iter_mut().zip(x) {
                *gk = scale * xk;
            }
        }
        g
    }

    /// Residuals `f(x_i) - y_i`.
    pub fn training_error(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .map(|i| self.forward(data.input(i)) - data.target(i))
            .collect()
    }

    /// One full-batch gradient step on `sum_i (f(x_i) - y_i)^2 / 2`.
    pub fn gd_step(&self, data: &Dataset, eta: f64) -> NetworkState {
        let v = self.training_error(data);
        self.gd_step_with_error(data, &v, eta)
    }

    pub(crate) fn gd_step_with_error(&self, data: &Dataset, v: &[f64], eta: f64) -> NetworkState {
        let mut next = self.clone();
        for r in 0..self.m {
            let w = self.neuron(r);
            let mut grad = vec![0.0; self.d];
            for (i, &vi) in v.iter().enumerate() {
                let x = data.input(i);
                let c = vi * self.activation.derivative(dot(w, x));
                for (gk, xk) in grad.iter_mut().zip(x) {
                    *gk += c * xk;
                }
            }
            let scale = eta * self.signs[r] / self.mu;
            for (wk, gk) in next.weights[r * self.d..(r + 1) * self.d]
                .iter_mut()
                .zip(&grad)
            {
                *wk -= scale * gk;
            }
        }
        next.t = self.t + eta;
        next
    }

    /// Mean squared error on an arbitrary sample set.
    pub fn test_loss(&self, data: &Dataset) -> f64 {
        empirical_loss(&self.training_error(data))
    }
}

/// `||v||^2 / n`.
pub fn empirical_loss(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    dot(v, v) / v.len() as f64
}

/// Inputs on the unit sphere with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("input dimension must be at least 1".into()));
        }
        if inputs.len() != d * targets.len() {
            return Err(Error::Dimension {
                expected: d * targets.len(),
                got: inputs.len(),
            });
        }
        for (index, x) in inputs.chunks(d).enumerate() {
            let n = norm(x);
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::InputNotUnit { index, norm: n });
            }
        }
        if let Some(index) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::Parse(format!("target {index} is not finite")));
        }
        Ok(Self { d, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Checks that the data can be trained by `net`: matching input
    /// dimension and `|y| <= m/mu` for every target.
    pub fn bind(&self, net: &NetworkState) -> Result<()> {
        if self.d != net.input_dim() {
            return Err(Error::Dimension {
                expected: net.input_dim(),
                got: self.d,
            });
        }
        let bound = net.target_bound();
        let slack = bound * 1e-12;
        for (index, &value) in self.targets.iter().enumerate() {
            if value.abs() > bound + slack {
                return Err(Error::TargetBound { index, value, bound });
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.d);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            d: self.d,
            inputs,
            targets,
        }
    }

    /// CSV with header `x1,...,xd,y` and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        out.push_str(&header.join(","));
        out.push_str(",y\n");
        for i in 0..self.len() {
            for x in self.input(i) {
                let _ = write!(out, "{x:.16e},");
            }
            let _ = writeln!(out, "{:.16e}", self.targets[i]);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let d = cols.len().saturating_sub(1);
        let expected: Vec<String> = (1..=d)
            .map(|k| format!("x{k}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if d == 0 || cols != expected {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} columns, expected {}",
                    lineno + 1,
                    vals.len(),
                    d + 1
                )));
            }
            inputs.extend_from_slice(&vals[..d]);
            targets.push(vals[d]);
        }
        Dataset::new(d, inputs, targets)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// `max_r ||w_r(next) - w_r(prev)||`.
pub fn max_neuron_shift(prev: &NetworkState, next: &NetworkState) -> f64 {
    (0..prev.width())
        .map(|r| {
            let diff: Vec<f64> = prev
                .neuron(r)
                .iter()
                .zip(next.neuron(r))
                .map(|(a, b)| b - a)
                .collect();
            norm(&diff)
        })
        .fold(0.0, f64::max)
}

/// Upper bound on a single neuron's movement in one step: `(eta/mu) ||v||_1`.
pub fn step_bound(eta: f64, mu: f64, v: &[f64]) -> f64 {
    eta / mu * norm1(v)
}
