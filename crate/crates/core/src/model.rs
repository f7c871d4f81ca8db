//! Logistic score model `s = 1 / (1 + exp(-θᵀ(a, x)))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSchema, GroupKey};
use crate::error::{Error, Result};

/// Scores are kept inside `[SCORE_FLOOR, 1 - SCORE_FLOOR]`.
pub const SCORE_FLOOR: f64 = f64::EPSILON;

/// How sensitive attributes enter the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveInput {
    /// One indicator column per level of every sensitive attribute.
    #[default]
    OneHot,
    /// Integer level codes used directly.
    Raw,
    /// Sensitive attributes not seen by the model.
    Excluded,
}

/// Maps `(a, x)` to the model's input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub sensitive: SensitiveInput,
    /// Level count per sensitive attribute.
    pub sensitive_levels: Vec<usize>,
    pub n_features: usize,
    pub intercept: bool,
    pub names: Vec<String>,
}

impl InputLayout {
    pub fn for_schema(schema: &DatasetSchema, sensitive: SensitiveInput, intercept: bool) -> Self {
        let mut names = Vec::new();
        match sensitive {
            SensitiveInput::OneHot => {
                for attr in &schema.sensitive {
                    names.extend(attr.levels.iter().map(|l| format!("{}={}", attr.name, l)));
                }
            }
            SensitiveInput::Raw => names.extend(schema.sensitive.iter().map(|a| a.name.clone())),
            SensitiveInput::Excluded => {}
        }
        names.extend(schema.feature_names.iter().cloned());
        if intercept {
            names.push("intercept".into());
        }
        Self {
            sensitive,
            sensitive_levels: schema.sensitive.iter().map(|a| a.levels.len()).collect(),
            n_features: schema.feature_names.len(),
            intercept,
            names,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn encode_into(&self, a: &[i64], x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if a.len() != self.sensitive_levels.len() {
            return Err(Error::Dimension {
                expected: self.sensitive_levels.len(),
                got: a.len(),
            });
        }
        if x.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        out.clear();
        match self.sensitive {
            SensitiveInput::OneHot => {
                for (&code, &levels) in a.iter().zip(&self.sensitive_levels) {
                    if code < 0 || code as usize >= levels {
                        return Err(Error::Parameter(format!("level code {code} out of range")));
                    }
                    out.extend((0..levels).map(|l| f64::from(u8::from(l == code as usize))));
                }
            }
            SensitiveInput::Raw => out.extend(a.iter().map(|&c| c as f64)),
            SensitiveInput::Excluded => {}
        }
        out.extend_from_slice(x);
        if self.intercept {
            out.push(1.0);
        }
        Ok(())
    }

    pub fn encode(&self, a: &[i64], x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        self.encode_into(a, x, &mut out)?;
        Ok(out)
    }

    /// Encodes every record of `d` into a dense row-major matrix.
    pub fn design(&self, d: &Dataset) -> Result<DesignMatrix> {
        let dim = self.dim();
        let mut rows = Vec::with_capacity(d.len() * dim);
        let mut buf = Vec::with_capacity(dim);
        for r in d.records() {
            self.encode_into(&r.a, &r.x, &mut buf)?;
            rows.extend_from_slice(&buf);
        }
        Ok(DesignMatrix {
            dim,
            rows,
            labels: d.records().iter().map(|r| r.y).collect(),
            groups: d.groups().clone(),
        })
    }
}

/// Encoded model inputs with labels and group membership.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub dim: usize,
    rows: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: BTreeMap<GroupKey, Vec<usize>>,
}

impl DesignMatrix {
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
        groups: BTreeMap<GroupKey, Vec<usize>>,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Parameter("ragged design rows".into()));
        }
        if labels.len() != rows.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        Ok(Self {
            dim,
            rows: rows.concat(),
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Numerically stable logistic function, clamped away from 0 and 1.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    layout: InputLayout,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NamedCoefficient {
    name: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layout: InputLayout,
    coefficients: Vec<NamedCoefficient>,
}

impl LogisticModel {
    pub fn new(layout: InputLayout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.dim() {
            return Err(Error::Dimension {
                expected: layout.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("non-finite model parameter".into()));
        }
        Ok(Self { layout, theta })
    }

    pub fn zeros(layout: InputLayout) -> Self {
        let theta = vec![0.0; layout.dim()];
        Self { layout, theta }
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Score of an already-encoded input row.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(dot(&self.theta, row))
    }

    pub fn score(&self, a: &GroupKey, x: &[f64]) -> Result<f64> {
        let row = self.layout.encode(a.values(), x)?;
        Ok(self.score_row(&row))
    }

    /// `∇_θ s = (a, x)ᵀ s (1 - s)` for an encoded row.
    pub fn grad_score_row(&self, row: &[f64]) -> Vec<f64> {
        let s = self.score_row(row);
        let w = s * (1.0 - s);
        row.iter().map(|v| v * w).collect()
    }

    pub fn grad_score(&self, a: &GroupKey, x: &[f64]) -> Result<Vec<f64>> {
        let row = self.layout.encode(a.values(), x)?;
        Ok(self.grad_score_row(&row))
    }

    pub fn scores(&self, design: &DesignMatrix) -> Vec<f64> {
        (0..design.len()).map(|i| self.score_row(design.row(i))).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            layout: self.layout.clone(),
            coefficients: self
                .layout
                .names
                .iter()
                .zip(&self.theta)
                .map(|(name, &value)| NamedCoefficient {
                    name: name.clone(),
                    value,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.coefficients.len() != file.layout.dim()
            || file
                .coefficients
                .iter()
                .zip(&file.layout.names)
                .any(|(c, n)| &c.name != n)
        {
            return Err(Error::Parameter("coefficient names do not match the layout".into()));
        }
        let theta = file.coefficients.iter().map(|c| c.value).collect();
        Self::new(file.layout, theta)
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrOptions {
    pub sensitive: SensitiveInput,
    pub intercept: bool,
    /// L2 strength on non-intercept weights; `None` uses `1 / (N * C)` with `C = 1`.
    pub l2_strength: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self {
            sensitive: SensitiveInput::OneHot,
            intercept: true,
            l2_strength: None,
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LrFit {
    pub model: LogisticModel,
    pub iterations: usize,
    pub grad_norm: f64,
    /// False when `max_iters` ran out before the gradient-norm tolerance.
    pub converged: bool,
    /// Objective after each accepted iteration, starting from `θ = 0`.
    pub objective_path: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct LrProblem<'a> {
    design: &'a DesignMatrix,
    l2: f64,
    penalized: Vec<bool>,
}

impl LrProblem<'_> {
    fn objective(&self, theta: &[f64]) -> f64 {
        let n = self.design.len() as f64;
        let mut loss = 0.0;
        for i in 0..self.design.len() {
            let z = dot(theta, self.design.row(i));
            loss += softplus(z) - f64::from(self.design.labels[i]) * z;
        }
        let reg: f64 = theta
            .iter()
            .zip(&self.penalized)
            .filter(|(_, &p)| p)
            .map(|(t, _)| t * t)
            .sum();
        loss / n + 0.5 * self.l2 * reg
    }

    fn gradient_hessian(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dim = theta.len();
        let n = self.design.len() as f64;
        let mut g = vec![0.0; dim];
        let mut h = vec![0.0; dim * dim];
        for i in 0..self.design.len() {
            let row = self.design.row(i);
            let z = dot(theta, row);
            let s = 1.0 / (1.0 + (-z).exp());
            let r = s - f64::from(self.design.labels[i]);
            let w = s * (1.0 - s);
            for (a, &ra) in row.iter().enumerate() {
                if ra == 0.0 {
                    continue;
                }
                g[a] += r * ra;
                let wa = w * ra;
                let hrow = &mut h[a * dim..(a + 1) * dim];
                for (hb, &rb) in hrow.iter_mut().zip(row).take(a + 1) {
                    *hb += wa * rb;
                }
            }
        }
        for a in 0..dim {
            g[a] /= n;
            for b in 0..=a {
                h[a * dim + b] /= n;
                h[b * dim + a] = h[a * dim + b];
            }
            if self.penalized[a] {
                g[a] += self.l2 * theta[a];
                h[a * dim + a] += self.l2;
            }
        }
        (g, h)
    }
}

/// Solves `h x = g` for symmetric positive (semi)definite `h` via Cholesky,
/// adding diagonal jitter when a pivot is not positive.
fn cholesky_solve(h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut jitter = 0.0;
    loop {
        let mut l = vec![0.0; n * n];
        let mut ok = true;
        'outer: for i in 0..n {
            for j in 0..=i {
                let mut sum = h[i * n + j];
                if i == j {
                    sum += jitter;
                }
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        ok = false;
                        break 'outer;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        if ok {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
                y[i] = (g[i] - s) / l[i * n + i];
            }
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * n + i];
            }
            return x;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
}

/// Fits L2-regularized logistic regression by damped Newton iterations.
///
/// Minimizes `(1/N) Σ log-loss + (l2/2) ‖w‖²`, the intercept unpenalized.
pub fn train_lr(d: &Dataset, opts: &LrOptions) -> Result<LrFit> {
    let layout = InputLayout::for_schema(d.schema(), opts.sensitive, opts.intercept);
    let design = layout.design(d)?;
    train_lr_design(layout, &design, opts)
}

pub fn train_lr_design(layout: InputLayout, design: &DesignMatrix, opts: &LrOptions) -> Result<LrFit> {
    if design.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let positives = design.labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == design.len() {
        return Err(Error::DegenerateLabels(format!(
            "{positives} positives among {} records",
            design.len()
        )));
    }
    let l2 = opts.l2_strength.unwrap_or(1.0 / design.len() as f64);
    if l2 < 0.0 || !l2.is_finite() {
        return Err(Error::Parameter(format!("l2 strength {l2} must be non-negative")));
    }
    let dim = layout.dim();
    let mut penalized = vec![true; dim];
    if layout.intercept {
        penalized[dim - 1] = false;
    }
    let problem = LrProblem {
        design,
        l2,
        penalized,
    };

    let mut theta = vec![0.0; dim];
    let mut f = problem.objective(&theta);
    let mut path = vec![f];
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let (g, h) = problem.gradient_hessian(&theta);
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        let step = cholesky_solve(&h, &g);
        let slope: f64 = -dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let ft = problem.objective(&trial);
            if ft <= f + 1e-4 * t * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // no decrease possible at working precision
            let (g, _) = problem.gradient_hessian(&theta);
            grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            converged = grad_norm <= opts.tol.max(1e-6);
            break;
        }
        path.push(f);
    }
    if !converged && iterations >= opts.max_iters {
        let (g, _) = problem.gradient_hessian(&theta);
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        converged = grad_norm <= opts.tol;
        if !converged {
            log::warn!("logistic regression stopped at max_iters with gradient norm {grad_norm:e}");
        }
    }
    Ok(LrFit {
        model: LogisticModel::new(layout, theta)?,
        iterations,
        grad_norm,
        converged,
        objective_path: path,
    })
}
