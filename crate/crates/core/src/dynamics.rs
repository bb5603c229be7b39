//! Discrete-time system models: the four-tray distillation column, linear
//! state-space systems and user-scripted maps, plus simulation and
//! finite-difference linearization.

use std::fmt;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_to_rows, rows_to_matrix};
use crate::sampling::Trajectory;

/// `x_{t+1} = f(x_t, u_t)`, `y_t = h(x_t, u_t)`.
pub trait SystemModel: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

/// Input saturation `max{−0.5, min{0.5, u}}`.
pub fn saturate(u: f64) -> f64 {
    u.clamp(-0.5, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillationParams {
    /// Vapor flow rate (mol/min).
    pub v: f64,
    /// Reflux flow rate (mol/min).
    pub l: f64,
    /// Feed flow rate (mol/min).
    pub f: f64,
    /// Relative volatility.
    pub beta: f64,
    /// Nominal feed composition.
    pub z_f: f64,
    /// Tray liquid holdups (mol).
    pub h: [f64; 4],
}

impl Default for DistillationParams {
    fn default() -> Self {
        DistillationParams { v: 6.05, l: 4.79, f: 1.70, beta: 1.60, z_f: 0.56, h: [5.25, 0.53, 0.53, 5.25] }
    }
}

impl DistillationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.v, self.l, self.f, self.beta, self.z_f].iter().chain(self.h.iter()).all(|v| *v > 0.0);
        if !positive || !(self.beta > 1.0) || !(self.z_f < 1.0) {
            return Err(Error::InvalidInput(format!(
                "distillation parameters need positive flows and holdups, beta > 1 and 0 < z_f < 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Vapor-liquid equilibrium `βx / (1 + (β − 1)x)`.
    fn vle(&self, x: f64) -> Result<f64> {
        let den = 1.0 + (self.beta - 1.0) * x;
        if den <= 0.0 {
            return Err(Error::Domain(format!("1 + (beta - 1)x = {den} ≤ 0 at x = {x}")));
        }
        Ok(self.beta * x / den)
    }
}

/// Right-hand side of the column ODE.
pub fn distillation_rhs(x: &[f64; 4], u: f64, p: &DistillationParams) -> Result<[f64; 4]> {
    let [x1, x2, x3, x4] = *x;
    let [h1, h2, h3, h4] = p.h;
    let (e2, e3, e4) = (p.vle(x2)?, p.vle(x3)?, p.vle(x4)?);
    Ok([
        -p.v / h1 * x1 + p.v / h1 * e2,
        p.l / h2 * (x1 - x2) + p.v / h2 * (e3 - e2),
        -p.f / h3 * x3 + p.l / h3 * (x2 - x3) + p.v / h3 * e4 - p.v / h3 * e3
            + p.f / h3 * p.z_f * (1.0 + saturate(u)),
        (p.f + p.l) / h4 * (x3 - x4) + p.v / h4 * (x4 - e4),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Sample period (min).
    pub dt: f64,
    /// RK4 steps per sample.
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 0.1, substeps: 10 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) || self.substeps < 1 {
            return Err(Error::InvalidInput(format!("integrator needs dt > 0 and substeps ≥ 1: {self:?}")));
        }
        Ok(())
    }
}

/// Classical fourth-order Runge-Kutta over one sample period.
pub fn rk4<F>(rhs: F, x: &[f64], dt: f64, substeps: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let h = dt / substeps as f64;
    let n = x.len();
    let mut x = x.to_vec();
    let axpy = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> { (0..n).map(|i| x[i] + a * k[i]).collect() };
    for _ in 0..substeps {
        let k1 = rhs(&x)?;
        let k2 = rhs(&axpy(&x, &k1, 0.5 * h))?;
        let k3 = rhs(&axpy(&x, &k2, 0.5 * h))?;
        let k4 = rhs(&axpy(&x, &k3, h))?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(x)
}

/// Steady state of the column at constant input `u`, found by damped Newton
/// iteration on the ODE right-hand side.
pub fn distillation_equilibrium(p: &DistillationParams, u: f64) -> Result<[f64; 4]> {
    p.validate()?;
    let f = |x: &[f64; 4]| distillation_rhs(x, u, p);
    let norm = |v: &[f64; 4]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = [p.z_f; 4];
    let mut r = f(&x)?;
    for _ in 0..100 {
        if norm(&r) <= 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let hstep = 1e-7 * (1.0 + x[j].abs());
            let (mut xp, mut xm) = (x, x);
            xp[j] += hstep;
            xm[j] -= hstep;
            let (fp, fm) = (f(&xp)?, f(&xm)?);
            for i in 0..4 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * hstep);
            }
        }
        let dx = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::Domain("singular Jacobian in equilibrium search".into()))?;
        let mut step = 1.0;
        loop {
            let mut cand = x;
            for i in 0..4 {
                cand[i] -= step * dx[i];
            }
            if let Ok(rc) = f(&cand) {
                if norm(&rc) < norm(&r) || step < 1e-8 {
                    x = cand;
                    r = rc;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::Domain("equilibrium line search failed".into()));
            }
        }
    }
    if norm(&r) > 1e-12 {
        return Err(Error::Domain(format!("equilibrium residual {:.3e} above 1e-12", norm(&r))));
    }
    Ok(x)
}

/// Distillation column sampled at `integrator.dt`, expressed in deviation
/// variables around its `u = 0` steady state. Outputs are the top and bottom
/// compositions `(x₁, x₄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationColumn {
    pub params: DistillationParams,
    pub integrator: IntegratorConfig,
    pub equilibrium: [f64; 4],
}

impl DistillationColumn {
    pub fn new(params: DistillationParams, integrator: IntegratorConfig) -> Result<Self> {
        params.validate()?;
        integrator.validate()?;
        let equilibrium = distillation_equilibrium(&params, 0.0)?;
        Ok(DistillationColumn { params, integrator, equilibrium })
    }

    /// One sample period in absolute compositions.
    pub fn step_absolute(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        let p = self.params;
        rk4(
            |s| {
                let arr = [s[0], s[1], s[2], s[3]];
                Ok(distillation_rhs(&arr, u, &p)?.to_vec())
            },
            x,
            self.integrator.dt,
            self.integrator.substeps,
        )
    }
}

impl SystemModel for DistillationColumn {
    fn n_x(&self) -> usize {
        4
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let abs: Vec<f64> = x.iter().zip(self.equilibrium.iter()).map(|(d, e)| d + e).collect();
        let next = self.step_absolute(&abs, u[0])?;
        Ok(next.iter().zip(self.equilibrium.iter()).map(|(a, e)| a - e).collect())
    }

    fn output(&self, x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![x[0], x[3]]
    }
}

/// `x_{t+1} = A x_t + B u_t`, `y_t = C x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "inconsistent linear system: A {:?}, B {:?}, C {:?}",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        Ok(LinearSystem { a, b, c })
    }

    /// Scalar system `x⁺ = a x + b u`, `y = c x`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        LinearSystem {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            c: DMatrix::from_element(1, 1, c),
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl SystemModel for LinearSystem {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }
    fn n_u(&self) -> usize {
        self.b.ncols()
    }
    fn n_y(&self) -> usize {
        self.c.nrows()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let next = &self.a * DVector::from_column_slice(x) + &self.b * DVector::from_column_slice(u);
        Ok(next.iter().copied().collect())
    }

    fn output(&self, x: &[f64], _u: &[f64]) -> Vec<f64> {
        (&self.c * DVector::from_column_slice(x)).iter().copied().collect()
    }
}

/// Model given as arithmetic expressions in `x1..xn` and `u1..um`.
pub struct ScriptedModel {
    n_u: usize,
    step_exprs: Vec<Node<DefaultNumericTypes>>,
    output_exprs: Vec<Node<DefaultNumericTypes>>,
}

impl fmt::Debug for ScriptedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedModel")
            .field("n_x", &self.step_exprs.len())
            .field("n_u", &self.n_u)
            .field("n_y", &self.output_exprs.len())
            .finish()
    }
}

impl ScriptedModel {
    pub fn new(step: &[String], output: &[String], n_u: usize) -> Result<Self> {
        let compile = |src: &String| {
            build_operator_tree::<DefaultNumericTypes>(src)
                .map_err(|e| Error::InvalidInput(format!("cannot parse expression `{src}`: {e}")))
        };
        if step.is_empty() || output.is_empty() || n_u == 0 {
            return Err(Error::InvalidInput("scripted model needs states, outputs and inputs".into()));
        }
        Ok(ScriptedModel {
            n_u,
            step_exprs: step.iter().map(compile).collect::<Result<_>>()?,
            output_exprs: output.iter().map(compile).collect::<Result<_>>()?,
        })
    }

    fn eval_all(&self, exprs: &[Node<DefaultNumericTypes>], x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (prefix, vals) in [("x", x), ("u", u)] {
            for (i, v) in vals.iter().enumerate() {
                ctx.set_value(format!("{prefix}{}", i + 1), Value::Float(*v))
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
            }
        }
        exprs
            .iter()
            .map(|e| e.eval_number_with_context(&ctx).map_err(|err| Error::Domain(format!("expression failed: {err}"))))
            .collect()
    }
}

impl SystemModel for ScriptedModel {
    fn n_x(&self) -> usize {
        self.step_exprs.len()
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_y(&self) -> usize {
        self.output_exprs.len()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.eval_all(&self.step_exprs, x, u)
    }

    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.eval_all(&self.output_exprs, x, u).unwrap_or_else(|_| vec![f64::NAN; self.output_exprs.len()])
    }
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Distillation {
        #[serde(default)]
        params: DistillationParams,
    },
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
    },
    Scripted {
        step: Vec<String>,
        output: Vec<String>,
        n_u: usize,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Distillation { params: DistillationParams::default() }
    }
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Distillation { .. } => "distillation",
            ModelSpec::Linear { .. } => "linear",
            ModelSpec::Scripted { .. } => "scripted",
        }
    }

    pub fn linear(sys: &LinearSystem) -> Self {
        ModelSpec::Linear { a: matrix_to_rows(&sys.a), b: matrix_to_rows(&sys.b), c: matrix_to_rows(&sys.c) }
    }

    pub fn build(&self, integrator: &IntegratorConfig) -> Result<Box<dyn SystemModel>> {
        Ok(match self {
            ModelSpec::Distillation { params } => Box::new(DistillationColumn::new(*params, *integrator)?),
            ModelSpec::Linear { a, b, c } => {
                Box::new(LinearSystem::new(rows_to_matrix(a)?, rows_to_matrix(b)?, rows_to_matrix(c)?)?)
            }
            ModelSpec::Scripted { step, output, n_u } => Box::new(ScriptedModel::new(step, output, *n_u)?),
        })
    }
}

/// One sample step with a finiteness check.
pub fn step(model: &dyn SystemModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let next = model.step(x, u)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationDiverged { step: 0, trajectory: None });
    }
    Ok(next)
}

/// Simulates `inputs.len()` steps from `x0`.
pub fn simulate(model: &dyn SystemModel, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("horizon must be ≥ 1".into()));
    }
    if x0.len() != model.n_x() || inputs.iter().any(|u| u.len() != model.n_u()) {
        return Err(Error::InvalidInput("initial state or inputs have the wrong dimension".into()));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len());
    states.push(x0.to_vec());
    for (t, u) in inputs.iter().enumerate() {
        let x = &states[t];
        outputs.push(model.output(x, u));
        let next = match model.step(x, u) {
            Ok(n) => n,
            Err(Error::Domain(_)) => return Err(Error::SimulationDiverged { step: t, trajectory: None }),
            Err(e) => return Err(e),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged { step: t, trajectory: None });
        }
        states.push(next);
    }
    Trajectory::new(states, inputs.to_vec(), outputs)
}

/// Central finite-difference Jacobians of the one-step map and the output
/// map at `(x_star, u_star)`.
pub fn linearize(model: &dyn SystemModel, x_star: &[f64], u_star: &[f64], fd_step: f64) -> Result<LinearSystem> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidInput("fd_step must be > 0".into()));
    }
    let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    let mut c = DMatrix::zeros(ny, nx);
    for j in 0..nx {
        let (mut xp, mut xm) = (x_star.to_vec(), x_star.to_vec());
        xp[j] += fd_step;
        xm[j] -= fd_step;
        let (fp, fm) = (model.step(&xp, u_star)?, model.step(&xm, u_star)?);
        let (hp, hm) = (model.output(&xp, u_star), model.output(&xm, u_star));
        for i in 0..nx {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * fd_step);
        }
        for i in 0..ny {
            c[(i, j)] = (hp[i] - hm[i]) / (2.0 * fd_step);
        }
    }
    for j in 0..nu {
        let (mut up, mut um) = (u_star.to_vec(), u_star.to_vec());
        up[j] += fd_step;
        um[j] -= fd_step;
        let (fp, fm) = (model.step(x_star, &up)?, model.step(x_star, &um)?);
        for i in 0..nx {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * fd_step);
        }
    }
    LinearSystem::new(a, b, c)
}
