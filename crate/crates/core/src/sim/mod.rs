//! Time stepping as minimization. Each step solves
//!
//! ```text
//! q = argmin 1/(2h^2) (q - q*)^T M (q - q*) + V(q),   q* = q_t + h v_t
//! ```
//!
//! with `M` evaluated at the start of the step and every force (gravity,
//! elasticity, joints, tracking, contact) living in `V`.

pub mod assembly;
pub mod newton;
pub mod particle;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::Vec3;
use crate::sparse::{TripletMatrix, Triplets};

pub use assembly::{Accumulator, HessianBuilder, Level};
pub use newton::{apply_dirichlet, newton_minimize, NewtonSettings, Objective, SolveReport};

/// A set of generalized coordinates and the kinematics built on them.
///
/// Rotational DoFs may be increments on top of an *anchor* (committed base
/// orientation) owned by the simulation state; [`DofModel::rebase`] folds
/// the increments into the anchor after each step.
pub trait DofModel: Send + Sync {
    type Config: Clone + Send + Sync;

    fn dof_count(&self) -> usize;

    /// Leading DoFs whose Hessian coupling is dense.
    fn dense_dofs(&self) -> usize {
        self.dof_count()
    }

    /// `(anchor, q)` of the rest configuration.
    fn rest_state(&self) -> (Vec<f64>, Vec<f64>);

    fn configure(&self, anchor: &[f64], q: &[f64]) -> Result<Self::Config>;

    fn mass_matrix(&self, cfg: &Self::Config) -> TripletMatrix;

    fn rebase(&self, anchor: &mut [f64], q: &mut [f64]);

    /// DoFs the model itself holds fixed.
    fn kinematic_dofs(&self) -> Vec<usize> {
        Vec::new()
    }

    fn node_count(&self) -> usize {
        0
    }

    /// World positions of the output nodes (surface vertices).
    fn nodes(&self, _cfg: &Self::Config) -> Vec<Vec3> {
        Vec::new()
    }

    /// `d nodes / d q`, `3 * node_count` rows.
    fn nodes_jacobian(&self, _cfg: &Self::Config) -> TripletMatrix {
        TripletMatrix::new(0, self.dof_count())
    }

    /// Pose vector and `d pose / d q`.
    fn pose_jacobian(&self, _cfg: &Self::Config) -> Result<(Vec<f64>, TripletMatrix)> {
        Ok((Vec::new(), TripletMatrix::new(0, self.dof_count())))
    }
}

/// A potential energy `V_k(q)`.
pub trait EnergyTerm<M: DofModel>: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, model: &M, cfg: &M::Config, q: &[f64], out: &mut Accumulator) -> Result<()>;

    /// Called before the step that ends at `time`.
    fn pre_update(&mut self, _model: &M, _time: f64) -> Result<()> {
        Ok(())
    }

    fn post_update(&mut self, _model: &M, _cfg: &M::Config) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StiffnessSettings {
    /// Joint attachment springs (N/m).
    pub joint: f64,
    /// Per-joint rotation springs toward the tracking target (N m/rad).
    pub tracking: f64,
    pub root_rotation: f64,
    /// Root translation spring (N/m).
    pub root_translation: f64,
    /// Collider penalty (N/m per unit area weight).
    pub contact: f64,
    /// Avatar-avatar penalty (N/m).
    pub avatar_contact: f64,
}

impl Default for StiffnessSettings {
    fn default() -> Self {
        Self {
            joint: 1e7,
            tracking: 300.0,
            root_rotation: 3e3,
            root_translation: 3e4,
            contact: 1e5,
            avatar_contact: 1e7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub soft_tissue: bool,
    pub reduced_model: bool,
    pub inertial_cubature: bool,
    pub elastic_cubature: bool,
    pub time_step: f64,
    pub gravity: [f64; 3],
    pub newton: NewtonSettings,
    pub fixed_dofs: Vec<usize>,
    pub stiffness: StiffnessSettings,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            soft_tissue: false,
            reduced_model: false,
            inertial_cubature: false,
            elastic_cubature: false,
            time_step: 1.0 / 30.0,
            gravity: [0.0, -9.81, 0.0],
            newton: NewtonSettings::default(),
            fixed_dofs: Vec::new(),
            stiffness: StiffnessSettings::default(),
        }
    }
}

impl SimulationSettings {
    pub fn articulated() -> Self {
        Self::default()
    }

    pub fn fem() -> Self {
        Self {
            soft_tissue: true,
            ..Self::default()
        }
    }

    pub fn rom() -> Self {
        Self {
            soft_tissue: true,
            reduced_model: true,
            inertial_cubature: true,
            elastic_cubature: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduced_model && !self.soft_tissue {
            return Err(Error::InvalidConfig("reduced model requires soft tissue".into()));
        }
        if (self.inertial_cubature || self.elastic_cubature) && !self.reduced_model {
            return Err(Error::InvalidConfig("cubature requires the reduced model".into()));
        }
        if !(self.time_step > 0.0) {
            return Err(Error::InvalidConfig(format!("time step {} must be positive", self.time_step)));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidConfig("gravity must be finite".into()));
        }
        let s = &self.stiffness;
        if !(s.joint > 0.0) {
            return Err(Error::InvalidConfig("joint stiffness must be positive".into()));
        }
        for (name, v) in [
            ("tracking", s.tracking),
            ("root rotation", s.root_rotation),
            ("root translation", s.root_translation),
            ("contact", s.contact),
            ("avatar contact", s.avatar_contact),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} stiffness must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub anchor: Vec<f64>,
    pub time: f64,
}

/// Quantities frozen at the start of a step.
#[derive(Clone, Debug)]
pub struct StepStart {
    pub q_prev: Vec<f64>,
    pub predictor: Vec<f64>,
    pub mass: TripletMatrix,
}

/// Inertial and potential parts of the objective at one state.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub dynamic_scalar: f64,
    pub potential_scalar: f64,
    pub dynamic_gradient: Vec<f64>,
    pub potential_gradient: Vec<f64>,
    pub dynamic_hessian: TripletMatrix,
    pub potential_hessian: TripletMatrix,
    /// Value of each registered potential term.
    pub terms: Vec<(String, f64)>,
}

pub struct Simulable<M: DofModel> {
    model: M,
    terms: Vec<Box<dyn EnergyTerm<M>>>,
    time_step: f64,
    newton: NewtonSettings,
    state: SimState,
    stack: Vec<SimState>,
    fixed: Vec<bool>,
    step: Option<StepStart>,
    config: M::Config,
    last_report: Option<SolveReport>,
}

impl<M: DofModel> Simulable<M> {
    /// A simulable at the model's rest state with zero velocity.
    pub fn new(model: M, time_step: f64, newton: NewtonSettings, fixed_dofs: &[usize]) -> Result<Self> {
        if !(time_step > 0.0) {
            return Err(Error::InvalidConfig(format!("time step {time_step} must be positive")));
        }
        let n = model.dof_count();
        let (anchor, q) = model.rest_state();
        check_len("rest state", n, q.len())?;
        let config = model.configure(&anchor, &q)?;
        let mut sim = Self {
            terms: Vec::new(),
            time_step,
            newton,
            state: SimState {
                v: vec![0.0; n],
                q,
                anchor,
                time: 0.0,
            },
            stack: Vec::new(),
            fixed: vec![false; n],
            step: None,
            config,
            last_report: None,
            model,
        };
        let kinematic = sim.model.kinematic_dofs();
        sim.fix_dofs(&kinematic)?;
        sim.fix_dofs(fixed_dofs)?;
        Ok(sim)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &M::Config {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn dof_count(&self) -> usize {
        self.model.dof_count()
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    pub fn newton_settings(&self) -> &NewtonSettings {
        &self.newton
    }

    pub fn last_report(&self) -> Option<&SolveReport> {
        self.last_report.as_ref()
    }

    pub fn add_term(&mut self, term: Box<dyn EnergyTerm<M>>) {
        self.terms.push(term);
    }

    /// Removes every term with this name; returns whether any was found.
    pub fn remove_term(&mut self, name: &str) -> bool {
        let before = self.terms.len();
        self.terms.retain(|t| t.name() != name);
        self.terms.len() != before
    }

    pub fn term_names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name()).collect()
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn fixed_indices(&self) -> Vec<usize> {
        (0..self.fixed.len()).filter(|&i| self.fixed[i]).collect()
    }

    pub fn fix_dofs(&mut self, dofs: &[usize]) -> Result<()> {
        let n = self.fixed.len();
        if let Some(&bad) = dofs.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        for &i in dofs {
            self.fixed[i] = true;
        }
        Ok(())
    }

    pub fn unfix_all(&mut self) {
        self.fixed.iter_mut().for_each(|f| *f = false);
        for i in self.model.kinematic_dofs() {
            self.fixed[i] = true;
        }
    }

    /// Replaces the whole state (q, v, anchor, time).
    pub fn set_state(&mut self, state: SimState) -> Result<()> {
        let n = self.dof_count();
        check_len("state q", n, state.q.len())?;
        check_len("state v", n, state.v.len())?;
        check_len("state anchor", self.state.anchor.len(), state.anchor.len())?;
        self.config = self.model.configure(&state.anchor, &state.q)?;
        self.state = state;
        Ok(())
    }

    pub fn set_velocity(&mut self, v: &[f64]) -> Result<()> {
        check_len("velocity", self.dof_count(), v.len())?;
        self.state.v.copy_from_slice(v);
        Ok(())
    }

    /// `q* = q + h v` from the current state.
    pub fn predictor(&self) -> Vec<f64> {
        self.state
            .q
            .iter()
            .zip(&self.state.v)
            .map(|(q, v)| q + self.time_step * v)
            .collect()
    }

    fn fresh_step_start(&self) -> StepStart {
        StepStart {
            q_prev: self.state.q.clone(),
            predictor: self.predictor(),
            mass: self.model.mass_matrix(&self.config),
        }
    }

    fn step_start(&self) -> Cow<'_, StepStart> {
        match &self.step {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(self.fresh_step_start()),
        }
    }

    /// Freezes the predictor and mass matrix for the coming step.
    pub fn begin_step(&mut self) {
        self.step = Some(self.fresh_step_start());
    }

    pub fn step_open(&self) -> bool {
        self.step.is_some()
    }

    /// Sum of all potential terms at `q`.
    pub fn evaluate_potential(&self, q: &[f64], level: Level) -> Result<(Accumulator, Vec<(String, f64)>)> {
        let n = self.dof_count();
        check_len("state q", n, q.len())?;
        let cfg = self.model.configure(&self.state.anchor, q)?;
        let mut acc = Accumulator::new(n, self.model.dense_dofs(), level);
        let mut values = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let before = acc.value;
            t.evaluate(&self.model, &cfg, q, &mut acc)?;
            let dv = acc.value - before;
            if !dv.is_finite() || (acc.wants_gradient() && acc.gradient.iter().any(|g| !g.is_finite())) {
                return Err(Error::NonFinite { term: t.name().to_string() });
            }
            values.push((t.name().to_string(), dv));
        }
        Ok((acc, values))
    }

    /// Full split report at `q` against predictor `q_star`. The mass matrix
    /// is the one frozen by the open step, or the current one otherwise.
    pub fn evaluate(&self, q: &[f64], q_star: &[f64]) -> Result<EnergyReport> {
        let n = self.dof_count();
        check_len("predictor", n, q_star.len())?;
        let (acc, terms) = self.evaluate_potential(q, Level::Hessian)?;
        let start = self.step_start();
        let (dynamic_scalar, dynamic_gradient, dynamic_hessian) = dynamic_part(&start.mass, q, q_star, self.time_step);
        Ok(EnergyReport {
            dynamic_scalar,
            potential_scalar: acc.value,
            dynamic_gradient,
            potential_gradient: acc.gradient,
            dynamic_hessian,
            potential_hessian: acc.hessian.finish(),
            terms,
        })
    }

    /// Report at the current state against the current predictor.
    pub fn energy_report(&self) -> Result<EnergyReport> {
        let start = self.step_start();
        self.evaluate(&self.state.q, &start.predictor)
    }

    /// Runs Newton on the open step (opening one if needed) without
    /// committing.
    pub fn solve(&mut self) -> Result<SolveReport> {
        if self.step.is_none() {
            self.begin_step();
        }
        let mut q = self.state.q.clone();
        let report = {
            let start = self.step.as_ref().expect("step opened above");
            let obj = SimObjective {
                sim: self,
                start: Some(start),
                scale: start.mass.diagonal(),
            };
            newton_minimize(&obj, &mut q, &self.newton)?
        };
        self.config = self.model.configure(&self.state.anchor, &q)?;
        self.state.q = q;
        self.last_report = Some(report.clone());
        Ok(report)
    }

    /// One backward-Euler step: solve, then commit.
    pub fn step(&mut self) -> Result<SolveReport> {
        let report = self.solve()?;
        self.commit(false)?;
        Ok(report)
    }

    /// Minimizes the potential alone and zeroes the velocity.
    pub fn static_solve(&mut self) -> Result<SolveReport> {
        let mut q = self.state.q.clone();
        let report = {
            let scale = match &self.step {
                Some(s) => s.mass.diagonal(),
                None => self.model.mass_matrix(&self.config).diagonal(),
            };
            let obj = SimObjective {
                sim: self,
                start: None,
                scale,
            };
            newton_minimize(&obj, &mut q, &self.newton)?
        };
        self.config = self.model.configure(&self.state.anchor, &q)?;
        self.state.q = q;
        self.last_report = Some(report.clone());
        self.commit(true)?;
        Ok(report)
    }

    fn objective(&self, static_mode: bool) -> Result<SimObjective<'_, M>> {
        let start = if static_mode {
            None
        } else {
            Some(self.step.as_ref().ok_or_else(|| Error::InvalidConfig("no step is open".into()))?)
        };
        Ok(SimObjective {
            sim: self,
            start,
            scale: Vec::new(),
        })
    }

    /// Step objective at `q`: the potential, plus the inertial term of the
    /// open step unless `static_mode`.
    pub fn objective_value(&self, q: &[f64], static_mode: bool) -> Result<f64> {
        check_len("state q", self.dof_count(), q.len())?;
        self.objective(static_mode)?.value(q)
    }

    /// Value, gradient and Hessian of [`Self::objective_value`].
    pub fn objective_derivatives(&self, q: &[f64], static_mode: bool) -> Result<(f64, Vec<f64>, TripletMatrix)> {
        check_len("state q", self.dof_count(), q.len())?;
        self.objective(static_mode)?.evaluate(q)
    }

    /// Diagonal used to regularize indefinite Newton systems.
    pub fn regularization_scale(&self) -> Vec<f64> {
        match &self.step {
            Some(s) => s.mass.diagonal(),
            None => self.model.mass_matrix(&self.config).diagonal(),
        }
    }

    /// Takes a `q` solved outside and commits it like [`Self::step`] (or
    /// [`Self::static_solve`] when `static_mode`).
    pub fn accept(&mut self, q: &[f64], static_mode: bool) -> Result<()> {
        check_len("state q", self.dof_count(), q.len())?;
        self.config = self.model.configure(&self.state.anchor, q)?;
        self.state.q.copy_from_slice(q);
        self.commit(static_mode)
    }

    /// Closes the open step: velocity from the position change (zero when
    /// `static_mode`), time advance, rotation rebase.
    fn commit(&mut self, static_mode: bool) -> Result<()> {
        let start = self.step.take();
        let h = self.time_step;
        match (&start, static_mode) {
            (Some(s), false) => {
                for i in 0..self.state.q.len() {
                    self.state.v[i] = (self.state.q[i] - s.q_prev[i]) / h;
                }
            }
            (_, true) => self.state.v.iter_mut().for_each(|v| *v = 0.0),
            (None, false) => {}
        }
        if start.is_some() {
            self.state.time += h;
        }
        self.model.rebase(&mut self.state.anchor, &mut self.state.q);
        self.config = self.model.configure(&self.state.anchor, &self.state.q)?;
        Ok(())
    }

    /// Advances time-dependent terms (tracking target, moving colliders)
    /// and freezes the step's predictor and mass.
    pub fn pre_update(&mut self) -> Result<()> {
        let t = self.state.time + self.time_step;
        for term in &mut self.terms {
            term.pre_update(&self.model, t)?;
        }
        self.begin_step();
        Ok(())
    }

    /// Commits a step driven from outside (if one is open) and refreshes
    /// cached kinematics.
    pub fn post_update(&mut self) -> Result<()> {
        if self.step.is_some() {
            self.commit(false)?;
        } else {
            self.config = self.model.configure(&self.state.anchor, &self.state.q)?;
        }
        for term in &mut self.terms {
            term.post_update(&self.model, &self.config)?;
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        self.model.nodes(&self.config)
    }
}

/// `1/(2h^2) d^T M d`, its gradient and Hessian, `d = q - q*`.
fn dynamic_part(mass: &TripletMatrix, q: &[f64], q_star: &[f64], h: f64) -> (f64, Vec<f64>, TripletMatrix) {
    let d: Vec<f64> = q.iter().zip(q_star).map(|(a, b)| a - b).collect();
    let inv_h2 = 1.0 / (h * h);
    let md = mass.mul_vec(&d);
    let value = 0.5 * inv_h2 * d.iter().zip(&md).map(|(a, b)| a * b).sum::<f64>();
    let grad = md.iter().map(|x| x * inv_h2).collect();
    let mut hess = mass.clone();
    hess.scale(inv_h2);
    (value, grad, hess)
}

struct SimObjective<'a, M: DofModel> {
    sim: &'a Simulable<M>,
    /// `None` drops the inertial term.
    start: Option<&'a StepStart>,
    scale: Vec<f64>,
}

impl<M: DofModel> Objective for SimObjective<'_, M> {
    fn dim(&self) -> usize {
        self.sim.dof_count()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let (acc, _) = self.sim.evaluate_potential(q, Level::Value)?;
        let mut f = acc.value;
        if let Some(s) = self.start {
            let d: Vec<f64> = q.iter().zip(&s.predictor).map(|(a, b)| a - b).collect();
            f += 0.5 / (self.sim.time_step * self.sim.time_step) * s.mass.bilinear(&d, &d);
        }
        Ok(f)
    }

    fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>, TripletMatrix)> {
        let (mut acc, _) = self.sim.evaluate_potential(q, Level::Hessian)?;
        if let Some(s) = self.start {
            let (v, g, h) = dynamic_part(&s.mass, q, &s.predictor, self.sim.time_step);
            acc.value += v;
            for (a, b) in acc.gradient.iter_mut().zip(&g) {
                *a += b;
            }
            acc.hessian.append(&h);
        }
        Ok((acc.value, acc.gradient, acc.hessian.finish()))
    }

    fn regularization_scale(&self) -> Vec<f64> {
        self.scale.clone()
    }

    fn fixed(&self) -> &[bool] {
        &self.sim.fixed
    }
}

/// The call surface external solvers drive: state access, split energy
/// queries, Jacobians for user energies, Dirichlet fixing and the
/// pre/post update hooks. Vectors are plain `f64` slices; Hessians are
/// [`Triplets`].
pub trait SimulableApi {
    fn dof_count(&self) -> usize;
    fn get_state(&self) -> Vec<f64>;
    fn get_velocity(&self) -> Vec<f64>;
    fn update_state(&mut self, q: &[f64]) -> Result<()>;
    fn push_state(&mut self);
    fn pop_state(&mut self) -> Result<()>;
    fn get_state_jacobian(&self) -> Result<Triplets>;
    fn get_nodes_state_jacobian(&self) -> Result<Triplets>;
    fn get_nodes(&self) -> Vec<f64>;
    fn get_dynamic_energy_scalar(&self) -> Result<f64>;
    fn get_potential_energy_scalar(&self) -> Result<f64>;
    fn get_dynamic_gradient_vector(&self) -> Result<Vec<f64>>;
    fn get_potential_gradient_vector(&self) -> Result<Vec<f64>>;
    fn get_dynamic_hessian_triplets(&self) -> Result<Triplets>;
    fn get_potential_hessian_triplets(&self) -> Result<Triplets>;
    fn fix_vector_kinematic(&self, v: &mut [f64]) -> Result<()>;
    fn fix_matrix_kinematic(&self, m: &mut Triplets) -> Result<()>;
    fn pre_update(&mut self) -> Result<()>;
    fn post_update(&mut self) -> Result<()>;
}

impl<M: DofModel> SimulableApi for Simulable<M> {
    fn dof_count(&self) -> usize {
        self.model.dof_count()
    }

    fn get_state(&self) -> Vec<f64> {
        self.state.q.clone()
    }

    fn get_velocity(&self) -> Vec<f64> {
        self.state.v.clone()
    }

    fn update_state(&mut self, q: &[f64]) -> Result<()> {
        check_len("state q", self.dof_count(), q.len())?;
        self.config = self.model.configure(&self.state.anchor, q)?;
        self.state.q.copy_from_slice(q);
        Ok(())
    }

    fn push_state(&mut self) {
        self.stack.push(self.state.clone());
    }

    fn pop_state(&mut self) -> Result<()> {
        let s = self.stack.pop().ok_or(Error::EmptyStateStack)?;
        self.config = self.model.configure(&s.anchor, &s.q)?;
        self.state = s;
        Ok(())
    }

    fn get_state_jacobian(&self) -> Result<Triplets> {
        Ok(Triplets::from(&self.model.pose_jacobian(&self.config)?.1))
    }

    fn get_nodes_state_jacobian(&self) -> Result<Triplets> {
        Ok(Triplets::from(&self.model.nodes_jacobian(&self.config)))
    }

    fn get_nodes(&self) -> Vec<f64> {
        self.nodes().iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    fn get_dynamic_energy_scalar(&self) -> Result<f64> {
        let s = self.step_start();
        Ok(dynamic_part(&s.mass, &self.state.q, &s.predictor, self.time_step).0)
    }

    fn get_potential_energy_scalar(&self) -> Result<f64> {
        Ok(self.evaluate_potential(&self.state.q, Level::Value)?.0.value)
    }

    fn get_dynamic_gradient_vector(&self) -> Result<Vec<f64>> {
        let s = self.step_start();
        Ok(dynamic_part(&s.mass, &self.state.q, &s.predictor, self.time_step).1)
    }

    fn get_potential_gradient_vector(&self) -> Result<Vec<f64>> {
        Ok(self.evaluate_potential(&self.state.q, Level::Gradient)?.0.gradient)
    }

    fn get_dynamic_hessian_triplets(&self) -> Result<Triplets> {
        let s = self.step_start();
        Ok(Triplets::from(&dynamic_part(&s.mass, &self.state.q, &s.predictor, self.time_step).2))
    }

    fn get_potential_hessian_triplets(&self) -> Result<Triplets> {
        Ok(Triplets::from(&self.evaluate_potential(&self.state.q, Level::Hessian)?.0.hessian.finish()))
    }

    fn fix_vector_kinematic(&self, v: &mut [f64]) -> Result<()> {
        check_len("vector", self.dof_count(), v.len())?;
        for (x, &f) in v.iter_mut().zip(&self.fixed) {
            if f {
                *x = 0.0;
            }
        }
        Ok(())
    }

    fn fix_matrix_kinematic(&self, m: &mut Triplets) -> Result<()> {
        let mut t = m.to_matrix(self.dof_count())?;
        apply_dirichlet(&mut t, &self.fixed);
        *m = Triplets::from(&t);
        Ok(())
    }

    fn pre_update(&mut self) -> Result<()> {
        Simulable::pre_update(self)
    }

    fn post_update(&mut self) -> Result<()> {
        Simulable::post_update(self)
    }
}
