//! Independent scalar point masses. Small enough for closed-form checks of
//! the stepping machinery.

use super::{Accumulator, DofModel, EnergyTerm};
use crate::error::Result;
use crate::sparse::TripletMatrix;

#[derive(Clone, Debug)]
pub struct ParticleModel {
    pub masses: Vec<f64>,
    pub initial: Vec<f64>,
}

impl ParticleModel {
    pub fn new(masses: Vec<f64>) -> Self {
        let initial = vec![0.0; masses.len()];
        Self { masses, initial }
    }

    pub fn with_initial(masses: Vec<f64>, initial: Vec<f64>) -> Self {
        assert_eq!(masses.len(), initial.len());
        Self { masses, initial }
    }
}

impl DofModel for ParticleModel {
    type Config = ();

    fn dof_count(&self) -> usize {
        self.masses.len()
    }

    fn dense_dofs(&self) -> usize {
        0
    }

    fn rest_state(&self) -> (Vec<f64>, Vec<f64>) {
        (Vec::new(), self.initial.clone())
    }

    fn configure(&self, _anchor: &[f64], _q: &[f64]) -> Result<()> {
        Ok(())
    }

    fn mass_matrix(&self, _cfg: &()) -> TripletMatrix {
        let mut m = TripletMatrix::square(self.masses.len());
        for (i, &mi) in self.masses.iter().enumerate() {
            m.push(i, i, mi);
        }
        m
    }

    fn rebase(&self, _anchor: &mut [f64], _q: &mut [f64]) {}
}

/// `V = 1/2 k (q_i - rest)^2`.
#[derive(Clone, Debug)]
pub struct Spring {
    pub dof: usize,
    pub stiffness: f64,
    pub rest: f64,
}

impl EnergyTerm<ParticleModel> for Spring {
    fn name(&self) -> &str {
        "spring"
    }

    fn evaluate(&self, _m: &ParticleModel, _c: &(), q: &[f64], out: &mut Accumulator) -> Result<()> {
        let d = q[self.dof] - self.rest;
        out.value += 0.5 * self.stiffness * d * d;
        if out.wants_gradient() {
            out.gradient[self.dof] += self.stiffness * d;
        }
        if out.wants_hessian() {
            out.hessian.add(self.dof, self.dof, self.stiffness);
        }
        Ok(())
    }
}

/// `V = -f . q`: a constant force per DoF (gravity when `f_i = m_i g`).
#[derive(Clone, Debug)]
pub struct ConstantForce {
    pub force: Vec<f64>,
}

impl EnergyTerm<ParticleModel> for ConstantForce {
    fn name(&self) -> &str {
        "force"
    }

    fn evaluate(&self, _m: &ParticleModel, _c: &(), q: &[f64], out: &mut Accumulator) -> Result<()> {
        out.value -= self.force.iter().zip(q).map(|(f, x)| f * x).sum::<f64>();
        if out.wants_gradient() {
            for (g, f) in out.gradient.iter_mut().zip(&self.force) {
                *g -= f;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sim::{NewtonSettings, Simulable, SimulableApi};

    fn falling(h: f64) -> Simulable<ParticleModel> {
        let mut s = Simulable::new(ParticleModel::new(vec![2.0]), h, NewtonSettings::default(), &[]).unwrap();
        s.add_term(Box::new(ConstantForce { force: vec![-2.0 * 9.81] }));
        s
    }

    #[test]
    fn free_fall_matches_backward_euler_recurrence() {
        // v_{n+1} = v_n + h g, x_{n+1} = x_n + h v_{n+1}
        let h = 0.01;
        let g = -9.81;
        let mut s = falling(h);
        let (mut x, mut v) = (0.0, 0.0);
        for _ in 0..100 {
            let r = s.step().unwrap();
            assert!(r.converged);
            v += h * g;
            x += h * v;
            assert!((s.state().q[0] - x).abs() < 1e-8);
            assert!((s.state().v[0] - v).abs() < 1e-8);
        }
        assert!((s.state().time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn without_potential_the_step_lands_on_the_predictor() {
        let mut s = Simulable::new(ParticleModel::new(vec![1.0, 3.0]), 0.1, NewtonSettings::default(), &[]).unwrap();
        s.set_velocity(&[1.5, -0.5]).unwrap();
        let pred = s.predictor();
        s.step().unwrap();
        for (a, b) in s.state().q.iter().zip(&pred) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn static_solve_balances_spring_and_force() {
        let mut s = Simulable::new(ParticleModel::new(vec![1.0]), 0.1, NewtonSettings::default(), &[]).unwrap();
        s.add_term(Box::new(Spring {
            dof: 0,
            stiffness: 400.0,
            rest: 0.0,
        }));
        s.add_term(Box::new(ConstantForce { force: vec![-20.0] }));
        s.set_velocity(&[3.0]).unwrap();
        s.static_solve().unwrap();
        assert!((s.state().q[0] + 0.05).abs() < 1e-12);
        assert_eq!(s.state().v, vec![0.0]);
        assert_eq!(s.state().time, 0.0);
    }

    #[test]
    fn fixed_dofs_do_not_move() {
        let mut s = Simulable::new(ParticleModel::new(vec![1.0, 1.0]), 0.1, NewtonSettings::default(), &[1]).unwrap();
        s.add_term(Box::new(ConstantForce { force: vec![-1.0, -1.0] }));
        s.step().unwrap();
        assert!(s.state().q[0] < 0.0);
        assert_eq!(s.state().q[1], 0.0);
        assert!(Simulable::new(ParticleModel::new(vec![1.0]), 0.1, NewtonSettings::default(), &[4]).is_err());
    }

    #[test]
    fn push_pop_restores_state_bit_exactly() {
        let mut s = falling(1.0 / 30.0);
        s.step().unwrap();
        let before = s.state().clone();
        s.push_state();
        for _ in 0..5 {
            s.step().unwrap();
        }
        assert_ne!(s.state(), &before);
        s.pop_state().unwrap();
        assert_eq!(s.state(), &before);
        assert!(matches!(s.pop_state(), Err(Error::EmptyStateStack)));
        assert_eq!(s.state(), &before);
    }

    #[test]
    fn split_energies_match_closed_form() {
        let h = 0.1;
        let mut s = Simulable::new(ParticleModel::new(vec![2.0]), h, NewtonSettings::default(), &[]).unwrap();
        s.add_term(Box::new(Spring {
            dof: 0,
            stiffness: 10.0,
            rest: 0.0,
        }));
        s.set_velocity(&[1.0]).unwrap();
        s.update_state(&[0.3]).unwrap();
        // q* = 0.3 + 0.1 = 0.4, d = -0.1
        let dyn_e = s.get_dynamic_energy_scalar().unwrap();
        assert!((dyn_e - 0.5 / (h * h) * 2.0 * 0.01).abs() < 1e-12);
        assert!((s.get_potential_energy_scalar().unwrap() - 0.45).abs() < 1e-12);
        assert!((s.get_dynamic_gradient_vector().unwrap()[0] - 2.0 * -0.1 / (h * h)).abs() < 1e-9);
        assert!((s.get_potential_gradient_vector().unwrap()[0] - 3.0).abs() < 1e-12);
        let hd = s.get_dynamic_hessian_triplets().unwrap();
        assert_eq!((hd.rows.clone(), hd.cols.clone()), (vec![0], vec![0]));
        assert!((hd.values[0] - 200.0).abs() < 1e-9);
        let hp = s.get_potential_hessian_triplets().unwrap();
        assert_eq!(hp.values, vec![10.0]);
    }

    #[test]
    fn kinematic_fixing_through_api() {
        let s = Simulable::new(ParticleModel::new(vec![1.0; 3]), 0.1, NewtonSettings::default(), &[2]).unwrap();
        let mut v = vec![1.0, 2.0, 3.0];
        s.fix_vector_kinematic(&mut v).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 0.0]);
        let mut t = crate::sparse::Triplets {
            rows: vec![0, 2, 2, 1],
            cols: vec![0, 0, 2, 1],
            values: vec![4.0, 5.0, 6.0, 7.0],
        };
        s.fix_matrix_kinematic(&mut t).unwrap();
        let d = t.to_matrix(3).unwrap().to_dense();
        assert_eq!(d[(2, 2)], 1.0);
        assert_eq!(d[(2, 0)], 0.0);
        assert_eq!(d[(0, 0)], 4.0);
        assert!(s.fix_vector_kinematic(&mut [0.0; 2]).is_err());
    }

    #[test]
    fn external_driver_loop_matches_step() {
        // pre_update / solve / post_update equals step()
        let mut a = falling(0.05);
        let mut b = falling(0.05);
        for _ in 0..10 {
            a.step().unwrap();
            SimulableApi::pre_update(&mut b).unwrap();
            b.solve().unwrap();
            SimulableApi::post_update(&mut b).unwrap();
        }
        assert_eq!(a.state(), b.state());
    }
}
