//! Linear tetrahedra over an unposed displacement field, with an
//! orthotropic Saint Venant-Kirchhoff energy and exponential (Fung-type)
//! saturation of the strain energy.
//!
//! `F = I + du/dx` is evaluated in the shaped rest frame, so pose never
//! enters the elastic energy.

use nalgebra::{Matrix6, SMatrix, SVector, SymmetricEigen, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{tet_signed_volume, Mat3, Vec3};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Smallest admissible rest volume (m^3).
pub const MIN_REST_VOLUME: f64 = 1e-12;
/// Largest `b * Psi_svk` before the exponential is considered overflowed.
pub const SATURATION_LIMIT: f64 = 700.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TetElement {
    pub vertices: [usize; 4],
    pub volume: f64,
    /// Gradients of the four linear shape functions.
    pub shape_gradients: [Vec3; 4],
}

impl TetElement {
    pub fn new(vertices: [usize; 4], rest: &[Vec3]) -> Result<Self> {
        let p = vertices.map(|v| rest[v]);
        let volume = tet_signed_volume([&p[0], &p[1], &p[2], &p[3]]);
        if !(volume >= MIN_REST_VOLUME) {
            return Err(Error::InvalidConfig(format!(
                "degenerate rest element {vertices:?} with volume {volume:e}"
            )));
        }
        let dm = Mat3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let dm_inv = dm.try_inverse().ok_or_else(|| Error::Singular("rest element".into()))?;
        let g1 = dm_inv.row(0).transpose();
        let g2 = dm_inv.row(1).transpose();
        let g3 = dm_inv.row(2).transpose();
        Ok(Self {
            vertices,
            volume,
            shape_gradients: [-(g1 + g2 + g3), g1, g2, g3],
        })
    }

    /// `F = I + sum_a u_a grad(N_a)^T`; `u` is the flat per-vertex field.
    pub fn deformation_gradient(&self, u: &[f64]) -> Mat3 {
        let mut f = Mat3::identity();
        for (a, &v) in self.vertices.iter().enumerate() {
            let ua = Vec3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]);
            f += ua * self.shape_gradients[a].transpose();
        }
        f
    }

    /// `dvec(F)/du_e` with `vec` column-major and `u_e` ordered per vertex.
    fn gradient_operator(&self) -> SMatrix<f64, 9, 12> {
        let mut b = SMatrix::<f64, 9, 12>::zeros();
        for a in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    b[(i + 3 * j, 3 * a + i)] = self.shape_gradients[a][j];
                }
            }
        }
        b
    }
}

/// Voigt stiffness in the fiber frame (engineering shear strains), the
/// fiber frame itself and the saturation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementMaterial {
    pub stiffness: Matrix6<f64>,
    /// Columns are the material axes in the rest frame.
    pub frame: Mat3,
    pub fung_a: f64,
    pub fung_b: f64,
    pub density: f64,
}

fn unit_isotropic(poisson: f64) -> Matrix6<f64> {
    let lambda = poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let mu = 1.0 / (2.0 * (1.0 + poisson));
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] = lambda + 2.0 * mu;
        c[(i + 3, i + 3)] = mu;
    }
    c
}

impl ElementMaterial {
    /// Axis moduli `young = [E1, E2, E3]` along the frame columns; the
    /// shear moduli follow from the geometric means of the axis pairs.
    pub fn orthotropic(frame: Mat3, young: [f64; 3], poisson: f64, fung_a: f64, fung_b: f64, density: f64) -> Result<Self> {
        if young.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidConfig(format!("Young moduli {young:?} must be positive")));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::InvalidConfig(format!("Poisson ratio {poisson} outside (-1, 0.5)")));
        }
        if !(fung_a >= 0.0 && fung_b >= 0.0) {
            return Err(Error::InvalidConfig("saturation parameters must be non-negative".into()));
        }
        if !(density > 0.0) {
            return Err(Error::InvalidConfig(format!("density {density} must be positive")));
        }
        let [e1, e2, e3] = young;
        let d = Vector6::new(e1, e2, e3, (e2 * e3).sqrt(), (e1 * e3).sqrt(), (e1 * e2).sqrt()).map(f64::sqrt);
        let s = Matrix6::from_diagonal(&d);
        Ok(Self {
            stiffness: s * unit_isotropic(poisson) * s,
            frame,
            fung_a,
            fung_b,
            density,
        })
    }

    pub fn isotropic(young: f64, poisson: f64, fung_a: f64, fung_b: f64, density: f64) -> Result<Self> {
        Self::orthotropic(Mat3::identity(), [young; 3], poisson, fung_a, fung_b, density)
    }

    /// Second Piola-Kirchhoff stress of the unsaturated energy for a Green
    /// strain given in the rest frame.
    fn stress(&self, e: &Mat3) -> Mat3 {
        let r = &self.frame;
        let ef = r.transpose() * e * r;
        let eps = Vector6::new(ef[(0, 0)], ef[(1, 1)], ef[(2, 2)], 2.0 * ef[(1, 2)], 2.0 * ef[(0, 2)], 2.0 * ef[(0, 1)]);
        let s = self.stiffness * eps;
        let sf = Mat3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2]);
        r * sf * r.transpose()
    }

    /// Saturation `g(s) = s + a/b (exp(b s) - 1 - b s)` and its first two
    /// derivatives.
    fn saturation(&self, s: f64, element: usize) -> Result<(f64, f64, f64)> {
        let (a, b) = (self.fung_a, self.fung_b);
        if b == 0.0 || a == 0.0 {
            return Ok((s, 1.0, 0.0));
        }
        let bs = b * s;
        if bs > SATURATION_LIMIT {
            return Err(Error::SaturationOverflow { element });
        }
        let em1 = bs.exp_m1();
        Ok((s + a / b * (em1 - bs), 1.0 + a * em1, a * b * (em1 + 1.0)))
    }
}

fn green_strain(f: &Mat3) -> Mat3 {
    (f.transpose() * f - Mat3::identity()) * 0.5
}

/// Strain energy density (J/m^3). `element` only labels errors.
pub fn strain_energy_density(f: &Mat3, mat: &ElementMaterial, element: usize) -> Result<f64> {
    let e = green_strain(f);
    let psi_s = 0.5 * e.dot(&mat.stress(&e));
    Ok(mat.saturation(psi_s, element)?.0)
}

/// `Psi`, the first Piola-Kirchhoff stress `dPsi/dF` and optionally the
/// 9x9 `d^2 Psi / dF^2` over column-major `vec(F)`.
pub fn stress_and_tangent(
    f: &Mat3,
    mat: &ElementMaterial,
    element: usize,
    tangent: bool,
) -> Result<(f64, Mat3, Option<Mat9>)> {
    let e = green_strain(f);
    let s_lin = mat.stress(&e);
    let psi_s = 0.5 * e.dot(&s_lin);
    let (psi, g1, g2) = mat.saturation(psi_s, element)?;
    let s = s_lin * g1;
    let p = f * s;
    if !tangent {
        return Ok((psi, p, None));
    }
    let mut h = Mat9::zeros();
    for k in 0..9 {
        let mut df = Mat3::zeros();
        df[(k % 3, k / 3)] = 1.0;
        let de = (df.transpose() * f + f.transpose() * df) * 0.5;
        let ds = mat.stress(&de) * g1 + s_lin * (g2 * s_lin.dot(&de));
        let dp = df * s + f * ds;
        for m in 0..9 {
            h[(m, k)] = dp[(m % 3, m / 3)];
        }
    }
    Ok((psi, p, Some((h + h.transpose()) * 0.5)))
}

/// Clamps negative eigenvalues of a symmetric matrix to zero.
pub fn project_psd(h: &Mat9) -> Mat9 {
    let eig = SymmetricEigen::new(*h);
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return *h;
    }
    let l = eig.eigenvalues.map(|x| x.max(0.0));
    eig.eigenvectors * Mat9::from_diagonal(&l) * eig.eigenvectors.transpose()
}

#[derive(Clone, Debug)]
pub struct ElementEval {
    pub value: f64,
    pub gradient: Vec12,
    pub hessian: Option<Mat12>,
}

/// Precomputed elements and materials of one shaped body.
#[derive(Clone, Debug)]
pub struct FemMesh {
    pub elements: Vec<TetElement>,
    pub materials: Vec<ElementMaterial>,
    pub n_vertices: usize,
}

impl FemMesh {
    pub fn new(rest: &[Vec3], tets: &[[usize; 4]], materials: Vec<ElementMaterial>) -> Result<Self> {
        crate::error::check_len("element materials", tets.len(), materials.len())?;
        let elements = tets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                TetElement::new(*t, rest).map_err(|e| match e {
                    Error::InvalidConfig(m) => Error::InvalidConfig(format!("element {i}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            elements,
            materials,
            n_vertices: rest.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn rest_volume(&self) -> f64 {
        self.elements.iter().map(|e| e.volume).sum()
    }

    /// Energy, gradient and (optionally PSD-projected) Hessian of one
    /// element, all scaled by its rest volume.
    pub fn element_eval(&self, i: usize, u: &[f64], hessian: bool, project: bool) -> Result<ElementEval> {
        let el = &self.elements[i];
        let f = el.deformation_gradient(u);
        let (psi, p, h9) = stress_and_tangent(&f, &self.materials[i], i, hessian)?;
        let mut gradient = Vec12::zeros();
        for a in 0..4 {
            let g = p * el.shape_gradients[a] * el.volume;
            gradient.fixed_rows_mut::<3>(3 * a).copy_from(&g);
        }
        let hessian = h9.map(|h| {
            let h = if project { project_psd(&h) } else { h };
            let b = el.gradient_operator();
            b.transpose() * h * b * el.volume
        });
        Ok(ElementEval {
            value: psi * el.volume,
            gradient,
            hessian,
        })
    }

    /// Evaluates the listed elements in parallel; results come back in the
    /// order given.
    pub fn eval_elements(&self, ids: &[usize], u: &[f64], hessian: bool, project: bool) -> Result<Vec<ElementEval>> {
        ids.par_iter().map(|&i| self.element_eval(i, u, hessian, project)).collect()
    }

    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.eval_elements(&all, u, false, false)?.iter().map(|e| e.value).sum())
    }

    /// Full-space value, gradient (length `3 n_vertices`) and Hessian
    /// triplets over displacement indices.
    pub fn assemble(&self, u: &[f64], hessian: bool, project: bool) -> Result<(f64, Vec<f64>, Vec<(usize, usize, f64)>)> {
        let all: Vec<usize> = (0..self.len()).collect();
        let evals = self.eval_elements(&all, u, hessian, project)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; 3 * self.n_vertices];
        let mut trip = Vec::with_capacity(if hessian { 144 * self.len() } else { 0 });
        for (el, ev) in self.elements.iter().zip(&evals) {
            value += ev.value;
            let idx = dof_indices(el);
            for (r, &gi) in idx.iter().enumerate() {
                grad[gi] += ev.gradient[r];
            }
            if let Some(h) = &ev.hessian {
                for (c, &gc) in idx.iter().enumerate() {
                    for (r, &gr) in idx.iter().enumerate() {
                        trip.push((gr, gc, h[(r, c)]));
                    }
                }
            }
        }
        Ok((value, grad, trip))
    }

    /// Lumped vertex masses `sum_e rho_e vol_e / 4`.
    pub fn lumped_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_vertices];
        for (el, mat) in self.elements.iter().zip(&self.materials) {
            let share = mat.density * el.volume / 4.0;
            for &v in &el.vertices {
                m[v] += share;
            }
        }
        m
    }
}

/// Flat displacement indices of an element's twelve DoFs.
pub fn dof_indices(el: &TetElement) -> [usize; 12] {
    let mut idx = [0; 12];
    for (a, &v) in el.vertices.iter().enumerate() {
        for i in 0..3 {
            idx[3 * a + i] = 3 * v + i;
        }
    }
    idx
}
