//! Shape coefficients to rest geometry and material.

use super::{BodyTemplate, ShapeCoeffs};
use crate::error::{check_len, Error, Result};
use crate::math::{tet_signed_volume, Vec3};

/// Shaped rest positions of all tet vertices: `x = x_template + S beta`.
/// Fails if any tet inverts or degenerates.
pub fn apply_shape(template: &BodyTemplate, beta: &ShapeCoeffs) -> Result<Vec<Vec3>> {
    check_len("shape coefficients", template.n_shape_coeffs(), beta.beta.len())?;
    let offsets = &template.shape_basis * nalgebra::DVector::from_column_slice(&beta.beta);
    let shaped: Vec<Vec3> = template
        .tet_vertices
        .iter()
        .enumerate()
        .map(|(v, p)| p + Vec3::new(offsets[3 * v], offsets[3 * v + 1], offsets[3 * v + 2]))
        .collect();
    for (i, t) in template.tets.iter().enumerate() {
        let vol = tet_signed_volume([&shaped[t[0]], &shaped[t[1]], &shaped[t[2]], &shaped[t[3]]]);
        if !(vol > 0.0) {
            return Err(Error::InvertedElement { tet: i, volume: vol });
        }
    }
    Ok(shaped)
}

/// Material for a shaped body. Per tet vertex unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapedMaterial {
    pub young: Vec<f64>,
    /// Through-thickness (radial) modulus.
    pub normal_young: Vec<f64>,
    pub poisson: Vec<f64>,
    pub density: Vec<f64>,
    pub fung_a: Vec<f64>,
    pub fung_b: Vec<f64>,
    /// Per surface vertex.
    pub thickness: Vec<f64>,
    /// Set when a modulus or thickness hit its floor.
    pub clamped: bool,
}

/// Evaluates the template's material map at `beta`. Stiffness falls and
/// thickness grows with corpulence; a thicker layer is softer through its
/// thickness.
pub fn material_from_shape(template: &BodyTemplate, beta: &ShapeCoeffs) -> Result<ShapedMaterial> {
    check_len("shape coefficients", template.n_shape_coeffs(), beta.beta.len())?;
    let map = &template.material_map;
    let base = &template.material_baseline;
    let s = map.corpulence(beta);
    let mut clamped = false;

    let thick_factor = 1.0 + map.thickness_gain * s;
    let thickness: Vec<f64> = template
        .thickness_baseline
        .iter()
        .map(|t0| {
            let t = t0 * thick_factor;
            if t < map.thickness_floor {
                clamped = true;
                map.thickness_floor
            } else {
                t
            }
        })
        .collect();
    let thick_ratio = thick_factor.max(map.thickness_floor);

    let gain = (map.modulus_gain * s).exp();
    let mut young = Vec::with_capacity(base.len());
    let mut normal_young = Vec::with_capacity(base.len());
    for e0 in &base.young {
        let mut e = e0 * gain;
        if e < map.modulus_floor {
            clamped = true;
            e = map.modulus_floor;
        }
        let en = (e * map.normal_stiffness_ratio / thick_ratio).max(map.modulus_floor);
        young.push(e);
        normal_young.push(en);
    }
    Ok(ShapedMaterial {
        young,
        normal_young,
        poisson: base.poisson.clone(),
        density: base.density.clone(),
        fung_a: base.fung_a.clone(),
        fung_b: base.fung_b.clone(),
        thickness,
        clamped,
    })
}
