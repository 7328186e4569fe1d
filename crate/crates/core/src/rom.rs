//! Reduced soft tissue: displacements restricted to `u = U z`, where `U`
//! interpolates per-handle translations with smooth (biharmonic) weights,
//! and cubature that replaces volume sums by sparse weighted sums.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{dof_indices, FemMesh, TetElement};
use crate::math::Vec3;
use crate::sparse::{SparseCholesky, TripletMatrix};

/// Weights below this are dropped before renormalization.
pub const WEIGHT_PRUNE: f64 = 1e-3;

/// Weight fields over a set of handles, each handle a set of mesh vertices
/// where its weight is pinned to one.
///
/// Solves `L M^-1 L w = 0` on free vertices (cotangent FEM Laplacian `L`,
/// lumped volume `M`), then clamps to `[0, 1]`, prunes and renormalizes.
pub fn biharmonic_weights(rest: &[Vec3], tets: &[[usize; 4]], handles: &[Vec<usize>]) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = rest.len();
    let mut owner = vec![usize::MAX; n];
    for (h, set) in handles.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::InvalidConfig(format!("handle {h} has no vertices")));
        }
        for &v in set {
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, len: n });
            }
            if owner[v] != usize::MAX {
                return Err(Error::InvalidConfig(format!("vertex {v} belongs to two handles")));
            }
            owner[v] = h;
        }
    }

    let mut lap = TripletMatrix::square(n);
    let mut mass = vec![0.0; n];
    for t in tets {
        let el = TetElement::new(*t, rest)?;
        for a in 0..4 {
            mass[t[a]] += el.volume / 4.0;
            for b in 0..4 {
                lap.push(t[a], t[b], el.volume * el.shape_gradients[a].dot(&el.shape_gradients[b]));
            }
        }
    }
    if let Some(v) = (0..n).find(|&v| mass[v] <= 0.0) {
        return Err(Error::InvalidConfig(format!("vertex {v} belongs to no element")));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, c, v) in lap.compressed() {
        rows[r].push((c, v));
    }
    // A component without handles leaves the system singular.
    let mut reached = vec![false; n];
    let mut stack: Vec<usize> = handles.iter().flatten().copied().collect();
    for &v in &stack {
        reached[v] = true;
    }
    while let Some(v) = stack.pop() {
        for &(w, _) in &rows[v] {
            if !reached[w] {
                reached[w] = true;
                stack.push(w);
            }
        }
    }
    if let Some(v) = reached.iter().position(|r| !r) {
        return Err(Error::Singular(format!("biharmonic system: vertex {v} is not connected to any handle")));
    }
    // Q = L M^-1 L, summed over the shared middle index.
    let mut q = TripletMatrix::square(n);
    for k in 0..n {
        for &(i, lik) in &rows[k] {
            for &(j, lkj) in &rows[k] {
                q.push(i, j, lik * lkj / mass[k]);
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| owner[v] == usize::MAX).collect();
    let mut free_index = vec![usize::MAX; n];
    for (i, &v) in free.iter().enumerate() {
        free_index[v] = i;
    }
    let nf = free.len();
    let nh = handles.len();
    let mut qff = TripletMatrix::square(nf);
    // rhs[h][i] = -sum_{c in handle h} Q[free_i, c]
    let mut rhs = vec![vec![0.0; nf]; nh];
    for (r, c, v) in q.compressed() {
        match (free_index[r], free_index[c]) {
            (usize::MAX, _) => {}
            (fr, usize::MAX) => rhs[owner[c]][fr] -= v,
            (fr, fc) => qff.push(fr, fc, v),
        }
    }
    let mut raw = vec![vec![0.0; nh]; n];
    for v in 0..n {
        if owner[v] != usize::MAX {
            raw[v][owner[v]] = 1.0;
        }
    }
    if nf > 0 {
        let chol = SparseCholesky::factor(&qff)
            .map_err(|_| Error::Singular("biharmonic system (is the mesh connected?)".into()))?;
        let sols: Vec<Vec<f64>> = rhs.par_iter().map(|b| chol.solve(b)).collect();
        for (h, sol) in sols.iter().enumerate() {
            for (i, &v) in free.iter().enumerate() {
                raw[v][h] = sol[i];
            }
        }
    }
    Ok(raw
        .into_iter()
        .map(|w| {
            let clamped: Vec<f64> = w.iter().map(|x| x.clamp(0.0, 1.0)).collect();
            let max = clamped.iter().cloned().fold(0.0, f64::max);
            let mut kept: Vec<(usize, f64)> = clamped
                .iter()
                .enumerate()
                .filter(|(_, x)| **x >= WEIGHT_PRUNE || **x == max)
                .map(|(h, x)| (h, *x))
                .collect();
            let s: f64 = kept.iter().map(|(_, x)| x).sum();
            kept.iter_mut().for_each(|(_, x)| *x /= s);
            kept
        })
        .collect())
}

/// Greedy farthest-point sampling of `count` vertices from `candidates`.
pub fn farthest_point_sample(points: &[Vec3], candidates: &[usize], count: usize, seed: u64) -> Vec<usize> {
    if candidates.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![candidates[rng.random_range(0..candidates.len())]];
    let mut dist: Vec<f64> = candidates.iter().map(|&c| (points[c] - points[chosen[0]]).norm()).collect();
    while chosen.len() < count.min(candidates.len()) {
        let (best, _) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let v = candidates[best];
        chosen.push(v);
        for (d, &c) in dist.iter_mut().zip(candidates) {
            *d = d.min((points[c] - points[v]).norm());
        }
    }
    chosen
}

/// `u = U z` with three translation columns per point handle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    /// Vertex sets pinned to each bone handle.
    pub bone_handles: Vec<Vec<usize>>,
    /// Mesh vertex of each point handle.
    pub point_handles: Vec<usize>,
    /// Per vertex, weights over all handles: bones first, then points.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl SubspaceBasis {
    pub fn n_vertices(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bone_handles(&self) -> usize {
        self.bone_handles.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.point_handles.len()
    }

    /// Point-handle weights of vertex `v`, indexed by point handle.
    pub fn point_weights(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let nb = self.bone_handles.len();
        self.weights[v].iter().filter(move |(h, _)| *h >= nb).map(move |&(h, w)| (h - nb, w))
    }

    pub fn vertex_displacement(&self, v: usize, z: &[f64]) -> Vec3 {
        let mut u = Vec3::zeros();
        for (k, w) in self.point_weights(v) {
            u += Vec3::new(z[3 * k], z[3 * k + 1], z[3 * k + 2]) * w;
        }
        u
    }

    pub fn displacement(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("reduced coordinates", self.dim(), z.len())?;
        Ok((0..self.n_vertices())
            .flat_map(|v| {
                let u = self.vertex_displacement(v, z);
                [u.x, u.y, u.z]
            })
            .collect())
    }

    /// `U^T g` for a full displacement-space vector.
    pub fn project_vector(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for v in 0..self.n_vertices() {
            for (k, w) in self.point_weights(v) {
                for i in 0..3 {
                    out[3 * k + i] += w * g[3 * v + i];
                }
            }
        }
        out
    }

    /// `U^T H U` for full displacement-space triplets.
    pub fn project_matrix(&self, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        let pw: Vec<Vec<(usize, f64)>> = (0..self.n_vertices()).map(|v| self.point_weights(v).collect()).collect();
        for &(r, c, val) in entries {
            let (vr, i) = (r / 3, r % 3);
            let (vc, j) = (c / 3, c % 3);
            for &(k, wk) in &pw[vr] {
                for &(l, wl) in &pw[vc] {
                    out[(3 * k + i, 3 * l + j)] += val * wk * wl;
                }
            }
        }
        out
    }

    /// Dense `U` (`3 n_vertices` by `dim`), for checks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(3 * self.n_vertices(), self.dim());
        for v in 0..self.n_vertices() {
            for (k, w) in self.point_weights(v) {
                for i in 0..3 {
                    u[(3 * v + i, 3 * k + i)] = w;
                }
            }
        }
        u
    }
}

/// Builds the basis with `bone_handles` (vertex sets held by each bone) and
/// `n_points` farthest-point samples among `surface` vertices outside them.
pub fn build_handle_basis(
    rest: &[Vec3],
    tets: &[[usize; 4]],
    surface: &[usize],
    bone_handles: Vec<Vec<usize>>,
    n_points: usize,
    seed: u64,
) -> Result<SubspaceBasis> {
    if n_points == 0 {
        return Err(Error::InvalidConfig("at least one point handle is required".into()));
    }
    let mut taken = vec![false; rest.len()];
    for set in &bone_handles {
        for &v in set {
            if v < taken.len() {
                taken[v] = true;
            }
        }
    }
    let candidates: Vec<usize> = surface.iter().copied().filter(|&v| !taken[v]).collect();
    let points = farthest_point_sample(rest, &candidates, n_points, seed);
    if points.len() < n_points {
        return Err(Error::InvalidConfig(format!(
            "only {} free surface vertices for {n_points} point handles",
            points.len()
        )));
    }
    let mut handles = bone_handles.clone();
    handles.extend(points.iter().map(|&p| vec![p]));
    let weights = biharmonic_weights(rest, tets, &handles)?;
    Ok(SubspaceBasis {
        bone_handles,
        point_handles: points,
        weights,
    })
}

/// Per element: the reduced columns touching its 12 DoFs, as
/// `(local row, reduced column, value)`.
pub fn element_basis(basis: &SubspaceBasis, el: &TetElement) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (a, &v) in el.vertices.iter().enumerate() {
        for (k, w) in basis.point_weights(v) {
            for i in 0..3 {
                out.push((3 * a + i, 3 * k + i, w));
            }
        }
    }
    out
}

/// Selected elements (or vertices) with non-negative weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubatureScheme {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Held-out relative error reached.
    pub training_error: f64,
    /// Set when training stopped for lack of progress.
    pub stalled: bool,
}

impl CubatureScheme {
    /// Every element at its rest volume: reproduces the full sum.
    pub fn identity(fem: &FemMesh) -> Self {
        Self {
            indices: (0..fem.len()).collect(),
            weights: fem.elements.iter().map(|e| e.volume).collect(),
            training_error: 0.0,
            stalled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Lawson-Hanson non-negative least squares `min |A x - b|, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, warm: Option<&DVector<f64>>) -> DVector<f64> {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let tol = 1e-12 * ata.diagonal().amax().max(1e-300);
    let mut x = match warm {
        Some(w) if w.len() == n => w.map(|v| v.max(0.0)),
        _ => DVector::zeros(n),
    };
    let mut passive: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let mut z = DVector::zeros(n);
        if idx.is_empty() {
            return z;
        }
        let m = DMatrix::from_fn(idx.len(), idx.len(), |r, c| ata[(idx[r], idx[c])]);
        let rhs = DVector::from_fn(idx.len(), |r, _| atb[idx[r]]);
        let sol = m
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| m.svd(true, true).solve(&rhs, 1e-14).unwrap_or(DVector::zeros(idx.len())));
        for (r, &i) in idx.iter().enumerate() {
            z[i] = sol[r];
        }
        z
    };
    for _ in 0..3 * n + 10 {
        // Inner loop: keep the passive solution feasible.
        loop {
            let z = solve_passive(&passive);
            let bad: Vec<usize> = (0..n).filter(|&i| passive[i] && z[i] <= 0.0).collect();
            if bad.is_empty() {
                x = z;
                break;
            }
            let alpha = bad
                .iter()
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
        let w = &atb - &ata * &x;
        let next = (0..n).filter(|&i| !passive[i] && w[i] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match next {
            Some(i) => passive[i] = true,
            None => break,
        }
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CubatureSettings {
    /// Random reduced states; a fifth are held out.
    pub samples: usize,
    pub max_points: usize,
    pub min_points: usize,
    /// Held-out relative energy error that ends training.
    pub tolerance: f64,
    /// Random directional force probes per training state.
    pub force_probes: usize,
    /// Target largest strain of a training state.
    pub strain: f64,
    /// Additions without improvement before giving up.
    pub patience: usize,
}

impl Default for CubatureSettings {
    fn default() -> Self {
        Self {
            samples: 100,
            max_points: 200,
            min_points: 40,
            tolerance: 0.05,
            force_probes: 4,
            strain: 0.15,
            patience: 50,
        }
    }
}

/// Training data for greedy cubature: each row is one sampled quantity,
/// each column one candidate; `target` holds the exact sums.
#[derive(Clone, Debug)]
pub struct CubatureData {
    pub columns: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Rows that are energies (used for the held-out error).
    pub energy_rows: Vec<usize>,
}

/// Greedy element selection with NNLS weights on `train`, stopped by the
/// relative energy error on `holdout`.
pub fn greedy_cubature(train: &CubatureData, holdout: &CubatureData, settings: &CubatureSettings) -> CubatureScheme {
    let a = &train.columns;
    let nc = a.ncols();
    let norms: Vec<f64> = (0..nc).map(|c| a.column(c).norm()).collect();
    let holdout_error = |idx: &[usize], w: &DVector<f64>| -> f64 {
        holdout
            .energy_rows
            .iter()
            .map(|&r| {
                let approx: f64 = idx.iter().zip(w.iter()).map(|(&c, wc)| holdout.columns[(r, c)] * wc).sum();
                let exact = holdout.target[r];
                (approx - exact).abs() / exact.abs().max(1e-300)
            })
            .fold(0.0, f64::max)
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut weights = DVector::zeros(0);
    let mut residual = train.target.clone();
    let mut best = (f64::INFINITY, Vec::new(), DVector::zeros(0));
    let mut since_best = 0;
    let mut stalled = false;
    let floor = settings.min_points.min(settings.max_points).min(nc).max(1);
    while selected.len() < settings.max_points.min(nc) {
        let corr = a.transpose() * &residual;
        let pick = (0..nc)
            .filter(|c| norms[*c] > 0.0 && !selected.contains(c))
            .max_by(|&i, &j| (corr[i] / norms[i]).total_cmp(&(corr[j] / norms[j])));
        let Some(pick) = pick else { break };
        selected.push(pick);
        let sub = DMatrix::from_fn(a.nrows(), selected.len(), |r, c| a[(r, selected[c])]);
        let mut warm = weights.clone().resize_vertically(selected.len(), 0.0);
        if warm.iter().all(|w| *w == 0.0) {
            warm = DVector::zeros(selected.len());
        }
        weights = nnls(&sub, &train.target, Some(&warm));
        residual = &train.target - &sub * &weights;
        let err = holdout_error(&selected, &weights);
        if selected.len() < floor {
            continue;
        }
        if err < best.0 {
            best = (err, selected.clone(), weights.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if err < settings.tolerance {
            break;
        }
        if since_best >= settings.patience {
            stalled = true;
            break;
        }
    }
    if best.1.is_empty() {
        best = (holdout_error(&selected, &weights), selected, weights);
    }
    let (err, idx, w) = best;
    let keep: Vec<usize> = (0..idx.len()).filter(|&i| w[i] > 0.0).collect();
    CubatureScheme {
        indices: keep.iter().map(|&i| idx[i]).collect(),
        weights: keep.iter().map(|&i| w[i]).collect(),
        training_error: err,
        stalled,
    }
}

/// Random reduced states with largest element strain spread up to
/// `settings.strain`.
pub fn sample_states(fem: &FemMesh, basis: &SubspaceBasis, count: usize, strain: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f64> = (0..basis.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u = basis.displacement(&z)?;
        let max_strain = fem
            .elements
            .iter()
            .map(|e| (e.deformation_gradient(&u) - crate::math::Mat3::identity()).norm())
            .fold(0.0, f64::max);
        let s = strain * rng.random_range(0.2..1.0) / max_strain.max(1e-300);
        out.push(z.iter().map(|x| x * s).collect());
    }
    Ok(out)
}

/// Per-element energies and directional force probes of the given states.
pub fn elastic_training_data(fem: &FemMesh, basis: &SubspaceBasis, states: &[Vec<f64>], probes: usize, seed: u64) -> Result<CubatureData> {
    let ne = fem.len();
    let rows_per = 1 + probes;
    let mut columns = DMatrix::zeros(states.len() * rows_per, ne);
    let mut target = DVector::zeros(states.len() * rows_per);
    let mut energy_rows = Vec::with_capacity(states.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..ne).collect();
    for (s, z) in states.iter().enumerate() {
        let u = basis.displacement(z)?;
        let dirs: Vec<Vec<f64>> = (0..probes)
            .map(|_| {
                let d: Vec<f64> = (0..basis.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                basis.displacement(&d)
            })
            .collect::<Result<_>>()?;
        let evals = fem.eval_elements(&all, &u, false, false)?;
        let row0 = s * rows_per;
        energy_rows.push(row0);
        for (e, ev) in evals.iter().enumerate() {
            let vol = fem.elements[e].volume;
            columns[(row0, e)] = ev.value / vol;
            let idx = dof_indices(&fem.elements[e]);
            for (p, d) in dirs.iter().enumerate() {
                let f: f64 = idx.iter().enumerate().map(|(r, &g)| ev.gradient[r] * d[g]).sum();
                columns[(row0 + 1 + p, e)] = f / vol;
            }
        }
        for r in row0..row0 + rows_per {
            target[r] = (0..ne).map(|e| columns[(r, e)] * fem.elements[e].volume).sum::<f64>();
        }
        // Equalize the weight of each state and each probe.
        for r in row0..row0 + rows_per {
            // Sum of absolute contributions: the energy itself for energy
            // rows, and a cancellation-free size for force probes.
            let l1: f64 = (0..ne).map(|e| (columns[(r, e)] * fem.elements[e].volume).abs()).sum();
            let scale = 1.0 / l1.max(1e-300);
            for e in 0..ne {
                columns[(r, e)] *= scale;
            }
            target[r] *= scale;
        }
    }
    Ok(CubatureData {
        columns,
        target,
        energy_rows,
    })
}

/// Trains elastic cubature on random reduced states (no motion data).
pub fn train_elastic_cubature(fem: &FemMesh, basis: &SubspaceBasis, settings: &CubatureSettings, seed: u64) -> Result<CubatureScheme> {
    if settings.samples < 5 {
        return Err(Error::InvalidConfig("cubature needs at least 5 training states".into()));
    }
    let states = sample_states(fem, basis, settings.samples, settings.strain, seed)?;
    let n_hold = (settings.samples / 5).max(1);
    let (hold, train) = states.split_at(n_hold);
    let train = elastic_training_data(fem, basis, train, settings.force_probes, seed ^ 0x5eed)?;
    let hold = elastic_training_data(fem, basis, hold, 0, seed ^ 0xface)?;
    Ok(greedy_cubature(&train, &hold, settings))
}

/// Value, reduced gradient and dense reduced Hessian of the elastic energy
/// at `z`. `None` evaluates every element at its rest volume.
pub fn reduced_elastic(
    fem: &FemMesh,
    basis: &SubspaceBasis,
    cubature: Option<&CubatureScheme>,
    z: &[f64],
    hessian: bool,
    project: bool,
) -> Result<(f64, Vec<f64>, Option<DMatrix<f64>>)> {
    let d = basis.dim();
    check_len("reduced coordinates", d, z.len())?;
    let identity;
    let scheme = match cubature {
        Some(c) => c,
        None => {
            identity = CubatureScheme::identity(fem);
            &identity
        }
    };
    // Only element vertices need displacements.
    let mut u = vec![0.0; 3 * fem.n_vertices];
    let mut seen = vec![false; fem.n_vertices];
    for &e in &scheme.indices {
        for &v in &fem.elements[e].vertices {
            if !seen[v] {
                seen[v] = true;
                let x = basis.vertex_displacement(v, z);
                u[3 * v..3 * v + 3].copy_from_slice(x.as_slice());
            }
        }
    }
    let evals = fem.eval_elements(&scheme.indices, &u, hessian, project)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; d];
    let mut hess = if hessian { Some(DMatrix::zeros(d, d)) } else { None };
    for ((&e, &w), ev) in scheme.indices.iter().zip(&scheme.weights).zip(&evals) {
        let s = w / fem.elements[e].volume;
        value += s * ev.value;
        let cols = element_basis(basis, &fem.elements[e]);
        for &(r, c, b) in &cols {
            grad[c] += s * b * ev.gradient[r];
        }
        if let (Some(h), Some(k)) = (hess.as_mut(), ev.hessian.as_ref()) {
            for &(r1, c1, b1) in &cols {
                for &(r2, c2, b2) in &cols {
                    h[(c1, c2)] += s * b1 * b2 * k[(r1, r2)];
                }
            }
        }
    }
    Ok((value, grad, hess))
}
