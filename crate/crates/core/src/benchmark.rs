//! Generation and per-step timings of the three dynamics models on one
//! body.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::avatar::{make_simulable, AvatarModel, AvatarOptions};
use crate::body::BodyTemplate;
use crate::error::Result;
use crate::mocap::synthetic_motion;
use crate::sim::SimulationSettings;

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub generation_seconds: f64,
    pub step_seconds: f64,
    pub newton_iterations: f64,
    pub dofs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, model: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Step time ordering articulated < reduced < full.
    pub fn step_order_holds(&self) -> bool {
        match (self.row("articulated"), self.row("rom"), self.row("fem")) {
            (Some(a), Some(r), Some(f)) => a.step_seconds < r.step_seconds && r.step_seconds < f.step_seconds,
            _ => false,
        }
    }

    /// Generation time ordering articulated < full < reduced.
    pub fn generation_order_holds(&self) -> bool {
        match (self.row("articulated"), self.row("rom"), self.row("fem")) {
            (Some(a), Some(r), Some(f)) => a.generation_seconds < f.generation_seconds && f.generation_seconds < r.generation_seconds,
            _ => false,
        }
    }

    /// Full-model step time over reduced-model step time.
    pub fn reduced_speedup(&self) -> f64 {
        match (self.row("rom"), self.row("fem")) {
            (Some(r), Some(f)) => f.step_seconds / r.step_seconds,
            _ => 0.0,
        }
    }

    /// Plain-text table: one row per model, generation and step columns.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>14} {:>14} {:>10}", "model", "generation_s", "step_s", "step_fps").unwrap();
        for r in &self.rows {
            writeln!(s, "{:<12} {:>14.4} {:>14.5} {:>10.2}", r.model, r.generation_seconds, r.step_seconds, 1.0 / r.step_seconds).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,generation_seconds,step_seconds\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.model, r.generation_seconds, r.step_seconds).unwrap();
        }
        s
    }
}

/// Builds each model from scratch and steps it `steps` times (after one
/// untimed step) while tracking a synthetic clip.
pub fn run_benchmark(template: &BodyTemplate, options: &AvatarOptions, steps: usize, seed: u64) -> Result<BenchmarkTable> {
    let clip = synthetic_motion(template.n_bones(), steps + 1, 30.0, 0.3, seed)?;
    let mut rows = Vec::with_capacity(3);
    for settings in [SimulationSettings::articulated(), SimulationSettings::fem(), SimulationSettings::rom()] {
        let options = AvatarOptions {
            cache_dir: None,
            seed,
            ..options.clone()
        };
        let t0 = Instant::now();
        let model = AvatarModel::build(template, &settings, &options)?;
        let generation_seconds = t0.elapsed().as_secs_f64();
        let kind = model.kind().to_string();
        let mut sim = make_simulable(model, &settings, Some(&clip), &[])?;
        let dofs = sim.dof_count();
        let step = |sim: &mut crate::sim::Simulable<AvatarModel>| -> Result<usize> {
            sim.pre_update()?;
            let r = sim.solve()?;
            sim.post_update()?;
            Ok(r.iterations)
        };
        step(&mut sim)?;
        let t1 = Instant::now();
        let mut iterations = 0;
        for _ in 0..steps.max(1) {
            iterations += step(&mut sim)?;
        }
        rows.push(BenchmarkRow {
            model: kind,
            generation_seconds,
            step_seconds: t1.elapsed().as_secs_f64() / steps.max(1) as f64,
            newton_iterations: iterations as f64 / steps.max(1) as f64,
            dofs,
        });
    }
    Ok(BenchmarkTable { rows })
}
