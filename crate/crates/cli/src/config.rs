//! TOML configuration files for the `generate` and `simulate` commands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use softavatar::avatar::AvatarOptions;
use softavatar::body::BodyConfig;
use softavatar::contact::Collider;
use softavatar::sim::SimulationSettings;

/// Body used by `generate`: a named preset or a full description.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub preset: Option<String>,
    pub body: Option<BodyConfig>,
    pub seed: Option<u64>,
}

impl GenerateConfig {
    pub fn body_config(&self) -> Result<BodyConfig> {
        match (&self.preset, &self.body) {
            (Some(_), Some(_)) => bail!("give either `preset` or `[body]`, not both"),
            (Some(p), None) => preset(p),
            (None, Some(b)) => Ok(b.clone()),
            (None, None) => preset("humanoid"),
        }
    }
}

pub fn preset(name: &str) -> Result<BodyConfig> {
    match name {
        "humanoid" => Ok(BodyConfig::humanoid()),
        "arm" => Ok(BodyConfig::arm()),
        other => bail!("unknown body preset `{other}` (expected `humanoid` or `arm`)"),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    pub amplitude: f64,
    pub frame_rate: f64,
    /// Clip length; 0 means one frame per simulated frame.
    pub frames: usize,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            frame_rate: 30.0,
            frames: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarEntry {
    /// Body file written by `generate`.
    pub model: Option<PathBuf>,
    /// Synthetic body generated on the fly.
    pub preset: Option<String>,
    /// Motion clip to track.
    pub mocap: Option<PathBuf>,
    /// Synthetic clip to track.
    pub motion: Option<MotionSpec>,
    /// Root placement.
    pub offset: [f64; 3],
    /// Root rotation as an axis-angle vector.
    pub rotation: [f64; 3],
    pub options: AvatarOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub static_mode: bool,
    pub output: Option<PathBuf>,
    pub settings: SimulationSettings,
    pub avatars: Vec<AvatarEntry>,
    pub colliders: Vec<Collider>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 30,
            static_mode: false,
            output: None,
            settings: SimulationSettings::default(),
            avatars: Vec::new(),
            colliders: Vec::new(),
        }
    }
}

impl SceneConfig {
    /// Reads a scene and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scene {}", path.display()))?;
        let mut cfg: SceneConfig = toml::from_str(&text).with_context(|| format!("parsing scene {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.output {
            fix(o);
        }
        for a in &mut self.avatars {
            a.model.as_mut().map(fix);
            a.mocap.as_mut().map(fix);
            a.options.cache_dir.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if self.avatars.is_empty() {
            bail!("scene has no avatars");
        }
        for (i, a) in self.avatars.iter().enumerate() {
            if a.model.is_some() == a.preset.is_some() {
                bail!("avatar {i}: give exactly one of `model` or `preset`");
            }
            if a.mocap.is_some() && a.motion.is_some() {
                bail!("avatar {i}: give at most one of `mocap` or `motion`");
            }
            if let Some(p) = &a.preset {
                preset(p).with_context(|| format!("avatar {i}"))?;
            }
        }
        for (i, c) in self.colliders.iter().enumerate() {
            c.validate().with_context(|| format!("collider {i}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_parses_with_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        std::fs::write(
            &path,
            r#"
frames = 3
[settings]
soft_tissue = true
[[avatars]]
model = "body.bin"
mocap = "clip.txt"
[[colliders]]
kind = "sphere"
center = [0.0, 1.0, 0.3]
radius = 0.1
"#,
        )
        .unwrap();
        let cfg = SceneConfig::load(&path).unwrap();
        assert_eq!(cfg.frames, 3);
        assert!(cfg.settings.soft_tissue);
        assert_eq!(cfg.avatars[0].model.as_deref(), Some(dir.path().join("body.bin").as_path()));
        assert_eq!(cfg.colliders.len(), 1);
    }

    #[test]
    fn bad_scenes_are_rejected() {
        for text in [
            "frames = 1\n",
            "[[avatars]]\npreset = \"arm\"\nmodel = \"x\"\n",
            "[[avatars]]\npreset = \"tripod\"\n",
            "[[avatars]]\npreset = \"arm\"\n[settings]\nreduced_model = true\n",
            "unknown_key = 1\n[[avatars]]\npreset = \"arm\"\n",
            "[[avatars]]\npreset = \"arm\"\n[[colliders]]\nkind = \"sphere\"\ncenter = [0, 0, 0]\nradius = -1.0\n",
        ] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.toml");
            std::fs::write(&path, text).unwrap();
            assert!(SceneConfig::load(&path).is_err(), "{text}");
        }
    }
}
