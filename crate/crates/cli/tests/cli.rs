use std::path::Path;
use std::process::Command;

use softavatar::kinematics::Pose;
use softavatar::math::Vec3;
use softavatar::mocap::MocapSequence;
use softavatar_cli::commands::{self, SimulateArgs};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softavatar"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn arm_scene(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("scene.toml");
    write(
        &path,
        &format!(
            r#"
frames = 4
{extra}
[[avatars]]
preset = "arm"
[avatars.motion]
amplitude = 0.3
"#
        ),
    );
    path
}

#[test]
fn zero_frames_writes_rest_pose_only() {
    let dir = tempfile::tempdir().unwrap();
    let scene = arm_scene(dir.path(), "");
    let out = dir.path().join("out");
    let s = commands::simulate(
        &scene,
        &SimulateArgs {
            out: Some(out.clone()),
            frames: Some(0),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(s.frames.len(), 1);
    assert!(out.join("avatar0/frame_00000.obj").exists());
    assert!(!out.join("avatar0/frame_00001.obj").exists());
    // frame 0 positions are the topology's rest positions
    let topo = std::fs::read_to_string(out.join("avatar0/topology.obj")).unwrap();
    let frame = std::fs::read_to_string(out.join("avatar0/frame_00000.obj")).unwrap();
    let vlines: Vec<&str> = topo.lines().filter(|l| l.starts_with("v ")).collect();
    assert_eq!(vlines, frame.lines().collect::<Vec<_>>());
    assert!(topo.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn simulation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scene = arm_scene(dir.path(), "[settings]\nsoft_tissue = true\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        commands::simulate(
            &scene,
            &SimulateArgs {
                out: Some(out.clone()),
                seed: Some(7),
                ..Default::default()
            },
        )
        .unwrap();
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["metrics.jsonl", "avatar0/frame_00004.obj"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn constant_mocap_is_tracked() {
    let dir = tempfile::tempdir().unwrap();
    let body = dir.path().join("arm.json");
    let cfg = dir.path().join("body.toml");
    write(&cfg, "preset = \"arm\"\n");
    let counts = commands::generate(Some(&cfg), &body, Some(3)).unwrap();

    let mut target = Pose::identity(counts.bones);
    for (j, r) in target.joint_rotations.iter_mut().enumerate() {
        *r = Vec3::new(0.1, 0.25 - 0.05 * j as f64, -0.15);
    }
    MocapSequence::constant(target, 30.0, 1).unwrap().save(&dir.path().join("hold.txt")).unwrap();

    let scene = dir.path().join("scene.toml");
    write(
        &scene,
        r#"
frames = 60
[settings]
gravity = [0.0, 0.0, 0.0]
[settings.stiffness]
tracking = 1e5
root_rotation = 1e5
[[avatars]]
model = "arm.json"
mocap = "hold.txt"
"#,
    );
    let s = commands::simulate(
        &scene,
        &SimulateArgs {
            out: Some(dir.path().join("out")),
            ..Default::default()
        },
    )
    .unwrap();
    let first = s.frames[0].avatars[0].tracking_error.unwrap();
    let last = s.frames.last().unwrap().avatars[0].tracking_error.unwrap();
    assert!(first > 0.1, "{first}");
    assert!(last < 1e-4, "final tracking error {last}");
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    for (p, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let st = bin().args(["generate", "--out"]).arg(p).args(["--seed", seed]).status().unwrap();
        assert!(st.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("bad.toml");
    write(&scene, "frames = 2\nbogus = true\n[[avatars]]\npreset = \"arm\"\n");
    let out = bin().args(["simulate", "--scene"]).arg(&scene).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = bin().args(["simulate", "--scene"]).arg(dir.path().join("nope.toml")).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn static_flag_and_collider_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scene = arm_scene(
        dir.path(),
        "[[colliders]]\nkind = \"half_space\"\npoint = [0.0, -0.02, 0.0]\nnormal = [0.0, 1.0, 0.0]\n",
    );
    let out = dir.path().join("out");
    let st = bin()
        .args(["simulate", "--static", "--frames", "2", "--scene"])
        .arg(&scene)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert!(r["converged"].as_bool().unwrap());
        assert!(r["avatars"][0]["max_collider_penetration"].as_f64().is_some());
    }
    let timings = std::fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 4);
}

#[test]
fn validate_reports_json() {
    let out = bin().args(["validate", "--states", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v["checks"].as_array().unwrap().is_empty());
}
