use std::path::Path;
use std::process::{Command, Output};

use erank_splat::io::{read_metrics_csv, read_ply_file, write_ply_file};
use erank_splat::{GaussianCloudF64, GaussianParams};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erank-splat")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn cloud(k: usize, scales: impl Fn(usize) -> [f64; 3]) -> GaussianCloudF64 {
    GaussianCloudF64::from_params(
        0,
        (0..k).map(|i| {
            let mut g = GaussianParams::isotropic([i as f64 * 0.01, 0.0, 0.0], 0.05, 0.5, [0.5; 3], 0);
            g.raw_scales = scales(i).map(f64::ln);
            g
        }),
    )
    .unwrap()
}

#[test]
fn analyze_isotropic_cloud_has_no_needles() {
    let dir = tempfile::tempdir().unwrap();
    write_ply_file(&cloud(20, |_| [0.1; 3]), &dir.path().join("iso.ply")).unwrap();
    let o = cli(&["analyze", "iso.ply", "--bins", "8"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("gaussians: 20"), "{text}");
    assert!(text.contains("needles (erank < 1.04): 0 "), "{text}");
    let hist = std::fs::read_to_string(dir.path().join("iso.hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 9);
    assert!(hist.trim_end().ends_with(",20"));
}

#[test]
fn train_with_zero_iterations_writes_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let config = "data.scene = cube\ndata.views = 4\ndata.resolution = 16\ntrain.iterations = 0\ntrain.init_points = 40\noutput.dir = run\n";
    std::fs::write(dir.path().join("run.cfg"), config).unwrap();
    let o = cli(&["train", "run.cfg"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let ply = read_ply_file::<f64>(&dir.path().join("run/point_cloud.ply")).unwrap();
    assert_eq!(ply.len(), 40);
    assert!(read_metrics_csv(&dir.path().join("run/metrics.csv")).unwrap().rows.is_empty());
}

#[test]
fn compare_reports_fewer_regularized_needles() {
    let dir = tempfile::tempdir().unwrap();
    let baseline = cloud(30, |i| if i % 3 == 0 { [0.5, 0.01, 0.01] } else { [0.2, 0.2, 0.01] });
    let regularized = cloud(27, |_| [0.2, 0.15, 0.01]);
    write_ply_file(&baseline, &dir.path().join("a.ply")).unwrap();
    write_ply_file(&regularized, &dir.path().join("b.ply")).unwrap();
    let o = cli(&["compare", "a.ply", "b.ply"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("needle reduction: 10 -> 0"), "{text}");
}

#[test]
fn generated_scene_renders_and_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["gen-scene", "sphere", "--out", "scene", "--views", "4", "--resolution", "16"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let surface = dir.path().join("scene/surface.json");
    assert!(surface.exists());
    let shell = GaussianCloudF64::from_params(
        0,
        (0..200).map(|i| {
            let (t, p) = (i as f64 * 2.399963, (1.0 - 2.0 * (i as f64 + 0.5) / 200.0).acos());
            let m = [0.5 * p.sin() * t.cos(), 0.5 * p.sin() * t.sin(), 0.5 * p.cos()];
            GaussianParams::isotropic(m, 0.06, 0.9, [0.8; 3], 0)
        }),
    )
    .unwrap();
    write_ply_file(&shell, &dir.path().join("shell.ply")).unwrap();
    for mode in ["color", "depth", "normal"] {
        let out = format!("{mode}.png");
        let o = cli(&["render", "shell.ply", "scene/cameras.json", "--out", &out, "--mode", mode], dir.path());
        assert!(o.status.success(), "{o:?}");
        assert!(dir.path().join(&out).exists());
    }
    let o = cli(&["mesh", "shell.ply", "scene", "--out", "shell.obj", "--resolution", "32"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let obj = std::fs::read_to_string(dir.path().join("shell.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["analyze"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["analyze", "missing.ply"], dir.path()).status.code(), Some(2));
    assert_eq!(cli(&["gen-scene", "torus", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(cli(&["--help"], dir.path()).status.code(), Some(0));
}
