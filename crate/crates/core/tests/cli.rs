use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use m2m_core::pipeline::{psnr, ssim, write_flo, write_image, RunManifest};
use m2m_core::warp::{FlowField, Frame};
use tempfile::TempDir;

fn m2m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2m"))
        .args(args)
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let (h, w) = (16, 24);
        let f0 = Frame::from_fn(3, h, w, |c, y, x| {
            (((x + 2 * y + 5 * c) % 11) as f64 / 10.0 * 255.0).round() / 255.0
        });
        let f1 = Frame::from_fn(3, h, w, |c, y, x| f0.get(c, y, x.saturating_sub(2)));
        write_image(dir.path().join("a.png"), &f0).unwrap();
        write_image(dir.path().join("b.png"), &f1).unwrap();
        write_flo(
            dir.path().join("f01.flo"),
            &FlowField::from_fn(h, w, |_, _| (2.0, 0.0)),
        )
        .unwrap();
        write_flo(
            dir.path().join("f10.flo"),
            &FlowField::from_fn(h, w, |_, _| (-2.0, 0.0)),
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn inputs(&self) -> Vec<String> {
        [
            "--frame0", "a.png", "--frame1", "b.png", "--flow01", "f01.flo", "--flow10", "f10.flo",
        ]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i % 2 == 1 {
                self.path(s)
            } else {
                s.to_string()
            }
        })
        .collect()
    }

    fn interpolate(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec!["interpolate".to_string()];
        args.extend(self.inputs());
        args.extend(["--out".to_string(), self.path(out)]);
        args.extend(extra.iter().map(|s| s.to_string()));
        m2m(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p: PathBuf| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn selftest_passes() {
    let o = m2m(&["selftest", "--seed", "3"]);
    assert!(o.status.success(), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains(", 0 failed"));
}

#[test]
fn factor_eight_writes_seven_named_frames_and_a_manifest() {
    let fx = Fixture::new();
    let o = fx.interpolate("out", &["--factor", "8"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let names: Vec<String> = listing(&fx.dir.path().join("out"))
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let mut want: Vec<String> = (1..8)
        .map(|k| format!("frame_t{}.png", k as f64 / 8.0))
        .collect();
    want.push("manifest.txt".into());
    want.sort();
    assert_eq!(names, want);
    assert!(names.contains(&"frame_t0.125.png".to_string()));
    let m = RunManifest::read(fx.dir.path().join("out/manifest.txt")).unwrap();
    assert_eq!(m.get("ledger.frames"), Some("7"));
    assert_eq!(m.get("frame.0.file"), Some("frame_t0.125.png"));
    assert!(m.get("frame.6.hole_ratio_n1").is_some());
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let fx = Fixture::new();
    let extra = [
        "--times",
        "0.3,0.6",
        "--ssr-ratio",
        "0.5",
        "--patch-size",
        "8",
        "--seed",
        "9",
        "--jitter",
    ];
    assert!(fx.interpolate("r1", &extra).status.success());
    assert!(fx.interpolate("r2", &extra).status.success());
    let mut seq = extra.to_vec();
    seq.push("--sequential");
    assert!(fx.interpolate("r3", &seq).status.success());
    let r1 = listing(&fx.dir.path().join("r1"));
    assert_eq!(r1.len(), 3);
    assert_eq!(r1, listing(&fx.dir.path().join("r2")));
    assert_eq!(r1, listing(&fx.dir.path().join("r3")));
}

#[test]
fn metrics_agree_with_the_library() {
    let fx = Fixture::new();
    let o = m2m(&["metrics", &fx.path("a.png"), &fx.path("b.png")]);
    assert!(o.status.success());
    let (a, b) = (
        m2m_core::pipeline::read_image(fx.path("a.png")).unwrap(),
        m2m_core::pipeline::read_image(fx.path("b.png")).unwrap(),
    );
    assert_eq!(
        text(&o.stdout).trim(),
        format!(
            "psnr_db={} ssim={}",
            psnr(&a, &b, 1.0).unwrap(),
            ssim(&a, &b).unwrap()
        )
    );
}

#[test]
fn exit_codes_distinguish_usage_and_io() {
    let fx = Fixture::new();
    let o = m2m(&["interpolate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("Usage"));

    let mut args = vec!["interpolate".to_string()];
    args.extend(fx.inputs());
    args[2] = fx.path("missing.png");
    args.extend(["--factor", "2", "--out"].map(String::from));
    args.push(fx.path("o"));
    let o = m2m(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));

    assert_eq!(
        fx.interpolate("o", &["--times", "0.5,1.5"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fx.interpolate("o", &["--times", "0.6,0.4"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fx.interpolate("o", &["--factor", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(m2m(&["--help"]).status.code(), Some(0));
    assert_eq!(m2m(&["--version"]).status.code(), Some(0));
}
