//! End-to-end runs of the `satdeblur` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satdeblur::cli::{ablate, fixture_dirs, load_fixture, SolverOptions};
use satdeblur::io::{read_image, read_sdbf, write_kernel, write_png, write_sdbf, BitDepth};
use satdeblur::metrics::MetricReport;
use satdeblur::nn::{save_weights, Architecture, WeightsBundle};
use satdeblur::synth::night_scene;
use satdeblur::{Image, Kernel, Shape};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satdeblur"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Relative path → contents for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn synth_fixtures(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("fixtures");
    ok(&[
        "synth",
        "--procedural",
        &count.to_string(),
        "--min-clipped",
        "0.05",
        "--kernel-size",
        "11",
        "21",
        "--out",
        p(&out),
    ]);
    out
}

#[test]
fn synth_from_one_source_writes_one_pair() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("sharp.png");
    write_png(&night_scene(Shape::new(40, 48, 3), 1), &src, BitDepth::Sixteen).unwrap();
    let out = tmp.path().join("out");
    ok(&["synth", "--input", p(&src), "--seed", "42", "--out", p(&out)]);
    let dirs = fixture_dirs(&out).unwrap();
    assert_eq!(dirs.len(), 1);
    for f in ["blurry.png", "gt.png", "kernel.txt", "map_gt.sdbf", "meta.json"] {
        assert!(dirs[0].join(f).is_file(), "{f}");
    }
    let meta: Value = serde_json::from_slice(&fs::read(dirs[0].join("meta.json")).unwrap()).unwrap();
    for key in ["seed", "threshold", "enlarge", "noise", "kernel_size"] {
        assert!(meta.get(key).is_some(), "{key}");
    }
    assert!(out.join("synth_config.json").is_file());
    assert_eq!(read_image(&dirs[0].join("blurry.png")).unwrap().channels(), 3);
}

#[test]
fn synth_is_reproducible_and_validates_first() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--procedural",
            "3",
            "--noise",
            "gaussian:0.01",
            "--seed",
            "9",
            "--out",
            p(out),
        ]);
    }
    assert_eq!(tree(&a), tree(&b));

    let bad = tmp.path().join("bad");
    let out = run(&[
        "synth",
        "--procedural",
        "1",
        "--threshold",
        "0.5",
        "1.2",
        "--out",
        p(&bad),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!bad.exists());
}

#[test]
fn delta_kernel_single_step_returns_input() {
    let tmp = TempDir::new().unwrap();
    let img = night_scene(Shape::new(24, 24, 1), 3);
    let input = tmp.path().join("in.sdbf");
    let kernel = tmp.path().join("k.txt");
    let out = tmp.path().join("out.sdbf");
    write_sdbf(&img, &input).unwrap();
    write_kernel(&Kernel::delta(3).unwrap(), &kernel).unwrap();
    ok(&[
        "deblur",
        "--input",
        p(&input),
        "--kernel",
        p(&kernel),
        "--out",
        p(&out),
        "--map",
        "unit",
        "--prior",
        "none",
        "-q",
        "1",
        "--trace",
    ]);
    let want = read_sdbf(&input).unwrap();
    assert_eq!(read_sdbf(&out).unwrap().max_abs_diff(&want).unwrap(), 0.0);
    let trace = fs::read_to_string(tmp.path().join("out.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert!(tmp.path().join("deblur_config.json").is_file());
}

#[test]
fn batch_deblur_improves_on_the_blurry_input() {
    let tmp = TempDir::new().unwrap();
    let fx = synth_fixtures(tmp.path(), 3);
    let before = tree(&fx);
    let res = tmp.path().join("restored");
    ok(&[
        "deblur",
        "--input",
        p(&fx),
        "--out",
        p(&res),
        "--trace",
        "-q",
        "30",
    ]);
    assert_eq!(tree(&fx), before, "inputs must not change");
    let report = tmp.path().join("report.json");
    ok(&[
        "eval",
        "--results",
        p(&res),
        "--fixtures",
        p(&fx),
        "--out",
        p(&report),
    ]);
    let v: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let pairs = v["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 3);
    for pair in pairs {
        let restored = pair["psnr"].as_f64().unwrap();
        let blurry = pair["blurry"]["psnr"].as_f64().unwrap();
        assert!(restored > blurry, "{pair}");
    }
    let trace = fs::read_to_string(res.join("pair_0000/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 30);
    let first: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert!(first["map_mse"].as_f64().is_some());
}

#[test]
fn single_eval_prints_report() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.png");
    let b = tmp.path().join("b.png");
    write_png(&Image::filled(Shape::new(16, 16, 1), 0.5), &a, BitDepth::Sixteen).unwrap();
    write_png(&Image::filled(Shape::new(16, 16, 1), 0.5), &b, BitDepth::Sixteen).unwrap();
    let out = ok(&["eval", "--estimate", p(&a), "--reference", p(&b)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["psnr"], "identical");
    assert_eq!(v["ssim"].as_f64(), Some(1.0));
}

#[test]
fn network_estimators_need_weights() {
    let tmp = TempDir::new().unwrap();
    let fx = synth_fixtures(tmp.path(), 1);
    let res = tmp.path().join("r");
    let out = run(&["deblur", "--input", p(&fx), "--out", p(&res), "--map", "men_cnn"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("men-weights"));
    let missing = tmp.path().join("missing.sdnw");
    let out = run(&[
        "deblur",
        "--input",
        p(&fx),
        "--out",
        p(&res),
        "--map",
        "men_cnn",
        "--men-weights",
        p(&missing),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let men = tmp.path().join("men.sdnw");
    let pen = tmp.path().join("pen.sdnw");
    save_weights(&WeightsBundle::seeded(Architecture::Men, 1, 5).unwrap(), &men).unwrap();
    save_weights(&WeightsBundle::seeded(Architecture::Pen, 1, 6).unwrap(), &pen).unwrap();
    ok(&[
        "deblur",
        "--input",
        p(&fx),
        "--out",
        p(&res),
        "-q",
        "3",
        "--map",
        "men_cnn",
        "--prior",
        "pen_cnn",
        "--men-weights",
        p(&men),
        "--pen-weights",
        p(&pen),
    ]);
    assert!(res.join("pair_0000/deblurred.png").is_file());
}

#[test]
fn config_file_is_strict_and_overridable() {
    let tmp = TempDir::new().unwrap();
    let fx = synth_fixtures(tmp.path(), 1);
    let cfg = tmp.path().join("job.toml");
    fs::write(
        &cfg,
        "[solver]\nmap = \"unit\"\nprior = \"none\"\niterations = 2\n",
    )
    .unwrap();
    let res = tmp.path().join("r");
    ok(&[
        "--config",
        p(&cfg),
        "deblur",
        "--input",
        p(&fx),
        "--out",
        p(&res),
        "-q",
        "4",
    ]);
    let snap: Value = serde_json::from_slice(&fs::read(res.join("deblur_config.json")).unwrap()).unwrap();
    assert_eq!(snap["solver"]["iterations"], 4);
    assert_eq!(snap["solver"]["map"], "unit");

    fs::write(&cfg, "[solver]\nmapp = \"unit\"\n").unwrap();
    let out = run(&["--config", p(&cfg), "deblur", "--input", p(&fx), "--out", p(&res)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["deblur", "--input", p(&fx), "--out", p(&res), "--map", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "deblur",
        "--input",
        p(&tmp.path().join("nope.png")),
        "--kernel",
        "k.txt",
        "--out",
        "x.png",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ablation_table_matches_manual_composition() {
    let tmp = TempDir::new().unwrap();
    let fx = synth_fixtures(tmp.path(), 4);
    let table = tmp.path().join("ablate/table.json");
    let stdout = ok(&[
        "ablate",
        "--fixtures",
        p(&fx),
        "--variant",
        "unit,naive_threshold",
        "--out",
        p(&table),
    ])
    .stdout;
    let rows: Value = serde_json::from_slice(&fs::read(&table).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let unit = rows[0]["mean_psnr"].as_f64().unwrap();
    let naive = rows[1]["mean_psnr"].as_f64().unwrap();
    assert!(naive >= unit - 0.05, "naive {naive} unit {unit}");
    let text = fs::read_to_string(table.with_extension("txt")).unwrap();
    assert_eq!(text, String::from_utf8(stdout).unwrap());
    assert_eq!(text.lines().count(), 3);

    // deblur + metrics composed by hand on the same fixtures
    let fixtures: Vec<_> = fixture_dirs(&fx)
        .unwrap()
        .iter()
        .map(|d| load_fixture(d).unwrap())
        .collect();
    let opts = SolverOptions::default();
    let cfg = opts.build("naive_threshold", "none").unwrap();
    let mut sum = 0.0;
    for f in &fixtures {
        let (out, _) = satdeblur::solve(&f.blurry, &f.kernel, &cfg).unwrap();
        sum += MetricReport::evaluate(&out, &f.gt).unwrap().psnr.db().unwrap();
    }
    assert!((sum / fixtures.len() as f64 - naive).abs() <= 1e-12);
    let lib = ablate(&fixtures, &[("x".into(), cfg)]).unwrap();
    assert_eq!(lib[0].mean_psnr, naive);

    let one = tmp.path().join("one");
    fs::create_dir(&one).unwrap();
    fs::rename(fixture_dirs(&fx).unwrap()[0].clone(), one.join("pair_0000")).unwrap();
    let out = ok(&[
        "ablate",
        "--fixtures",
        p(&one),
        "--variant",
        "ratio_oracle+hyper_laplacian",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(
        run(&["ablate", "--fixtures", p(&empty), "--variant", "unit"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(run(&["deblur"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
