//! Command line contract tests: exit codes, passthrough behavior, and
//! per-file batch semantics.

use std::process::{Command, Output};

use hazeforge::dataset::make_fixtures;
use hazeforge::dcp::{dehaze_dcp, DcpConfig};
use hazeforge::imgcore::{load_image, save_image};
use hazeforge::mlr::{Direction, RegressionParams, TrainedModel};

fn hazeforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazeforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let img = dir.path().join("img.png");
    save_image(
        &hazeforge::PlanarImage::from_fn(16, 16, |_, _| [0.5; 3]).unwrap(),
        &img,
    )
    .unwrap();

    // Nonexistent input.
    let r = hazeforge(&["dehaze", "--input", "missing.png", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);

    // Density out of range.
    let r = hazeforge(&[
        "synthesize",
        "--input",
        img.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--density",
        "1.0",
    ]);
    assert_eq!(code(&r), 2);

    // Negative learning rate is rejected before any filesystem access.
    let r = hazeforge(&[
        "train",
        "--manifest",
        "does-not-exist.csv",
        "--direction",
        "dehaze",
        "--out-params",
        dir.path().join("m.json").to_str().unwrap(),
        "--lr=-1",
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("--lr"));

    // Empty manifest.
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "clean_path,hazy_path,haze_level\n").unwrap();
    let r = hazeforge(&[
        "train",
        "--manifest",
        empty.to_str().unwrap(),
        "--direction",
        "dehaze",
        "--out-params",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);

    // Missing manifest on eval.
    let r = hazeforge(&[
        "eval",
        "--manifest",
        "missing.csv",
        "--report-out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn wrong_direction_params_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.png");
    save_image(
        &hazeforge::PlanarImage::from_fn(16, 16, |_, _| [0.5; 3]).unwrap(),
        &img,
    )
    .unwrap();
    let synth_params = dir.path().join("synth.json");
    TrainedModel::new(
        Direction::Synth,
        RegressionParams::identity(),
        DcpConfig::default(),
    )
    .save(&synth_params)
    .unwrap();

    let r = hazeforge(&[
        "dehaze",
        "--input",
        img.to_str().unwrap(),
        "--output",
        dir.path().join("out").to_str().unwrap(),
        "--params",
        synth_params.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("direction"));

    // Conflicting flags: params file plus DCP overrides.
    let dehaze_params = dir.path().join("dehaze.json");
    TrainedModel::new(
        Direction::Dehaze,
        RegressionParams::identity(),
        DcpConfig::default(),
    )
    .save(&dehaze_params)
    .unwrap();
    let r = hazeforge(&[
        "dehaze",
        "--input",
        img.to_str().unwrap(),
        "--output",
        dir.path().join("out").to_str().unwrap(),
        "--params",
        dehaze_params.to_str().unwrap(),
        "--omega",
        "0.5",
    ]);
    assert_eq!(code(&r), 2);

    // mldcp restorer without params.
    let r = hazeforge(&[
        "eval",
        "--manifest",
        "whatever.csv",
        "--restorer",
        "mldcp",
        "--report-out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn single_file_dehaze_matches_library_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_fixtures(dir.path().join("fx").as_path(), 1, 17).unwrap();
    let hazy_path = manifest.rows()[2].hazy_path().unwrap().to_path_buf();
    let out_dir = dir.path().join("out");

    let r = hazeforge(&[
        "dehaze",
        "--input",
        hazy_path.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let produced = load_image(&out_dir.join(hazy_path.file_name().unwrap())).unwrap();
    let hazy = load_image(&hazy_path).unwrap();
    let expect = dehaze_dcp(&hazy, &DcpConfig::default()).unwrap().image;
    // Same pipeline, same defaults: outputs agree after 8-bit quantization.
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (a, b) in produced.data().iter().zip(expect.data()) {
        assert_eq!(quantize(*a), quantize(*b));
    }
}

#[test]
fn directory_dehaze_matches_individual_runs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    let fx = make_fixtures(dir.path().join("fx").as_path(), 1, 23).unwrap();
    for (i, row) in fx.rows().iter().enumerate() {
        std::fs::copy(row.hazy_path().unwrap(), src.join(format!("h{i}.png"))).unwrap();
    }

    let batch_out = dir.path().join("batch");
    let r = hazeforge(&[
        "dehaze",
        "--input",
        src.to_str().unwrap(),
        "--output",
        batch_out.to_str().unwrap(),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&r), 0);

    for i in 0..3 {
        let single_out = dir.path().join(format!("single{i}"));
        let r = hazeforge(&[
            "dehaze",
            "--input",
            src.join(format!("h{i}.png")).to_str().unwrap(),
            "--output",
            single_out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0);
        assert_eq!(
            std::fs::read(batch_out.join(format!("h{i}.png"))).unwrap(),
            std::fs::read(single_out.join(format!("h{i}.png"))).unwrap(),
            "batch output differs from individual run for h{i}"
        );
    }
}

#[test]
fn synthesize_density_zero_is_identity_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let fx = make_fixtures(dir.path().join("fx").as_path(), 1, 29).unwrap();
    let clean = fx.rows()[0].clean_path();
    let out = dir.path().join("out");
    let r = hazeforge(&[
        "synthesize",
        "--input",
        clean.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--density",
        "0",
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(
        std::fs::read(clean).unwrap(),
        std::fs::read(out.join(clean.file_name().unwrap())).unwrap()
    );
}

#[test]
fn per_item_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    save_image(
        &hazeforge::PlanarImage::from_fn(16, 16, |_, _| [0.4; 3]).unwrap(),
        &src.join("good.png"),
    )
    .unwrap();
    std::fs::write(src.join("corrupt.png"), b"not a png").unwrap();

    let r = hazeforge(&[
        "dehaze",
        "--input",
        src.to_str().unwrap(),
        "--output",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("corrupt.png"));
    assert!(dir.path().join("out/good.png").exists());
}

#[test]
fn eval_baseline_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let fx_dir = dir.path().join("fx");
    make_fixtures(fx_dir.as_path(), 2, 31).unwrap();
    let report = dir.path().join("report.json");
    let r = hazeforge(&[
        "eval",
        "--manifest",
        fx_dir.join("manifest.csv").to_str().unwrap(),
        "--report-out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(summary["pairs"], 6);
    assert_eq!(summary["failures"], 0);
    assert!(summary["mean_ssim"].as_f64().unwrap() < 1.0);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("pair_id,psnr_db,ssim\n"));
    assert_eq!(csv.lines().count(), 7);
}
