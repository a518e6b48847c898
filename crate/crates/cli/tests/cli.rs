//! End-to-end checks of the command-line surface: the full train/validate
//! pipeline on a small cell, the documented exit codes, and the emitted files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strainmor"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("strainmor-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "material.kind = neo-hooke\n\
         material.E = 1000\n\
         material.nu = 0.25\n\
         rve.n_voxels = 4\n\
         rve.edge_length = 2.0\n\
         rve.pores = 1.0,1.0,1.0,0.6\n",
    )
    .unwrap();
    path
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = workdir("pipeline");
    let cfg = write_config(&dir);
    let cfg = cfg.to_str().unwrap();
    let p = |name: &str| dir.join(name).into_os_string().into_string().unwrap();

    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(&dir).output().unwrap();
        assert!(
            out.status.success(),
            "command {:?} failed:\n{}\n{}",
            args,
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).to_string()
    };

    let mesh_out = run(&["--config", cfg, "--out", &p("mesh-out"), "mesh"]);
    assert!(mesh_out.contains("independent DOFs"));
    assert!(dir.join("mesh-out/mesh.txt").exists());

    run(&[
        "--config",
        cfg,
        "--seed",
        "1",
        "--out",
        &p("train"),
        "--threads",
        "2",
        "sample",
        "--paths",
        "3",
        "--steps",
        "4",
        "--with-stresses",
    ]);
    assert!(dir.join("train/manifest.txt").exists());
    assert!(dir.join("train/stresses.bin").exists());

    run(&[
        "--config",
        cfg,
        "--seed",
        "2",
        "--out",
        &p("val"),
        "sample",
        "--paths",
        "4",
        "--steps",
        "4",
    ]);

    run(&[
        "--out",
        &p("basis.bin"),
        "train-pod",
        "--d",
        "6",
        "--snapshots",
        &p("train"),
    ]);
    run(&[
        "--out",
        &p("ecm.bin"),
        "train-ecm",
        "--d",
        "6",
        "--m",
        "10",
        "--snapshots",
        &p("train"),
    ]);
    run(&[
        "--config",
        cfg,
        "--seed",
        "3",
        "--out",
        &p("e3c.bin"),
        "train-e3c",
        "--d",
        "6",
        "--m",
        "5",
        "--lbfgs-iters",
        "60",
        "--snapshots",
        &p("train"),
    ]);
    run(&[
        "--seed",
        "3",
        "--out",
        &p("emsl.bin"),
        "train-emsl",
        "--d",
        "6",
        "--m",
        "5",
        "--snapshots",
        &p("train"),
    ]);

    let validate_out = run(&[
        "--config",
        cfg,
        "--out",
        &p("validate-out"),
        "validate",
        "--model",
        &p("emsl.bin"),
        "--baseline",
        &p("val"),
    ]);
    assert!(validate_out.contains("EMSL"));
    assert!(dir.join("validate-out/errors.csv").exists());

    run(&[
        "--config",
        cfg,
        "--seed",
        "4",
        "--out",
        &p("sweep-out"),
        "sweep",
        "--methods",
        "emsl,e3c",
        "--d-list",
        "4,6",
        "--m-list",
        "2,6",
        "--train",
        &p("train"),
        "--baseline",
        &p("val"),
        "--lbfgs-iters",
        "40",
    ]);
    for file in [
        "errors.csv",
        "runtimes.csv",
        "pareto.csv",
        "summary.txt",
        "rows.csv",
    ] {
        assert!(dir.join("sweep-out").join(file).exists(), "{file} missing");
    }

    run(&[
        "--out",
        &p("report-out"),
        "report",
        "--rows",
        &p("sweep-out/rows.csv"),
        "--plot",
    ]);
    assert!(dir.join("report-out/error_vs_m.svg").exists());
    assert!(dir.join("report-out/error_vs_runtime.svg").exists());

    run(&[
        "--config",
        cfg,
        "--seed",
        "7",
        "--out",
        &p("fom-out"),
        "fom-solve",
        "--steps",
        "3",
    ]);
    assert!(dir.join("fom-out/pbar.csv").exists());
    assert!(dir.join("fom-out/abar.csv").exists());

    run(&[
        "--config",
        cfg,
        "--out",
        &p("emsl-run-out"),
        "emsl-run",
        "--model",
        &p("emsl.bin"),
        "--path",
        &p("fom-out/path.txt"),
    ]);
    assert!(dir.join("emsl-run-out/emsl_run.csv").exists());

    let sf_out = run(&[
        "--config",
        cfg,
        "--seed",
        "7",
        "--out",
        &p("sf-out"),
        "stress-field",
        "--model",
        &p("emsl.bin"),
        "--basis",
        &p("basis.bin"),
        "--steps",
        "3",
        "--step",
        "3",
    ]);
    assert!(sf_out.contains("hotspots"));
    assert!(dir.join("sf-out/stress_field.csv").exists());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = workdir("cfg-err");
    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "material.nu = 0.7\n").unwrap();
    let out = bin()
        .args(["--config", bad.to_str().unwrap(), "--out"])
        .arg(dir.join("x"))
        .arg("mesh")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Missing snapshot store is a configuration/environment error too.
    let out = bin()
        .arg("--out")
        .arg(dir.join("b.bin"))
        .args(["train-pod", "--d", "3", "--snapshots"])
        .arg(dir.join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let dir = workdir("num-err");
    let cfg = write_config(&dir);

    // A hopeless load step: huge increments cannot equilibrate in 25 Newton
    // iterations; exit code must signal a numerical failure.
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "--seed", "1", "--out"])
        .arg(dir.join("fom"))
        .args([
            "fom-solve",
            "--steps",
            "2",
            "--dflp",
            "1.9",
            "--dfls",
            "0.0",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}
