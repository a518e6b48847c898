//! Command-line front end: mesh generation, full-order solves, snapshot
//! sampling, model training (POD / ECM / E3C / EMSL), validation sweeps,
//! and report rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use std::path::{Path, PathBuf};
use strainmor::bench::{
    fmt6, local_stress_field, run_validation, sweep, time_fom_validation, Method, RomModel,
    SweepConfig, ValidationReport, ValidationRow,
};
use strainmor::config::Config;
use strainmor::ecm::{assemble_nnls_system, build_ecm_model, lawson_hanson_nnls};
use strainmor::emsl::{emsl_step, EmslModel};
use strainmor::error::Error;
use strainmor::fem::FomSolver;
use strainmor::lbfgs::LbfgsOptions;
use strainmor::mesh::build_rve;
use strainmor::pod::{compute_basis, reduced_coords, ModeBasis};
use strainmor::rom::CubatureModel;
use strainmor::sampling::{collect_snapshots, generate_load_paths, read_store, write_store};
use strainmor::store::Container;
use strainmor::voigt::VoigtVec9;

#[derive(Parser)]
#[command(
    name = "strainmor",
    version,
    about = "Strain-space model order reduction for hyperelastic RVE homogenisation"
)]
struct Cli {
    /// Key=value configuration file (material + RVE geometry).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for load paths and clustering.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (subcommand-specific default otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for full-order path solves.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the periodic voxel RVE and export it as text.
    Mesh,
    /// Solve one load path with the full-order model.
    FomSolve(FomSolveArgs),
    /// Generate load paths, run the full-order model, persist snapshots.
    Sample(SampleArgs),
    /// Compute the strain-space POD basis from a snapshot store.
    TrainPod(TrainPodArgs),
    /// Train an ECM cubature model (needs stress snapshots).
    TrainEcm(TrainEcmArgs),
    /// Train an E3C model (clustering + empirical correction).
    TrainE3c(TrainE3cArgs),
    /// Train an EMSL model (inference map + cluster operators).
    TrainEmsl(TrainEmslArgs),
    /// Run an EMSL model along a load-path file; emit stress/tangent/timing.
    EmslRun(EmslRunArgs),
    /// Validate one trained model against a full-order baseline store.
    Validate(ValidateArgs),
    /// Train and validate a (method, d, m) grid.
    Sweep(SweepArgs),
    /// Render report CSVs (and optional SVG charts) from sweep rows.
    Report(ReportArgs),
    /// Reconstruct the local von Mises field of a model and compare with the
    /// full-order solution.
    StressField(StressFieldArgs),
}

#[derive(Args)]
struct FomSolveArgs {
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 0.025)]
    dflp: f64,
    #[arg(long, default_value_t = 0.015)]
    dfls: f64,
    /// Additionally dump the solved path into a snapshot store.
    #[arg(long)]
    dump_store: Option<PathBuf>,
    #[arg(long)]
    with_stresses: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 20)]
    paths: usize,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 0.025)]
    dflp: f64,
    #[arg(long, default_value_t = 0.015)]
    dfls: f64,
    #[arg(long)]
    with_stresses: bool,
}

#[derive(Args)]
struct TrainPodArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    snapshots: PathBuf,
}

#[derive(Args)]
struct TrainEcmArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    pvol: Option<f64>,
    #[arg(long)]
    separate_homog_weights: bool,
    #[arg(long)]
    snapshots: PathBuf,
}

#[derive(Args)]
struct TrainE3cArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    pstrain: Option<f64>,
    #[arg(long, default_value_t = 500)]
    lbfgs_iters: usize,
    #[arg(long)]
    snapshots: PathBuf,
}

#[derive(Args)]
struct TrainEmslArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    snapshots: PathBuf,
}

#[derive(Args)]
struct EmslRunArgs {
    #[arg(long)]
    model: PathBuf,
    /// Load-path text file: one step per line, 9 semicolon-separated values.
    #[arg(long)]
    path: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Snapshot store of full-order validation results.
    #[arg(long)]
    baseline: PathBuf,
    /// Measure the full-order wall time for relative-runtime reporting.
    #[arg(long)]
    time_fom: bool,
    #[arg(long, default_value_t = 3)]
    timing_repeats: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "ecm,e3c,emsl")]
    methods: String,
    #[arg(long, default_value = "9,12,20")]
    d_list: String,
    #[arg(long, default_value = "1,5,20,50")]
    m_list: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    pvol: Option<f64>,
    #[arg(long)]
    pstrain: Option<f64>,
    #[arg(long, default_value_t = 500)]
    lbfgs_iters: usize,
    #[arg(long, default_value_t = 3)]
    timing_repeats: usize,
    #[arg(long)]
    time_fom: bool,
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// rows.csv written by `sweep`.
    #[arg(long)]
    rows: PathBuf,
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct StressFieldArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 0.025)]
    dflp: f64,
    #[arg(long, default_value_t = 0.015)]
    dfls: f64,
    /// Load step (1-based) at which to compare the fields.
    #[arg(long, default_value_t = 8)]
    step: usize,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Io(_)
        | Error::FormatVersionMismatch { .. }
        | Error::ChecksumMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::MissingStressSnapshots
        | Error::EmptyMatrix
        | Error::DisconnectedMatrix
        | Error::UnmatchedBoundaryNode { .. } => 2,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Training subcommands write a single model file; --out names it.
fn out_file(cli: &Cli) -> Result<PathBuf, Error> {
    cli.out
        .clone()
        .ok_or_else(|| Error::Config("--out FILE is required".into()))
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    match &cli.config {
        Some(path) => Config::from_file(path),
        None => Ok(Config::default()),
    }
}

fn build_solver(cfg: &Config) -> Result<FomSolver<strainmor::material::Material>, Error> {
    let mesh = build_rve(cfg.n_voxels, &cfg.pores, cfg.edge_length)?;
    FomSolver::new(mesh, cfg.material)
}

fn write_path_file(path: &Path, f_bars: &[VoigtVec9]) -> Result<(), Error> {
    let mut text = String::new();
    for f in f_bars {
        let vals: Vec<String> = f.iter().map(|v| format!("{v:.17e}")).collect();
        text.push_str(&vals.join(";"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_path_file(path: &Path) -> Result<Vec<VoigtVec9>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(';')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value on path line {}", ln + 1)))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 9 {
            return Err(Error::Config(format!(
                "path line {} needs 9 values, got {}",
                ln + 1,
                vals.len()
            )));
        }
        out.push(VoigtVec9::from_column_slice(&vals));
    }
    Ok(out)
}

fn load_model(path: &Path) -> Result<RomModel, Error> {
    let container = Container::read(path)?;
    match container.tag.as_str() {
        "EMSL" => Ok(RomModel::Emsl(EmslModel::from_container(&container)?)),
        "ECM" | "E3C" => Ok(RomModel::Cubature {
            method: Method::parse(&container.tag)?,
            model: CubatureModel::from_container(&container)?,
        }),
        other => Err(Error::Config(format!("unknown model tag '{other}'"))),
    }
}

fn load_basis(path: &Path) -> Result<ModeBasis, Error> {
    let container = Container::read(path)?;
    if container.tag != "POD" {
        return Err(Error::Config(format!(
            "expected POD basis file, got '{}'",
            container.tag
        )));
    }
    ModeBasis::from_container(&container)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} list entry '{t}'")))
        })
        .collect()
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Mesh => {
            let cfg = load_config(cli)?;
            let mesh = build_rve(cfg.n_voxels, &cfg.pores, cfg.edge_length)?;
            let dir = out_dir(cli, "mesh-out");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("mesh.txt"), mesh.export_text())?;
            let table = strainmor::mesh::gauss_table(&mesh)?;
            let map = strainmor::mesh::periodic_pairs(&mesh)?;
            println!(
                "mesh: {} elements, {} nodes, {} gauss points, {} independent DOFs",
                mesh.n_elements(),
                mesh.n_nodes(),
                table.n_points(),
                map.independent_dofs()
            );
            println!(
                "volumes: matrix {:.6} mm^3 of cell {:.6} mm^3 (porosity {:.2}%)",
                table.matrix_volume,
                table.cell_volume,
                100.0 * (1.0 - table.matrix_volume / table.cell_volume)
            );
            println!("hash: {:#010x}", mesh.content_hash());
            println!("wrote {}", dir.join("mesh.txt").display());
            Ok(())
        }

        Command::FomSolve(args) => {
            let cfg = load_config(cli)?;
            let solver = build_solver(&cfg)?;
            let paths = generate_load_paths(cli.seed, 1, args.steps, args.dflp, args.dfls);
            let dir = out_dir(cli, "fom-out");
            std::fs::create_dir_all(&dir)?;
            write_path_file(&dir.join("path.txt"), &paths[0].f_bars)?;

            let mut pbar_csv = String::from("step;p11;p12;p13;p21;p22;p23;p31;p32;p33\n");
            let mut abar_csv = String::from("step;row_major_81_components\n");
            let mut state = solver.reference_state();
            for (k, f_bar) in paths[0].f_bars.iter().enumerate() {
                state = solver.solve_increment(f_bar, &state)?;
                let p = solver.homogenize_stress(&state);
                let a = solver.macro_tangent(&state)?;
                let pv: Vec<String> = p.iter().map(|v| fmt6(*v)).collect();
                pbar_csv.push_str(&format!("{};{}\n", k + 1, pv.join(";")));
                let av: Vec<String> = (0..81).map(|i| fmt6(a[(i / 9, i % 9)])).collect();
                abar_csv.push_str(&format!("{};{}\n", k + 1, av.join(";")));
                println!(
                    "step {:2}: |P| = {:10.4} N/mm^2, {} Newton iterations",
                    k + 1,
                    p.norm(),
                    state.iterations
                );
            }
            std::fs::write(dir.join("pbar.csv"), pbar_csv)?;
            std::fs::write(dir.join("abar.csv"), abar_csv)?;

            if let Some(store_dir) = &args.dump_store {
                let set =
                    collect_snapshots(&solver, &paths, args.with_stresses, cli.seed, cli.threads)?;
                write_store(&set, store_dir)?;
                println!("snapshot store: {}", store_dir.display());
            }
            Ok(())
        }

        Command::Sample(args) => {
            let cfg = load_config(cli)?;
            let solver = build_solver(&cfg)?;
            let paths = generate_load_paths(cli.seed, args.paths, args.steps, args.dflp, args.dfls);
            let set =
                collect_snapshots(&solver, &paths, args.with_stresses, cli.seed, cli.threads)?;
            for w in &set.warnings {
                eprintln!("warning: {w}");
            }
            let dir = out_dir(cli, "snapshots");
            write_store(&set, &dir)?;
            println!(
                "collected {} snapshots ({} gauss points) into {}",
                set.n_snapshots(),
                set.n_gauss(),
                dir.display()
            );
            Ok(())
        }

        Command::TrainPod(args) => {
            let set = read_store(&args.snapshots)?;
            let basis = compute_basis(&set, args.d)?;
            let out = out_file(cli)?;
            basis.to_container().write(&out)?;
            println!(
                "basis: d = {}, sigma_1 = {:.6e}, sigma_d = {:.6e} -> {}",
                basis.d(),
                basis.sigmas[0],
                basis.sigmas[basis.d() - 1],
                out.display()
            );
            Ok(())
        }

        Command::TrainEcm(args) => {
            let set = read_store(&args.snapshots)?;
            let basis = compute_basis(&set, args.d)?;
            let sys = assemble_nnls_system(&set, &basis, args.pvol)?;
            let weights = lawson_hanson_nnls(&sys, args.m, 0.0)?;
            let model = build_ecm_model(&weights, &basis, &set, args.separate_homog_weights)?;
            println!(
                "ECM: {} of {} points selected, weight sum {:.6} (matrix volume {:.6}), p_vol = {:.3e}",
                model.m(),
                set.n_gauss(),
                model.weights.iter().sum::<f64>(),
                set.gauss_volumes.iter().sum::<f64>(),
                sys.p_vol
            );
            let out = out_file(cli)?;
            model.to_container("ECM").write(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainE3c(args) => {
            let cfg = load_config(cli)?;
            let set = read_store(&args.snapshots)?;
            let basis = compute_basis(&set, args.d)?;
            let (model, report) = strainmor::e3c::build_e3c_model(
                &cfg.material,
                &basis,
                &set,
                args.m,
                cli.seed,
                args.pstrain,
                LbfgsOptions {
                    max_iter: args.lbfgs_iters,
                    ..Default::default()
                },
            )?;
            println!(
                "E3C: objective {:.6e} -> {:.6e} in {} iterations{}",
                report.initial_value,
                report.final_value,
                report.iterations,
                if report.line_search_failed {
                    " (line search stopped early)"
                } else {
                    ""
                }
            );
            let out = out_file(cli)?;
            model.to_container("E3C").write(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainEmsl(args) => {
            let set = read_store(&args.snapshots)?;
            let basis = compute_basis(&set, args.d)?;
            let y_snap = reduced_coords(&basis, &set)?;
            let fit = strainmor::emsl::fit_linear_map(&y_snap, &set.params)?;
            if fit.tikhonov {
                eprintln!("warning: parameter Gram ill-conditioned, Tikhonov applied");
            }
            let part =
                strainmor::rom::weighted_kmeans(&basis, &set.gauss_volumes, args.m, cli.seed)?;
            let model = strainmor::emsl::emsl_offline(
                &basis,
                &part,
                &set.gauss_volumes,
                fit.map,
                set.cell_volume,
            );
            println!(
                "EMSL: m = {}, d = {}, inference fit residual {:.6e}",
                model.m(),
                model.d(),
                fit.residual
            );
            let out = out_file(cli)?;
            model.to_container().write(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::EmslRun(args) => {
            let cfg = load_config(cli)?;
            let container = Container::read(&args.model)?;
            if container.tag != "EMSL" {
                return Err(Error::Config(format!(
                    "expected EMSL model, got '{}'",
                    container.tag
                )));
            }
            let model = EmslModel::from_container(&container)?;
            let f_bars = read_path_file(&args.path)?;
            let dir = out_dir(cli, "emsl-out");
            std::fs::create_dir_all(&dir)?;
            let mut csv =
                String::from("step;time_s;p11;p12;p13;p21;p22;p23;p31;p32;p33;a_row_major_81\n");
            let mut y = DVector::zeros(model.d());
            for (k, f_bar) in f_bars.iter().enumerate() {
                let res = emsl_step(&model, &cfg.material, f_bar, &y)?;
                y = res.y.clone();
                let pv: Vec<String> = res.p_bar.iter().map(|v| fmt6(*v)).collect();
                let av: Vec<String> = (0..81).map(|i| fmt6(res.a_bar[(i / 9, i % 9)])).collect();
                csv.push_str(&format!(
                    "{};{};{};{}\n",
                    k + 1,
                    fmt6(res.elapsed_s),
                    pv.join(";"),
                    av.join(";")
                ));
                println!(
                    "step {:2}: |P| = {:10.4} N/mm^2 in {:.3e} s ({} material samples)",
                    k + 1,
                    res.p_bar.norm(),
                    res.elapsed_s,
                    model.m()
                );
            }
            std::fs::write(dir.join("emsl_run.csv"), csv)?;
            Ok(())
        }

        Command::Validate(args) => {
            let cfg = load_config(cli)?;
            let baseline = read_store(&args.baseline)?;
            let model = load_model(&args.model)?;
            let fom_time = if args.time_fom {
                let solver = build_solver(&cfg)?;
                if solver.mesh.content_hash() != baseline.mesh_hash {
                    return Err(Error::Config(
                        "configured mesh does not match the baseline store".into(),
                    ));
                }
                time_fom_validation(&solver, &baseline)?
            } else {
                0.0
            };
            let row = run_validation(
                &model,
                &cfg.material,
                &baseline,
                fom_time,
                args.timing_repeats,
            );
            print_row(&row);
            let dir = out_dir(cli, "validate-out");
            let mut report = ValidationReport {
                fom_time_s: fom_time,
                ..Default::default()
            };
            report.rows.push(row);
            report.write(&dir, false)?;
            write_rows_csv(&report, &dir)?;
            Ok(())
        }

        Command::Sweep(args) => {
            let cfg = load_config(cli)?;
            let train = read_store(&args.train)?;
            let baseline = read_store(&args.baseline)?;
            if train.mesh_hash != baseline.mesh_hash {
                return Err(Error::Config(
                    "train and baseline stores use different meshes".into(),
                ));
            }
            let fom_time = if args.time_fom {
                let solver = build_solver(&cfg)?;
                time_fom_validation(&solver, &baseline)?
            } else {
                0.0
            };
            let sweep_cfg = SweepConfig {
                methods: args
                    .methods
                    .split(',')
                    .map(Method::parse)
                    .collect::<Result<_, _>>()?,
                d_list: parse_list(&args.d_list, "d")?,
                m_list: parse_list(&args.m_list, "m")?,
                seed: cli.seed,
                p_vol: args.pvol,
                p_strain: args.pstrain,
                separate_homog_weights: false,
                lbfgs: LbfgsOptions {
                    max_iter: args.lbfgs_iters,
                    ..Default::default()
                },
                timing_repeats: args.timing_repeats,
                fom_time_s: fom_time,
            };
            let report = sweep(&cfg.material, &train, &baseline, &sweep_cfg)?;
            for row in &report.rows {
                print_row(row);
            }
            let dir = out_dir(cli, "sweep-out");
            report.write(&dir, args.plot)?;
            write_rows_csv(&report, &dir)?;
            println!("report written to {}", dir.display());
            Ok(())
        }

        Command::Report(args) => {
            let report = read_rows_csv(&args.rows)?;
            let dir = out_dir(cli, "report-out");
            report.write(&dir, args.plot)?;
            println!("report written to {}", dir.display());
            Ok(())
        }

        Command::StressField(args) => {
            let cfg = load_config(cli)?;
            let solver = build_solver(&cfg)?;
            let basis = load_basis(&args.basis)?;
            if basis.n_gauss != solver.gauss.n_points() {
                return Err(Error::Config(
                    "basis does not match the configured mesh".into(),
                ));
            }
            let model = load_model(&args.model)?;
            if model.d() != basis.d() {
                return Err(Error::Config("model and basis dimension differ".into()));
            }
            let path = &generate_load_paths(cli.seed, 1, args.steps, args.dflp, args.dfls)[0];
            if args.step == 0 || args.step > path.n_steps() {
                return Err(Error::Config(format!(
                    "step must be in 1..={}",
                    path.n_steps()
                )));
            }

            let mut state = solver.reference_state();
            let mut y = DVector::zeros(model.d());
            for f_bar in path.f_bars.iter().take(args.step) {
                state = solver.solve_increment(f_bar, &state)?;
                y = match &model {
                    RomModel::Cubature { model, .. } => {
                        strainmor::rom::newton_solve(model, &cfg.material, f_bar, &y)?.y
                    }
                    RomModel::Emsl(model) => emsl_step(model, &cfg.material, f_bar, &y)?.y,
                };
            }
            let f_bar = path.f_bars[args.step - 1];
            let field = local_stress_field(
                &basis,
                &solver.gauss,
                &cfg.material,
                &y,
                &f_bar,
                &state.gauss_p,
                &state.gauss_f,
            )?;
            let dir = out_dir(cli, "stress-field-out");
            std::fs::create_dir_all(&dir)?;
            let mut csv = String::from("x;y;z;vm_rom;vm_fom;abs_err\n");
            for (coord, vm_rom, vm_fom) in &field.rows {
                csv.push_str(&format!(
                    "{};{};{};{};{};{}\n",
                    fmt6(coord[0]),
                    fmt6(coord[1]),
                    fmt6(coord[2]),
                    fmt6(*vm_rom),
                    fmt6(*vm_fom),
                    fmt6((vm_rom - vm_fom).abs())
                ));
            }
            std::fs::write(dir.join("stress_field.csv"), csv)?;
            println!(
                "stress field at step {}: max relative error in top-decile hotspots = {:.2}%",
                args.step,
                100.0 * field.hotspot_max_rel_err
            );
            println!("wrote {}", dir.join("stress_field.csv").display());
            Ok(())
        }
    }
}

fn print_row(row: &ValidationRow) {
    println!(
        "{:<5} d={:<3} m={:<4} error = {:>10}  failures = {}  online = {:.4e} s  rel = {:.4}%  {}",
        row.method,
        row.d,
        row.m,
        row.mean_error_pct
            .map_or("x".to_string(), |e| format!("{e:.4}%")),
        row.n_failures,
        row.online_time_s,
        row.rel_runtime_pct,
        row.note
    );
}

/// Machine-readable sweep rows for the `report` subcommand.
fn write_rows_csv(report: &ValidationReport, dir: &Path) -> Result<(), Error> {
    let mut csv = String::from(
        "method;d;m;mean_error_pct;failed;n_failures;online_time_s;rel_runtime_pct;note\n",
    );
    for r in &report.rows {
        csv.push_str(&format!(
            "{};{};{};{};{};{};{};{};{}\n",
            r.method,
            r.d,
            r.m,
            r.mean_error_pct.map_or("x".into(), |e| format!("{e:.17e}")),
            u8::from(r.failed),
            r.n_failures,
            format!("{:.17e}", r.online_time_s),
            format!("{:.17e}", r.rel_runtime_pct),
            r.note
        ));
    }
    std::fs::write(dir.join("rows.csv"), csv)?;
    Ok(())
}

fn read_rows_csv(path: &Path) -> Result<ValidationReport, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut report = ValidationReport::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(';').collect();
        if parts.len() < 8 {
            return Err(Error::Config(format!("rows.csv line {} malformed", i + 1)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad float '{s}'")))
        };
        report.rows.push(ValidationRow {
            method: parts[0].to_string(),
            d: parts[1]
                .parse()
                .map_err(|_| Error::Config("bad d".into()))?,
            m: parts[2]
                .parse()
                .map_err(|_| Error::Config("bad m".into()))?,
            mean_error_pct: if parts[3] == "x" {
                None
            } else {
                Some(parse(parts[3])?)
            },
            failed: parts[4] == "1",
            n_failures: parts[5].parse().unwrap_or(0),
            online_time_s: parse(parts[6])?,
            rel_runtime_pct: parse(parts[7])?,
            per_sample_errors: Vec::new(),
            note: parts.get(8).unwrap_or(&"").to_string(),
        });
    }
    Ok(report)
}
