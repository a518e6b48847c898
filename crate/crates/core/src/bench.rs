//! Validation harness: error metric, online timing, (d, m) sweeps, and
//! report files (semicolon CSVs, plain-text summary, optional SVG charts).

use crate::ecm;
use crate::emsl::{emsl_step, EmslModel};
use crate::error::{Error, Result};
use crate::lbfgs::LbfgsOptions;
use crate::material::Constitutive;
use crate::mesh::GaussTable;
use crate::pod::{compute_basis, numerical_rank, reduced_coords, ModeBasis};
use crate::rom::{newton_solve, rom_homogenize, weighted_kmeans, CubatureModel};
use crate::sampling::SnapshotSet;
use crate::voigt::{voigt_decode, VoigtVec9};
use nalgebra::DVector;
use std::path::Path;
use std::time::Instant;

/// Mean relative error in percent over paired homogenised stresses.
/// Zero-norm reference samples (only the unloaded state qualifies) are
/// excluded; an all-zero reference is an error.
pub fn mean_relative_error(rom: &[VoigtVec9], val: &[VoigtVec9]) -> Result<f64> {
    if rom.len() != val.len() {
        return Err(Error::DimensionMismatch {
            expected: val.len(),
            got: rom.len(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, v) in rom.iter().zip(val) {
        let vn = v.norm();
        if vn == 0.0 {
            continue;
        }
        sum += (r - v).norm() / vn;
        n += 1;
    }
    if n == 0 {
        return Err(Error::ZeroReferenceNorm);
    }
    Ok(100.0 * sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ecm,
    E3c,
    Emsl,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ecm => "ECM",
            Method::E3c => "E3C",
            Method::Emsl => "EMSL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecm" => Ok(Method::Ecm),
            "e3c" => Ok(Method::E3c),
            "emsl" => Ok(Method::Emsl),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// A trained online model of any of the three methods.
pub enum RomModel {
    Cubature {
        method: Method,
        model: CubatureModel,
    },
    Emsl(EmslModel),
}

impl RomModel {
    pub fn method(&self) -> Method {
        match self {
            RomModel::Cubature { method, .. } => *method,
            RomModel::Emsl(_) => Method::Emsl,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            RomModel::Cubature { model, .. } => model.d(),
            RomModel::Emsl(model) => model.d(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            RomModel::Cubature { model, .. } => model.m(),
            RomModel::Emsl(model) => model.m(),
        }
    }
}

/// One sweep cell of the validation report.
#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub method: String,
    pub d: usize,
    pub m: usize,
    /// Mean relative error in percent; None when every sample failed.
    pub mean_error_pct: Option<f64>,
    pub failed: bool,
    pub n_failures: usize,
    pub online_time_s: f64,
    pub rel_runtime_pct: f64,
    pub per_sample_errors: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub fom_time_s: f64,
    pub meta: Vec<(String, String)>,
}

/// Run one model over every validation path. Failures are recorded, never
/// propagated; a failed step abandons the remainder of its path.
fn online_pass<M: Constitutive>(
    model: &RomModel,
    material: &M,
    val: &SnapshotSet,
) -> (Vec<Option<VoigtVec9>>, usize) {
    let d = model.d();
    let mut out = vec![None; val.n_snapshots()];
    let mut n_failures = 0usize;
    for path in val.paths() {
        let mut y = DVector::zeros(d);
        for col in path {
            let f_bar = VoigtVec9::from_column_slice(val.params.column(col).as_slice());
            let solved = match model {
                RomModel::Cubature { model, .. } => newton_solve(model, material, &f_bar, &y)
                    .and_then(|sol| {
                        let p = rom_homogenize(model, material, &sol.y, &f_bar)?;
                        Ok((sol.y, p))
                    }),
                RomModel::Emsl(model) => {
                    emsl_step(model, material, &f_bar, &y).map(|res| (res.y, res.p_bar))
                }
            };
            match solved {
                Ok((y_new, p_bar)) => {
                    out[col] = Some(p_bar);
                    y = y_new;
                }
                Err(_) => {
                    n_failures += 1;
                    break;
                }
            }
        }
    }
    (out, n_failures)
}

/// Validate a trained model against the cached full-order baseline; the
/// online time is the median of `timing_repeats` full passes.
pub fn run_validation<M: Constitutive>(
    model: &RomModel,
    material: &M,
    val: &SnapshotSet,
    fom_time_s: f64,
    timing_repeats: usize,
) -> ValidationRow {
    let (stresses, n_failures) = online_pass(model, material, val);

    let mut per_sample_errors = Vec::new();
    let mut excluded_zero = 0usize;
    for (col, p_rom) in stresses.iter().enumerate() {
        let Some(p_rom) = p_rom else { continue };
        let p_val = VoigtVec9::from_column_slice(val.homog_stresses.column(col).as_slice());
        let vn = p_val.norm();
        if vn == 0.0 {
            excluded_zero += 1;
            continue;
        }
        per_sample_errors.push(100.0 * (p_rom - p_val).norm() / vn);
    }
    let mean_error_pct = if per_sample_errors.is_empty() {
        None
    } else {
        Some(per_sample_errors.iter().sum::<f64>() / per_sample_errors.len() as f64)
    };

    let mut times: Vec<f64> = (0..timing_repeats.max(1))
        .map(|_| {
            let started = Instant::now();
            let _ = online_pass(model, material, val);
            started.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let online_time_s = times[times.len() / 2];

    let failed = n_failures > 0 || mean_error_pct.is_none_or(|e| e > 100.0);
    ValidationRow {
        method: model.method().label().to_string(),
        d: model.d(),
        m: model.m(),
        mean_error_pct,
        failed,
        n_failures,
        online_time_s,
        rel_runtime_pct: if fom_time_s > 0.0 {
            100.0 * online_time_s / fom_time_s
        } else {
            0.0
        },
        per_sample_errors,
        note: if excluded_zero > 0 {
            format!("{excluded_zero} zero-norm samples excluded")
        } else {
            String::new()
        },
    }
}

/// Wall time of one full-order pass over the validation paths (warm-started
/// along each path), used as the runtime reference.
pub fn time_fom_validation<M: Constitutive + Sync>(
    solver: &crate::fem::FomSolver<M>,
    val: &SnapshotSet,
) -> Result<f64> {
    let started = Instant::now();
    for path in val.paths() {
        let mut state = solver.reference_state();
        for col in path {
            let f_bar = VoigtVec9::from_column_slice(val.params.column(col).as_slice());
            state = solver.solve_increment(&f_bar, &state)?;
            let _ = solver.homogenize_stress(&state);
        }
    }
    Ok(started.elapsed().as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub d_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub seed: u64,
    pub p_vol: Option<f64>,
    pub p_strain: Option<f64>,
    pub separate_homog_weights: bool,
    pub lbfgs: LbfgsOptions,
    pub timing_repeats: usize,
    pub fom_time_s: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Ecm, Method::E3c, Method::Emsl],
            d_list: vec![9, 12, 20],
            m_list: vec![1, 5, 20, 50],
            seed: 0,
            p_vol: None,
            p_strain: None,
            separate_homog_weights: false,
            lbfgs: LbfgsOptions::default(),
            timing_repeats: 3,
            fom_time_s: 0.0,
        }
    }
}

/// Train one model for a sweep cell.
pub fn train_cell<M: Constitutive>(
    method: Method,
    material: &M,
    train: &SnapshotSet,
    basis: &ModeBasis,
    m: usize,
    cfg: &SweepConfig,
) -> Result<RomModel> {
    match method {
        Method::Ecm => {
            let sys = ecm::assemble_nnls_system(train, basis, cfg.p_vol)?;
            let weights = ecm::lawson_hanson_nnls(&sys, m, 0.0)?;
            let model = ecm::build_ecm_model(&weights, basis, train, cfg.separate_homog_weights)?;
            Ok(RomModel::Cubature { method, model })
        }
        Method::E3c => {
            let (model, _) = crate::e3c::build_e3c_model(
                material,
                basis,
                train,
                m,
                cfg.seed,
                cfg.p_strain,
                cfg.lbfgs,
            )?;
            Ok(RomModel::Cubature { method, model })
        }
        Method::Emsl => {
            let y_snap = reduced_coords(basis, train)?;
            let fit = crate::emsl::fit_linear_map(&y_snap, &train.params)?;
            let part = weighted_kmeans(basis, &train.gauss_volumes, m, cfg.seed)?;
            let model = crate::emsl::emsl_offline(
                basis,
                &part,
                &train.gauss_volumes,
                fit.map,
                train.cell_volume,
            );
            Ok(RomModel::Emsl(model))
        }
    }
}

/// Train and validate every (method, d, m) cell. Cells with m beyond the
/// Gauss count or d beyond the snapshot rank are skipped; training failures
/// are recorded as failed rows.
pub fn sweep<M: Constitutive>(
    material: &M,
    train: &SnapshotSet,
    val: &SnapshotSet,
    cfg: &SweepConfig,
) -> Result<ValidationReport> {
    let rank = numerical_rank(train);
    let n_gauss = train.n_gauss();
    let mut report = ValidationReport {
        fom_time_s: cfg.fom_time_s,
        meta: vec![
            ("seed".into(), cfg.seed.to_string()),
            ("mesh_hash".into(), train.mesh_hash.to_string()),
            ("train_snapshots".into(), train.n_snapshots().to_string()),
            ("validation_samples".into(), val.n_snapshots().to_string()),
        ],
        ..Default::default()
    };

    for &d in &cfg.d_list {
        if d > rank {
            continue;
        }
        let basis = compute_basis(train, d)?;
        for &m in &cfg.m_list {
            if m > n_gauss {
                continue;
            }
            for &method in &cfg.methods {
                match train_cell(method, material, train, &basis, m, cfg) {
                    Ok(model) => {
                        report.rows.push(run_validation(
                            &model,
                            material,
                            val,
                            cfg.fom_time_s,
                            cfg.timing_repeats,
                        ));
                    }
                    Err(err) => {
                        report.rows.push(ValidationRow {
                            method: method.label().to_string(),
                            d,
                            m,
                            mean_error_pct: None,
                            failed: true,
                            n_failures: 0,
                            online_time_s: 0.0,
                            rel_runtime_pct: 0.0,
                            per_sample_errors: Vec::new(),
                            note: format!("training failed: {err}"),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Six-significant-digit formatting used in the CSV reports.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.5e}")
    }
}

/// Rows of `pareto.csv`: rows not dominated in (runtime, error) by any other
/// non-failed row, checked by exhaustive pairwise comparison.
pub fn pareto_front(rows: &[ValidationRow]) -> Vec<&ValidationRow> {
    let candidates: Vec<&ValidationRow> = rows
        .iter()
        .filter(|r| !r.failed && r.mean_error_pct.is_some())
        .collect();
    candidates
        .iter()
        .filter(|a| {
            let (ae, at) = (a.mean_error_pct.unwrap(), a.online_time_s);
            !candidates.iter().any(|b| {
                let (be, bt) = (b.mean_error_pct.unwrap(), b.online_time_s);
                (be <= ae && bt <= at) && (be < ae || bt < at)
            })
        })
        .copied()
        .collect()
}

impl ValidationReport {
    /// Write errors.csv, runtimes.csv, pareto.csv, and summary.txt; with
    /// `plot`, additionally emit self-contained SVG charts.
    pub fn write(&self, dir: &Path, plot: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut errors = String::from("method;d;m;mean_error_pct;failed;n_failures\n");
        for r in &self.rows {
            // Failed cells render as x, the table convention for divergence.
            let err = if r.failed {
                "x".into()
            } else {
                r.mean_error_pct.map_or("x".into(), fmt6)
            };
            errors.push_str(&format!(
                "{};{};{};{};{};{}\n",
                r.method,
                r.d,
                r.m,
                err,
                if r.failed { "x" } else { "ok" },
                r.n_failures
            ));
        }
        std::fs::write(dir.join("errors.csv"), errors)?;

        let mut times = String::from("method;d;m;online_time_s;rel_runtime_pct\n");
        for r in &self.rows {
            times.push_str(&format!(
                "{};{};{};{};{}\n",
                r.method,
                r.d,
                r.m,
                fmt6(r.online_time_s),
                fmt6(r.rel_runtime_pct)
            ));
        }
        std::fs::write(dir.join("runtimes.csv"), times)?;

        let mut pareto = String::from("method;d;m;mean_error_pct;online_time_s;rel_runtime_pct\n");
        for r in pareto_front(&self.rows) {
            pareto.push_str(&format!(
                "{};{};{};{};{};{}\n",
                r.method,
                r.d,
                r.m,
                fmt6(r.mean_error_pct.unwrap()),
                fmt6(r.online_time_s),
                fmt6(r.rel_runtime_pct)
            ));
        }
        std::fs::write(dir.join("pareto.csv"), pareto)?;

        let mut summary = String::new();
        for (k, v) in &self.meta {
            summary.push_str(&format!("{k} = {v}\n"));
        }
        summary.push_str(&format!("fom_time_s = {}\n\n", fmt6(self.fom_time_s)));
        summary.push_str(&format!(
            "{:<6} {:>4} {:>5} {:>14} {:>6} {:>12} {:>14}  note\n",
            "method", "d", "m", "mean_err_%", "fail", "time_s", "rel_runtime_%"
        ));
        for r in &self.rows {
            summary.push_str(&format!(
                "{:<6} {:>4} {:>5} {:>14} {:>6} {:>12} {:>14}  {}\n",
                r.method,
                r.d,
                r.m,
                r.mean_error_pct.map_or("x".into(), |e| format!("{e:.4}")),
                if r.failed { "x" } else { "-" },
                format!("{:.6}", r.online_time_s),
                format!("{:.4}", r.rel_runtime_pct),
                r.note
            ));
        }
        std::fs::write(dir.join("summary.txt"), summary)?;

        if plot {
            self.write_plots(dir)?;
        }
        Ok(())
    }

    fn write_plots(&self, dir: &Path) -> Result<()> {
        let methods = ["ECM", "E3C", "EMSL"];
        // Error vs m, one series per (method, d).
        let mut series = Vec::new();
        let mut ds: Vec<usize> = self.rows.iter().map(|r| r.d).collect();
        ds.sort_unstable();
        ds.dedup();
        for method in methods {
            for &d in &ds {
                let pts: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.d == d && !r.failed)
                    .filter_map(|r| r.mean_error_pct.map(|e| (r.m as f64, e)))
                    .collect();
                if !pts.is_empty() {
                    series.push((format!("{method} d={d}"), pts));
                }
            }
        }
        std::fs::write(
            dir.join("error_vs_m.svg"),
            svg_chart(
                &series,
                "number of integration points m",
                "mean relative error (%)",
            ),
        )?;

        let mut pareto_series = Vec::new();
        for method in methods {
            let pts: Vec<(f64, f64)> = self
                .rows
                .iter()
                .filter(|r| r.method == method && !r.failed)
                .filter_map(|r| r.mean_error_pct.map(|e| (r.rel_runtime_pct, e)))
                .collect();
            if !pts.is_empty() {
                pareto_series.push((method.to_string(), pts));
            }
        }
        std::fs::write(
            dir.join("error_vs_runtime.svg"),
            svg_chart(
                &pareto_series,
                "relative runtime (%)",
                "mean relative error (%)",
            ),
        )?;
        Ok(())
    }
}

/// Minimal self-contained SVG line/scatter chart.
fn svg_chart(series: &[(String, Vec<(f64, f64)>)], xlabel: &str, ylabel: &str) -> String {
    let (w, h, ml, mb) = (640.0, 480.0, 70.0, 50.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (xmin, xmax) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (ymin, ymax) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (xmin, xmax) = if xmin == xmax {
        (xmin - 1.0, xmax + 1.0)
    } else {
        (xmin, xmax)
    };
    let (ymin, ymax) = if ymin == ymax {
        (ymin - 1.0, ymax + 1.0)
    } else {
        (ymin, ymax)
    };
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * (w - ml - 20.0);
    let sy = |y: f64| (h - mb) - (y - ymin) / (ymax - ymin) * (h - mb - 20.0);
    let colors = [
        "#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2",
    ];

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    out.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{xc}\" y=\"{yb}\" text-anchor=\"middle\">{xlabel}</text>\n\
         <text x=\"15\" y=\"{yc}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {yc})\">{ylabel}</text>\n",
        y0 = h - mb,
        x1 = w - 20.0,
        xc = (ml + w - 20.0) / 2.0,
        yb = h - 12.0,
        yc = (h - mb + 20.0) / 2.0,
    ));
    for t in 0..=4 {
        let xv = xmin + (xmax - xmin) * t as f64 / 4.0;
        let yv = ymin + (ymax - ymin) * t as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>\n",
            sx(xv),
            h - mb + 16.0,
            xv,
            ml - 6.0,
            sy(yv) + 4.0,
            yv
        ));
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        if pts.len() > 1 {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            ));
        }
        for &(x, y) in pts {
            out.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>\n",
            w - 150.0,
            30.0 + 14.0 * i as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Ordinary least-squares line fit returning (slope, intercept, r^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, intercept, r2)
}

/// Von Mises stress of the Cauchy tensor derived from P and F.
pub fn von_mises(p: &VoigtVec9, f: &VoigtVec9) -> Result<f64> {
    let ft = voigt_decode(f);
    let det = ft.determinant();
    if det <= 0.0 {
        return Err(Error::NonPositiveJacobian { det });
    }
    let sigma = voigt_decode(p) * ft.transpose() / det;
    let tr = sigma.trace() / 3.0;
    let mut dev2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s = sigma[(i, j)] - if i == j { tr } else { 0.0 };
            dev2 += s * s;
        }
    }
    Ok((1.5 * dev2).sqrt())
}

#[derive(Debug, Clone)]
pub struct StressFieldReport {
    /// Per Gauss point: coordinate, reduced-model and full-order von Mises.
    pub rows: Vec<([f64; 3], f64, f64)>,
    /// Worst relative error among the top-decile-stress points.
    pub hotspot_max_rel_err: f64,
}

/// Reconstruct the local stress field from reduced variables and compare
/// against a converged full-order state.
pub fn local_stress_field<M: Constitutive>(
    basis: &ModeBasis,
    gauss: &GaussTable,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
    fom_p: &[VoigtVec9],
    fom_f: &[VoigtVec9],
) -> Result<StressFieldReport> {
    let field = crate::pod::reconstruct_field(basis, y, f_bar);
    let mut rows = Vec::with_capacity(field.len());
    for (g, f) in field.iter().enumerate() {
        let p = material.pk1(f)?;
        let vm_rom = von_mises(&p, f)?;
        let vm_fom = von_mises(&fom_p[g], &fom_f[g])?;
        rows.push((gauss.points[g].coord, vm_rom, vm_fom));
    }
    let mut by_stress: Vec<usize> = (0..rows.len()).collect();
    by_stress.sort_by(|&a, &b| rows[b].2.partial_cmp(&rows[a].2).unwrap());
    let decile = (rows.len() / 10).max(1);
    let hotspot_max_rel_err = by_stress[..decile]
        .iter()
        .map(|&g| (rows[g].1 - rows[g].2).abs() / rows[g].2.max(1e-300))
        .fold(0.0f64, f64::max);
    Ok(StressFieldReport {
        rows,
        hotspot_max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn v(vals: [f64; 9]) -> VoigtVec9 {
        VoigtVec9::from_column_slice(&vals)
    }

    #[test]
    fn identical_inputs_have_zero_error() {
        let a = vec![v([1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]); 5];
        assert_eq!(mean_relative_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_scaling_gives_exact_percentage() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let val: Vec<VoigtVec9> = (0..8)
            .map(|_| VoigtVec9::from_fn(|_, _| rng.random::<f64>() + 0.5))
            .collect();
        let rom: Vec<VoigtVec9> = val.iter().map(|p| p * 1.01).collect();
        let err = mean_relative_error(&rom, &val).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_samples_are_excluded() {
        let val = vec![VoigtVec9::zeros(), v([1.0; 9])];
        let rom = vec![v([1.0; 9]), v([1.02; 9])];
        let err = mean_relative_error(&rom, &val).unwrap();
        assert!((err - 2.0).abs() < 1e-12);
        let all_zero = vec![VoigtVec9::zeros(); 2];
        assert!(matches!(
            mean_relative_error(&rom, &all_zero),
            Err(Error::ZeroReferenceNorm)
        ));
    }

    #[test]
    fn error_metric_is_permutation_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let val: Vec<VoigtVec9> = (0..6)
            .map(|_| VoigtVec9::from_fn(|_, _| rng.random::<f64>() + 0.5))
            .collect();
        let rom: Vec<VoigtVec9> = val
            .iter()
            .map(|p| p + VoigtVec9::from_fn(|_, _| 0.01 * rng.random::<f64>()))
            .collect();
        let e1 = mean_relative_error(&rom, &val).unwrap();
        let perm: Vec<usize> = vec![3, 1, 5, 0, 4, 2];
        let rom_p: Vec<VoigtVec9> = perm.iter().map(|&i| rom[i]).collect();
        let val_p: Vec<VoigtVec9> = perm.iter().map(|&i| val[i]).collect();
        let e2 = mean_relative_error(&rom_p, &val_p).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn pareto_front_contains_no_dominated_rows() {
        let row = |method: &str, err: f64, t: f64| ValidationRow {
            method: method.into(),
            d: 9,
            m: 5,
            mean_error_pct: Some(err),
            failed: false,
            n_failures: 0,
            online_time_s: t,
            rel_runtime_pct: t,
            per_sample_errors: vec![],
            note: String::new(),
        };
        let rows = vec![
            row("A", 1.0, 1.0),
            row("B", 2.0, 0.5),
            row("C", 3.0, 2.0), // dominated by A
            row("D", 0.5, 3.0),
        ];
        let front = pareto_front(&rows);
        let names: Vec<&str> = front.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, vec!["A", "B", "D"]);
        for a in &front {
            for b in &front {
                let dominated = b.mean_error_pct.unwrap() <= a.mean_error_pct.unwrap()
                    && b.online_time_s <= a.online_time_s
                    && (b.mean_error_pct.unwrap() < a.mean_error_pct.unwrap()
                        || b.online_time_s < a.online_time_s);
                assert!(!dominated);
            }
        }
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((intercept - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn von_mises_of_hydrostatic_stress_is_zero() {
        let f = crate::voigt::voigt_identity();
        let p = v([5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0]);
        assert!(von_mises(&p, &f).unwrap() < 1e-12);
        let shear = v([0.0, 3.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let vm = von_mises(&shear, &f).unwrap();
        assert!((vm - (3.0f64).sqrt() * 3.0).abs() < 1e-12);
    }

    #[test]
    fn diverging_samples_flag_the_row_without_aborting() {
        use crate::rom::CubatureModel;
        // Hand-built two-sample "validation set" and a model whose reduced
        // tangent is singular (identical basis columns): every solve
        // diverges, the row is flagged, the error field is omitted.
        let set = crate::sampling::SnapshotSet {
            strains: nalgebra::DMatrix::zeros(18, 2),
            params: nalgebra::DMatrix::from_fn(9, 2, |k, j| {
                if k % 4 == 0 {
                    1.0
                } else if k == 1 {
                    0.05 * (j as f64 + 1.0)
                } else {
                    0.0
                }
            }),
            stresses: None,
            homog_stresses: nalgebra::DMatrix::from_element(9, 2, 10.0),
            gauss_volumes: nalgebra::DVector::from_element(2, 0.5),
            cell_volume: 1.0,
            seed: 0,
            mesh_hash: 0,
            columns: vec![(0, 0), (0, 1)],
            warnings: vec![],
        };
        let broken = CubatureModel {
            psis: nalgebra::DMatrix::from_element(18, 3, 0.01),
            weights: vec![1.0, 1.0],
            hom_weights: None,
            cell_volume: 1.0,
        };
        let material = crate::material::Material::neo_hooke(1000.0, 0.25).unwrap();
        let row = run_validation(
            &RomModel::Cubature {
                method: Method::E3c,
                model: broken,
            },
            &material,
            &set,
            0.0,
            1,
        );
        assert!(row.failed);
        assert_eq!(row.n_failures, 1); // path abandoned at its first step
        assert!(row.mean_error_pct.is_none());

        let mut report = ValidationReport::default();
        report.rows.push(row);
        let dir = std::env::temp_dir().join(format!("strainmor-fail-{}", std::process::id()));
        report.write(&dir, false).unwrap();
        let errors = std::fs::read_to_string(dir.join("errors.csv")).unwrap();
        assert!(errors.contains("E3C;3;2;x;x;1"), "{errors}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn report_files_have_expected_headers() {
        let report = ValidationReport::default();
        let dir = std::env::temp_dir().join(format!("strainmor-report-{}", std::process::id()));
        report.write(&dir, true).unwrap();
        let errors = std::fs::read_to_string(dir.join("errors.csv")).unwrap();
        assert_eq!(errors, "method;d;m;mean_error_pct;failed;n_failures\n");
        let runtimes = std::fs::read_to_string(dir.join("runtimes.csv")).unwrap();
        assert!(runtimes.starts_with("method;d;m;online_time_s"));
        let pareto = std::fs::read_to_string(dir.join("pareto.csv")).unwrap();
        assert!(pareto.starts_with("method;d;m;mean_error_pct"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn single_row_report_lands_in_pareto() {
        let mut report = ValidationReport::default();
        report.rows.push(ValidationRow {
            method: "EMSL".into(),
            d: 9,
            m: 5,
            mean_error_pct: Some(1.25),
            failed: false,
            n_failures: 0,
            online_time_s: 0.5,
            rel_runtime_pct: 0.1,
            per_sample_errors: vec![1.25],
            note: String::new(),
        });
        let dir = std::env::temp_dir().join(format!("strainmor-report1-{}", std::process::id()));
        report.write(&dir, false).unwrap();
        let pareto = std::fs::read_to_string(dir.join("pareto.csv")).unwrap();
        assert!(pareto.contains("EMSL;9;5"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
