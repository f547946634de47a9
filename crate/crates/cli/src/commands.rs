use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use hetvar::hypothesis::{self, CBetaPivot, TestMethod, TestResult};
use hetvar::intervals::{self, ConfidenceSet, Interval};
use hetvar::macl::{self, MaclOptions};
use hetvar::mixture_em::{self, EmOptions, MixtureFitOptions};
use hetvar::model::{Bounds, PairedDataset, PairedObservation, VarianceForm, VarianceModel, DEFAULT_BOUNDS};
use hetvar::simulate::{self, StudyConfig, StudyKind, StudyReport};

use crate::args::*;
use crate::manifest::RunManifest;
use crate::records::*;
use crate::{CliError, CliResult};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::FitMacl(a) => fit_macl(g, a),
        Command::FitMixture(a) => fit_mixture(g, a),
        Command::Ci(a) => ci(g, a),
        Command::Pvalue(a) => pvalue(g, a),
        Command::Simulate(a) => simulate(g, a),
        Command::BiasOracle(a) => bias_oracle(g, a),
        Command::Pipeline(a) => pipeline(g, a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_form(s: &str) -> CliResult<VarianceForm> {
    s.parse().map_err(|e: hetvar::Error| usage(e.to_string()))
}

fn parse_model(m: &ModelArgs) -> CliResult<VarianceModel> {
    VarianceModel::new(parse_form(&m.form)?, m.theta.clone()).map_err(|e| usage(e.to_string()))
}

fn parse_bounds(a: f64, b: f64) -> CliResult<Bounds> {
    Bounds::new(a, b).map_err(|e| usage(e.to_string()))
}

fn check_unit(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn pivot(p: PivotArg) -> CBetaPivot {
    match p {
        PivotArg::PairMean => CBetaPivot::PairMean,
        PivotArg::TwoObs => CBetaPivot::TwoObservation,
    }
}

fn read_pairs(path: &Path, raw: bool) -> CliResult<Vec<PairedObservation>> {
    let pairs = hetvar::io::read_pairs_path(path, raw)?;
    if pairs.is_empty() {
        return Err(hetvar::Error::DegenerateData(format!("{} has no data rows", path.display())).into());
    }
    Ok(pairs)
}

fn sink(g: &GlobalOpts) -> CliResult<Box<dyn Write>> {
    Ok(match &g.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(g: &GlobalOpts, manifest: &RunManifest) -> CliResult<()> {
    match &g.out {
        Some(p) => manifest.write_sidecar(p),
        None => {
            if !g.quiet {
                eprintln!("{}", serde_json::to_string(manifest)?);
            }
            Ok(())
        }
    }
}

fn write_json_line<T: Serialize>(w: &mut dyn Write, value: &T) -> CliResult<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_rows<T: Serialize>(w: &mut dyn Write, format: Format, rows: &[T]) -> CliResult<()> {
    match format {
        Format::Csv => {
            let mut out = csv::Writer::from_writer(&mut *w);
            for r in rows {
                out.serialize(r)?;
            }
            out.flush()?;
        }
        Format::Json => {
            for r in rows {
                write_json_line(w, r)?;
            }
        }
    }
    Ok(())
}

fn theta_header(prefix: &[&str], k: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=k).map(|j| format!("theta{j}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

fn fit_macl(g: &GlobalOpts, a: &FitMaclArgs) -> CliResult<()> {
    let form = parse_form(&a.form)?;
    let mut manifest = RunManifest::new("fit-macl", json!(a));
    manifest.add_input(&a.input);
    let (data, dropped) = PairedDataset::ingest(read_pairs(&a.input, a.raw)?, DEFAULT_BOUNDS)?;
    let opts = MaclOptions {
        init: a.init.clone(),
        tol: a.tol,
        max_iter: a.max_iter,
        pinned: None,
    };
    let fit = macl::macl_fit(&data, form, &opts)?;
    let rec = MaclRecord {
        form: form.as_str().into(),
        theta_hat: fit.theta_hat.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
        residual_norm: fit.residual_norm,
        n_pairs: data.len(),
        dropped_ties: dropped,
    };
    let mut w = sink(g)?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => write_json_line(&mut *w, &rec)?,
        Format::Csv => {
            let mut out = csv::Writer::from_writer(&mut *w);
            out.write_record(theta_header(
                &["form"],
                rec.theta_hat.len(),
                &["converged", "iterations", "residual_norm", "n_pairs", "dropped_ties"],
            ))?;
            let mut row = vec![rec.form.clone()];
            row.extend(rec.theta_hat.iter().map(|t| t.to_string()));
            row.extend([
                rec.converged.to_string(),
                rec.iterations.to_string(),
                rec.residual_norm.to_string(),
                rec.n_pairs.to_string(),
                rec.dropped_ties.to_string(),
            ]);
            out.write_record(row)?;
            out.flush()?;
        }
    }
    w.flush()?;
    finish(g, &manifest)
}

fn fit_mixture(g: &GlobalOpts, a: &FitMixtureArgs) -> CliResult<()> {
    let form = parse_form(&a.form)?;
    let bounds = parse_bounds(a.bounds.a, a.bounds.b)?;
    let mut manifest = RunManifest::new("fit-mixture", json!(a));
    manifest.add_input(&a.input);
    let (data, dropped) = PairedDataset::ingest(read_pairs(&a.input, a.raw)?, bounds)?;
    let opts = MixtureFitOptions {
        d: a.d,
        em: EmOptions {
            tol: a.tol,
            max_iter: a.max_iter,
            ..Default::default()
        },
        macl: MaclOptions::default(),
    };
    let (est, grid) = mixture_em::fit_mixture(&data, form, &opts)?;
    let rec = MixtureRecord {
        form: form.as_str().into(),
        theta_hat: est.theta_hat.clone(),
        j: grid.len(),
        grid: (!a.no_weights).then(|| grid.points().to_vec()),
        pi_hat: (!a.no_weights).then(|| est.pi_hat.clone()),
        log_lik: est.log_lik,
        iterations: est.iterations,
        converged: est.converged,
        n_pairs: data.len(),
        dropped_ties: dropped,
    };
    let mut w = sink(g)?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => write_json_line(&mut *w, &rec)?,
        Format::Csv => {
            // The weights do not fit a single row; use JSON to get them.
            let mut out = csv::Writer::from_writer(&mut *w);
            out.write_record(theta_header(
                &["form"],
                rec.theta_hat.len(),
                &["J", "log_lik", "iterations", "converged", "n_pairs", "dropped_ties"],
            ))?;
            let mut row = vec![rec.form.clone()];
            row.extend(rec.theta_hat.iter().map(|t| t.to_string()));
            row.extend([
                rec.j.to_string(),
                rec.log_lik.to_string(),
                rec.iterations.to_string(),
                rec.converged.to_string(),
                rec.n_pairs.to_string(),
                rec.dropped_ties.to_string(),
            ]);
            out.write_record(row)?;
            out.flush()?;
        }
    }
    w.flush()?;
    finish(g, &manifest)
}

fn scale_value(scale: Scale, v: f64) -> f64 {
    match scale {
        Scale::Log => v,
        Scale::Ratio => v.exp(),
    }
}

fn scale_name(scale: Scale) -> &'static str {
    match scale {
        Scale::Log => "log",
        Scale::Ratio => "ratio",
    }
}

fn method_name(m: CiMethod) -> &'static str {
    match m {
        CiMethod::Exact => "exact",
        CiMethod::Naive => "naive",
        CiMethod::Region => "region",
        CiMethod::Bonferroni => "bonferroni",
    }
}

fn from_set(set: &ConfidenceSet) -> (Vec<Interval>, bool, f64, bool) {
    (set.components.clone(), set.disconnected, set.level, set.approximate)
}

fn from_interval(i: Interval, alpha: f64) -> (Vec<Interval>, bool, f64, bool) {
    (vec![i], false, 1.0 - alpha, false)
}

/// Interval for a difference of means by one of the two-sample methods.
fn diff_set(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    method: CiMethod,
    alpha: f64,
    bounds: Bounds,
    grid_res: f64,
) -> CliResult<(Vec<Interval>, bool, f64, bool)> {
    Ok(match method {
        CiMethod::Naive => from_interval(intervals::ci_diff_naive(y1, y2, model, alpha)?, alpha),
        CiMethod::Region => from_set(&intervals::ci_diff_region(y1, y2, model, alpha, bounds, grid_res)?),
        CiMethod::Bonferroni => from_interval(intervals::ci_diff_bonferroni(y1, y2, model, alpha, bounds)?, alpha),
        CiMethod::Exact => {
            return Err(usage(
                "--method exact is the single-mean set; for a difference use region, bonferroni or naive",
            ))
        }
    })
}

fn ci(g: &GlobalOpts, a: &CiArgs) -> CliResult<()> {
    let model = parse_model(&a.model)?;
    check_unit("--alpha", a.alpha)?;
    if !(a.grid_res > 0.0) {
        return Err(usage("--grid-res must be positive"));
    }
    let explicit_bounds = match (a.a, a.b) {
        (Some(lo), Some(hi)) => Some(parse_bounds(lo, hi)?),
        (None, None) => None,
        _ => return Err(usage("--a and --b must be given together")),
    };
    let bounds = explicit_bounds.unwrap_or(DEFAULT_BOUNDS);
    let mut manifest = RunManifest::new("ci", json!({ "args": a, "bounds": bounds }));
    let format = g.format;
    let mut w = sink(g)?;

    if let Some(input) = &a.input {
        manifest.add_input(input);
        let pairs = read_pairs(input, a.raw)?;
        if a.method == CiMethod::Exact {
            return Err(usage(
                "batch mode brackets differences; use --method region, bonferroni or naive",
            ));
        }
        let rows: Vec<CliResult<CiRow>> = pairs
            .par_iter()
            .map(|p| {
                let (comps, disconnected, _, _) =
                    diff_set(p.y1, p.y2, &model, a.method, a.alpha, bounds, a.grid_res)?;
                Ok(CiRow {
                    id: p.id.clone(),
                    y1: p.y1,
                    y2: p.y2,
                    lo: scale_value(a.scale, comps[0].lo),
                    hi: scale_value(a.scale, comps[comps.len() - 1].hi),
                    disconnected,
                    method: method_name(a.method).into(),
                })
            })
            .collect();
        let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;
        write_rows(&mut *w, format.unwrap_or(Format::Csv), &rows)?;
    } else {
        let y1 = a.y1.ok_or_else(|| usage("give --y1 (and --y2 for a difference) or --input"))?;
        let (comps, disconnected, level, approximate) = match a.y2 {
            None => match a.method {
                CiMethod::Exact => from_set(&intervals::ci_mu_exact(y1, &model, a.alpha, explicit_bounds)?),
                CiMethod::Naive => from_interval(intervals::ci_mu_naive(y1, &model, a.alpha)?, a.alpha),
                _ => return Err(usage("region and bonferroni need both --y1 and --y2")),
            },
            Some(y2) => diff_set(y1, y2, &model, a.method, a.alpha, bounds, a.grid_res)?,
        };
        let comps: Vec<(f64, f64)> = comps
            .iter()
            .map(|c| (scale_value(a.scale, c.lo), scale_value(a.scale, c.hi)))
            .collect();
        let rec = CiRecord {
            method: method_name(a.method).into(),
            scale: scale_name(a.scale).into(),
            y1,
            y2: a.y2,
            lo: comps[0].0,
            hi: comps[comps.len() - 1].1,
            disconnected,
            components: comps,
            level,
            approximate,
        };
        match format.unwrap_or(Format::Json) {
            Format::Json => write_json_line(&mut *w, &rec)?,
            Format::Csv => write_rows(&mut *w, Format::Csv, &[CiFlatRecord::from(&rec)])?,
        }
    }
    w.flush()?;
    finish(g, &manifest)
}

fn test_method(m: PvalueMethod) -> TestMethod {
    match m {
        PvalueMethod::Naive => TestMethod::Naive,
        PvalueMethod::Conservative => TestMethod::Conservative,
        PvalueMethod::BergerBoos => TestMethod::BergerBoos,
    }
}

fn pvalue(g: &GlobalOpts, a: &PvalueArgs) -> CliResult<()> {
    let model = parse_model(&a.model)?;
    let bounds = parse_bounds(a.bounds.a, a.bounds.b)?;
    check_unit("--beta", a.beta)?;
    let mut manifest = RunManifest::new("pvalue", json!(a));
    let pairs = match (&a.input, a.y1, a.y2) {
        (Some(input), _, _) => {
            manifest.add_input(input);
            read_pairs(input, a.raw)?
        }
        (None, Some(y1), Some(y2)) => vec![PairedObservation { id: "pair".into(), y1, y2 }],
        _ => return Err(usage("give --input or both --y1 and --y2")),
    };
    let method = test_method(a.method);
    let results: Vec<hetvar::Result<TestResult>> = pairs
        .par_iter()
        .map(|p| hypothesis::pvalue(method, p.y1, p.y2, &model, bounds, a.beta, pivot(a.cbeta_pivot)))
        .collect();
    let results = results.into_iter().collect::<hetvar::Result<Vec<_>>>()?;
    let format = g.format.unwrap_or(Format::Csv);
    let mut w = sink(g)?;
    if a.bonferroni {
        let threshold = 0.05 / pairs.len() as f64;
        let rows: Vec<PvalueBonferroniRow> = pairs
            .iter()
            .zip(&results)
            .map(|(p, r)| PvalueBonferroniRow {
                id: p.id.clone(),
                y1: p.y1,
                y2: p.y2,
                statistic: r.statistic,
                p_value: r.p_value,
                mu_sup: r.mu_sup,
                bonferroni_significant: r.p_value <= threshold,
            })
            .collect();
        let hits = rows.iter().filter(|r| r.bonferroni_significant).count();
        if !g.quiet {
            eprintln!(
                "{hits} of {} p-values ({}) at or below 0.05/N = {threshold:.3e}",
                rows.len(),
                method.as_str()
            );
        }
        write_rows(&mut *w, format, &rows)?;
    } else {
        let rows: Vec<PvalueRow> = pairs
            .iter()
            .zip(&results)
            .map(|(p, r)| PvalueRow {
                id: p.id.clone(),
                y1: p.y1,
                y2: p.y2,
                statistic: r.statistic,
                p_value: r.p_value,
                mu_sup: r.mu_sup,
            })
            .collect();
        write_rows(&mut *w, format, &rows)?;
    }
    w.flush()?;
    finish(g, &manifest)
}

fn simulate(g: &GlobalOpts, a: &SimulateArgs) -> CliResult<()> {
    let mut cfg = StudyConfig::from_path(&a.config)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let kind = match a.study {
        StudyArg::Estimator => StudyKind::Estimator,
        StudyArg::Coverage => StudyKind::Coverage,
        StudyArg::Power => StudyKind::Power,
    };
    let mut manifest = RunManifest::new("simulate", json!({ "study": a.study, "config": cfg }));
    manifest.add_input(&a.config);
    manifest.seed = Some(cfg.seed);
    manifest.rng = Some(simulate::RNG_ALGORITHM.into());
    let report = simulate::run_study(kind, &cfg)?;
    let mut w = sink(g)?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Csv => report.write_csv(&mut *w)?,
        Format::Json => {
            let value = match &report {
                StudyReport::Estimator(r) => json!(r),
                StudyReport::Coverage(r) => json!(r),
                StudyReport::Power(r) => json!(r),
            };
            write_json_line(&mut *w, &value)?;
        }
    }
    w.flush()?;
    finish(g, &manifest)
}

fn bias_oracle(g: &GlobalOpts, a: &BiasOracleArgs) -> CliResult<()> {
    let [t1, t2] = a.theta[..] else {
        return Err(usage("--theta takes exactly two coefficients t1,t2"));
    };
    let mut manifest = RunManifest::new("bias-oracle", json!(a));
    let mus = match (&a.mu, &a.means) {
        (Some(m), _) => m.clone(),
        (None, Some(path)) => {
            manifest.add_input(path);
            hetvar::io::read_means_path(path)?
        }
        (None, None) => return Err(usage("give --mu or --means")),
    };
    let (eq1, eq2) = hetvar::estimating_equation_bias([t1, t2], &mus)?;
    let rec = BiasRecord {
        theta: vec![t1, t2],
        n_means: mus.len(),
        eq1,
        eq2,
    };
    let mut w = sink(g)?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => write_json_line(&mut *w, &rec)?,
        Format::Csv => {
            let mut out = csv::Writer::from_writer(&mut *w);
            out.write_record(["t1", "t2", "n_means", "eq1", "eq2"])?;
            out.write_record([
                t1.to_string(),
                t2.to_string(),
                rec.n_means.to_string(),
                eq1.to_string(),
                eq2.to_string(),
            ])?;
            out.flush()?;
        }
    }
    w.flush()?;
    finish(g, &manifest)
}

fn pipeline(g: &GlobalOpts, a: &PipelineArgs) -> CliResult<()> {
    let form = parse_form(&a.form)?;
    let bounds = parse_bounds(a.bounds.a, a.bounds.b)?;
    check_unit("--alpha", a.alpha)?;
    check_unit("--beta", a.beta)?;
    if !(a.grid_res > 0.0) {
        return Err(usage("--grid-res must be positive"));
    }
    let mut manifest = RunManifest::new("pipeline", json!(a));
    manifest.add_input(&a.control);
    manifest.add_input(&a.experiment);

    let experiment = read_pairs(&a.experiment, a.raw)?;
    let (control, _) = PairedDataset::ingest(read_pairs(&a.control, a.raw)?, bounds)?;
    let opts = MixtureFitOptions {
        d: a.d,
        ..Default::default()
    };
    let (est, grid) = mixture_em::fit_mixture(&control, form, &opts)?;
    let model = est.model();
    log::info!("control fit theta = {:?} on {} grid points", est.theta_hat, grid.len());

    let piv = pivot(a.cbeta_pivot);
    let rows: Vec<CliResult<PipelineRow>> = experiment
        .par_iter()
        .map(|p| {
            let region = match intervals::ci_diff_region(p.y1, p.y2, &model, a.alpha, bounds, a.grid_res) {
                Ok(set) => Some(set),
                Err(hetvar::Error::EmptySet(msg)) => {
                    log::warn!("pair '{}': empty region set ({msg})", p.id);
                    None
                }
                Err(e) => return Err(e.into()),
            };
            let naive = intervals::ci_diff_naive(p.y1, p.y2, &model, a.alpha)?;
            let pv = |m| hypothesis::pvalue(m, p.y1, p.y2, &model, bounds, a.beta, piv).map(|r| r.p_value);
            Ok(PipelineRow {
                id: p.id.clone(),
                y1: p.y1,
                y2: p.y2,
                region_lo: region.as_ref().map(|s| scale_value(a.scale, s.hull.lo)),
                region_hi: region.as_ref().map(|s| scale_value(a.scale, s.hull.hi)),
                region_disconnected: region.as_ref().map(|s| s.disconnected),
                naive_lo: scale_value(a.scale, naive.lo),
                naive_hi: scale_value(a.scale, naive.hi),
                p_naive: pv(TestMethod::Naive)?,
                p_conservative: pv(TestMethod::Conservative)?,
                p_berger_boos: pv(TestMethod::BergerBoos)?,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;

    let threshold = 0.05 / rows.len() as f64;
    let count = |f: fn(&PipelineRow) -> f64| rows.iter().filter(|r| f(r) <= threshold).count();
    let summary = PipelineSummary {
        form: form.as_str().into(),
        theta_hat: est.theta_hat.clone(),
        j: grid.len(),
        log_lik: est.log_lik,
        em_iterations: est.iterations,
        em_converged: est.converged,
        n_control: control.len(),
        n_experiment: rows.len(),
        significant: SignificanceCounts {
            threshold,
            naive: count(|r| r.p_naive),
            conservative: count(|r| r.p_conservative),
            berger_boos: count(|r| r.p_berger_boos),
        },
    };

    let mut w = sink(g)?;
    write_rows(&mut *w, g.format.unwrap_or(Format::Csv), &rows)?;
    w.flush()?;
    match &g.out {
        Some(out) => {
            let mut name = out.as_os_str().to_owned();
            name.push(".summary.json");
            std::fs::write(&name, serde_json::to_string_pretty(&summary)? + "\n")?;
        }
        None => {
            if !g.quiet {
                eprintln!("{}", serde_json::to_string(&summary)?);
            }
        }
    }
    finish(g, &manifest)
}
