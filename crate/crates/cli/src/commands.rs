//! Subcommand bodies. Every output is a function of the config, the seed and
//! the input files, so reruns reproduce files byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anchormix::asymptotics::{diagnostics, relabeling_probs_for, Diagnostics, Gamma0Source, DEFAULT_FACTORIAL_CAP};
use anchormix::gibbs::summary::{
    allocation_probabilities, allocation_table, summarize, AllocationTable, PosteriorSummary,
};
use anchormix::gibbs::{gibbs_fit, read_draws_csv, write_draws_csv, SamplerConfig};
use anchormix::ingest::{extract_features, write_features};
use anchormix::model::ParamsReport;
use anchormix::predictive::{run_simulation, write_sim_csv};
use anchormix::selection::{anchored_em, fixed_anchor_em, min_entropy_select, EmConfig, MinEntropyConfig};
use anchormix::{AnchorSet, Dataset, MixtureParams, PriorSpec};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig, SamplerInit};
use crate::CliError;

pub const ANCHORS_SCHEMA: &str = "anchormix.anchors/v1";
pub const DIAGNOSTICS_SCHEMA: &str = "anchormix.diagnostics/v1";
pub const FIT_SCHEMA: &str = "anchormix.fit/v1";

pub const ANCHORS_FILE: &str = "anchors.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SIM_RESULTS_FILE: &str = "sim_results.csv";
pub const SIM_SUMMARY_FILE: &str = "sim_summary.json";
pub const FEATURES_FILE: &str = "features.csv";

/// Anchor rows are 1-based throughout the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGroup {
    pub component: usize,
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub lower_bound: f64,
    /// Present on the first iteration and whenever the anchors change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub start: usize,
    pub converged: bool,
    pub error: Option<String>,
    pub max_decrease: f64,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub best_start: usize,
    pub starts: Vec<StartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinEntropyReport {
    /// Continuous optimum per component, before snapping.
    pub x_star: Vec<Vec<Vec<f64>>>,
    pub continuous_entropy: f64,
    pub entropy: f64,
    pub chosen_start: Option<usize>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub schema: String,
    pub method: Method,
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub anchors: Vec<AnchorGroup>,
    /// Parameter estimate aligned with the anchor labels; the `gamma0` of
    /// the diagnostics.
    pub map: ParamsReport,
    /// `F` at `map` for EM-based methods.
    pub lower_bound: Option<f64>,
    pub em: Option<EmReport>,
    pub min_entropy: Option<MinEntropyReport>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema: String,
    pub anchors: Vec<AnchorGroup>,
    pub gamma0: ParamsReport,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub component: usize,
    pub theta_mean: Vec<f64>,
    pub theta_sd: Vec<f64>,
    pub sigma_mean: Vec<f64>,
    pub sigma_sd: Vec<f64>,
    pub weight_mean: f64,
    pub weight_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub sampler: SamplerConfig,
    pub anchors: Vec<AnchorGroup>,
    /// Posterior mean (sd) per component.
    pub table: Vec<TableRow>,
    /// Per group when the data carry groups, otherwise per row.
    pub allocation: AllocationTable,
    pub posterior: PosteriorSummary,
}

/// Anchors, the aligned estimate and the report describing them.
pub struct Selection {
    pub anchors: AnchorSet,
    pub params: MixtureParams,
    pub report: AnchorReport,
}

fn groups(data: &Dataset, anchors: &AnchorSet) -> Vec<AnchorGroup> {
    anchors
        .sets()
        .iter()
        .enumerate()
        .map(|(j, set)| AnchorGroup {
            component: j + 1,
            rows: set.iter().map(|i| i + 1).collect(),
            ids: set.iter().map(|&i| data.ids()[i].clone()).collect(),
            points: set.iter().map(|&i| data.row(i).to_vec()).collect(),
        })
        .collect()
}

fn one_based(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    sets.iter().map(|s| s.iter().map(|i| i + 1).collect()).collect()
}

fn diagnose_with(
    data: &Dataset,
    anchors: &AnchorSet,
    gamma0: &MixtureParams,
    source: Gamma0Source,
) -> Result<Diagnostics, CliError> {
    let dist = relabeling_probs_for(data, anchors, gamma0, DEFAULT_FACTORIAL_CAP)?;
    Ok(diagnostics(&dist, source))
}

fn em_config(cfg: &RunConfig, k: usize) -> Result<EmConfig, CliError> {
    let a = &cfg.anchors;
    Ok(EmConfig {
        k,
        budgets: cfg.budgets(k)?,
        tol: a.tol,
        max_iter: a.max_iter,
        n_starts: a.n_starts,
        solver: a.solver,
        seed: cfg.seed(),
    })
}

pub fn select(cfg: &RunConfig, data: &Dataset, prior: &PriorSpec) -> Result<Selection, CliError> {
    let k = cfg.k()?;
    let method = cfg.anchors.method;
    let (anchors, params, lower_bound, em, min_entropy) = match method {
        Method::Em | Method::MinEntropy => {
            let em_cfg = em_config(cfg, k)?;
            let res = anchored_em(data, prior, &em_cfg)?;
            let em = EmReport {
                best_start: res.best_start,
                starts: res
                    .traces
                    .iter()
                    .map(|t| StartReport {
                        start: t.start,
                        converged: t.converged,
                        error: t.error.clone(),
                        max_decrease: t.max_decrease(),
                        trace: t
                            .entries
                            .iter()
                            .enumerate()
                            .map(|(x, e)| TracePoint {
                                iteration: e.iteration,
                                lower_bound: e.lower_bound,
                                anchors: (x == 0 || t.entries[x - 1].anchors != e.anchors)
                                    .then(|| one_based(&e.anchors)),
                            })
                            .collect(),
                    })
                    .collect(),
            };
            if method == Method::Em {
                (res.best.anchors, res.best.params, Some(res.best.lower_bound), Some(em), None)
            } else {
                let me_cfg = MinEntropyConfig {
                    n_starts: cfg.anchors.min_entropy_starts,
                    seed: cfg.seed(),
                    refine: cfg.anchors.refine,
                    ..MinEntropyConfig::default()
                };
                let me = min_entropy_select(data, &res.best.params, &em_cfg.budgets, Some(&res.best.anchors), &me_cfg)?;
                let (anchors, perm) = me.anchors.canonicalize();
                let report = MinEntropyReport {
                    x_star: perm.iter().map(|&j| me.x_star[j].clone()).collect(),
                    continuous_entropy: me.continuous_entropy,
                    entropy: me.entropy,
                    chosen_start: me.chosen_start,
                    converged: me.converged,
                    warnings: me.warnings,
                };
                (anchors, res.best.params.permuted(&perm), None, Some(em), Some(report))
            }
        }
        Method::Explicit => {
            let sets = cfg
                .anchors
                .sets
                .as_ref()
                .ok_or_else(|| CliError::Validation("method = \"explicit\" needs anchors.sets".into()))?;
            if sets.len() != k {
                return Err(CliError::Validation(format!("{} anchor sets for k = {k}", sets.len())));
            }
            if sets.iter().flatten().any(|&r| r == 0) {
                return Err(CliError::Validation("anchor rows are 1-based".into()));
            }
            let zero_based = sets.iter().map(|s| s.iter().map(|r| r - 1).collect()).collect();
            let (anchors, _) = AnchorSet::new(zero_based, data.n())?.canonicalize();
            let state = fixed_anchor_em(data, prior, &anchors, cfg.anchors.tol, cfg.anchors.max_iter)?;
            (anchors, state.params, Some(state.lower_bound), None, None)
        }
        Method::File => {
            let path = cfg
                .anchors
                .file
                .as_ref()
                .ok_or_else(|| CliError::Validation("method = \"file\" needs anchors.file".into()))?;
            let report = read_anchor_report(path)?;
            let anchors = anchors_from_report(&report, data, k)?;
            let params = report.map.to_params()?;
            return Ok(Selection { anchors, params, report });
        }
    };
    let diagnostics = diagnose_with(data, &anchors, &params, Gamma0Source::AnchoredEmMap)?;
    let report = AnchorReport {
        schema: ANCHORS_SCHEMA.into(),
        method,
        k,
        n: data.n(),
        p: data.p(),
        anchors: groups(data, &anchors),
        map: params.report(),
        lower_bound,
        em,
        min_entropy,
        diagnostics,
    };
    Ok(Selection { anchors, params, report })
}

pub fn read_anchor_report(path: &Path) -> Result<AnchorReport, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let report: AnchorReport = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if report.schema != ANCHORS_SCHEMA {
        return Err(CliError::Validation(format!(
            "{}: schema {:?}, expected {ANCHORS_SCHEMA}",
            path.display(),
            report.schema
        )));
    }
    Ok(report)
}

fn anchors_from_report(report: &AnchorReport, data: &Dataset, k: usize) -> Result<AnchorSet, CliError> {
    if report.k != k || report.n != data.n() || report.p != data.p() {
        return Err(CliError::Validation(format!(
            "anchor file is for k = {}, n = {}, p = {}; config has k = {k}, n = {}, p = {}",
            report.k,
            report.n,
            report.p,
            data.n(),
            data.p()
        )));
    }
    let mut sets = vec![Vec::new(); k];
    for g in &report.anchors {
        if g.component == 0 || g.component > k || g.rows.contains(&0) {
            return Err(CliError::Validation("anchor file components and rows are 1-based".into()));
        }
        sets[g.component - 1] = g.rows.iter().map(|r| r - 1).collect();
    }
    Ok(AnchorSet::new(sets, data.n())?)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_selection(out: &Path, data: &Dataset, sel: &Selection) -> Result<(), CliError> {
    write_json(&out.join(ANCHORS_FILE), &sel.report)?;
    write_json(
        &out.join(DIAGNOSTICS_FILE),
        &DiagnosticsReport {
            schema: DIAGNOSTICS_SCHEMA.into(),
            anchors: groups(data, &sel.anchors),
            gamma0: sel.params.report(),
            diagnostics: sel.report.diagnostics.clone(),
        },
    )
}

fn print_selection(sel: &Selection) {
    println!("method: {:?}", sel.report.method);
    for g in &sel.report.anchors {
        println!("  component {}: rows {:?} points {:?}", g.component, g.rows, g.points);
    }
    let d = &sel.report.diagnostics;
    println!("alpha_hat = {:.6}  entropy = {:.6}", d.alpha_hat, d.entropy);
}

pub fn select_anchors(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    if cfg.anchors.method == Method::File {
        return Err(CliError::Validation("select-anchors needs method em, min_entropy or explicit".into()));
    }
    let data = cfg.dataset()?;
    let prior = cfg.prior(&data)?;
    let sel = select(cfg, &data, &prior)?;
    create_out(out)?;
    write_selection(out, &data, &sel)?;
    print_selection(&sel);
    Ok(())
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let prior = cfg.prior(&data)?;
    let s = &cfg.sampler;
    let sampler = SamplerConfig {
        chains: s.chains,
        iterations: s.iterations,
        burn_in: s.burn_in,
        target_draws: s.target_draws,
        seed: cfg.seed(),
    };
    sampler.validate()?;
    let sel = select(cfg, &data, &prior)?;
    create_out(out)?;
    if cfg.anchors.method != Method::File {
        write_selection(out, &data, &sel)?;
    }
    let init = (s.init == SamplerInit::Map).then_some(&sel.params);
    let draws = gibbs_fit(&data, &sel.anchors, &prior, &sampler, init)?;
    let mut w = writer(&out.join(DRAWS_FILE))?;
    write_draws_csv(&draws, &mut w)?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let posterior = summarize(&draws)?;
    let allocation = if data.groups().is_some() {
        allocation_table(&draws, &data)?
    } else {
        AllocationTable { groups: data.ids().to_vec(), probs: allocation_probabilities(&draws) }
    };
    let table: Vec<TableRow> = posterior
        .components
        .iter()
        .map(|c| TableRow {
            component: c.component,
            theta_mean: c.theta.iter().map(|m| m.mean).collect(),
            theta_sd: c.theta.iter().map(|m| m.sd).collect(),
            sigma_mean: c.sigma.iter().map(|m| m.mean).collect(),
            sigma_sd: c.sigma.iter().map(|m| m.sd).collect(),
            weight_mean: c.weight.mean,
            weight_sd: c.weight.sd,
        })
        .collect();
    println!("{} draws from {} chains", draws.len(), sampler.chains);
    println!("{:>9}  {:>22}  {:>22}  {:>16}", "component", "theta mean (sd)", "sigma mean (sd)", "weight mean (sd)");
    for r in &table {
        let pair = |m: &[f64], s: &[f64]| {
            m.iter().zip(s).map(|(m, s)| format!("{m:.3} ({s:.3})")).collect::<Vec<_>>().join(", ")
        };
        println!(
            "{:>9}  {:>22}  {:>22}  {:>16}",
            r.component,
            pair(&r.theta_mean, &r.theta_sd),
            pair(&r.sigma_mean, &r.sigma_sd),
            format!("{:.3} ({:.3})", r.weight_mean, r.weight_sd)
        );
    }
    write_json(
        &out.join(SUMMARY_FILE),
        &FitReport {
            schema: FIT_SCHEMA.into(),
            sampler,
            anchors: groups(&data, &sel.anchors),
            table,
            allocation,
            posterior,
        },
    )
}

pub fn diagnose(cfg: &RunConfig, out: &Path, draws_path: Option<&Path>) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let prior = cfg.prior(&data)?;
    let sel = select(cfg, &data, &prior)?;
    let (gamma0, source) = match draws_path {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let draws = read_draws_csv(BufReader::new(file), sel.anchors.k(), data.p())?;
            if draws.n != data.n() {
                return Err(CliError::Validation(format!("draws cover {} rows, data has {}", draws.n, data.n())));
            }
            (draws.posterior_mean()?, Gamma0Source::PosteriorMean)
        }
        None => (sel.params.clone(), Gamma0Source::AnchoredEmMap),
    };
    let diagnostics = diagnose_with(&data, &sel.anchors, &gamma0, source)?;
    println!("gamma0: {source:?}");
    println!("alpha_hat = {:.6}  entropy = {:.6}", diagnostics.alpha_hat, diagnostics.entropy);
    for t in &diagnostics.top_permutations {
        println!("  {:?}  {:.6}", t.permutation, t.probability);
    }
    create_out(out)?;
    write_json(
        &out.join(DIAGNOSTICS_FILE),
        &DiagnosticsReport {
            schema: DIAGNOSTICS_SCHEMA.into(),
            anchors: groups(&data, &sel.anchors),
            gamma0: gamma0.report(),
            diagnostics,
        },
    )
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sim = cfg.sim_config();
    sim.validate()?;
    let results = run_simulation(&sim)?;
    create_out(out)?;
    let mut w = writer(&out.join(SIM_RESULTS_FILE))?;
    write_sim_csv(&results.rows, &mut w)?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    write_json(&out.join(SIM_SUMMARY_FILE), &results.summary)?;
    println!("{:>6} {:>6} {:>3} {:>10} {:>10} {:>10}", "delta", "sigma", "m", "median", "q1", "q3");
    for c in &results.summary.cells {
        println!("{:>6} {:>6} {:>3} {:>10.4} {:>10.4} {:>10.4}", c.delta, c.sigma, c.m, c.median, c.q1, c.q3);
    }
    Ok(())
}

/// Directories contribute their `.txt` files in name order.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("txt")))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Validation("no trial files given".into()));
    }
    Ok(files)
}

pub fn extract(cfg: &RunConfig, out: Option<&Path>, paths: &[PathBuf]) -> Result<(), CliError> {
    let files = expand(paths)?;
    let rows = extract_features(&files, &cfg.trial_format())?;
    match out {
        Some(dir) => {
            create_out(dir)?;
            let mut w = writer(&dir.join(FEATURES_FILE))?;
            write_features(&rows, &mut w)?;
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        None => write_features(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}
