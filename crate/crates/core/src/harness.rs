//! Command implementations behind the `equiprice` binary: single solves,
//! convergence traces and benchmark sweeps over generated instances.
//!
//! Exit codes: 0 when the solver converged, 2 when it hit the iteration
//! limit, 1 for input errors (reported through `Err`).

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::{random_instance, GenConfig};
use crate::maps::EquilibriumMap;
use crate::model::{validate_instance, DomainKind, InstanceFile};
use crate::solver::{solve_nearest, SolveOptions, StepSchedule, Termination, TraceRow};
use crate::{ModelInstance64, SolveReport64};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ITER_LIMIT: i32 = 2;

/// First iterate of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum StartRule {
    /// Projection of the anchor `p0` onto the price domain.
    #[default]
    Anchor,
    /// Projection of the zero price vector.
    Origin,
}

/// Projection-map step: `auto` uses `mu_F`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EtaChoice {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for EtaChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EtaChoice::Auto);
        }
        s.parse::<f64>()
            .map(EtaChoice::Value)
            .map_err(|_| format!("expected a number or \"auto\", got {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub start: StartRule,
    pub eps: f64,
    pub max_iter: usize,
    pub eta: EtaChoice,
    pub schedule: String,
    pub trace_every: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            start: StartRule::default(),
            eps: 1e-4,
            max_iter: 10_000,
            eta: EtaChoice::Auto,
            schedule: "sqrt".into(),
            trace_every: 10,
        }
    }
}

impl RunSettings {
    fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::from_name(&self.schedule).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown schedule {:?} (available: sqrt)",
                self.schedule
            ))
        })
    }

    fn options(&self, instance: &ModelInstance64) -> SolveOptions<f64> {
        let start = match self.start {
            StartRule::Anchor => instance.domain.project(&instance.p0),
            StartRule::Origin => instance.domain.project(&DVector::zeros(instance.n())),
        };
        SolveOptions {
            start: Some(start),
            eps: self.eps,
            max_iter: self.max_iter,
            trace_every: self.trace_every,
            ..Default::default()
        }
    }
}

/// Parses an instance file and rejects it unless every invariant holds.
pub fn load_instance(path: &Path) -> Result<ModelInstance64> {
    let reader = BufReader::new(File::open(path)?);
    let file: InstanceFile = serde_json::from_reader(reader)?;
    let instance = ModelInstance64::from_file(&file)?;
    let report = validate_instance(&instance);
    if !report.is_valid() {
        let msg: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidInstance(msg.join("; ")));
    }
    Ok(instance)
}

/// Solves one instance with the projection map as oracle.
pub fn run_solve(
    instance: ModelInstance64,
    settings: &RunSettings,
) -> Result<(ModelInstance64, SolveReport64)> {
    let instance = match settings.eta {
        EtaChoice::Auto => instance,
        EtaChoice::Value(eta) => instance.with_eta(eta)?,
    };
    let schedule = settings.schedule()?;
    let report = {
        let mut map = EquilibriumMap::new(&instance);
        solve_nearest(
            &mut map,
            &instance.p0,
            &instance.domain,
            &schedule,
            &settings.options(&instance),
        )?
    };
    Ok((instance, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub termination: String,
    pub final_step_residual: Option<f64>,
    pub final_vi_residual: Option<f64>,
    pub eta: f64,
    pub eps: f64,
    pub schedule: String,
    pub p0_projected: bool,
}

impl ReportFile {
    fn new(instance: &ModelInstance64, report: &SolveReport64, settings: &RunSettings) -> Self {
        Self {
            solution: report.solution.iter().copied().collect(),
            iterations: report.iterations,
            wall_time_s: report.wall_time,
            termination: format!("{:?}", report.termination),
            final_step_residual: report.final_step_residual(),
            final_vi_residual: report.final_vi_residual(),
            eta: instance.constants.eta,
            eps: settings.eps,
            schedule: settings.schedule.clone(),
            p0_projected: instance.p0_projected,
        }
    }
}

fn exit_code(termination: Termination) -> i32 {
    match termination {
        Termination::Converged | Termination::ExactFixedPoint => EXIT_OK,
        Termination::IterLimit => EXIT_ITER_LIMIT,
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["k", "step_residual", "vi_residual", "f_value"])?;
    for row in trace {
        w.write_record([
            row.k.to_string(),
            float(row.step_residual),
            row.vi_residual.map(float).unwrap_or_default(),
            float(row.f_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: FromStr>(record: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    record
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidParameter(format!("bad or missing CSV field {name}")))
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow<f64>>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let vi = record.get(2).unwrap_or("");
        rows.push(TraceRow {
            k: parse_field(&record, 0, "k")?,
            step_residual: parse_field(&record, 1, "step_residual")?,
            vi_residual: if vi.is_empty() {
                None
            } else {
                Some(parse_field(&record, 2, "vi_residual")?)
            },
            f_value: parse_field(&record, 3, "f_value")?,
        });
    }
    Ok(rows)
}

fn with_output<F>(path: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let mut file = io::BufWriter::new(File::create(p)?);
            f(&mut file)?;
            file.flush()?;
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveArgs {
    pub instance: PathBuf,
    /// Report JSON destination; stdout when absent.
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub settings: RunSettings,
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let instance = load_instance(&args.instance)?;
    let (instance, report) = run_solve(instance, &args.settings)?;
    let file = ReportFile::new(&instance, &report, &args.settings);
    with_output(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &file)?;
        writeln!(w)?;
        Ok(())
    })?;
    if let Some(path) = &args.trace {
        write_trace_csv(io::BufWriter::new(File::create(path)?), &report.trace)?;
    }
    Ok(exit_code(report.termination))
}

#[derive(Debug, Clone, Default)]
pub struct TraceArgs {
    pub instance: PathBuf,
    /// Trace CSV destination; stdout when absent.
    pub csv: Option<PathBuf>,
    pub settings: RunSettings,
}

pub fn cmd_trace(args: &TraceArgs) -> Result<i32> {
    let instance = load_instance(&args.instance)?;
    let (_, report) = run_solve(instance, &args.settings)?;
    with_output(args.csv.as_deref(), |w| write_trace_csv(w, &report.trace))?;
    Ok(exit_code(report.termination))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub avg_time_s: f64,
    pub avg_iterations: f64,
    pub trials: usize,
    pub domain: DomainKind,
    pub seed_base: u64,
    /// Per-trial iteration counts, in seed order.
    pub trial_iterations: Vec<usize>,
    pub iter_limit_hits: usize,
}

/// Trial `t` of row `r` uses seed `seed + ROW_SEED_STRIDE·r + t`.
pub const ROW_SEED_STRIDE: u64 = 1_000_003;

/// Generates and solves `trials` instances of size `(n, m)`. Timing covers
/// the solve only, not generation or I/O.
pub fn bench_row(
    n: usize,
    m: usize,
    trials: usize,
    domain: DomainKind,
    seed_base: u64,
    settings: &RunSettings,
    parallel: bool,
) -> Result<BenchRow> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let trial = |t: usize| -> Result<(f64, usize, Termination)> {
        let config = GenConfig::new(n, m, domain, seed_base.wrapping_add(t as u64));
        let instance = random_instance::<f64>(&config)?;
        let (_, report) = run_solve(instance, settings)?;
        Ok((report.wall_time, report.iterations, report.termination))
    };
    let results: Vec<(f64, usize, Termination)> = if parallel {
        (0..trials)
            .into_par_iter()
            .map(trial)
            .collect::<Result<_>>()?
    } else {
        (0..trials).map(trial).collect::<Result<_>>()?
    };
    let total_time: f64 = results.iter().map(|r| r.0).sum();
    let trial_iterations: Vec<usize> = results.iter().map(|r| r.1).collect();
    let total_iter: usize = trial_iterations.iter().sum();
    Ok(BenchRow {
        n,
        m,
        avg_time_s: total_time / trials as f64,
        avg_iterations: total_iter as f64 / trials as f64,
        trials,
        domain,
        seed_base,
        trial_iterations,
        iter_limit_hits: results
            .iter()
            .filter(|r| r.2 == Termination::IterLimit)
            .count(),
    })
}

pub fn write_bench_csv<W: Write>(writer: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["n", "m", "avg_time_s", "avg_iterations", "trials"])?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            row.m.to_string(),
            float(row.avg_time_s),
            float(row.avg_iterations),
            row.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary columns of a bench CSV: `(n, m, avg_time_s, avg_iterations, trials)`.
/// One parsed results-CSV row: `(n, m, avg_time_s, avg_iterations, trials)`.
pub type BenchCsvRow = (usize, usize, f64, f64, usize);

pub fn read_bench_csv<R: Read>(reader: R) -> Result<Vec<BenchCsvRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push((
            parse_field(&record, 0, "n")?,
            parse_field(&record, 1, "m")?,
            parse_field(&record, 2, "avg_time_s")?,
            parse_field(&record, 3, "avg_iterations")?,
            parse_field(&record, 4, "trials")?,
        ));
    }
    Ok(rows)
}

/// Sidecar written next to a bench CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub note: String,
    pub eps: f64,
    pub max_iter: usize,
    pub eta: String,
    pub schedule: String,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub n_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub trials: usize,
    pub domain: DomainKind,
    pub seed: u64,
    /// Results CSV; stdout when absent. A `.meta.json` sidecar is written
    /// next to it.
    pub csv: Option<PathBuf>,
    pub settings: RunSettings,
    pub parallel: bool,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            n_list: vec![5],
            m_list: vec![3],
            trials: 10,
            domain: DomainKind::Orthant,
            seed: 42,
            csv: None,
            settings: RunSettings::default(),
            parallel: false,
        }
    }
}

pub fn bench_rows(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.n_list.is_empty() || args.n_list.len() != args.m_list.len() {
        return Err(Error::InvalidParameter(format!(
            "n and m lists must be nonempty and of equal length (got {} and {})",
            args.n_list.len(),
            args.m_list.len()
        )));
    }
    args.settings.schedule()?;
    args.n_list
        .iter()
        .zip(&args.m_list)
        .enumerate()
        .map(|(r, (&n, &m))| {
            let seed_base = args
                .seed
                .wrapping_add(ROW_SEED_STRIDE.wrapping_mul(r as u64));
            bench_row(
                n,
                m,
                args.trials,
                args.domain,
                seed_base,
                &args.settings,
                args.parallel,
            )
        })
        .collect()
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let rows = bench_rows(args)?;
    with_output(args.csv.as_deref(), |w| write_bench_csv(w, &rows))?;
    for row in rows.iter().filter(|r| r.iter_limit_hits > 0) {
        eprintln!(
            "warning: (n={}, m={}) hit the iteration limit in {} of {} trials",
            row.n, row.m, row.iter_limit_hits, row.trials
        );
    }
    if let Some(path) = &args.csv {
        let meta = BenchMetadata {
            note: "instances are random draws; utility weights, utility floor, box bounds and eta are \
                   chosen by this tool, so averages are not comparable digit-for-digit with other runs \
                   on other data"
                .into(),
            eps: args.settings.eps,
            max_iter: args.settings.max_iter,
            eta: match args.settings.eta {
                EtaChoice::Auto => "auto".into(),
                EtaChoice::Value(v) => v.to_string(),
            },
            schedule: args.settings.schedule.clone(),
            seed: args.seed,
            rows: rows.clone(),
        };
        let mut meta_path = path.clone().into_os_string();
        meta_path.push(".meta.json");
        serde_json::to_writer_pretty(io::BufWriter::new(File::create(meta_path)?), &meta)?;
    }
    Ok(if rows.iter().any(|r| r.iter_limit_hits > 0) {
        EXIT_ITER_LIMIT
    } else {
        EXIT_OK
    })
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub config: GenConfig,
    pub out: Option<PathBuf>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let file = crate::gen::random_instance_file(&args.config)?;
    with_output(args.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &file)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_choice_parses() {
        assert_eq!("auto".parse::<EtaChoice>().unwrap(), EtaChoice::Auto);
        assert_eq!("0.25".parse::<EtaChoice>().unwrap(), EtaChoice::Value(0.25));
        assert!("fast".parse::<EtaChoice>().is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let rows = vec![
            TraceRow {
                k: 1,
                step_residual: 0.1 + 0.2,
                vi_residual: None,
                f_value: 1.0 / 3.0,
            },
            TraceRow {
                k: 2,
                step_residual: 1e-300,
                vi_residual: Some(std::f64::consts::PI),
                f_value: 12.5,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,step_residual,vi_residual,f_value\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn unequal_lists_rejected() {
        let args = BenchArgs {
            n_list: vec![5, 10],
            m_list: vec![3],
            ..Default::default()
        };
        assert!(matches!(cmd_bench(&args), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn unknown_schedule_rejected() {
        let settings = RunSettings {
            schedule: "harmonic".into(),
            ..Default::default()
        };
        let args = BenchArgs {
            settings,
            ..Default::default()
        };
        assert!(cmd_bench(&args).is_err());
    }
}
