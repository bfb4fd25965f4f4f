//! Monte Carlo runner, metrics and result files.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::{run_scheme, SchemeId, SchemeOutcome, TrialData};
use crate::powerctl::in_box;
use crate::scenario::ExperimentConfig;

pub const CSV_HEADER: [&str; 10] = [
    "trial",
    "scheme",
    "K",
    "min_se",
    "success_rate",
    "jain_fairness",
    "runtime_s",
    "ao_iterations",
    "fp_iterations_total",
    "channel_hash",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub trial: u64,
    pub scheme: SchemeId,
    pub uavs: usize,
    pub min_se: f64,
    /// Percent.
    pub success_rate: f64,
    /// Percent.
    pub jain_fairness: f64,
    pub runtime_s: f64,
    pub ao_iterations: usize,
    pub fp_iterations_total: usize,
    pub channel_hash: String,
}

/// Jain's index in percent; the all-zero vector counts as perfectly fair.
pub fn jain_fairness(se: &[f64]) -> f64 {
    let sum: f64 = se.iter().sum();
    let sq: f64 = se.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return 100.0;
    }
    100.0 * sum * sum / (se.len() as f64 * sq)
}

/// Percent of UAVs with `SE >= se_min`.
pub fn success_rate(se: &[f64], se_min: f64) -> f64 {
    if se.is_empty() {
        return 0.0;
    }
    100.0 * se.iter().filter(|&&x| x >= se_min).count() as f64 / se.len() as f64
}

pub fn min_se(se: &[f64]) -> Result<f64> {
    se.iter().copied().reduce(f64::min).ok_or(Error::EmptyVector)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// UAV counts to sweep.
    pub uavs: Vec<usize>,
    pub schemes: Vec<SchemeId>,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Keep per-link draws for a debug dump.
    pub keep_links: bool,
}

impl RunOptions {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            uavs: vec![config.num_uavs],
            schemes: SchemeId::ALL.to_vec(),
            threads: 0,
            keep_links: false,
        }
    }
}

/// Facts about one scheme run that the metrics do not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDigest {
    pub trial: u64,
    pub scheme: SchemeId,
    pub uavs: usize,
    pub se: Vec<f64>,
    pub association_ok: bool,
    pub powers_in_box: bool,
    /// Best-so-far objective per alternation step, empty for one-shot schemes.
    pub best_so_far: Vec<f64>,
    /// Objective after the first alternation step.
    pub first_objective: Option<f64>,
    pub max_probe_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: u64,
    pub uavs: usize,
    pub scheme: Option<SchemeId>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRow {
    pub trial: u64,
    pub uavs: usize,
    pub uav: usize,
    pub oru: usize,
    pub d_3d: f64,
    pub los_probability: f64,
    pub is_los: bool,
    pub path_loss_db: f64,
    pub shadow_db: f64,
    pub beta: f64,
    pub rician_k_linear: f64,
    pub angular_spread_deg: f64,
    pub pilot: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MonteCarloReport {
    /// Sorted by (K, trial, scheme).
    pub records: Vec<MetricsRecord>,
    pub digests: Vec<OutcomeDigest>,
    pub failures: Vec<TrialFailure>,
    pub links: Vec<LinkRow>,
}

impl MonteCarloReport {
    /// Records whose SE vector was all zero, where Jain's index falls back to 100.
    pub fn degenerate_jain(&self) -> Vec<(u64, SchemeId, usize)> {
        self.digests
            .iter()
            .filter(|d| d.se.iter().all(|&x| x == 0.0))
            .map(|d| (d.trial, d.scheme, d.uavs))
            .collect()
    }
}

struct TrialOutput {
    records: Vec<MetricsRecord>,
    digests: Vec<OutcomeDigest>,
    failures: Vec<TrialFailure>,
    links: Vec<LinkRow>,
}

fn link_rows(data: &TrialData) -> Vec<LinkRow> {
    let uavs = data.uavs();
    let orus = data.beta.orus();
    (0..uavs)
        .flat_map(|k| (0..orus).map(move |l| (k, l)))
        .map(|(k, l)| {
            let d = &data.links[(k, l)];
            LinkRow {
                trial: data.trial,
                uavs,
                uav: k,
                oru: l,
                d_3d: d.geometry.d_3d,
                los_probability: d.los_probability,
                is_los: d.large_scale.is_los,
                path_loss_db: d.large_scale.path_loss_db,
                shadow_db: d.large_scale.shadow_db,
                beta: d.large_scale.beta,
                rician_k_linear: d.large_scale.rician_k_linear,
                angular_spread_deg: d.angular_spread_deg,
                pilot: data.pilots.pilot_of[k],
            }
        })
        .collect()
}

fn digest(data: &TrialData, out: &SchemeOutcome, config: &ExperimentConfig) -> OutcomeDigest {
    OutcomeDigest {
        trial: data.trial,
        scheme: out.scheme,
        uavs: data.uavs(),
        se: out.se.se.clone(),
        association_ok: out.association.satisfies_constraints(config.pilot_len),
        powers_in_box: in_box(&out.powers, data.p_max),
        best_so_far: out.trace.best_so_far(),
        first_objective: out.trace.iterates.first().map(|it| it.objective),
        max_probe_gap: out.power_result.as_ref().map(|r| r.max_probe_gap),
    }
}

fn run_trial(config: &ExperimentConfig, trial: u64, schemes: &[SchemeId], keep_links: bool) -> TrialOutput {
    let uavs = config.num_uavs;
    let mut output = TrialOutput {
        records: Vec::new(),
        digests: Vec::new(),
        failures: Vec::new(),
        links: Vec::new(),
    };
    let data = match TrialData::prepare(config, trial) {
        Ok(d) => d,
        Err(e) => {
            output.failures.push(TrialFailure {
                trial,
                uavs,
                scheme: None,
                message: e.to_string(),
            });
            return output;
        }
    };
    if keep_links {
        output.links = link_rows(&data);
    }
    let hash = data.channel_hash();
    for &scheme in schemes {
        let start = Instant::now();
        let result = run_scheme(scheme, &data, config);
        let runtime_s = start.elapsed().as_secs_f64();
        match result.and_then(|out| Ok((min_se(&out.se.se)?, out))) {
            Ok((min, out)) => {
                output.records.push(MetricsRecord {
                    trial,
                    scheme,
                    uavs,
                    min_se: min,
                    success_rate: success_rate(&out.se.se, config.se_min),
                    jain_fairness: jain_fairness(&out.se.se),
                    runtime_s,
                    ao_iterations: out.ao_iterations(),
                    fp_iterations_total: out.fp_iterations_total,
                    channel_hash: hash.clone(),
                });
                output.digests.push(digest(&data, &out, config));
            }
            Err(e) => output.failures.push(TrialFailure {
                trial,
                uavs,
                scheme: Some(scheme),
                message: e.to_string(),
            }),
        }
    }
    output
}

/// Runs every (K, trial) job, each scheme on the same draws. Results do not
/// depend on the thread count.
pub fn run_monte_carlo(config: &ExperimentConfig, options: &RunOptions) -> Result<MonteCarloReport> {
    config.validate()?;
    if options.uavs.is_empty() || options.schemes.is_empty() {
        return Err(Error::InvalidConfig("need at least one UAV count and one scheme".into()));
    }
    let configs: Vec<ExperimentConfig> = options
        .uavs
        .iter()
        .map(|&k| {
            let c = ExperimentConfig {
                num_uavs: k,
                ..config.clone()
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..config.trials as u64).map(move |t| (c, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outputs: Vec<TrialOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, t)| run_trial(&configs[c], t, &options.schemes, options.keep_links))
            .collect()
    });
    let mut report = MonteCarloReport::default();
    for out in outputs {
        report.records.extend(out.records);
        report.digests.extend(out.digests);
        report.failures.extend(out.failures);
        report.links.extend(out.links);
    }
    report.records.sort_by_key(|r| (r.uavs, r.trial, r.scheme));
    report.digests.sort_by_key(|d| (d.uavs, d.trial, d.scheme));
    report.failures.sort_by_key(|f| (f.uavs, f.trial, f.scheme));
    Ok(report)
}

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// `runs.csv` -> `runs.<suffix>`.
pub fn companion_path(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Writes the per-record CSV.
pub fn write_records(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(io_err(path))?);
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.trial.to_string(),
            r.scheme.label().to_string(),
            r.uavs.to_string(),
            num(r.min_se),
            num(r.success_rate),
            num(r.jain_fairness),
            num(r.runtime_s),
            r.ao_iterations.to_string(),
            r.fp_iterations_total.to_string(),
            r.channel_hash.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-(scheme, K) mean and standard error of each metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub uavs: usize,
    pub trials: usize,
    /// (mean, standard error) per metric, in `SUMMARY_METRICS` order.
    pub stats: Vec<(f64, f64)>,
}

pub const SUMMARY_METRICS: [&str; 6] = [
    "min_se",
    "success_rate",
    "jain_fairness",
    "runtime_s",
    "ao_iterations",
    "fp_iterations_total",
];

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(SchemeId, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scheme, r.uavs)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((scheme, uavs), rs)| {
            let columns: [fn(&MetricsRecord) -> f64; 6] = [
                |r| r.min_se,
                |r| r.success_rate,
                |r| r.jain_fairness,
                |r| r.runtime_s,
                |r| r.ao_iterations as f64,
                |r| r.fp_iterations_total as f64,
            ];
            let stats = columns
                .iter()
                .map(|f| mean_and_stderr(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()))
                .collect();
            SummaryRow {
                scheme,
                uavs,
                trials: rs.len(),
                stats,
            }
        })
        .collect()
}

pub fn write_summary(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(io_err(path))?);
    let mut header = vec!["scheme".to_string(), "K".to_string(), "trials".to_string()];
    for m in SUMMARY_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in summarize(records) {
        let mut fields = vec![row.scheme.label().to_string(), row.uavs.to_string(), row.trials.to_string()];
        for (mean, se) in row.stats {
            fields.push(num(mean));
            fields.push(num(se));
        }
        w.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Records CSV plus the `.summary.csv` aggregate next to it.
pub fn write_results(records: &[MetricsRecord], path: &Path) -> Result<()> {
    write_records(records, path)?;
    write_summary(records, &companion_path(path, "summary.csv"))
}

#[derive(Serialize)]
struct Meta<'a> {
    paired_evaluation: bool,
    pairing: &'static str,
    records: usize,
    uavs: &'a [usize],
    schemes: Vec<&'static str>,
    degenerate_jain: Vec<DegenerateJain>,
    failures: &'a [TrialFailure],
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct DegenerateJain {
    trial: u64,
    scheme: &'static str,
    uavs: usize,
}

pub fn write_meta(report: &MonteCarloReport, config: &ExperimentConfig, options: &RunOptions, path: &Path) -> Result<()> {
    let meta = Meta {
        paired_evaluation: true,
        pairing: "every scheme of a trial sees the same topology, channel draws and estimates",
        records: report.records.len(),
        uavs: &options.uavs,
        schemes: options.schemes.iter().map(|s| s.label()).collect(),
        degenerate_jain: report
            .degenerate_jain()
            .into_iter()
            .map(|(trial, scheme, uavs)| DegenerateJain {
                trial,
                scheme: scheme.label(),
                uavs,
            })
            .collect(),
        failures: &report.failures,
        config,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn write_links(rows: &[LinkRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(io_err(path))?);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        message: format!("bad {} field on line {}", CSV_HEADER[i], rec.position().map_or(0, |p| p.line())),
    })
}

/// Reads a records CSV written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(File::open(path).map_err(io_err(path))?);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "unexpected header".into(),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            Ok(MetricsRecord {
                trial: field(&rec, 0, path)?,
                scheme: field(&rec, 1, path)?,
                uavs: field(&rec, 2, path)?,
                min_se: field(&rec, 3, path)?,
                success_rate: field(&rec, 4, path)?,
                jain_fairness: field(&rec, 5, path)?,
                runtime_s: field(&rec, 6, path)?,
                ao_iterations: field(&rec, 7, path)?,
                fp_iterations_total: field(&rec, 8, path)?,
                channel_hash: field(&rec, 9, path)?,
            })
        })
        .collect()
}
