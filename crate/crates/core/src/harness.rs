//! Experiment orchestration: TOML configs, dispatch to the experiment
//! modules, atomic result files and a reproducibility manifest.

pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse_grain::{
    animal_occupancy_check, chi_upper_probe, occupied_cost_bound_check, reassert_animal_bound,
    supermartingale_step_check, OccupancySetup,
};
use crate::concentration::{
    compare_restricted, entropy_suite, martingale_diagnostics, psi_herbst, rank_one_verify, tail_experiment,
    truncation_gap, variance_probe, EntropySetup, MartingaleSetup, TailSetup, TailSide,
};
use crate::error::{Error, Result};
use crate::lattice::{
    count_fixed_animals_bruteforce, enumerate_animals, AnimalCaps, AnimalSpec, BoxRegion, Connectivity, LatticePoint,
    Region,
};
use crate::lyapunov::{check_norm_properties, estimate_alpha};
use crate::mc_oracle::{enumerate_paths, sample_crossings, sample_walk_weight};
use crate::potential::{sample_field, write_field, DistributionSpec, PotentialField};
use crate::seed::{self, tag};
use crate::solver::{default_box, travel_weight_with, Fault, SolveOptions};

/// Bumped whenever a CSV column set changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one assertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Exact checks must never fail; statistical ones are reproducible at the
    /// configured seed but carry sampling error.
    pub exact: bool,
    pub detail: String,
}

impl Check {
    pub fn exact(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), passed, exact: true, detail: detail.into() }
    }

    pub fn statistical(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), passed, exact: false, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Lyapunov,
    Tails,
    Compare,
    Truncate,
    Perturb,
    Entropy,
    Psi,
    Animals,
    Chi,
    OracleCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Solve,
        Experiment::Lyapunov,
        Experiment::Tails,
        Experiment::Compare,
        Experiment::Truncate,
        Experiment::Perturb,
        Experiment::Entropy,
        Experiment::Psi,
        Experiment::Animals,
        Experiment::Chi,
        Experiment::OracleCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Lyapunov => "lyapunov",
            Experiment::Tails => "tails",
            Experiment::Compare => "compare",
            Experiment::Truncate => "truncate",
            Experiment::Perturb => "perturb",
            Experiment::Entropy => "entropy",
            Experiment::Psi => "psi",
            Experiment::Animals => "animals",
            Experiment::Chi => "chi",
            Experiment::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub d: Option<usize>,
    /// Endpoint `x` (target of solves).
    pub x: Option<Vec<i64>>,
    pub direction: Option<Vec<i64>>,
    pub box_factor: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<i64>,
    pub l: Option<i64>,
    #[serde(rename = "N")]
    pub n: Option<i64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    /// Explicit region as a box (`lo` inclusive, `hi` exclusive) ...
    pub lo: Option<Vec<i64>>,
    pub hi: Option<Vec<i64>>,
    /// ... or as a site list.
    pub sites: Option<Vec<Vec<i64>>>,
    pub source: Option<Vec<i64>>,
    pub taboo: Option<Vec<Vec<i64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub samples: Option<usize>,
    pub n_grid: Option<Vec<i64>>,
    pub t_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    pub side: Option<TailSide>,
    pub alpha_ref: Option<f64>,
    /// Box factors for `compare`.
    pub box_factor_grid: Option<Vec<f64>>,
    /// `n` values for the variance probe run alongside `tails`.
    pub variance_n: Option<Vec<i64>>,
    pub x_grid: Option<Vec<Vec<i64>>>,
    pub nested_samples: Option<usize>,
    pub c_const: Option<f64>,
    pub mc_samples: Option<usize>,
    pub trials: Option<usize>,
    pub l_cap: Option<usize>,
    pub p_occupied: Option<f64>,
    pub norm_properties: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { directory: None, formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// Cases to run; `None` means the default battery.
    pub battery: Option<Vec<String>>,
    /// Corrupt one diagonal entry of every solve (mutation test).
    #[serde(default)]
    pub fault_injection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub spec: DistributionSpec,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "<document>".to_string(), |s| format!("bytes {}..{}", s.start, s.end));
            Error::config(field, e.message().to_string())
        })?;
        cfg.spec.validate().map_err(|e| Error::config("spec", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical (sorted-key JSON) form of the config.
    /// The output directory is not part of the hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output.directory = None;
        Ok(hex(&Sha256::digest(output::json_bytes(&c)?)))
    }

    fn point(&self, field: &str, v: &Option<Vec<i64>>) -> Result<LatticePoint> {
        let v = v.as_ref().ok_or_else(|| Error::config(field, format!("required for {}", self.experiment.name())))?;
        LatticePoint::try_new(v).map_err(|e| Error::config(field, e.to_string()))
    }

    fn x(&self) -> Result<LatticePoint> {
        self.point("geometry.x", &self.geometry.x)
    }

    fn d(&self) -> Result<usize> {
        if let Some(d) = self.geometry.d {
            if d < 2 {
                return Err(Error::config("geometry.d", "need d >= 2"));
            }
            return Ok(d);
        }
        if let Some(x) = &self.geometry.x {
            return Ok(x.len());
        }
        Err(Error::config("geometry.d", format!("required for {}", self.experiment.name())))
    }

    fn samples(&self) -> Result<usize> {
        self.sampling
            .samples
            .ok_or_else(|| Error::config("sampling.samples", format!("required for {}", self.experiment.name())))
    }

    fn box_factor(&self) -> f64 {
        self.geometry.box_factor.unwrap_or(2.0)
    }

    fn required<T: Clone>(&self, field: &str, v: &Option<T>) -> Result<T> {
        v.clone().ok_or_else(|| Error::config(field, format!("required for {}", self.experiment.name())))
    }

    fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; overrides the config.
    pub out: Option<PathBuf>,
    /// Worker threads; never changes results.
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub override_assumptions: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub config_hash: String,
    pub code_version: String,
    pub schema_version: u32,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub runtime_seconds: f64,
    pub assertions: Vec<Check>,
    pub files: Vec<FileEntry>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn exact_failures(&self) -> Vec<&Check> {
        self.assertions.iter().filter(|c| c.exact && !c.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|c| c.passed)
    }
}

// What an experiment hands back to the runner.
#[derive(Default)]
struct Outcome {
    csv: Vec<(String, Vec<u8>)>,
    json: Vec<(String, serde_json::Value)>,
    extra: Vec<(String, Vec<u8>)>,
    fields: Vec<(String, PotentialField)>,
    checks: Vec<Check>,
    stage_seeds: BTreeMap<String, u64>,
    warnings: Vec<String>,
}

impl Outcome {
    fn stage(&mut self, name: &str, base: u64, label: u64) -> u64 {
        let s = seed::derive(base, &[label]);
        self.stage_seeds.insert(name.to_string(), s);
        s
    }
}

/// Run an experiment, write its files and manifest, and return the manifest.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut config = config.clone();
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if let Some(dir) = &opts.out {
        config.output.directory = Some(dir.clone());
    }
    let out_dir = config.output.directory.clone().unwrap_or_else(|| PathBuf::from("out"));
    for f in &config.output.formats {
        if f != "csv" && f != "json" {
            return Err(Error::config("output.formats", format!("unknown format {f:?}")));
        }
    }
    let threads = opts.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let t0 = Instant::now();
    let outcome = pool.install(|| dispatch(&config, opts.override_assumptions))?;
    let runtime_seconds = t0.elapsed().as_secs_f64();

    fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();
    let mut record = |name: String, bytes: &[u8]| -> Result<()> {
        output::write_atomic(&out_dir.join(&name), bytes)?;
        files.push(FileEntry { path: name, bytes: bytes.len(), sha256: hex(&Sha256::digest(bytes)) });
        Ok(())
    };
    if config.wants("csv") {
        for (name, bytes) in &outcome.csv {
            record(format!("{name}.csv"), bytes)?;
        }
    }
    if config.wants("json") {
        for (name, value) in &outcome.json {
            record(format!("{name}.json"), &output::json_bytes(value)?)?;
        }
    }
    for (name, bytes) in &outcome.extra {
        record(name.clone(), bytes)?;
    }
    for (name, field) in &outcome.fields {
        let stem = out_dir.join(name);
        write_field(field, &stem)?;
        for ext in ["field", "json"] {
            let p = stem.with_extension(ext);
            let bytes = fs::read(&p)?;
            files.push(FileEntry {
                path: format!("{name}.{ext}"),
                bytes: bytes.len(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
    }
    let manifest = RunManifest {
        experiment: config.experiment,
        config_hash: config.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        stage_seeds: outcome.stage_seeds,
        threads,
        runtime_seconds,
        assertions: outcome.checks,
        files,
        warnings: outcome.warnings,
    };
    output::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn dispatch(cfg: &ExperimentConfig, override_assumptions: bool) -> Result<Outcome> {
    let mut o = Outcome::default();
    let seed = cfg.seed;
    match cfg.experiment {
        Experiment::Solve => {
            let x = cfg.x()?;
            let d = x.dim();
            let region = config_region(cfg, &x)?;
            let source = match &cfg.geometry.source {
                Some(s) => cfg.point("geometry.source", &Some(s.clone()))?,
                None => LatticePoint::origin(d),
            };
            let taboo: Vec<LatticePoint> = cfg
                .geometry
                .taboo
                .iter()
                .flatten()
                .map(|t| LatticePoint::try_new(t).map_err(|e| Error::config("geometry.taboo", e.to_string())))
                .collect::<Result<_>>()?;
            let fs = o.stage("field", seed, tag::FIELD);
            let field = sample_field(&cfg.spec, region.bbox(), fs)?;
            let res = travel_weight_with(&field, &region, &source, &x, &taboo, &SolveOptions::default())?;
            o.csv.push(("solve".into(), res.to_csv()?));
            let mut header = res.header_json();
            header["source"] = serde_json::json!(source.coords());
            header["e_source"] = serde_json::json!(res.e_value(&source));
            header["cost"] = serde_json::json!(res.cost_at(&source));
            o.json.push(("solve".into(), header));
            o.checks.push(Check::exact(
                "residual within tolerance",
                res.residual() <= 1e-12,
                format!("{:e}", res.residual()),
            ));
        }
        Experiment::Lyapunov => {
            let dir = cfg.point("geometry.direction", &cfg.geometry.direction)?;
            let n_grid = cfg.required("sampling.n_grid", &cfg.sampling.n_grid)?;
            let samples = cfg.samples()?;
            let s = o.stage("lyapunov", seed, 1);
            let est = estimate_alpha(&cfg.spec, &dir, &n_grid, samples, cfg.box_factor(), s)?;
            o.csv.push(("lyapunov".into(), est.to_csv()?));
            o.json.push(("lyapunov".into(), est.summary_json()));
            o.checks.push(Check::exact(
                "per-n means nonnegative",
                est.per_n.iter().all(|r| r.mean >= 0.0),
                String::new(),
            ));
            o.checks.push(Check::statistical("alpha within moment band", est.band_ok, format!("{}", est.alpha_hat)));
            o.warnings.extend(est.warnings.clone());
            if cfg.sampling.norm_properties.unwrap_or(false) {
                let s = o.stage("norm", seed, 2);
                let rep = check_norm_properties(&cfg.spec, dir.dim(), &n_grid, samples, cfg.box_factor(), s)?;
                o.csv.push(("norm".into(), rep.to_csv()?));
                o.json.push(("norm".into(), serde_json::to_value(&rep.comparisons)?));
                o.checks.extend(rep.checks());
            }
        }
        Experiment::Tails => {
            let x = cfg.x()?;
            let setup = TailSetup {
                x: x.clone(),
                side: cfg.required("sampling.side", &cfg.sampling.side)?,
                samples: cfg.samples()?,
                t_grid: cfg.required("sampling.t_grid", &cfg.sampling.t_grid)?,
                box_factor: cfg.box_factor(),
                alpha_ref: cfg.sampling.alpha_ref,
                seed: o.stage("tails", seed, 1),
            };
            let rep = tail_experiment(&cfg.spec, &setup, override_assumptions)?;
            o.csv.push(("tails".into(), rep.to_csv()?));
            o.json.push((
                "tails".into(),
                serde_json::json!({
                    "side": rep.side,
                    "centered_by": rep.centered_by,
                    "mean_se": rep.mean_se,
                    "alpha_ref": rep.alpha_ref,
                    "fit_c": rep.fit_c,
                    "fit_prefactor": rep.fit_prefactor,
                    "shape_corr": rep.shape_corr,
                    "checks": rep.checks,
                    "warnings": rep.warnings,
                }),
            ));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
            if let Some(ns) = &cfg.sampling.variance_n {
                let dir = cfg
                    .geometry
                    .direction
                    .as_ref()
                    .map_or_else(|| Ok(LatticePoint::unit(x.dim(), 0, 1)), |v| LatticePoint::try_new(v))?;
                let s = o.stage("variance", seed, 2);
                let probe = variance_probe(&cfg.spec, &dir, ns, cfg.samples()?, cfg.box_factor(), 2.5, s)?;
                o.csv.push(("variance".into(), probe.to_csv()?));
                o.json.push(("variance".into(), serde_json::to_value(&probe)?));
                o.checks.push(Check::statistical("variance ratio <= 2.5", probe.passed, format!("{}", probe.ratio)));
            }
        }
        Experiment::Compare => {
            let x = cfg.x()?;
            let factors = cfg.required("sampling.box_factor_grid", &cfg.sampling.box_factor_grid)?;
            let s = o.stage("compare", seed, 1);
            let rep = compare_restricted(&cfg.spec, &x, &factors, cfg.samples()?, s)?;
            o.csv.push(("compare".into(), rep.to_csv()?));
            o.json.push(("compare".into(), serde_json::json!({ "pairs": rep.pairs, "checks": rep.checks })));
            o.checks.extend(rep.checks);
        }
        Experiment::Truncate => {
            let x = cfg.x()?;
            let gamma = cfg.required("geometry.gamma", &cfg.geometry.gamma)?;
            let s = o.stage("truncate", seed, 1);
            let rep = truncation_gap(&cfg.spec, &x, gamma, cfg.samples()?, cfg.box_factor(), s, override_assumptions)?;
            o.csv.push(("truncate".into(), rep.to_csv()?));
            o.json.push((
                "truncate".into(),
                serde_json::json!({
                    "cap": rep.cap,
                    "active": rep.active,
                    "min_gap": rep.min_gap,
                    "violations": rep.violations,
                    "fit_rate": rep.fit_rate,
                    "reference_rate": rep.reference_rate,
                }),
            ));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
        }
        Experiment::Perturb => {
            let x = cfg.x()?;
            let trials = cfg
                .sampling
                .trials
                .or(cfg.sampling.samples)
                .ok_or_else(|| Error::config("sampling.trials", "required for perturb"))?;
            let s = o.stage("rank_one", seed, 1);
            let rep = rank_one_verify(&cfg.spec, &x, trials, cfg.box_factor(), s)?;
            o.csv.push(("perturb".into(), rep.to_csv()?));
            o.json.push((
                "perturb".into(),
                serde_json::json!({
                    "return_probability": rep.return_probability,
                    "violations": rep.violations,
                }),
            ));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
            if let Some(ns) = cfg.sampling.nested_samples {
                let setup = MartingaleSetup {
                    x,
                    box_factor: cfg.box_factor(),
                    gamma: cfg.required("geometry.gamma", &cfg.geometry.gamma)?,
                    nested_samples: ns,
                    c_const: cfg.sampling.c_const.unwrap_or(1.0),
                    seed: o.stage("martingale", seed, 2),
                };
                let m = martingale_diagnostics(&cfg.spec, &setup, override_assumptions)?;
                o.csv.push(("martingale".into(), m.to_csv()?));
                o.json.push((
                    "martingale".into(),
                    serde_json::json!({
                        "a_hat": m.a_hat,
                        "telescoped_sum": m.telescoped_sum,
                        "reference_mean": m.reference_mean,
                        "reference_se": m.reference_se,
                        "u_sum": m.u_sum,
                        "max_abs_delta": m.max_abs_delta,
                        "fitted_const": m.fitted_const,
                    }),
                ));
                o.checks.extend(m.checks);
                o.warnings.extend(m.warnings);
            }
        }
        Experiment::Entropy => {
            let setup = EntropySetup {
                x: cfg.x()?,
                lambda_grid: cfg.required("sampling.lambda_grid", &cfg.sampling.lambda_grid)?,
                environments: cfg.samples()?,
                box_factor: cfg.box_factor(),
                mc_samples: cfg.sampling.mc_samples.unwrap_or(0),
                seed: o.stage("entropy", seed, 1),
            };
            let rep = entropy_suite(&cfg.spec, &setup, override_assumptions)?;
            o.csv.push(("entropy".into(), rep.to_csv()?));
            o.json
                .push(("entropy".into(), serde_json::json!({ "implied": rep.implied, "violations": rep.violations })));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
        }
        Experiment::Psi => {
            let xs: Vec<LatticePoint> = cfg
                .required("sampling.x_grid", &cfg.sampling.x_grid)?
                .iter()
                .map(|v| LatticePoint::try_new(v).map_err(|e| Error::config("sampling.x_grid", e.to_string())))
                .collect::<Result<_>>()?;
            let lambdas = cfg.required("sampling.lambda_grid", &cfg.sampling.lambda_grid)?;
            let s = o.stage("psi", seed, 1);
            let rep = psi_herbst(&cfg.spec, &xs, &lambdas, cfg.samples()?, cfg.box_factor(), s, override_assumptions)?;
            o.csv.push(("psi".into(), rep.to_csv()?));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
        }
        Experiment::Animals => {
            let d = cfg.d()?;
            let caps = AnimalCaps::default();
            let l_cap = cfg.sampling.l_cap.unwrap_or(5).min(caps.cap(d));
            let mut rows = Vec::new();
            let mut counts_ok = true;
            for l in 1..=l_cap {
                let free = enumerate_animals(
                    &AnimalSpec { dimension: d, size: l, connectivity: Connectivity::L1, anchored: false },
                    &caps,
                )?
                .count();
                let anchored = enumerate_animals(
                    &AnimalSpec { dimension: d, size: l, connectivity: Connectivity::L1, anchored: true },
                    &caps,
                )?
                .count();
                let brute = if l <= 5 { Some(count_fixed_animals_bruteforce(d, l, Connectivity::L1)) } else { None };
                counts_ok &= brute.is_none_or(|b| b == free)
                    && anchored == l * free
                    && (free as f64) < 4f64.powi((d * l) as i32);
                rows.push(vec![
                    l.to_string(),
                    free.to_string(),
                    anchored.to_string(),
                    brute.map_or_else(String::new, |b| b.to_string()),
                ]);
            }
            let header = ["size", "unanchored", "anchored", "flood_fill"].map(String::from);
            o.csv.push(("animal_counts".into(), output::csv_bytes(&header, rows)?));
            o.checks.push(Check::exact("animal counts match the flood-fill oracle", counts_ok, String::new()));
            if let Some(samples) = cfg.sampling.samples {
                let setup = OccupancySetup {
                    d,
                    m: cfg.geometry.m.unwrap_or(1),
                    kappa: cfg.geometry.kappa.unwrap_or_else(|| cfg.spec.default_kappa()),
                    l_cap,
                    samples,
                    seed: o.stage("occupancy", seed, 1),
                    p_occupied: cfg.sampling.p_occupied,
                    caps,
                };
                let rep = animal_occupancy_check(&cfg.spec, &setup)?;
                o.csv.push(("occupancy".into(), rep.to_csv()?));
                o.json.push(("occupancy".into(), serde_json::json!({ "p": rep.p, "slope": rep.slope })));
                o.checks.extend(rep.checks);
            }
        }
        Experiment::Chi => {
            let d = cfg.d()?;
            let l = cfg.required("geometry.l", &cfg.geometry.l)?;
            let kappa = cfg.geometry.kappa.unwrap_or_else(|| cfg.spec.default_kappa());
            let n = cfg.samples()?;
            let probe = chi_upper_probe(&cfg.spec, d, l, kappa, n, o.stage("chi_probe", seed, 1))?;
            o.csv.push(("chi".into(), probe.to_csv()?));
            o.json.push(("chi".into(), serde_json::json!({
                "value": probe.value,
                "canonical": probe.canonical,
                "sampled_max": probe.sampled_max,
                "note": "chi is the maximum over single-site minimal configurations; the functional is monotone in the potential",
            })));
            for (i, w) in probe.witnesses.iter().enumerate() {
                o.fields.push((format!("chi_witness_{i}"), w.clone()));
            }
            o.checks.extend(probe.checks.clone());
            let trials = cfg.sampling.trials.unwrap_or(n);
            let step =
                supermartingale_step_check(&cfg.spec, d, l, kappa, probe.value, trials, o.stage("step", seed, 2))?;
            o.csv.push(("supermartingale".into(), step.to_csv()?));
            o.checks.extend(step.checks);
            if let Some(m) = cfg.geometry.m {
                let occ = occupied_cost_bound_check(&cfg.spec, d, m, kappa, trials, o.stage("occupied", seed, 3))?;
                o.csv.push(("occupied_bound".into(), occ.to_csv()?));
                o.checks.extend(occ.checks);
            }
            if let Some(x) = &cfg.geometry.x {
                let x = LatticePoint::try_new(x).map_err(|e| Error::config("geometry.x", e.to_string()))?;
                let region = Region::from_box(default_box(&x, cfg.box_factor()));
                let fs = o.stage("crossing_field", seed, 4);
                let field = sample_field(&cfg.spec, region.bbox(), fs)?;
                let sample = sample_crossings(&field, &region, &x, l, trials, o.stage("crossings", seed, 5))?;
                o.extra.push(("crossings.jsonl".into(), sample.trace_dump()?.into_bytes()));
                o.checks.push(reassert_animal_bound(&sample, d));
            }
        }
        Experiment::OracleCheck => {
            let spec = cfg.oracle.clone().unwrap_or(OracleSpec { battery: None, fault_injection: false });
            let rep = oracle_check(&spec, o.stage("oracle", seed, 1))?;
            let header = ["case", "instance", "passed", "exact", "detail"].map(String::from);
            o.csv.push((
                "oracle".into(),
                output::csv_bytes(
                    &header,
                    rep.rows.iter().map(|r| {
                        vec![
                            r.case.clone(),
                            r.instance.to_string(),
                            r.passed.to_string(),
                            r.exact.to_string(),
                            r.detail.clone(),
                        ]
                    }),
                )?,
            ));
            o.checks.extend(rep.checks);
            o.warnings.extend(rep.warnings);
        }
    }
    Ok(o)
}

fn config_region(cfg: &ExperimentConfig, x: &LatticePoint) -> Result<Region> {
    let g = &cfg.geometry;
    if let Some(sites) = &g.sites {
        let pts: Vec<LatticePoint> = sites
            .iter()
            .map(|s| LatticePoint::try_new(s).map_err(|e| Error::config("geometry.sites", e.to_string())))
            .collect::<Result<_>>()?;
        return Region::from_sites(&pts).map_err(|e| Error::config("geometry.sites", e.to_string()));
    }
    match (&g.lo, &g.hi) {
        (Some(lo), Some(hi)) => {
            let b = BoxRegion::new(
                LatticePoint::try_new(lo).map_err(|e| Error::config("geometry.lo", e.to_string()))?,
                LatticePoint::try_new(hi).map_err(|e| Error::config("geometry.hi", e.to_string()))?,
            )
            .map_err(|e| Error::config("geometry.lo", e.to_string()))?;
            Ok(Region::from_box(b))
        }
        (None, None) => Ok(Region::from_box(default_box(x, cfg.box_factor()))),
        _ => Err(Error::config("geometry.hi", "lo and hi must be given together")),
    }
}

/// One line of the oracle battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub case: String,
    pub instance: usize,
    pub passed: bool,
    pub exact: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exact_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.exact).all(|c| c.passed)
    }
}

pub const DEFAULT_BATTERY: [&str; 3] = ["sandwich", "monte_carlo", "hand_values"];

/// Law used by the oracle battery.
pub fn battery_spec() -> DistributionSpec {
    DistributionSpec::TwoPoint { v_lo: 0.2, v_hi: 1.0, p_hi: 0.5 }
}

// A random planar box containing 0 with extents in 3..=max_ext, and a target.
fn battery_instance(seed: u64, k: u64, max_ext: i64) -> Result<(PotentialField, Region, LatticePoint)> {
    let mut rng = seed::rng_for(seed, &[tag::TRIAL, k]);
    let ext: Vec<i64> = (0..2).map(|_| rng.random_range(3..=max_ext)).collect();
    let lo: Vec<i64> = ext.iter().map(|&e| -rng.random_range(0..e)).collect();
    let hi: Vec<i64> = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
    let bx = BoxRegion::new(LatticePoint::new(lo), LatticePoint::new(hi))?;
    let x = loop {
        let p = bx.point_at(rng.random_range(0..bx.site_count()));
        if !p.is_origin() {
            break p;
        }
    };
    let field = sample_field(&battery_spec(), &bx, seed::derive(seed, &[tag::FIELD, k]))?;
    Ok((field, Region::from_box(bx), x))
}

/// Solver against independent oracles. Cases: `sandwich` (25 instances,
/// exact path sums to length 24), `monte_carlo` (10 instances, 10^5 walks,
/// at least 9 within 4 standard errors), `hand_values` (1/4 and 4/15).
pub fn oracle_check(spec: &OracleSpec, seed: u64) -> Result<OracleReport> {
    let battery: Vec<String> =
        spec.battery.clone().unwrap_or_else(|| DEFAULT_BATTERY.iter().map(|s| s.to_string()).collect());
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    if battery.is_empty() {
        warnings.push("empty oracle battery: nothing was checked".to_string());
    }
    let opts_for = |site: LatticePoint| SolveOptions {
        fault: spec.fault_injection.then_some(Fault { site, diag_factor: 2.0 }),
        ..SolveOptions::default()
    };
    for case in &battery {
        match case.as_str() {
            "sandwich" => {
                let res: Vec<OracleRow> = (0..25u64)
                    .into_par_iter()
                    .map(|k| {
                        let (field, region, x) = battery_instance(seed, k, 7)?;
                        let o = LatticePoint::origin(2);
                        let e = travel_weight_with(&field, &region, &o, &x, &[], &opts_for(o.clone()))?.e_value(&o);
                        let pe = enumerate_paths(&field, &region, &x, &[], 24)?;
                        let passed = e >= pe.partial_weight * (1.0 - 1e-12)
                            && e <= (pe.partial_weight + pe.remainder_bound) * (1.0 + 1e-12);
                        Ok(OracleRow {
                            case: case.clone(),
                            instance: k as usize,
                            passed,
                            exact: true,
                            detail: format!(
                                "e {e:e} partial {:e} remainder {:e}",
                                pe.partial_weight, pe.remainder_bound
                            ),
                        })
                    })
                    .collect::<Result<_>>()?;
                let bad = res.iter().filter(|r| !r.passed).count();
                checks.push(Check::exact("solver within path-sum sandwich", bad == 0, format!("{bad} of 25 outside")));
                rows.extend(res);
            }
            "monte_carlo" => {
                let res: Vec<OracleRow> = (0..10u64)
                    .map(|k| {
                        let (field, region, x) = battery_instance(seed ^ 0x5eed, k, 5)?;
                        let o = LatticePoint::origin(2);
                        let e = travel_weight_with(&field, &region, &o, &x, &[], &opts_for(o.clone()))?.e_value(&o);
                        let (mean, se) =
                            sample_walk_weight(&field, &region, &x, 100_000, seed::derive(seed, &[tag::EPISODE, k]))?;
                        let passed = (mean - e).abs() <= 4.0 * se;
                        Ok(OracleRow {
                            case: case.clone(),
                            instance: k as usize,
                            passed,
                            exact: false,
                            detail: format!("e {e:e} mc {mean:e} se {se:e}"),
                        })
                    })
                    .collect::<Result<_>>()?;
                let good = res.iter().filter(|r| r.passed).count();
                checks.push(Check::statistical(
                    "solver within 4 SE of Monte Carlo",
                    good >= 9,
                    format!("{good} of 10"),
                ));
                rows.extend(res);
            }
            "hand_values" => {
                let o = LatticePoint::origin(2);
                let e1 = LatticePoint::unit(2, 0, 1);
                let cases = [
                    (vec![o.clone(), e1.clone()], 0.25),
                    (vec![LatticePoint::unit(2, 0, -1), o.clone(), e1.clone()], 4.0 / 15.0),
                ];
                let mut all = true;
                for (i, (sites, want)) in cases.into_iter().enumerate() {
                    let region = Region::from_sites(&sites)?;
                    let field = PotentialField::constant(region.bbox().clone(), 0.0)?;
                    let e = travel_weight_with(&field, &region, &o, &e1, &[], &opts_for(o.clone()))?.e_value(&o);
                    let passed = (e - want).abs() <= 1e-12;
                    all &= passed;
                    rows.push(OracleRow {
                        case: case.clone(),
                        instance: i,
                        passed,
                        exact: true,
                        detail: format!("e {e:e} expected {want:e}"),
                    });
                }
                checks.push(Check::exact("hand-computed travel weights", all, String::new()));
            }
            other => return Err(Error::config("oracle.battery", format!("unknown case {other:?}"))),
        }
    }
    Ok(OracleReport { rows, checks, warnings })
}
