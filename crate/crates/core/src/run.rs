//! Run configuration, subcommand dispatch and artifact emission.
//!
//! A run is described by one flat TOML file with dotted keys such as
//! `sigma.kind`. Every key is optional, unknown keys are errors, and the
//! fully resolved configuration is written next to the results so that any
//! number can be reproduced from the output directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiments::{
    compare_moments, convergence_rate, holder_study, lyapunov_estimate, MomentSpec, COMPARISON_SAMPLE_HEADER,
    INCREMENT_SAMPLE_HEADER, LYAPUNOV_SAMPLE_HEADER, RATE_SAMPLE_HEADER,
};
use crate::kernels::{
    collision_probability, green_function_bound, kernel_check, kernel_l2_difference, lclt_sup_error, LcltConstants,
    StableKernel, KERNEL_CHECK_HEADER,
};
use crate::output::{emit_csv, format_float, write_summary, Record};
use crate::quad::{linear_fit, pairwise_sum};
use crate::simulator::{
    default_box_sites, default_dt, simulate, snapshot_records, steps_for, Scheme, SheConfig, SigmaKind, SigmaSpec,
    SNAPSHOT_HEADER,
};
use crate::walk::{make_simple_walk, make_stable_tail_walk, WalkModel};

/// Pass thresholds of `kernel-check`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;
pub const L2_IDENTITY_TOLERANCE: f64 = 1e-6;
pub const SEMIGROUP_TOLERANCE: f64 = 1e-5;
pub const GAUSSIAN_TOLERANCE: f64 = 1e-10;

/// Allowed distance of the fitted `L²` slope from `α − 1`.
pub const L2_SLOPE_TOLERANCE: f64 = 0.2;

/// Slack on `Σ_j P_s² ≤ 1`.
pub const COLLISION_SLACK: f64 = 1e-12;

/// Largest allowed max/min ratio of the Green bound across resolutions.
pub const GREEN_SPREAD_LIMIT: f64 = 2.0;

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    KernelCheck,
    Lclt,
    GreenBound,
    Simulate,
    Converge,
    CompareMoments,
    Lyapunov,
    Holder,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::KernelCheck,
        Command::Lclt,
        Command::GreenBound,
        Command::Simulate,
        Command::Converge,
        Command::CompareMoments,
        Command::Lyapunov,
        Command::Holder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::KernelCheck => "kernel-check",
            Command::Lclt => "lclt",
            Command::GreenBound => "green-bound",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::CompareMoments => "compare-moments",
            Command::Lyapunov => "lyapunov",
            Command::Holder => "holder",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand {s:?}")))
    }
}

/// Which walk drives the lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkSpec {
    Simple,
    StableTail { alpha: f64, radius: usize },
}

impl WalkSpec {
    pub fn build(&self) -> Result<WalkModel> {
        match *self {
            WalkSpec::Simple => Ok(make_simple_walk()),
            WalkSpec::StableTail { alpha, radius } => make_stable_tail_walk(alpha, radius, 2 * radius),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelKeys {
    pub alpha: f64,
    pub nu: f64,
    pub times: Vec<f64>,
    pub eps: f64,
    pub sites: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcltKeys {
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    pub sites: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub l2_eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenKeys {
    pub eps: Vec<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentKeys {
    pub points: Vec<usize>,
    pub k: u32,
    pub translation_average: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeKeys {
    pub ladder: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderKeys {
    pub fine_eps: f64,
    pub start: f64,
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovKeys {
    pub k: u32,
    pub window: (f64, f64),
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub walk: WalkSpec,
    pub eps: f64,
    pub dt: f64,
    pub horizon: f64,
    pub box_sites: usize,
    pub scheme: Scheme,
    pub rho_exponent: f64,
    pub sigma: SigmaSpec,
    pub sigma_bar: SigmaSpec,
    pub seed: u64,
    pub replica: u64,
    pub replicas: u64,
    pub out: PathBuf,
    pub snapshots: usize,
    pub kernel: KernelKeys,
    pub lclt: LcltKeys,
    pub green: GreenKeys,
    pub moment: MomentKeys,
    pub converge: ConvergeKeys,
    pub holder: HolderKeys,
    pub lyapunov: LyapunovKeys,
}

/// Flattened key-value view of a TOML document; keys are consumed as they
/// are read so leftovers can be reported.
struct Keys {
    map: BTreeMap<String, toml::Value>,
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn type_error(key: &str, want: &str, got: &toml::Value) -> Error {
    Error::Config(format!("{key}: expected {want}, got {}", got.type_str()))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(type_error(key, "a nonnegative integer", other)),
    }
}

impl Keys {
    fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        flatten("", table, &mut map);
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<toml::Value> {
        self.map.remove(key)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|v| as_f64(key, &v)).transpose()
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.take(key).map(|v| as_u64(key, &v)).transpose()
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        self.take(key)
            .map(|v| v.as_bool().ok_or_else(|| type_error(key, "a boolean", &v)))
            .transpose()
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        self.take(key)
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(type_error(key, "a string", &other)),
            })
            .transpose()
    }

    fn list<T>(&mut self, key: &str, item: fn(&str, &toml::Value) -> Result<T>) -> Result<Option<Vec<T>>> {
        self.take(key)
            .map(|v| match v {
                toml::Value::Array(a) => a.iter().map(|x| item(key, x)).collect(),
                other => Err(type_error(key, "an array", &other)),
            })
            .transpose()
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.list(key, as_f64)
    }

    fn sigma(&mut self, prefix: &str, default: Option<SigmaSpec>) -> Result<SigmaSpec> {
        let kind = self.string(&format!("{prefix}.kind"))?;
        let lambda = self.f64(&format!("{prefix}.lambda"))?;
        let clip = self.f64(&format!("{prefix}.clip"))?;
        match (kind, lambda, clip, default) {
            (None, None, None, Some(d)) => Ok(d),
            (kind, lambda, clip, d) => {
                let kind = match kind {
                    Some(k) => SigmaKind::parse(&k)?,
                    None => d.map_or(SigmaKind::Linear, |d| d.kind),
                };
                SigmaSpec::new(kind, lambda.unwrap_or(1.0), clip)
            }
        }
    }

    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses and resolves a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut k = Keys::parse(text)?;
        let walk = match k.string("walk.kind")?.as_deref().unwrap_or("simple") {
            "simple" => {
                if k.take("walk.alpha").is_some() || k.take("walk.radius").is_some() {
                    return Err(config_err("walk.alpha and walk.radius apply to stable_tail walks only"));
                }
                WalkSpec::Simple
            }
            "stable_tail" => WalkSpec::StableTail {
                alpha: k.f64("walk.alpha")?.unwrap_or(1.5),
                radius: k.usize("walk.radius")?.unwrap_or(4096),
            },
            other => return Err(config_err(format!("walk.kind: unknown walk {other:?}"))),
        };
        let model = walk.build()?;
        let eps = k.f64("eps")?.unwrap_or(0.05);
        let rho_exponent = k.f64("rho_exponent")?.unwrap_or(model.alpha);
        let dt = k.f64("dt")?.unwrap_or_else(|| default_dt(rho_exponent, eps));
        let horizon = k.f64("T")?.unwrap_or(1.0);
        let extent = k.f64("box_extent")?;
        let box_sites = match (k.usize("box_sites")?, extent) {
            (Some(_), Some(_)) => return Err(config_err("give box_sites or box_extent, not both")),
            (Some(n), None) => n,
            (None, e) => default_box_sites(eps, e.unwrap_or(20.0)).max(2 * model.measure.truncation_radius()),
        };
        let scheme = Scheme::parse(k.string("scheme")?.as_deref().unwrap_or("splitstep"))?;
        let sigma = k.sigma("sigma", Some(SigmaSpec::linear(1.0)))?;
        let sigma_bar = k.sigma("sigma_bar", Some(sigma))?;
        let seed = k.u64("seed")?.unwrap_or(0);
        let replica = k.u64("replica")?.unwrap_or(0);
        let replicas = k.u64("replicas")?.unwrap_or(1000);
        let out = PathBuf::from(k.string("out")?.unwrap_or_else(|| "shelab-out".into()));
        let snapshots = k.usize("snapshots")?.unwrap_or(10);
        let heavy = matches!(walk, WalkSpec::StableTail { .. });
        let kernel = KernelKeys {
            alpha: k.f64("kernel.alpha")?.unwrap_or(model.alpha),
            nu: k.f64("kernel.nu")?.unwrap_or(model.nu),
            times: k.f64_list("kernel.times")?.unwrap_or_else(|| vec![0.1, 1.0]),
            eps: k.f64("kernel.eps")?.unwrap_or(0.01),
            sites: k.usize("kernel.sites")?.unwrap_or(1 << 14),
        };
        let target = 2f64.powf(model.a);
        let lclt = LcltKeys {
            eps: k.f64_list("lclt.eps")?.unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]),
            times: k.f64_list("lclt.times")?.unwrap_or_else(|| vec![0.5, 1.0]),
            sites: k.usize("lclt.sites")?.unwrap_or(if heavy { 1 << 15 } else { 1 << 12 }),
            ratio_min: k.f64("lclt.ratio_min")?.unwrap_or(0.75 * target),
            ratio_max: k.f64("lclt.ratio_max")?.unwrap_or(1.25 * target),
            l2_eps: k.f64_list("lclt.l2_eps")?.unwrap_or_else(|| vec![0.1, 0.05, 0.025]),
        };
        let green = GreenKeys {
            eps: k.f64_list("green.eps")?.unwrap_or_else(|| vec![0.2, 0.1, 0.05]),
            samples: k.usize("green.samples")?.unwrap_or(100),
        };
        let moment = MomentKeys {
            points: k
                .list("moment.points", |key, v| Ok(as_u64(key, v)? as usize))?
                .unwrap_or_else(|| vec![0]),
            k: k.u64("moment.k")?.unwrap_or(2) as u32,
            translation_average: k.bool("moment.translation_average")?.unwrap_or(false),
        };
        let converge = ConvergeKeys {
            ladder: k
                .f64_list("converge.ladder")?
                .unwrap_or_else(|| vec![eps, eps / 2.0, eps / 4.0]),
            rho: k.f64("converge.rho")?.unwrap_or((model.alpha - 1.0) / 2.0),
        };
        let holder = HolderKeys {
            fine_eps: k.f64("holder.fine_eps")?.unwrap_or(eps / 2.0),
            start: k.f64("holder.start")?.unwrap_or(horizon / 4.0),
            gaps: k
                .f64_list("holder.gaps")?
                .unwrap_or_else(|| [1.0, 2.0, 4.0, 6.0, 10.0].iter().map(|g| g * dt).collect()),
        };
        let window = match k.f64_list("lyapunov.window")? {
            None => (horizon / 2.0, horizon),
            Some(w) if w.len() == 2 => (w[0], w[1]),
            Some(_) => return Err(config_err("lyapunov.window needs two entries")),
        };
        let lyapunov = LyapunovKeys {
            k: k.u64("lyapunov.k")?.unwrap_or(2) as u32,
            window,
        };
        k.finish()?;
        Ok(Self {
            walk,
            eps,
            dt,
            horizon,
            box_sites,
            scheme,
            rho_exponent,
            sigma,
            sigma_bar,
            seed,
            replica,
            replicas,
            out,
            snapshots,
            kernel,
            lclt,
            green,
            moment,
            converge,
            holder,
            lyapunov,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.replicas {
            self.replicas = r;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
    }

    /// Every resolved key in file order.
    pub fn to_record(&self) -> Record {
        fn list(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format_float(*x)).collect();
            format!("[{}]", items.join(", "))
        }
        let mut r = Record::new();
        match self.walk {
            WalkSpec::Simple => r.push("walk.kind", "simple"),
            WalkSpec::StableTail { alpha, radius } => {
                r.push("walk.kind", "stable_tail");
                r.push("walk.alpha", alpha);
                r.push("walk.radius", radius);
            }
        }
        r.push("eps", self.eps);
        r.push("dt", self.dt);
        r.push("T", self.horizon);
        r.push("box_sites", self.box_sites);
        r.push("scheme", self.scheme.as_str());
        r.push("rho_exponent", self.rho_exponent);
        for (name, s) in [("sigma", &self.sigma), ("sigma_bar", &self.sigma_bar)] {
            r.push(format!("{name}.kind"), s.kind.as_str());
            r.push(format!("{name}.lambda"), s.lambda);
            if let Some(c) = s.clip {
                r.push(format!("{name}.clip"), c);
            }
        }
        r.push("seed", self.seed);
        r.push("replica", self.replica);
        r.push("replicas", self.replicas);
        r.push("out", self.out.display().to_string());
        r.push("snapshots", self.snapshots);
        r.push("kernel.alpha", self.kernel.alpha);
        r.push("kernel.nu", self.kernel.nu);
        r.push("kernel.times", list(&self.kernel.times));
        r.push("kernel.eps", self.kernel.eps);
        r.push("kernel.sites", self.kernel.sites);
        r.push("lclt.eps", list(&self.lclt.eps));
        r.push("lclt.times", list(&self.lclt.times));
        r.push("lclt.sites", self.lclt.sites);
        r.push("lclt.ratio_min", self.lclt.ratio_min);
        r.push("lclt.ratio_max", self.lclt.ratio_max);
        r.push("lclt.l2_eps", list(&self.lclt.l2_eps));
        r.push("green.eps", list(&self.green.eps));
        r.push("green.samples", self.green.samples);
        let pts: Vec<String> = self.moment.points.iter().map(|p| p.to_string()).collect();
        r.push("moment.points", format!("[{}]", pts.join(", ")));
        r.push("moment.k", self.moment.k);
        r.push("moment.translation_average", self.moment.translation_average);
        r.push("converge.ladder", list(&self.converge.ladder));
        r.push("converge.rho", self.converge.rho);
        r.push("holder.fine_eps", self.holder.fine_eps);
        r.push("holder.start", self.holder.start);
        r.push("holder.gaps", list(&self.holder.gaps));
        r.push("lyapunov.k", self.lyapunov.k);
        r.push(
            "lyapunov.window",
            list(&[self.lyapunov.window.0, self.lyapunov.window.1]),
        );
        r
    }

    /// The resolved configuration as a document that parses back to `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_record().keys().zip(self.to_record().values()) {
            let text = match v {
                crate::output::Value::Str(s) if s.starts_with('[') => s.clone(),
                crate::output::Value::Str(s) => format!("{s:?}"),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k} = {text}");
        }
        out
    }

    pub fn walk_model(&self) -> Result<WalkModel> {
        self.walk.build()
    }

    /// The lattice run described by the shared keys.
    pub fn she_config(&self) -> Result<SheConfig> {
        let walk = self.walk_model()?;
        let mut c = SheConfig::new(walk, self.eps, self.sigma);
        c.dt = self.dt;
        c.horizon = self.horizon;
        c.n = self.box_sites;
        c.scheme = self.scheme;
        c.seed = self.seed;
        c.replica = self.replica;
        c.rho_exponent = self.rho_exponent;
        c.validate()?;
        Ok(c)
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub command: Command,
    pub passed: bool,
    pub summary: Record,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// 0 on pass, 2 on a failed verdict.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn csv(&mut self, name: &str, header: &[&str], records: &[Record]) -> Result<()> {
        let path = self.dir.join(name);
        emit_csv(header, records, &path)?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `command` and writes `summary.toml`, `config.toml` and the command's
/// CSV files into the configured output directory.
pub fn run(command: Command, config: &RunConfig) -> Result<RunOutcome> {
    fs::create_dir_all(&config.out).map_err(|source| Error::Io {
        path: config.out.clone(),
        source,
    })?;
    let mut art = Artifacts {
        dir: config.out.clone(),
        files: Vec::new(),
    };
    let (passed, results) = match command {
        Command::KernelCheck => kernel_check_cmd(config, &mut art)?,
        Command::Lclt => lclt_cmd(config, &mut art)?,
        Command::GreenBound => green_cmd(config, &mut art)?,
        Command::Simulate => simulate_cmd(config, &mut art)?,
        Command::Converge => {
            let r = convergence_rate(
                &config.she_config()?,
                &config.converge.ladder,
                config.converge.rho,
                config.replicas,
            )?;
            art.csv("rate_samples.csv", &RATE_SAMPLE_HEADER, &r.sample_records())?;
            (r.passed, r.to_record())
        }
        Command::CompareMoments => {
            let spec = moment_spec(config);
            let r = compare_moments(
                &config.she_config()?,
                config.sigma,
                config.sigma_bar,
                &spec,
                config.replicas,
            )?;
            art.csv("comparison_samples.csv", &COMPARISON_SAMPLE_HEADER, &r.sample_records())?;
            (r.ordering_holds, r.to_record())
        }
        Command::Lyapunov => {
            let mut c = config.she_config()?;
            c.horizon = c.horizon.max(config.lyapunov.window.1);
            let r = lyapunov_estimate(&c, config.lyapunov.k, config.lyapunov.window, config.replicas)?;
            art.csv("lyapunov_samples.csv", &LYAPUNOV_SAMPLE_HEADER, &r.sample_records())?;
            (r.passed, r.to_record())
        }
        Command::Holder => {
            let h = &config.holder;
            let r = holder_study(&config.she_config()?, h.fine_eps, h.start, &h.gaps, config.replicas)?;
            let mut rows = r.coarse.sample_records();
            rows.extend(r.fine.sample_records());
            art.csv("increment_samples.csv", &INCREMENT_SAMPLE_HEADER, &rows)?;
            (r.passed(), r.to_record())
        }
    };
    let mut summary = Record::new();
    summary.push("command", command.as_str());
    summary.push("verdict", if passed { "pass" } else { "fail" });
    summary.extend_prefixed("config", &config.to_record());
    summary.extend_prefixed("result", &results);
    let summary_path = config.out.join("summary.toml");
    write_summary(&summary, &summary_path)?;
    let config_path = config.out.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(|source| Error::Io {
        path: config_path.clone(),
        source,
    })?;
    let mut files = vec![summary_path, config_path];
    files.extend(art.files);
    Ok(RunOutcome {
        command,
        passed,
        summary,
        files,
    })
}

fn moment_spec(config: &RunConfig) -> MomentSpec {
    MomentSpec {
        points: config.moment.points.clone(),
        k: config.moment.k,
        translation_average: config.moment.translation_average,
    }
}

fn kernel_check_cmd(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, Record)> {
    let kc = &config.kernel;
    let kernel = StableKernel::new(kc.alpha, kc.nu)?;
    let mut rows = Vec::new();
    let mut passed = true;
    let mut worst = [0.0f64; 4];
    for &t in &kc.times {
        let r = kernel_check(&kernel, t, kc.eps, kc.sites)?;
        let g = r.gaussian_error.unwrap_or(0.0);
        passed &= r.normalization_error < NORMALIZATION_TOLERANCE
            && r.l2_relative_error < L2_IDENTITY_TOLERANCE
            && r.semigroup_error < SEMIGROUP_TOLERANCE
            && g < GAUSSIAN_TOLERANCE;
        for (w, v) in worst
            .iter_mut()
            .zip([r.normalization_error, r.l2_relative_error, r.semigroup_error, g])
        {
            *w = w.max(v);
        }
        rows.push(r.to_record());
    }
    art.csv("kernel_check.csv", &KERNEL_CHECK_HEADER, &rows)?;
    let mut s = Record::new();
    s.push("max_normalization_error", worst[0]);
    s.push("max_l2_relative_error", worst[1]);
    s.push("max_semigroup_error", worst[2]);
    s.push("max_gaussian_error", if kc.alpha == 2.0 { worst[3] } else { f64::NAN });
    Ok((passed, s))
}

const LCLT_HEADER: [&str; 14] = [
    "eps",
    "t",
    "sites",
    "sup_error",
    "bound_value",
    "bound_value_alt",
    "lambda",
    "regime",
    "threshold",
    "threshold_alt",
    "r0",
    "theta",
    "K",
    "C",
];

fn lclt_cmd(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, Record)> {
    let lc = &config.lclt;
    let walk = config.walk_model()?;
    let constants = LcltConstants::calibrated()?;
    let mut rows = Vec::new();
    let mut s = Record::new();
    let mut passed = true;
    for &t in &lc.times {
        let errs = lc
            .eps
            .iter()
            .map(|&e| lclt_sup_error(&walk, e, t, lc.sites, constants))
            .collect::<Result<Vec<_>>>()?;
        for (pair, w) in errs.windows(2).enumerate() {
            let ratio = w[0].sup_error / w[1].sup_error;
            let ok = w[1].sup_error < w[0].sup_error && ratio >= lc.ratio_min && ratio <= lc.ratio_max;
            passed &= ok;
            s.push(format!("t{}.ratio{pair}", format_float(t)), ratio);
        }
        rows.extend(errs.iter().map(|r| r.to_record()));
    }
    art.csv("lclt.csv", &LCLT_HEADER, &rows)?;
    let l2: Vec<f64> = lc
        .l2_eps
        .iter()
        .map(|&e| kernel_l2_difference(&walk, e, config.horizon, lc.sites))
        .collect::<Result<_>>()?;
    let logs_e: Vec<f64> = lc.l2_eps.iter().map(|e| e.ln()).collect();
    let logs_v: Vec<f64> = l2.iter().map(|v| v.ln()).collect();
    let slope = linear_fit(&logs_e, &logs_v).0;
    let target = walk.alpha - 1.0;
    passed &= (slope - target).abs() <= L2_SLOPE_TOLERANCE;
    let l2_rows: Vec<Record> = lc
        .l2_eps
        .iter()
        .zip(&l2)
        .map(|(&e, &v)| {
            let mut r = Record::new();
            r.push("eps", e);
            r.push("T", config.horizon);
            r.push("l2_difference", v);
            r
        })
        .collect();
    art.csv("l2_difference.csv", &["eps", "T", "l2_difference"], &l2_rows)?;
    s.push("l2_slope", slope);
    s.push("l2_target", target);
    s.push("C", constants.c);
    s.push("K", constants.k);
    Ok((passed, s))
}

fn green_cmd(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, Record)> {
    let walk = config.walk_model()?;
    let gc = &config.green;
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    let mut max_collision = 0.0f64;
    for &e in &gc.eps {
        bounds.push(green_function_bound(&walk, e, config.horizon)?);
        for i in 1..=gc.samples {
            let s = config.horizon * i as f64 / gc.samples as f64;
            let c = collision_probability(&walk, e, s);
            max_collision = max_collision.max(c);
            let mut r = Record::new();
            r.push("eps", e);
            r.push("s", s);
            r.push("collision", c);
            rows.push(r);
        }
    }
    art.csv("collision.csv", &["eps", "s", "collision"], &rows)?;
    let green_rows: Vec<Record> = gc
        .eps
        .iter()
        .zip(&bounds)
        .map(|(&e, &b)| {
            let mut r = Record::new();
            r.push("eps", e);
            r.push("T", config.horizon);
            r.push("green_bound", b);
            r
        })
        .collect();
    art.csv("green_bound.csv", &["eps", "T", "green_bound"], &green_rows)?;
    let hi = bounds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = bounds.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    let passed = max_collision <= 1.0 + COLLISION_SLACK && spread < GREEN_SPREAD_LIMIT;
    let mut s = Record::new();
    s.push("max_collision", max_collision);
    s.push("green_spread", spread);
    Ok((passed, s))
}

fn simulate_cmd(config: &RunConfig, art: &mut Artifacts) -> Result<(bool, Record)> {
    let mut c = config.she_config()?;
    let steps = c.steps()?;
    let count = config.snapshots.min(steps as usize).max(1) as u64;
    c.snapshot_times = (1..=count).map(|i| (i * steps / count) as f64 * c.dt).collect();
    for &t in &c.snapshot_times {
        steps_for(t, c.dt)?;
    }
    let traj = simulate(&c)?;
    art.csv("field.csv", &SNAPSHOT_HEADER, &snapshot_records(&traj.snapshots, c.eps))?;
    let u = &traj.final_state.values;
    let mut s = Record::new();
    s.push("final_mean", pairwise_sum(u) / u.len() as f64);
    s.push("field_min", traj.field_min);
    s.push("field_max", traj.field_max);
    s.push("negative_fraction", traj.negative_fraction());
    Ok((true, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.walk, WalkSpec::Simple);
        assert_eq!(c.eps, 0.05);
        assert_eq!(c.dt, default_dt(2.0, 0.05));
        assert_eq!(c.box_sites, 512);
        assert_eq!(c.sigma, SigmaSpec::linear(1.0));
        assert_eq!(c.sigma_bar, c.sigma);
    }

    #[test]
    fn unknown_and_misspelled_keys_rejected() {
        let err = RunConfig::from_toml_str("sigma.lamda = 2.0").unwrap_err();
        assert!(err.to_string().contains("sigma.lamda"), "{err}");
        assert!(RunConfig::from_toml_str("[kernel]\nalpah = 2").is_err());
        assert!(RunConfig::from_toml_str("eps = \"small\"").is_err());
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = RunConfig::from_toml_str("sigma.kind = \"abs_linear\"\nsigma.lambda = 0.5").unwrap();
        let b = RunConfig::from_toml_str("[sigma]\nkind = \"abs_linear\"\nlambda = 0.5").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sigma.kind, SigmaKind::AbsLinear);
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "walk.kind = \"stable_tail\"\nwalk.radius = 64\neps = 0.1\nsigma.kind = \"clipped_linear\"\nsigma.clip = 2.5\nconverge.ladder = [0.1, 0.05, 0.025]\nmoment.points = [0, 10]\nout = \"x y\"";
        let c = RunConfig::from_toml_str(text).unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::from_toml_str("seed = 3\nreplicas = 10").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            replicas: None,
            out: Some("elsewhere".into()),
        });
        assert_eq!((c.seed, c.replicas), (9, 10));
        assert_eq!(c.out, PathBuf::from("elsewhere"));
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.as_str().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn zero_sigma_simulation_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "eps = 0.25\nbox_sites = 32\nT = 0.25\nsigma.lambda = 0\nout = {:?}",
            dir.path().display().to_string()
        );
        let c = RunConfig::from_toml_str(&text).unwrap();
        let o = run(Command::Simulate, &c).unwrap();
        assert!(o.passed);
        let field = fs::read_to_string(dir.path().join("field.csv")).unwrap();
        for line in field.lines().skip(1) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(v, 1.0);
        }
        let echoed = RunConfig::from_path(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echoed, c);
    }
}
