//! Batch front end: a JSON run configuration, the subcommands that drive the library,
//! and the artifact directory with its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    chi_growth, chi_identity_check, gaussian_profile, hessian_ratio, zc_from_susceptibility_with, zeta_scaling,
    zeta_scaling_along_sequence,
};
use crate::certifier::{
    check_assumptions_eg, check_fbdsp, check_h1_h4, check_lemma_ca, check_lemma_fder, validate_config,
    CertificateReport, InductionConfig,
};
use crate::engine::{constants_av, critical_point, evolve, CriticalPoint, DEFAULT_M_MAX};
use crate::error::{Error, Result};
use crate::kernel::{assumption_d_grid, certify_assumption_d, FourierPoint, KernelConstants, StepKernel};
use crate::model::{
    load_xspace_model, pure_random_walk, synthetic_theta, ModelCoefficients, SyntheticFamilySpec, ZPower,
};
use crate::numerics::loglog_fit_last_decade;
use crate::quadrature::{lp_norm_d2f, write_norms_csv, QuadratureSpec};

pub const MANIFEST: &str = "manifest.json";
const MAX_LISTED_FAILURES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    UniformBox {
        d: usize,
        #[serde(rename = "L")]
        range: u32,
        #[serde(default)]
        include_origin: bool,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    PureRandomWalk,
    Synthetic {
        beta0: f64,
        #[serde(default)]
        beta_e: f64,
        theta: f64,
        #[serde(default)]
        z_power: ZPower,
    },
    Tabulated {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalTag {
    Critical,
}

/// `"critical"` or an explicit activity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZSpec {
    Critical(CriticalTag),
    Value(f64),
}

impl Default for ZSpec {
    fn default() -> Self {
        ZSpec::Critical(CriticalTag::Critical)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KSetSpec {
    /// Origin, log-spaced radial points on an axis and the diagonal, plus the
    /// Assumption-D grid.
    Auto {
        #[serde(default = "default_radial")]
        radial: usize,
        #[serde(default)]
        grid_per_axis: Option<usize>,
        #[serde(default = "default_fill")]
        fill: usize,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
    /// `t e_1` for each `t`.
    Axis {
        t: Vec<f64>,
    },
}

impl Default for KSetSpec {
    fn default() -> Self {
        KSetSpec::Auto {
            radial: default_radial(),
            grid_per_axis: None,
            fill: default_fill(),
        }
    }
}

fn default_radial() -> usize {
    24
}

fn default_fill() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelGridSpec {
    #[serde(default)]
    pub per_axis: Option<usize>,
    #[serde(default = "default_kernel_fill")]
    pub fill: usize,
}

impl Default for KernelGridSpec {
    fn default() -> Self {
        Self {
            per_axis: None,
            fill: default_kernel_fill(),
        }
    }
}

fn default_kernel_fill() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSpec {
    /// Depth of the `z_n` sequence.
    #[serde(rename = "N", default = "default_critical_n")]
    pub n: usize,
    #[serde(default = "default_critical_tol")]
    pub tol: f64,
    /// Bracket for the susceptibility root; defaults to `z_N (1 -+ 0.5)`.
    #[serde(default)]
    pub bracket: Option<[f64; 2]>,
    #[serde(default)]
    pub zeta_window: Option<[usize; 2]>,
}

impl Default for CriticalSpec {
    fn default() -> Self {
        Self {
            n: default_critical_n(),
            tol: default_critical_tol(),
            bracket: None,
            zeta_window: None,
        }
    }
}

fn default_critical_n() -> usize {
    5000
}

fn default_critical_tol() -> f64 {
    1e-8
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    /// Scaled points; defaults to `kappa e_1` for `kappa = 0, 0.25, .., 2`.
    #[serde(default)]
    pub kappa: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsSpec {
    #[serde(default)]
    pub p_list: Option<Vec<f64>>,
    /// Window for the fitted decay exponent; defaults to the largest decade.
    #[serde(default)]
    pub fit_window: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SusceptibilitySpec {
    #[serde(default)]
    pub z_list: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    /// `C` in the lemma bounds.
    #[serde(default = "default_lemma_c")]
    pub lemma_c: f64,
    /// `eps'` values for the G(iv) check; defaults to `{0, epsilon}`.
    #[serde(default)]
    pub eps_primes: Option<Vec<f64>>,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            lemma_c: default_lemma_c(),
            eps_primes: None,
        }
    }
}

fn default_lemma_c() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub kernel_constants: Option<KernelConstants>,
    #[serde(default)]
    pub kernel_grid: KernelGridSpec,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub induction: Option<InductionConfig>,
    #[serde(default)]
    pub z: ZSpec,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub kset: KSetSpec,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default)]
    pub critical: CriticalSpec,
    #[serde(default)]
    pub gaussian: GaussianSpec,
    #[serde(default)]
    pub norms: NormsSpec,
    #[serde(default)]
    pub susceptibility: SusceptibilitySpec,
    #[serde(default)]
    pub certify: CertifySpec,
    /// Directory that relative paths are resolved against; set by [`load_config`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_n() -> usize {
    100
}

fn default_m_max() -> usize {
    DEFAULT_M_MAX
}

fn default_tail_tol() -> f64 {
    1e-10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CertifyKernel,
    Run,
    CriticalPoint,
    CertifyInduction,
    GaussianCheck,
    Norms,
    Susceptibility,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CertifyKernel => "certify-kernel",
            Command::Run => "run",
            Command::CriticalPoint => "critical-point",
            Command::CertifyInduction => "certify-induction",
            Command::GaussianCheck => "gaussian-check",
            Command::Norms => "norms",
            Command::Susceptibility => "susceptibility",
        }
    }

    fn needs_model(self) -> bool {
        self != Command::CertifyKernel
    }
}

pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse(format!("run config: {e}")))?;
    cfg.base_dir = base_dir.to_path_buf();
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

impl RunConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that can fail before anything is written.
    pub fn validate_for(&self, cmd: Command) -> Result<()> {
        let kernel = self
            .kernel
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no `kernel` section"))?;
        if cmd.needs_model() && self.model.is_none() {
            return Err(Error::invalid(format!("`{}` needs a `model` section", cmd.name())));
        }
        if cmd == Command::CertifyInduction && self.induction.is_none() {
            return Err(Error::invalid("`certify-induction` needs an `induction` section"));
        }
        if self.n == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        if !(self.tail_tol > 0.0) || self.m_max == 0 {
            return Err(Error::invalid("tail_tol and m_max must be positive"));
        }
        if let ZSpec::Value(z) = self.z {
            if !z.is_finite() {
                return Err(Error::invalid(format!("z = {z} is not finite")));
            }
        }
        if let Some(ind) = &self.induction {
            ind.validate()?;
            if let KernelSpec::UniformBox { d, range, .. } = kernel {
                if ind.d != *d || ind.range != *range {
                    return Err(Error::invalid(format!(
                        "induction section has d={}, L={} but the kernel has d={d}, L={range}",
                        ind.d, ind.range
                    )));
                }
            }
        }
        if let Some(q) = &self.quadrature {
            if let KernelSpec::UniformBox { d, range, .. } = kernel {
                q.check_for(*d, *range)?;
            }
        }
        Ok(())
    }

    pub fn build_kernel(&self) -> Result<StepKernel> {
        match self
            .kernel
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no `kernel` section"))?
        {
            KernelSpec::UniformBox {
                d,
                range,
                include_origin,
            } => StepKernel::uniform_box(*d, *range, *include_origin),
            KernelSpec::File { path } => StepKernel::load(&self.resolve(path)),
        }
    }

    pub fn build_model(&self, kernel: StepKernel) -> Result<ModelCoefficients> {
        match self
            .model
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no `model` section"))?
        {
            ModelSpec::PureRandomWalk => Ok(pure_random_walk(kernel)),
            ModelSpec::Synthetic {
                beta0,
                beta_e,
                theta,
                z_power,
            } => synthetic_theta(
                SyntheticFamilySpec::new(*beta0, *beta_e, *theta).with_z_power(*z_power),
                kernel,
            ),
            ModelSpec::Tabulated { path } => load_xspace_model(&self.resolve(path), kernel),
        }
    }

    pub fn build_kset(&self, d: usize, range: u32) -> Result<Vec<FourierPoint>> {
        let mut out = vec![FourierPoint::origin(d)];
        match &self.kset {
            KSetSpec::Auto {
                radial,
                grid_per_axis,
                fill,
            } => {
                let diag = 1.0 / (d as f64).sqrt();
                for i in 0..*radial {
                    let t = 0.01 * 1.25f64.powi(i as i32);
                    if t >= std::f64::consts::PI {
                        break;
                    }
                    out.push(FourierPoint::on_axis(d, t)?);
                    if d > 1 {
                        out.push(FourierPoint::new(vec![t * diag; d])?);
                    }
                }
                let per_axis = grid_per_axis.unwrap_or(if d <= 6 { 3 } else { 2 });
                out.extend(
                    assumption_d_grid(d, range, per_axis, *fill)
                        .into_iter()
                        .filter(|k| !k.is_origin()),
                );
            }
            KSetSpec::Points { points } => {
                for p in points {
                    if p.len() != d {
                        return Err(Error::invalid(format!("k-set point {p:?} is not {d}-dimensional")));
                    }
                    let k = FourierPoint::new(p.clone())?;
                    if !k.is_origin() {
                        out.push(k);
                    }
                }
            }
            KSetSpec::Axis { t } => {
                for &t in t.iter().filter(|&&t| t != 0.0) {
                    out.push(FourierPoint::on_axis(d, t)?);
                }
            }
        }
        Ok(out)
    }

    pub fn quadrature_for(&self, d: usize, range: u32) -> QuadratureSpec {
        match &self.quadrature {
            Some(q) => q.clone().with_seed(self.seed),
            None => QuadratureSpec::auto(d, range, self.seed),
        }
    }

    fn p_list(&self) -> Vec<f64> {
        self.norms
            .p_list
            .clone()
            .or_else(|| self.induction.as_ref().map(|c| c.p_list.clone()))
            .unwrap_or_else(|| vec![1.0, 2.0])
    }

    fn gamma(&self) -> f64 {
        self.induction.as_ref().map_or(0.2, |c| c.gamma)
    }

    fn gaussian_n_list(&self) -> Vec<usize> {
        self.gaussian.n_list.clone().unwrap_or_else(|| {
            let mut v: Vec<usize> = [8, 4, 2, 1].iter().map(|q| self.n / q).filter(|&n| n >= 2).collect();
            v.dedup();
            v
        })
    }

    fn kappa_grid(&self, d: usize) -> Vec<Vec<f64>> {
        self.gaussian.kappa.clone().unwrap_or_else(|| {
            (0..=8)
                .map(|i| {
                    let mut k = vec![0.0; d];
                    k[0] = 0.25 * i as f64;
                    k
                })
                .collect()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub quadrature: Option<String>,
    /// Hashes of input files referenced by the config.
    pub inputs: BTreeMap<String, String>,
    pub status: String,
    pub files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single owner of the output directory.
struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        info!("wrote {}", path.display());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, buf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Passed,
    CertificationFailed,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub files: Vec<FileEntry>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Fit the minimal constants instead of failing on violated records.
    pub fit: bool,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

/// Runs `cmd` and writes its artifacts plus `manifest.json` into `out`. On a stage
/// error the files written so far stay in place and the manifest records the failure.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate_for(cmd)?;
    let mut art = Artifacts::new(out)?;
    let mut notes = Vec::new();
    let result = dispatch(cmd, cfg, &mut art, opts, &mut notes);
    let status = match &result {
        Ok(Outcome::Passed) => "passed".to_string(),
        Ok(Outcome::CertificationFailed) => "certification_failed".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let manifest = build_manifest(cmd, cfg, status, &art)?;
    art.json(MANIFEST, &manifest)?;
    let outcome = result?;
    Ok(RunSummary {
        outcome,
        files: art.files,
        notes,
    })
}

fn build_manifest(cmd: Command, cfg: &RunConfig, status: String, art: &Artifacts) -> Result<Manifest> {
    let mut inputs = BTreeMap::new();
    let mut hash_input = |label: &str, p: &Path| {
        let path = cfg.resolve(p);
        if let Ok(bytes) = fs::read(&path) {
            inputs.insert(format!("{label}:{}", p.display()), sha256_hex(&bytes));
        }
    };
    if let Some(KernelSpec::File { path }) = &cfg.kernel {
        hash_input("kernel", path);
    }
    if let Some(ModelSpec::Tabulated { path }) = &cfg.model {
        hash_input("model", path);
    }
    let quadrature = match (cmd, &cfg.kernel) {
        (Command::Norms | Command::CertifyInduction, Some(KernelSpec::UniformBox { d, range, .. })) => {
            Some(cfg.quadrature_for(*d, *range).method().to_string())
        }
        (Command::Norms | Command::CertifyInduction, _) => cfg.quadrature.as_ref().map(|q| q.method().to_string()),
        _ => None,
    };
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.name().to_string(),
        config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
        seed: cfg.seed,
        quadrature,
        inputs,
        status,
        files: art.files.clone(),
    })
}

fn dispatch(
    cmd: Command,
    cfg: &RunConfig,
    art: &mut Artifacts,
    opts: RunOptions,
    notes: &mut Vec<String>,
) -> Result<Outcome> {
    let kernel = stage("kernel", cfg.build_kernel())?;
    if cmd == Command::CertifyKernel {
        return certify_kernel(cfg, &kernel, art);
    }
    let (d, range) = (kernel.dim(), kernel.range());
    let model = stage("model", cfg.build_model(kernel))?;
    match cmd {
        Command::CertifyKernel => unreachable!(),
        Command::Run => run(cfg, &model, art, opts, notes),
        Command::CriticalPoint => critical(cfg, &model, art),
        Command::CertifyInduction => certify_induction(cfg, &model, art, opts, notes),
        Command::GaussianCheck => gaussian(cfg, &model, art),
        Command::Norms => norms(cfg, &model, d, range, art),
        Command::Susceptibility => chi(cfg, &model, art),
    }
}

fn certify_kernel(cfg: &RunConfig, kernel: &StepKernel, art: &mut Artifacts) -> Result<Outcome> {
    let d = kernel.dim();
    let per_axis = cfg.kernel_grid.per_axis.unwrap_or(match d {
        1 => 65,
        2 => 17,
        3 => 9,
        4..=6 => 3,
        _ => 2,
    });
    let grid = assumption_d_grid(d, kernel.range(), per_axis, cfg.kernel_grid.fill);
    let constants = cfg.kernel_constants.unwrap_or_default();
    let cert = stage("certify_kernel", certify_assumption_d(kernel, &constants, &grid))?;
    art.json("kernel_certificate.json", &cert)?;
    Ok(if cert.passed() {
        Outcome::Passed
    } else {
        Outcome::CertificationFailed
    })
}

fn locate_critical(cfg: &RunConfig, model: &ModelCoefficients) -> Result<CriticalPoint> {
    stage(
        "critical_point",
        critical_point(model, cfg.critical.n, cfg.critical.tol),
    )
}

fn resolve_z(cfg: &RunConfig, model: &ModelCoefficients) -> Result<(f64, Option<CriticalPoint>)> {
    match cfg.z {
        ZSpec::Value(z) => Ok((z, None)),
        ZSpec::Critical(_) => {
            let cp = locate_critical(cfg, model)?;
            Ok((cp.extrapolated, Some(cp)))
        }
    }
}

fn certificate_outcome(report: &CertificateReport, opts: RunOptions) -> Outcome {
    if report.passed() || opts.fit {
        Outcome::Passed
    } else {
        Outcome::CertificationFailed
    }
}

fn write_certificate(art: &mut Artifacts, report: &mut CertificateReport, opts: RunOptions) -> Result<()> {
    if opts.fit {
        report.fit_linear_constants();
    }
    #[derive(Default, Serialize)]
    struct Family {
        records: usize,
        failures: usize,
        /// Largest `actual / bound`.
        worst_ratio: f64,
    }
    let mut families: BTreeMap<&str, Family> = BTreeMap::new();
    for r in &report.records {
        let f = families.entry(r.check.as_str()).or_default();
        f.records += 1;
        f.failures += usize::from(!r.pass);
        if r.bound > 0.0 {
            f.worst_ratio = f.worst_ratio.max(r.actual / r.bound);
        } else if r.actual > 0.0 {
            f.worst_ratio = f64::INFINITY;
        }
    }
    let failures: Vec<&crate::certifier::Record> = report.failures().take(MAX_LISTED_FAILURES).collect();
    // Full records go to the CSV; the JSON keeps summaries and the first failures.
    art.json(
        "certificate.json",
        &serde_json::json!({
            "passed": report.passed(),
            "summary": report.summary(),
            "families": families,
            "failures": failures,
            "warnings": report.warnings,
            "coverage": report.coverage,
            "fitted": report.fitted,
        }),
    )?;
    art.csv("certificate.csv", |buf| report.write_csv(buf))
}

fn run(
    cfg: &RunConfig,
    model: &ModelCoefficients,
    art: &mut Artifacts,
    opts: RunOptions,
    notes: &mut Vec<String>,
) -> Result<Outcome> {
    let kernel = model.kernel();
    let cp = locate_critical(cfg, model)?;
    let z = match cfg.z {
        ZSpec::Value(z) => z,
        ZSpec::Critical(_) => cp.extrapolated,
    };
    let kset = stage("kset", cfg.build_kset(kernel.dim(), kernel.range()))?;
    let trace = stage("evolve", evolve(model, z, &kset, cfg.n))?;
    art.csv("trace.csv", |buf| trace.write_csv(buf))?;
    art.csv("kset.csv", |buf| trace.write_kset_csv(buf))?;

    let constants = stage(
        "constants",
        constants_av(model, cp.extrapolated, cfg.m_max, cfg.tail_tol),
    )?;
    let constants = stage("constants", constants.with_product_form(model, cfg.n))?;
    art.json(
        "constants.json",
        &serde_json::json!({ "critical_point": cp, "constants": constants }),
    )?;

    let mut outcome = Outcome::Passed;
    if let Some(ind) = &cfg.induction {
        let mut report = validate_kconds(ind, notes);
        report.merge(stage("check_h1_h4", check_h1_h4(&trace, ind, cfg.n))?);
        outcome = certificate_outcome(&report, opts);
        write_certificate(art, &mut report, opts)?;
    }

    if constants.v > 0.0 && constants.a != 0.0 {
        let n_list = cfg.gaussian_n_list();
        if !n_list.is_empty() {
            let delta = cfg.induction.as_ref().map(|c| c.delta);
            let profile = stage(
                "gaussian_profile",
                gaussian_profile(
                    model,
                    &constants,
                    &n_list,
                    &cfg.kappa_grid(kernel.dim()),
                    cfg.gamma(),
                    delta,
                ),
            )?;
            art.csv("gaussian.csv", |buf| profile.write_csv(buf))?;
        }
    } else {
        notes.push(format!(
            "skipped the Gaussian profile: A = {}, v = {}",
            constants.a, constants.v
        ));
    }
    Ok(outcome)
}

/// Ordering conditions among the K's are advisory: they go to warnings, not records.
fn validate_kconds(ind: &InductionConfig, notes: &mut Vec<String>) -> CertificateReport {
    let cfg_report = validate_config(ind);
    let mut report = CertificateReport::default();
    for r in cfg_report.records.iter().filter(|r| !r.pass) {
        let w = format!("config condition {} not met: {} vs {}", r.check, r.actual, r.bound);
        notes.push(w.clone());
        report.warnings.push(w);
    }
    report
}

fn critical(cfg: &RunConfig, model: &ModelCoefficients, art: &mut Artifacts) -> Result<Outcome> {
    let cp = locate_critical(cfg, model)?;
    let [lo, hi] = cfg
        .critical
        .bracket
        .unwrap_or([0.5 * cp.extrapolated, 1.5 * cp.extrapolated]);
    let root = stage(
        "zc_from_susceptibility",
        zc_from_susceptibility_with(model, lo, hi, cfg.tail_tol.max(1e-13), cfg.m_max),
    )?;
    let zeta = match model.theta() {
        Some(_) => {
            let [a, b] = cfg.critical.zeta_window.unwrap_or([50, 500]);
            let b = b.min(cfg.critical.n);
            if a < b {
                Some([
                    stage("zeta_scaling", zeta_scaling_along_sequence(model, a, b))?,
                    stage("zeta_scaling", zeta_scaling(model, root.z_c, a, b))?,
                ])
            } else {
                None
            }
        }
        None => None,
    };
    art.json(
        "critical_point.json",
        &serde_json::json!({
            "critical_point": cp,
            "susceptibility_root": root,
            "difference": root.difference(cp.extrapolated),
            "zeta_scaling": zeta,
        }),
    )?;
    Ok(Outcome::Passed)
}

fn certify_induction(
    cfg: &RunConfig,
    model: &ModelCoefficients,
    art: &mut Artifacts,
    opts: RunOptions,
    notes: &mut Vec<String>,
) -> Result<Outcome> {
    let ind = cfg.induction.as_ref().expect("validated");
    let kernel = model.kernel();
    let (z, cp) = resolve_z(cfg, model)?;
    let n = cfg.n;
    let kset = stage("kset", cfg.build_kset(kernel.dim(), kernel.range()))?;
    let trace = stage("evolve", evolve(model, z, &kset, n))?;
    let spec = cfg.quadrature_for(kernel.dim(), kernel.range());
    let norms = stage(
        "lp_norm_d2f",
        lp_norm_d2f(model, z, n, &ind.p_list, &spec, Some(ind.gamma)),
    )?;
    art.csv("norms.csv", |buf| write_norms_csv(&norms, buf))?;

    let mut report = validate_kconds(ind, notes);
    report.merge(stage("fbdsp", check_fbdsp(&trace, ind, ind.c * ind.k4, n, &norms))?);
    let eps_primes = cfg.certify.eps_primes.clone().unwrap_or_else(|| vec![0.0, ind.epsilon]);
    report.merge(stage(
        "assumptions_eg",
        check_assumptions_eg(model, &[z], ind, ind.c_e, ind.c_g, n, &kset, &eps_primes),
    )?);
    report.merge(stage("check_h1_h4", check_h1_h4(&trace, ind, n))?);
    report.merge(stage("lemma_ca", check_lemma_ca(&trace, ind, cfg.certify.lemma_c, n))?);
    report.merge(stage(
        "lemma_fder",
        check_lemma_fder(&trace, ind, cfg.certify.lemma_c, n),
    )?);
    if let Some(cp) = cp {
        report.warnings.push(format!(
            "evaluated at z = {} (critical, error bound {:e})",
            z, cp.error_bound
        ));
    }
    let outcome = certificate_outcome(&report, opts);
    write_certificate(art, &mut report, opts)?;
    Ok(outcome)
}

fn gaussian(cfg: &RunConfig, model: &ModelCoefficients, art: &mut Artifacts) -> Result<Outcome> {
    let cp = locate_critical(cfg, model)?;
    let constants = stage(
        "constants",
        constants_av(model, cp.extrapolated, cfg.m_max, cfg.tail_tol),
    )?;
    let n_list = cfg.gaussian_n_list();
    let delta = cfg.induction.as_ref().map(|c| c.delta);
    let d = model.kernel().dim();
    let profile = stage(
        "gaussian_profile",
        gaussian_profile(model, &constants, &n_list, &cfg.kappa_grid(d), cfg.gamma(), delta),
    )?;
    let hessian = stage("hessian_ratio", hessian_ratio(model, &constants, &n_list))?;
    art.csv("gaussian.csv", |buf| profile.write_csv(buf))?;
    #[derive(Serialize)]
    struct Row {
        n: usize,
        max_deviation: f64,
        origin_deviation: Option<f64>,
        excluded: usize,
        hessian_ratio: f64,
    }
    let rows: Vec<Row> = profile
        .results
        .iter()
        .zip(&hessian.ratio)
        .map(|(r, h)| Row {
            n: r.n,
            max_deviation: r.max_deviation,
            origin_deviation: r.origin_deviation,
            excluded: r.excluded,
            hessian_ratio: *h,
        })
        .collect();
    art.json(
        "gaussian.json",
        &serde_json::json!({
            "constants": constants,
            "per_n": rows,
            "envelope_slope": profile.envelope_slope(),
            "envelope_window": profile.envelope_window,
            "origin_slope": profile.origin_fit.map(|f| f.slope),
            "split": profile.split,
            "hessian_slope": hessian.fit.map(|f| f.slope),
        }),
    )?;
    Ok(Outcome::Passed)
}

fn norms(cfg: &RunConfig, model: &ModelCoefficients, d: usize, range: u32, art: &mut Artifacts) -> Result<Outcome> {
    let (z, _) = resolve_z(cfg, model)?;
    let spec = cfg.quadrature_for(d, range);
    let p_list = cfg.p_list();
    let gamma = cfg.induction.as_ref().map(|c| c.gamma);
    let records = stage("lp_norm_d2f", lp_norm_d2f(model, z, cfg.n, &p_list, &spec, gamma))?;
    art.csv("norms.csv", |buf| write_norms_csv(&records, buf))?;
    let [lo, hi] = cfg.norms.fit_window.unwrap_or([(cfg.n / 10).max(1), cfg.n]);
    let mut fits = Vec::new();
    for &p in &p_list {
        let (xs, ys): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.p == p && r.n >= lo && r.n <= hi)
            .map(|r| (r.n as f64, r.norm))
            .unzip();
        let fit = loglog_fit_last_decade(&xs, &ys).ok();
        fits.push(serde_json::json!({
            "p": p,
            "window": [lo, hi],
            "decay_exponent": fit.map(|(f, _)| f.slope),
            "expected": -(d as f64) / (2.0 * p),
        }));
    }
    art.json(
        "norms.json",
        &serde_json::json!({ "z": z, "method": spec.method(), "seed": spec.seed(), "fits": fits }),
    )?;
    Ok(Outcome::Passed)
}

fn chi(cfg: &RunConfig, model: &ModelCoefficients, art: &mut Artifacts) -> Result<Outcome> {
    let cp = locate_critical(cfg, model)?;
    let [lo, hi] = cfg
        .critical
        .bracket
        .unwrap_or([0.5 * cp.extrapolated, 1.5 * cp.extrapolated]);
    let root = stage(
        "zc_from_susceptibility",
        zc_from_susceptibility_with(model, lo, hi, cfg.tail_tol.max(1e-13), cfg.m_max),
    )?;
    let z_list = cfg
        .susceptibility
        .z_list
        .clone()
        .unwrap_or_else(|| (1..=3).map(|j| root.z_c * (1.0 - 10f64.powi(-j))).collect());
    let report = stage("chi_identity", chi_identity_check(model, &z_list, cfg.n, root.z_c))?;
    art.csv("chi.csv", |buf| report.write_csv(buf))?;
    let growth = match constants_av(model, root.z_c, cfg.m_max, cfg.tail_tol) {
        Ok(c) if cfg.n >= 20 => Some(stage("chi_growth", chi_growth(model, &c, cfg.n))?),
        _ => None,
    };
    art.json(
        "susceptibility.json",
        &serde_json::json!({
            "root": root,
            "records": report.records,
            "divergence_exponent": report.divergence_exponent(),
            "chi_growth": growth,
        }),
    )?;
    Ok(Outcome::Passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        parse_config(text, Path::new(".")).unwrap()
    }

    #[test]
    fn config_defaults_and_z() {
        let c = cfg(r#"{"kernel": {"type": "uniform_box", "d": 2, "L": 1}, "model": {"type": "pure_random_walk"}}"#);
        assert_eq!(c.z, ZSpec::Critical(CriticalTag::Critical));
        assert_eq!(c.n, 100);
        let c = cfg(r#"{"kernel": {"type": "uniform_box", "d": 2, "L": 1}, "z": 0.9, "N": 7}"#);
        assert_eq!(c.z, ZSpec::Value(0.9));
        assert_eq!(c.n, 7);
        assert!(c.validate_for(Command::CertifyKernel).is_ok());
        assert!(c.validate_for(Command::Run).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let base = Path::new(".");
        assert!(parse_config(r#"{"kernal": {}}"#, base).is_err());
        assert!(parse_config(r#"{"kernel": {"type": "uniform_box", "d": 2, "L": 1, "x": 1}}"#, base).is_err());
        assert!(parse_config(r#"{"z": "subcritical"}"#, base).is_err());
    }

    #[test]
    fn missing_kernel_is_usage_error() {
        let c = cfg(r#"{"model": {"type": "pure_random_walk"}}"#);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(
            execute(Command::Run, &c, &out, RunOptions::default()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(!out.exists());
    }

    #[test]
    fn auto_kset_starts_at_origin() {
        let c = cfg(r#"{"kernel": {"type": "uniform_box", "d": 2, "L": 1}}"#);
        let ks = c.build_kset(2, 1).unwrap();
        assert!(ks[0].is_origin());
        assert_eq!(ks.iter().filter(|k| k.is_origin()).count(), 1);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let c = cfg(r#"{"kernel": {"type": "uniform_box", "d": 2, "L": 1},
                "model": {"type": "tabulated", "path": "does-not-exist.json"}}"#);
        let dir = tempfile::tempdir().unwrap();
        let err = execute(Command::Run, &c, dir.path(), RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "model", .. }), "{err}");
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert!(manifest.status.starts_with("error: stage `model`"));
    }
}
