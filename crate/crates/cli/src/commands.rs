use std::fmt::Write as _;
use std::path::PathBuf;

use dpp_transfer::countlaw::verify_transference;
use dpp_transfer::sampling::discretize_for_sampling;
use dpp_transfer::tail::{downward_martingale_probe, levy_convergence, tail_mixing_sweep, EstimateRow, LevyPlan};
use dpp_transfer::transference::{spectrum_check, transfer_partition};
use dpp_transfer::{joint_law, DppSampler, Error, RngStream, VERSION};
use ndarray::Array2;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: "validation".into(),
            message: message.into(),
            code: 1,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: "internal".into(),
            message: message.into(),
            code: 3,
        }
    }

    fn tolerance(message: impl Into<String>) -> Self {
        CliError {
            kind: "tolerance".into(),
            message: message.into(),
            code: 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Validation(_) | Error::Domain(_) | Error::TooLarge(_) | Error::Json(_) => 1,
            Error::Leakage { .. } | Error::Tolerance(_) => 2,
            Error::Numerical(_) | Error::Io(_) => 3,
        };
        CliError {
            kind: e.kind().into(),
            message: e.to_string(),
            code,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    out: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::validation(format!("cannot create {}: {e}", out.display())))?;
        let stale = out.join("error.json");
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| CliError::internal(e.to_string()))?;
        }
        Ok(Context {
            hash: cfg.hash(),
            cfg,
            out,
        })
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        std::fs::write(self.out.join(name), text)
            .map_err(|e| CliError::internal(format!("cannot write {name}: {e}")))
    }

    /// Writes `payload` with the config hash and library version prepended.
    fn write_json(&self, name: &str, payload: Value) -> CliResult<()> {
        let mut obj = Map::new();
        obj.insert("config_hash".into(), json!(self.hash));
        obj.insert("version".into(), json!(VERSION));
        match payload {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| CliError::internal(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    /// Run manifest: enough to reconstruct the run.
    fn write_manifest(&self, outputs: &[&str], extra: Value) -> CliResult<()> {
        self.write_json(
            "manifest.json",
            json!({
                "subcommand": self.cfg.subcommand,
                "config": self.cfg,
                "outputs": outputs,
                "results": extra,
            }),
        )
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| CliError::internal(e.to_string()))
}

/// Kernel matrix for discrete kernels, or the grid transfer of a continuous
/// kernel together with its leakage.
fn discrete_matrix(ctx: &Context) -> CliResult<(Array2<f64>, Option<f64>, Option<Vec<f64>>)> {
    let built = ctx.cfg.kernel.build()?;
    if let Some(m) = built.matrix {
        return Ok((m, None, None));
    }
    let cells = ctx
        .cfg
        .grid_cells
        .ok_or_else(|| CliError::validation("continuous kernels need grid_cells"))?;
    let grid = discretize_for_sampling(&built.kernel, cells, ctx.cfg.tol)?;
    let mids = grid.midpoints();
    Ok((grid.transferred.q, Some(grid.transferred.leakage), Some(mids)))
}

pub fn transfer(ctx: &Context) -> CliResult<()> {
    let k = ctx.cfg.kernel.build()?.kernel;
    let p = ctx.cfg.require_partition(k.space())?;
    let q = transfer_partition(&k, &p, ctx.cfg.tol)?;
    let spectrum = spectrum_check(&k, &q)?;
    let verify = verify_transference(&k, &p, &q)?;
    let pass = spectrum.pass && verify.pass;
    ctx.write_json("Q.json", json!({ "transferred": to_value(&q.to_json())? }))?;
    ctx.write_json(
        "report.json",
        json!({
            "pass": pass,
            "leakage": q.leakage,
            "tol": ctx.cfg.tol,
            "size": q.size(),
            "spectrum": to_value(&spectrum)?,
            "verify": to_value(&verify)?,
        }),
    )?;
    ctx.write_manifest(&["Q.json", "report.json"], json!({ "pass": pass }))?;
    if !pass {
        return Err(CliError::tolerance(format!(
            "spectrum discrepancy {:e} (bound {:e}) or count-law TV {:e} (bound {:e}) out of bounds",
            spectrum.discrepancy, spectrum.bound, verify.tv, verify.bound
        )));
    }
    Ok(())
}

pub fn sample(ctx: &Context) -> CliResult<()> {
    let seed = ctx.cfg.require_seed()?;
    let n = ctx.cfg.require_samples()?;
    let (m, leakage, mids) = discrete_matrix(ctx)?;
    let sampler = DppSampler::new(&m)?;
    let stream = RngStream::new(seed, ctx.cfg.stream.unwrap_or(0));
    let mut csv = String::new();
    for c in sampler.sample_many(stream, n) {
        let line = match &mids {
            None => c.to_csv_line(),
            Some(x) => {
                let dpp_transfer::PointConfiguration::Sites(s) = &c else { unreachable!() };
                s.iter().map(|&i| format!("{:e}", x[i])).collect::<Vec<_>>().join(",")
            }
        };
        csv.push_str(&line);
        csv.push('\n');
    }
    ctx.write_text("samples.csv", &csv)?;
    ctx.write_manifest(
        &["samples.csv"],
        json!({ "n_samples": n, "sites": sampler.sites(), "rank": sampler.rank(), "grid_leakage": leakage }),
    )
}

pub fn count_law(ctx: &Context) -> CliResult<()> {
    let k = ctx.cfg.kernel.build()?.kernel;
    let p = ctx.cfg.require_partition(k.space())?;
    let law = joint_law(&k, p.cells())?;
    ctx.write_json("countlaw.json", json!({ "law": to_value(&law.to_json())? }))?;
    ctx.write_text("countlaw.csv", &law.to_csv())?;
    ctx.write_manifest(&["countlaw.json", "countlaw.csv"], json!({ "total_mass": law.total_mass() }))
}

pub fn verify(ctx: &Context) -> CliResult<()> {
    let k = ctx.cfg.kernel.build()?.kernel;
    let mut specs: Vec<_> = ctx.cfg.partition.iter().cloned().collect();
    specs.extend(ctx.cfg.partitions.iter().cloned());
    if specs.is_empty() {
        return Err(CliError::validation("verify needs a partition or partitions"));
    }
    let mut results = Vec::new();
    let mut all = true;
    for spec in &specs {
        let p = spec.build(k.space())?;
        let q = transfer_partition(&k, &p, ctx.cfg.tol)?;
        let v = verify_transference(&k, &p, &q)?;
        let s = spectrum_check(&k, &q)?;
        let pass = v.pass && s.pass;
        all &= pass;
        results.push(json!({
            "partition": to_value(spec)?,
            "pass": pass,
            "verify": to_value(&v)?,
            "spectrum_discrepancy": s.discrepancy,
        }));
    }
    ctx.write_json("verify.json", json!({ "pass": all, "results": results }))?;
    ctx.write_manifest(&["verify.json"], json!({ "pass": all }))?;
    if !all {
        return Err(CliError::tolerance("at least one partition failed its bound"));
    }
    Ok(())
}

fn rows_csv(rows: &[EstimateRow]) -> String {
    let mut s = String::from("parameter,estimate,std_error,n_effective\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e},{}", r.parameter, r.estimate, r.std_error, r.n_effective);
    }
    s
}

pub fn tail_sweep(ctx: &Context) -> CliResult<()> {
    let plan = ctx.cfg.tail_plan()?;
    let (m, leakage, _) = discrete_matrix(ctx)?;
    let sweep = tail_mixing_sweep(&m, &plan)?;
    let probe = downward_martingale_probe(&m, &plan)?;
    ctx.write_text("sweep.csv", &rows_csv(&sweep.rows))?;
    ctx.write_text("probe.csv", &rows_csv(&probe.rows))?;
    let summary = |r: &dpp_transfer::TailReport| {
        json!({
            "shrink": r.shrink,
            "max_increase": r.max_increase,
            "increases_beyond_3se": r.increases_beyond_3se,
            "weakly_decreasing": r.weakly_decreasing(),
        })
    };
    ctx.write_manifest(
        &["sweep.csv", "probe.csv"],
        json!({ "sweep": summary(&sweep), "probe": summary(&probe), "grid_leakage": leakage }),
    )
}

pub fn levy(ctx: &Context) -> CliResult<()> {
    let spec = ctx
        .cfg
        .levy
        .as_ref()
        .ok_or_else(|| CliError::validation("levy needs a levy section"))?;
    let k = ctx.cfg.kernel.build()?.kernel;
    let plan = LevyPlan {
        base: ctx.cfg.require_partition(k.space())?,
        factor: spec.factor,
        levels: spec.levels,
        event: spec.event.clone(),
        n_samples: ctx.cfg.require_samples()?,
        seed: ctx.cfg.require_seed()?,
        tol: ctx.cfg.tol,
    };
    let rows = levy_convergence(&k, &plan)?;
    let mut csv = String::from("parameter,estimate,std_error,n_effective,pooled_strata\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:e},{:e},{},{}", r.level, r.error, r.std_error, r.strata, r.pooled_strata);
    }
    ctx.write_text("levy.csv", &csv)?;
    let last = rows.last().map(|r| r.error);
    ctx.write_manifest(&["levy.csv"], json!({ "finest_level_error": last }))
}
