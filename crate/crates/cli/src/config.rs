//! Run configuration: a versioned JSON document with unknown keys rejected.

use dpp_transfer::ground::PartitionJson;
use dpp_transfer::kernel::presets;
use dpp_transfer::kernel::DEFAULT_DEGREE;
use dpp_transfer::tail::{LevyEvent, TailEvent, TailMethod, TailPlan};
use dpp_transfer::{Error, GroundSpace, Partition, Result, SpectralKernel};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<String>,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
    /// Extra partitions checked by `verify`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Grid used to sample or probe continuous kernels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy: Option<LevySpec>,
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    Diag {
        p: Vec<f64>,
    },
    ConstantRank1,
    FourierProjection {
        rank: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        degree: Option<usize>,
    },
    DiscretizedSine {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
    Spectral {
        basis: Basis,
        eigenvalues: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        degree: Option<usize>,
    },
    Matrix {
        matrix: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Fourier,
    Legendre,
}

pub const DEFAULT_BANDWIDTH: f64 = 0.3;

/// A kernel together with its exact matrix when the ground space is
/// discrete.
pub struct BuiltKernel {
    pub kernel: SpectralKernel,
    pub matrix: Option<Array2<f64>>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<BuiltKernel> {
        let kernel = match self {
            KernelSpec::Diag { p } => presets::diag(p)?,
            KernelSpec::ConstantRank1 => presets::constant_rank1(),
            KernelSpec::FourierProjection { rank, degree } => {
                presets::fourier_projection(*rank, degree.unwrap_or(DEFAULT_DEGREE))?
            }
            KernelSpec::DiscretizedSine { n, bandwidth } => {
                let m = presets::discretized_sine_matrix(*n, bandwidth.unwrap_or(DEFAULT_BANDWIDTH))?;
                return Ok(BuiltKernel {
                    kernel: SpectralKernel::from_matrix(&m)?,
                    matrix: Some(m),
                });
            }
            KernelSpec::Spectral { basis, eigenvalues, degree } => match basis {
                Basis::Fourier => presets::fourier_spectral(eigenvalues, degree.unwrap_or(DEFAULT_DEGREE))?,
                Basis::Legendre => {
                    if degree.is_some() {
                        return Err(Error::Validation("legendre spectral kernels take no degree".into()));
                    }
                    presets::legendre_spectral(eigenvalues)?
                }
            },
            KernelSpec::Matrix { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Validation("matrix must be square and nonempty".into()));
                }
                let m = Array2::from_shape_fn((n, n), |(i, j)| matrix[i][j]);
                for i in 0..n {
                    for j in 0..i {
                        if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 {
                            return Err(Error::Validation(format!("matrix not symmetric at ({i},{j})")));
                        }
                    }
                }
                return Ok(BuiltKernel {
                    kernel: SpectralKernel::from_matrix(&m)?,
                    matrix: Some(m),
                });
            }
        };
        let matrix = match kernel.space() {
            GroundSpace::Discrete { .. } => Some(kernel.matrix()?),
            GroundSpace::Interval { .. } => None,
        };
        Ok(BuiltKernel { kernel, matrix })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Uniform { cells: usize },
    Singletons,
    Explicit { partition: PartitionJson },
}

impl PartitionSpec {
    pub fn build(&self, space: &GroundSpace) -> Result<Partition> {
        match self {
            PartitionSpec::Uniform { cells } => Partition::uniform(space.clone(), *cells),
            PartitionSpec::Singletons => match space {
                GroundSpace::Discrete { size } => Partition::singletons(*size),
                GroundSpace::Interval { .. } => {
                    Err(Error::Validation("singleton partitions need a discrete kernel".into()))
                }
            },
            PartitionSpec::Explicit { partition } => {
                let p = Partition::from_json(partition)?;
                if p.space() != space {
                    return Err(Error::Validation("partition ground space differs from the kernel's".into()));
                }
                Ok(p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    pub near: Vec<usize>,
    pub radii: Vec<usize>,
    #[serde(default = "one")]
    pub far_cell_size: usize,
    pub event: TailEvent,
    pub method: TailMode,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpec {
    #[serde(default = "two")]
    pub factor: usize,
    pub levels: usize,
    pub event: LevyEvent,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Validation(format!("tol must be positive, got {}", self.tol)));
        }
        if self.grid_cells == Some(0) {
            return Err(Error::Validation("grid_cells must be positive".into()));
        }
        if self.n_samples == Some(0) {
            return Err(Error::Validation("n_samples must be positive".into()));
        }
        Ok(())
    }

    /// Canonical serialization: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self)
            .and_then(|v| serde_json::to_string(&v))
            .expect("config serializes")
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Validation("this subcommand is stochastic and needs a seed".into()))
    }

    pub fn require_samples(&self) -> Result<usize> {
        self.n_samples
            .ok_or_else(|| Error::Validation("this subcommand needs n_samples".into()))
    }

    pub fn require_partition(&self, space: &GroundSpace) -> Result<Partition> {
        self.partition
            .as_ref()
            .ok_or_else(|| Error::Validation("this subcommand needs a partition".into()))?
            .build(space)
    }

    pub fn tail_plan(&self) -> Result<TailPlan> {
        let spec = self
            .tail
            .as_ref()
            .ok_or_else(|| Error::Validation("tail-sweep needs a tail section".into()))?;
        let method = match spec.method {
            TailMode::Exact => TailMethod::Exact,
            TailMode::MonteCarlo => TailMethod::MonteCarlo {
                n_samples: self.require_samples()?,
                seed: self.require_seed()?,
            },
        };
        Ok(TailPlan {
            near: spec.near.clone(),
            radii: spec.radii.clone(),
            far_cell_size: spec.far_cell_size,
            event: spec.event,
            method,
        })
    }
}
