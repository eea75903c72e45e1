//! Experiment configuration files (TOML, or JSON by extension) and their
//! translation into engine inputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use greedy_core::counterexample::{build_plan, build_target, CounterexampleConfig};
use greedy_core::dictionary::{AtomId, Dictionary, DictionaryKind, SquareMatrix};
use greedy_core::greedy::{RunOptions, SelectionPolicy};
use greedy_core::sequences::{CoefficientSequence, Schedule, WeakeningSequence};
use greedy_core::vector::SparseVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "GREEDY_SEED";

const DICTIONARY_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub max_steps: usize,
    /// Stop once `‖f_m‖` drops below this value; recorded as a truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_exit: Option<f64>,
    #[serde(default)]
    pub policy: PolicySpec,
    pub target: TargetSpec,
    pub dictionary: DictionarySpec,
    pub coefficients: CoefficientSpec,
    pub weakening: WeakeningSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A vector given either densely (coordinates 1, 2, ...) or as
/// `[coord, value]` pairs, where a coord is an index or `[block, index]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Dense(Vec<f64>),
    Sparse(SparseVector<f64>),
}

impl VectorSpec {
    fn build(&self) -> Result<SparseVector<f64>> {
        match self {
            VectorSpec::Dense(xs) => {
                if xs.iter().any(|x| !x.is_finite()) {
                    bail!("vector has non-finite coordinates");
                }
                Ok(SparseVector::from_dense(xs))
            }
            VectorSpec::Sparse(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    MaxGreedy {},
    Scripted {
        atoms: Vec<AtomId>,
    },
    /// The selections of the counterexample plan; needs a counterexample
    /// target.
    Adversarial {},
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::MaxGreedy {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Inline {
        coords: VectorSpec,
    },
    /// JSON vector (either form) or a text file with one value per line.
    File {
        path: PathBuf,
    },
    /// Standard Gaussian coordinates 1..=dim, drawn from the seed.
    Random {
        dim: usize,
    },
    Counterexample {
        t: f64,
        groups: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    Onb {},
    Finite {
        atoms: Vec<VectorSpec>,
    },
    AugmentedOnb {
        extra: Vec<VectorSpec>,
        eprime: Vec<u64>,
    },
    DirectSum {
        components: Vec<DictionarySpec>,
    },
    Pushforward {
        base: Box<DictionarySpec>,
        matrix: Vec<Vec<f64>>,
    },
    /// `count` Gaussian atoms in R^dim, drawn from the seed.
    RandomFinite {
        dim: usize,
        count: usize,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Harmonic {
        #[serde(default = "one")]
        scale: f64,
    },
    Power {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Explicit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
    },
    /// The coefficients of the counterexample plan.
    Adversarial {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeakeningSpec {
    ConstantT {
        t: f64,
    },
    Explicit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Defaults to the trace path with extension `meta.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// Optional full JSON export of the trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).context("invalid JSON config")
        } else {
            toml::from_str(text).context("invalid TOML config")
        }
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = Self::parse(&text, json).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Replaces the seed with `GREEDY_SEED` when that variable is set.
    pub fn apply_seed_override(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        }
        Ok(())
    }
}

/// Engine inputs assembled from a config.
pub struct Experiment {
    pub target: SparseVector<f64>,
    pub dictionary: Dictionary<f64>,
    pub schedule: Schedule<f64>,
    pub policy: SelectionPolicy,
    pub options: RunOptions<f64>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("{}:{}: not a number", path.display(), i + 1))
        })
        .collect()
}

fn values(
    values: &Option<Vec<f64>>,
    file: &Option<PathBuf>,
    base: &Path,
    what: &str,
) -> Result<Vec<f64>> {
    match (values, file) {
        (Some(v), None) => Ok(v.clone()),
        (None, Some(f)) => read_values(&base.join(f)),
        _ => bail!("explicit {what} need exactly one of `values` or `file`"),
    }
}

fn read_vector(path: &Path) -> Result<SparseVector<f64>> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let spec: VectorSpec = serde_json::from_str(&text)
            .with_context(|| format!("bad vector in {}", path.display()))?;
        spec.build()
    } else {
        Ok(SparseVector::from_dense(&read_values(path)?))
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> SparseVector<f64> {
    let xs: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    SparseVector::from_dense(&xs)
}

fn build_dictionary(spec: &DictionarySpec, rng: &mut ChaCha8Rng) -> Result<Dictionary<f64>> {
    let atoms = |vs: &[VectorSpec]| vs.iter().map(VectorSpec::build).collect::<Result<Vec<_>>>();
    let d = match spec {
        DictionarySpec::Onb {} => Dictionary::symmetrized_onb(),
        DictionarySpec::Finite { atoms: a } => Dictionary::finite(atoms(a)?)?,
        DictionarySpec::AugmentedOnb { extra, eprime } => {
            Dictionary::augmented_onb(atoms(extra)?, eprime.iter().copied())?
        }
        DictionarySpec::DirectSum { components } => Dictionary::direct_sum(
            components
                .iter()
                .map(|c| build_dictionary(c, rng))
                .collect::<Result<Vec<_>>>()?,
        )?,
        DictionarySpec::Pushforward { base, matrix } => {
            let base = build_dictionary(base, rng)?;
            Dictionary::pushforward(&base, SquareMatrix::from_rows(matrix.clone())?)?
        }
        DictionarySpec::RandomFinite { dim, count } => {
            if *dim == 0 || *count == 0 {
                bail!("random_finite needs positive dim and count");
            }
            Dictionary::finite((0..*count).map(|_| gaussian_vector(rng, *dim)).collect())?
        }
    };
    Ok(d)
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        let dictionary = build_dictionary(&cfg.dictionary, &mut rng(cfg.seed, DICTIONARY_STREAM))
            .context("dictionary")?;

        let mut plan = None;
        let target = match &cfg.target {
            TargetSpec::Inline { coords } => coords.build()?,
            TargetSpec::File { path } => read_vector(&base.join(path))?,
            TargetSpec::Random { dim } => {
                if *dim == 0 {
                    bail!("random target needs dim >= 1");
                }
                gaussian_vector(&mut rng(cfg.seed, TARGET_STREAM), *dim)
            }
            TargetSpec::Counterexample { t, groups, k } => {
                let cx = match k {
                    Some(k) => CounterexampleConfig::with_k(*t, *k, *groups),
                    None => CounterexampleConfig::new(*t, *groups),
                }?;
                plan = Some(build_plan(&cx)?);
                build_target(&cx)
            }
        };
        let is_sum = dictionary.kind() == DictionaryKind::DirectSum;
        let plain = target.entries().iter().any(|(c, _)| c.block().is_none());
        if is_sum && plain {
            bail!("a direct-sum target needs [block, index] coordinates everywhere");
        }
        if !is_sum && target.has_block_coords() {
            bail!("block coordinates need a direct_sum dictionary");
        }
        let need_plan = || {
            plan.as_ref()
                .ok_or_else(|| anyhow!("adversarial specs need a counterexample target"))
        };

        let coefficients = match &cfg.coefficients {
            CoefficientSpec::Harmonic { scale } => CoefficientSequence::Harmonic { scale: *scale },
            CoefficientSpec::Power { alpha, scale } => CoefficientSequence::Power {
                alpha: *alpha,
                scale: *scale,
            },
            CoefficientSpec::Explicit { values: v, file } => {
                CoefficientSequence::Explicit(values(v, file, base, "coefficients")?)
            }
            CoefficientSpec::Adversarial {} => need_plan()?.coefficients.clone(),
        };
        let weakening = match &cfg.weakening {
            WeakeningSpec::ConstantT { t } => WeakeningSequence::Constant(*t),
            WeakeningSpec::Explicit { values: v, file } => {
                WeakeningSequence::Explicit(values(v, file, base, "weakening")?)
            }
        };
        let schedule = Schedule::new(coefficients, weakening);
        schedule.validate().context("schedule")?;

        let policy = match &cfg.policy {
            PolicySpec::MaxGreedy {} => SelectionPolicy::MaxGreedy,
            PolicySpec::Scripted { atoms } => SelectionPolicy::Scripted(atoms.clone()),
            PolicySpec::Adversarial {} => {
                SelectionPolicy::Scripted(need_plan()?.selections.clone())
            }
        };
        if let Some(th) = cfg.early_exit {
            if !(th > 0.0 && th.is_finite()) {
                bail!("early_exit must be a positive number");
            }
        }
        // The plan is finite: stop where it ends, as the counterexample command does.
        let max_steps = match (&cfg.policy, &plan) {
            (PolicySpec::Adversarial {}, Some(p)) => cfg.max_steps.min(p.len()),
            _ => cfg.max_steps,
        };
        Ok(Self {
            target,
            dictionary,
            schedule,
            policy,
            options: RunOptions {
                max_steps,
                early_exit: cfg.early_exit,
            },
        })
    }
}
