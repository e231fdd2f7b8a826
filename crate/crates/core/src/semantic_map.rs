//! Continuous multi-class semantic map built from one-vs-rest probit GP
//! classifiers sharing a single set of training inputs.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{ClassInfo, ClassSet};
use crate::error::{GpsmError, Result};
use crate::gp::{
    laplace_fit, laplace_fit_fitc, optimize_hyperparameters, probit_predict, select_inducing,
    InducingSelection, LaplaceState, LatentPrediction, Objective, OptimizationOutcome,
    TrainingData,
};
use crate::kernels::{Hyperparameters, Kernel};
use crate::pointcloud::LabeledPointCloud;

/// Latent mean given to classes without a single positive example. Large
/// enough that `Φ(c_m/√(1+σ_f²))` underflows to zero for any sensible
/// `σ_f`, so such classes never take probability mass from the others.
pub const DEGENERATE_MEAN: f64 = -1.0e3;

const FORMAT_VERSION: u8 = 1;

/// Labeled points drawn from a cloud for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSubset {
    /// `d × n_t`
    pub inputs: DMatrix<f64>,
    pub labels: Vec<u16>,
    /// Positions of the selected points in the source cloud.
    pub indices: Vec<usize>,
}

/// Keep the labeled points of `cloud`; if more than `max_points` remain,
/// draw a uniform subset of that size (sorted by source index).
pub fn select_training_subset(
    cloud: &LabeledPointCloud,
    max_points: usize,
    seed: u64,
) -> Result<TrainingSubset> {
    let labeled: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.labels()[i].is_some())
        .collect();
    if labeled.is_empty() {
        return Err(GpsmError::input("the cloud has no labeled points"));
    }
    if max_points == 0 {
        return Err(GpsmError::input("max training points must be positive"));
    }
    let indices = if labeled.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick: Vec<usize> = rand::seq::index::sample(&mut rng, labeled.len(), max_points)
            .into_iter()
            .map(|k| labeled[k])
            .collect();
        pick.sort_unstable();
        pick
    } else {
        labeled
    };
    let inputs = DMatrix::from_fn(3, indices.len(), |r, c| {
        cloud.points()[indices[c]][r] as f64
    });
    let labels = indices
        .iter()
        .map(|&i| cloud.labels()[i].unwrap())
        .collect();
    Ok(TrainingSubset {
        inputs,
        labels,
        indices,
    })
}

/// Latent-posterior backend of each per-class classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inference {
    Exact,
    Fitc {
        num_inducing: usize,
        #[serde(default)]
        selection: InducingSelection,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsmConfig {
    pub kernel: Kernel,
    pub inference: Inference,
    /// Minimize each classifier's Laplace NLML starting from `theta0`.
    pub optimize: bool,
    /// Objective evaluations per class when optimizing.
    pub budget: usize,
    /// Seed for inducing-point selection.
    pub seed: u64,
}

impl Default for GpsmConfig {
    fn default() -> Self {
        GpsmConfig {
            kernel: Kernel::Matern52,
            inference: Inference::Fitc {
                num_inducing: 300,
                selection: InducingSelection::FarthestPoint,
            },
            optimize: false,
            budget: 40,
            seed: 0,
        }
    }
}

/// One binary classifier of the one-vs-rest stack.
#[derive(Debug, Clone)]
pub struct ClassModel {
    theta: Hyperparameters,
    /// `None` for a degenerate class (no positive examples).
    state: Option<LaplaceState>,
    converged: bool,
    optimization: Option<OptimizationOutcome>,
}

impl ClassModel {
    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn is_degenerate(&self) -> bool {
        self.state.is_none()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn state(&self) -> Option<&LaplaceState> {
        self.state.as_ref()
    }

    /// Present when the classifier was trained with optimization enabled.
    pub fn optimization(&self) -> Option<&OptimizationOutcome> {
        self.optimization.as_ref()
    }

    fn latent(&self, x_star: &[f64]) -> Result<LatentPrediction> {
        match &self.state {
            Some(s) => s.predict(x_star),
            None => Ok(LatentPrediction {
                mean: self.theta.mean_const,
                variance: self.theta.signal_var(),
            }),
        }
    }
}

/// Normalized class distribution at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPrediction {
    pub location: Vec<f64>,
    pub class_probs: Vec<f64>,
    /// Class id of the most probable class (lowest index on ties).
    pub hard_label: u16,
    pub hard_index: usize,
    pub per_class_latent: Vec<LatentPrediction>,
    /// Set when every raw probability underflowed and the uniform
    /// distribution was returned instead.
    pub uniform_fallback: bool,
}

/// Index of the largest entry, first on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GpsmModel {
    class_set: ClassSet,
    kernel: Kernel,
    inference: Inference,
    inputs: DMatrix<f64>,
    labels: Vec<u16>,
    inducing: Option<DMatrix<f64>>,
    classes: Vec<ClassModel>,
}

fn class_targets(labels: &[u16], id: u16) -> DVector<f64> {
    DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l == id { 1.0 } else { -1.0 }),
    )
}

/// Train one classifier per class: `+1` on points of that class, `−1`
/// elsewhere. Classes are trained in parallel.
pub fn train_gpsm(
    inputs: &DMatrix<f64>,
    labels: &[u16],
    class_set: &ClassSet,
    config: &GpsmConfig,
    theta0: &Hyperparameters,
) -> Result<GpsmModel> {
    if inputs.ncols() != labels.len() {
        return Err(GpsmError::input("inputs and labels differ in length"));
    }
    if inputs.ncols() == 0 {
        return Err(GpsmError::input("no training points"));
    }
    if theta0.dim() != inputs.nrows() {
        return Err(GpsmError::input(
            "hyperparameter dimension does not match the inputs",
        ));
    }
    for &l in labels {
        class_set.require_index(l)?;
    }
    let inducing = match config.inference {
        Inference::Exact => None,
        Inference::Fitc {
            num_inducing,
            selection,
        } => Some(select_inducing(
            inputs,
            num_inducing,
            selection,
            config.seed,
        )?),
    };

    let classes = class_set
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|class| train_class(inputs, labels, class.id, config, inducing.as_ref(), theta0))
        .collect::<Result<Vec<_>>>()?;

    Ok(GpsmModel {
        class_set: class_set.clone(),
        kernel: config.kernel,
        inference: config.inference,
        inputs: inputs.clone(),
        labels: labels.to_vec(),
        inducing,
        classes,
    })
}

fn fit(
    kernel: Kernel,
    train: &TrainingData,
    inducing: Option<&DMatrix<f64>>,
    theta: &Hyperparameters,
) -> Result<LaplaceState> {
    match inducing {
        None => laplace_fit(kernel, train, theta),
        Some(u) => laplace_fit_fitc(kernel, train, u, theta),
    }
}

fn train_class(
    inputs: &DMatrix<f64>,
    labels: &[u16],
    id: u16,
    config: &GpsmConfig,
    inducing: Option<&DMatrix<f64>>,
    theta0: &Hyperparameters,
) -> Result<ClassModel> {
    if !labels.contains(&id) {
        return Ok(ClassModel {
            theta: theta0.clone().with_mean(DEGENERATE_MEAN),
            state: None,
            converged: true,
            optimization: None,
        });
    }
    let train = TrainingData::classification(inputs.clone(), class_targets(labels, id))?;
    let mut theta = theta0.clone();
    let mut optimization = None;
    if config.optimize {
        let objective = match inducing {
            None => Objective::LaplaceNlml,
            Some(u) => Objective::FitcLaplaceNlml { inducing: u },
        };
        let out =
            optimize_hyperparameters(config.kernel, &train, theta0, objective, config.budget)?;
        theta = out.theta.clone();
        optimization = Some(out);
    }
    let state = fit(config.kernel, &train, inducing, &theta)?;
    Ok(ClassModel {
        theta,
        converged: state.converged,
        state: Some(state),
        optimization,
    })
}

impl GpsmModel {
    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn inference(&self) -> Inference {
        self.inference
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn inducing_inputs(&self) -> Option<&DMatrix<f64>> {
        self.inducing.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn num_train(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.as_ref().map_or(0, |u| u.ncols())
    }

    pub fn query(&self, x_star: &[f64]) -> Result<SemanticPrediction> {
        if x_star.len() != self.dim() {
            return Err(GpsmError::input(format!(
                "query has {} coordinates, the model expects {}",
                x_star.len(),
                self.dim()
            )));
        }
        let per_class_latent = self
            .classes
            .iter()
            .map(|c| c.latent(x_star))
            .collect::<Result<Vec<_>>>()?;
        let raw: Vec<f64> = per_class_latent.iter().map(probit_predict).collect();
        let total: f64 = raw.iter().sum();
        let n_c = raw.len();
        let (class_probs, uniform_fallback) = if total > 0.0 && total.is_finite() {
            (raw.iter().map(|p| p / total).collect(), false)
        } else {
            (vec![1.0 / n_c as f64; n_c], true)
        };
        let hard_index = argmax(&class_probs);
        Ok(SemanticPrediction {
            location: x_star.to_vec(),
            hard_label: self.class_set.get(hard_index).unwrap().id,
            hard_index,
            class_probs,
            per_class_latent,
            uniform_fallback,
        })
    }

    /// Query every column of `x_star` (`d × n_q`) in parallel; each result is
    /// identical to the corresponding single query.
    pub fn query_batch(&self, x_star: &DMatrix<f64>) -> Result<Vec<SemanticPrediction>> {
        (0..x_star.ncols())
            .into_par_iter()
            .map(|j| self.query(x_star.column(j).as_slice()))
            .collect()
    }

    /// Binary container: version byte, then little-endian fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.u8(FORMAT_VERSION);
        w.u32(self.class_set.len() as u32);
        for c in self.class_set.iter() {
            w.u16(c.id);
            w.bytes(c.name.as_bytes());
            w.0.extend_from_slice(&c.color);
        }
        w.u8(kernel_tag(self.kernel));
        let (d, n) = (self.inputs.nrows(), self.inputs.ncols());
        w.u32(d as u32);
        w.u64(n as u64);
        self.inputs.iter().for_each(|&v| w.f64(v));
        self.labels.iter().for_each(|&l| w.u16(l));
        match self.inference {
            Inference::Exact => w.u8(0),
            Inference::Fitc {
                num_inducing,
                selection,
            } => {
                w.u8(1);
                w.u64(num_inducing as u64);
                w.u8(match selection {
                    InducingSelection::Random => 0,
                    InducingSelection::FarthestPoint => 1,
                });
                let u = self
                    .inducing
                    .as_ref()
                    .expect("FITC model stores inducing inputs");
                w.u64(u.ncols() as u64);
                u.iter().for_each(|&v| w.f64(v));
            }
        }
        for c in &self.classes {
            c.theta.to_vec().iter().for_each(|&v| w.f64(v));
            match &c.state {
                None => w.u8(0),
                Some(s) => {
                    w.u8(1);
                    w.u8(c.converged as u8);
                    s.mode.iter().for_each(|&v| w.f64(v));
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(GpsmError::parse(
                0,
                format!("unsupported model version {version}"),
            ));
        }
        let n_c = r.u32()? as usize;
        let mut infos = Vec::with_capacity(n_c.min(1 << 16));
        for _ in 0..n_c {
            let id = r.u16()?;
            let name = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|_| GpsmError::parse(r.pos as u64, "class name is not UTF-8"))?;
            let color = [r.u8()?, r.u8()?, r.u8()?];
            infos.push(ClassInfo { id, name, color });
        }
        let class_set = ClassSet::new(infos)?;
        let kernel = match r.u8()? {
            0 => Kernel::Matern52,
            1 => Kernel::SquaredExponential,
            t => {
                return Err(GpsmError::parse(
                    r.pos as u64 - 1,
                    format!("unknown kernel tag {t}"),
                ))
            }
        };
        let d = r.u32()? as usize;
        let n = r.u64()? as usize;
        let inputs = DMatrix::from_vec(d, n, r.f64s(d * n)?);
        let labels = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        let (inference, inducing) = match r.u8()? {
            0 => (Inference::Exact, None),
            1 => {
                let num_inducing = r.u64()? as usize;
                let selection = match r.u8()? {
                    0 => InducingSelection::Random,
                    _ => InducingSelection::FarthestPoint,
                };
                let n_u = r.u64()? as usize;
                let u = DMatrix::from_vec(d, n_u, r.f64s(d * n_u)?);
                (
                    Inference::Fitc {
                        num_inducing,
                        selection,
                    },
                    Some(u),
                )
            }
            t => {
                return Err(GpsmError::parse(
                    r.pos as u64 - 1,
                    format!("unknown inference tag {t}"),
                ))
            }
        };
        let mut raw = Vec::with_capacity(n_c);
        for info in class_set.iter() {
            let theta = Hyperparameters::from_vec(d, &r.f64s(d + 3)?)?;
            let stored = match r.u8()? {
                0 => None,
                _ => {
                    let converged = r.u8()? != 0;
                    Some((converged, DVector::from_vec(r.f64s(n)?)))
                }
            };
            raw.push((info.id, theta, stored));
        }
        if r.pos != bytes.len() {
            return Err(GpsmError::parse(r.pos as u64, "trailing bytes after model"));
        }
        let classes = raw
            .into_par_iter()
            .map(|(id, theta, stored)| -> Result<ClassModel> {
                Ok(match stored {
                    None => ClassModel {
                        theta,
                        state: None,
                        converged: true,
                        optimization: None,
                    },
                    Some((converged, mode)) => {
                        let train = TrainingData::classification(
                            inputs.clone(),
                            class_targets(&labels, id),
                        )?;
                        let state = LaplaceState::from_mode(
                            kernel,
                            &train,
                            &theta,
                            inducing.as_ref(),
                            mode,
                            converged,
                        )?;
                        ClassModel {
                            theta,
                            state: Some(state),
                            converged,
                            optimization: None,
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpsmModel {
            class_set,
            kernel,
            inference,
            inputs,
            labels,
            inducing,
            classes,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn kernel_tag(k: Kernel) -> u8 {
    match k {
        Kernel::Matern52 => 0,
        Kernel::SquaredExponential => 1,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(GpsmError::parse(self.pos as u64, "model file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| GpsmError::parse(self.pos as u64, "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
