//! Batch stages behind the command-line tool: build maps from a labeled
//! cloud, evaluate them against ground truth, the 2D toy study and exports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classes::ClassSet;
use crate::error::{GpsmError, Result};
use crate::evaluation::{roc_csv, total_auc, AucReport};
use crate::gp::{log_normal_cdf, InducingSelection};
use crate::kernels::{Hyperparameters, Kernel};
use crate::octree::{InsertSummary, OctreeConfig, SemanticOctree, SensorModel};
use crate::pointcloud::{
    load_color_png, load_depth_png, load_label_png, load_ply, rgbd_to_pointcloud, save_ply,
    uniform_downsample, CameraIntrinsics, LabeledPointCloud,
};
use crate::semantic_map::{
    argmax, select_training_subset, train_gpsm, GpsmConfig, GpsmModel, Inference,
    SemanticPrediction,
};
use crate::synthetic::{flip_labels, gaussian_clusters, room_class_set, room_scene};

pub const GPSM_MODEL_FILE: &str = "gpsm_model.bin";
pub const GPSM_PREDICTION_FILE: &str = "gpsm_prediction.ply";
pub const SOM_TREE_FILE: &str = "som_tree.bin";
pub const SOM_OCCUPIED_FILE: &str = "som_occupied.ply";
pub const CLASS_SET_FILE: &str = "class_set.json";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: GpsmError,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.error {
            GpsmError::Config(_) => 2,
            GpsmError::Numerical(_) => 4,
            _ => 3,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn config_error(msg: impl Into<String>) -> StageError {
    StageError {
        stage: "config",
        error: GpsmError::Config(msg.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    /// Labeled PLY file.
    Ply { path: PathBuf },
    /// The rendered synthetic room (three classes, 30,000 points).
    SyntheticRoom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpsm,
    Som,
    Both,
}

impl Method {
    fn gpsm(self) -> bool {
        matches!(self, Method::Gpsm | Method::Both)
    }

    fn som(self) -> bool {
        matches!(self, Method::Som | Method::Both)
    }
}

/// Where the GP map is queried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuerySet {
    /// Every point of the input cloud before downsampling.
    Input,
    /// Regular grid over the input's bounding box.
    Grid { spacing: f64 },
}

/// Isotropic starting hyperparameters shared by all classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialTheta {
    pub lengthscale: f64,
    pub signal_std: f64,
    pub noise_std: f64,
    pub mean: f64,
}

impl Default for InitialTheta {
    fn default() -> Self {
        InitialTheta {
            lengthscale: 0.3,
            signal_std: 2.0,
            noise_std: 0.01,
            mean: 0.0,
        }
    }
}

impl InitialTheta {
    pub fn hyperparameters(&self, dim: usize) -> Hyperparameters {
        Hyperparameters::isotropic(dim, self.lengthscale, self.signal_std, self.noise_std)
            .with_mean(self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpOptions {
    pub kernel: Kernel,
    pub max_train_points: usize,
    /// Inducing points for FITC; `None` selects exact inference.
    pub num_inducing: Option<usize>,
    pub inducing_selection: InducingSelection,
    pub optimize: bool,
    pub budget: usize,
    pub theta0: InitialTheta,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            kernel: Kernel::Matern52,
            max_train_points: 3000,
            num_inducing: Some(300),
            inducing_selection: InducingSelection::FarthestPoint,
            optimize: false,
            budget: 40,
            theta0: InitialTheta::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomOptions {
    pub resolution: f64,
    pub max_depth: u8,
    pub center: [f64; 3],
    pub sensor: SensorModel,
    /// Sensor position used for ray casting.
    pub origin: [f64; 3],
    pub occupancy_threshold: f64,
}

impl Default for SomOptions {
    fn default() -> Self {
        let o = OctreeConfig::default();
        SomOptions {
            resolution: o.resolution,
            max_depth: o.max_depth,
            center: o.center,
            sensor: o.sensor,
            origin: [0.0; 3],
            occupancy_threshold: 0.5,
        }
    }
}

impl SomOptions {
    pub fn octree_config(&self) -> OctreeConfig {
        OctreeConfig {
            resolution: self.resolution,
            max_depth: self.max_depth,
            center: self.center,
            sensor: self.sensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSource,
    /// Class set JSON; optional for the synthetic room.
    pub class_set: Option<PathBuf>,
    /// Ground-truth cloud for evaluation; defaults to the input cloud.
    pub ground_truth: Option<PathBuf>,
    pub method: Method,
    pub gp: GpOptions,
    pub som: SomOptions,
    /// Keep one point in `downsample` before building.
    pub downsample: usize,
    /// Fraction of training labels replaced by a different random class.
    pub label_noise: f64,
    pub query: QuerySet,
    /// Run the evaluation right after building.
    pub evaluate: bool,
    /// Also write per-class ROC curves as CSV during evaluation.
    pub roc_csv: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: InputSource::SyntheticRoom { seed: 0 },
            class_set: None,
            ground_truth: None,
            method: Method::Both,
            gp: GpOptions::default(),
            som: SomOptions::default(),
            downsample: 1,
            label_noise: 0.0,
            query: QuerySet::Input,
            evaluate: false,
            roc_csv: false,
            output_dir: PathBuf::from("gpsm_out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| GpsmError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GpsmError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> StageResult<()> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(config_error(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        if let InputSource::Ply { path } = &self.input {
            exists(path, "input")?;
            if self.class_set.is_none() {
                return Err(config_error("a PLY input needs a class set file"));
            }
        }
        if let Some(p) = &self.class_set {
            exists(p, "class set")?;
        }
        if let Some(p) = &self.ground_truth {
            exists(p, "ground truth")?;
        }
        if self.downsample == 0 {
            return Err(config_error("downsample must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(config_error("label_noise must be in [0, 1]"));
        }
        if self.gp.max_train_points == 0 || self.gp.num_inducing == Some(0) {
            return Err(config_error("GP point counts must be positive"));
        }
        let t = &self.gp.theta0;
        if !(t.lengthscale > 0.0 && t.signal_std > 0.0 && t.noise_std > 0.0 && t.mean.is_finite()) {
            return Err(config_error(
                "theta0 needs positive lengthscale and standard deviations",
            ));
        }
        let s = &self.som;
        if s.resolution.is_nan() || s.resolution <= 0.0 || s.max_depth == 0 || s.max_depth > 16 {
            return Err(config_error(
                "SOM resolution must be positive and max_depth in 1..=16",
            ));
        }
        s.sensor
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        if !(s.occupancy_threshold > 0.0 && s.occupancy_threshold < 1.0) {
            return Err(config_error("occupancy threshold must be in (0, 1)"));
        }
        if let QuerySet::Grid { spacing } = self.query {
            if spacing.is_nan() || spacing <= 0.0 {
                return Err(config_error("query grid spacing must be positive"));
            }
        }
        Ok(())
    }

    fn gpsm_config(&self) -> GpsmConfig {
        GpsmConfig {
            kernel: self.gp.kernel,
            inference: match self.gp.num_inducing {
                None => Inference::Exact,
                Some(n) => Inference::Fitc {
                    num_inducing: n,
                    selection: self.gp.inducing_selection,
                },
            },
            optimize: self.gp.optimize,
            budget: self.gp.budget,
            seed: self.seed,
        }
    }
}

/// Input cloud and its class set.
pub fn load_input(config: &RunConfig) -> Result<(LabeledPointCloud, ClassSet)> {
    let classes = match &config.class_set {
        Some(p) => Some(ClassSet::load(p)?),
        None => None,
    };
    match &config.input {
        InputSource::Ply { path } => {
            let classes = classes
                .ok_or_else(|| GpsmError::Config("a PLY input needs a class set file".into()))?;
            Ok((load_ply(path)?, classes))
        }
        InputSource::SyntheticRoom { seed } => Ok((
            room_scene(*seed)?.cloud()?,
            classes.unwrap_or_else(room_class_set),
        )),
    }
}

/// Downsampled and optionally label-corrupted copy of the input used for
/// building both maps.
pub fn training_cloud(
    config: &RunConfig,
    input: &LabeledPointCloud,
    classes: &ClassSet,
) -> Result<LabeledPointCloud> {
    let cloud = uniform_downsample(input, config.downsample)?;
    if config.label_noise > 0.0 {
        flip_labels(
            &cloud,
            config.label_noise,
            classes,
            config.seed.wrapping_add(1),
        )
    } else {
        Ok(cloud)
    }
}

fn query_points(config: &RunConfig, input: &LabeledPointCloud) -> Result<DMatrix<f64>> {
    match config.query {
        QuerySet::Input => Ok(input.to_matrix()),
        QuerySet::Grid { spacing } => {
            if input.is_empty() {
                return Ok(DMatrix::zeros(3, 0));
            }
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for i in 0..input.len() {
                let p = input.point(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            let counts: [usize; 3] =
                std::array::from_fn(|a| ((hi[a] - lo[a]) / spacing).floor() as usize + 1);
            let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
            match total {
                Some(n) if n <= 50_000_000 => Ok(DMatrix::from_fn(3, n, |a, j| {
                    let idx = [
                        j % counts[0],
                        (j / counts[0]) % counts[1],
                        j / (counts[0] * counts[1]),
                    ];
                    lo[a] + idx[a] as f64 * spacing
                })),
                _ => Err(GpsmError::Config(
                    "query grid is too large; increase the spacing".into(),
                )),
            }
        }
    }
}

/// Points colored and labeled by their hard labels.
pub fn prediction_cloud(
    points: &DMatrix<f64>,
    predictions: &[SemanticPrediction],
    classes: &ClassSet,
) -> Result<LabeledPointCloud> {
    let pts = (0..points.ncols())
        .map(|j| {
            [
                points[(0, j)] as f32,
                points[(1, j)] as f32,
                points[(2, j)] as f32,
            ]
        })
        .collect();
    let labels = predictions.iter().map(|p| Some(p.hard_label)).collect();
    let colors = predictions
        .iter()
        .map(|p| classes.get(p.hard_index).unwrap().color)
        .collect();
    LabeledPointCloud::with_labels(pts, labels)?.with_colors(colors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTrainingSummary {
    pub id: u16,
    pub degenerate: bool,
    pub converged: bool,
    pub theta: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub method: Method,
    pub n_input: usize,
    pub n_build_cloud: usize,
    /// Training points `n_t`.
    pub n_t: usize,
    /// Inducing points `n_u` (0 for exact inference).
    pub n_u: usize,
    /// Query points `n_q`.
    pub n_q: usize,
    /// Classes `n_c`.
    pub n_c: usize,
    pub gpsm_classes: Vec<ClassTrainingSummary>,
    pub som_insert: Option<InsertSummary>,
    pub som_occupied_leaves: usize,
    /// Wall-clock seconds per stage. The only nondeterministic field.
    pub timings: BTreeMap<String, f64>,
}

/// Build the requested maps and write their artifacts to the output
/// directory.
pub fn cmd_build(config: &RunConfig) -> StageResult<BuildSummary> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out)
        .map_err(GpsmError::from)
        .stage("output")?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let (input, classes) = load_input(config).stage("load")?;
    classes.save(out.join(CLASS_SET_FILE)).stage("load")?;
    let cloud = training_cloud(config, &input, &classes).stage("downsample")?;
    lap("load", &mut timings);

    let mut summary = BuildSummary {
        method: config.method,
        n_input: input.len(),
        n_build_cloud: cloud.len(),
        n_t: 0,
        n_u: 0,
        n_q: 0,
        n_c: classes.len(),
        gpsm_classes: Vec::new(),
        som_insert: None,
        som_occupied_leaves: 0,
        timings: BTreeMap::new(),
    };

    if config.method.gpsm() {
        let subset = select_training_subset(&cloud, config.gp.max_train_points, config.seed)
            .stage("gpsm_train")?;
        let theta0 = config.gp.theta0.hyperparameters(3);
        let model = train_gpsm(
            &subset.inputs,
            &subset.labels,
            &classes,
            &config.gpsm_config(),
            &theta0,
        )
        .stage("gpsm_train")?;
        lap("gpsm_train", &mut timings);
        model.save(out.join(GPSM_MODEL_FILE)).stage("gpsm_save")?;
        summary.n_t = model.num_train();
        summary.n_u = model.num_inducing();
        summary.gpsm_classes = classes
            .iter()
            .zip(model.classes())
            .map(|(info, c)| ClassTrainingSummary {
                id: info.id,
                degenerate: c.is_degenerate(),
                converged: c.converged(),
                theta: c.theta().clone(),
            })
            .collect();

        let queries = query_points(config, &input).stage("gpsm_query")?;
        let predictions = model.query_batch(&queries).stage("gpsm_query")?;
        summary.n_q = queries.ncols();
        lap("gpsm_query", &mut timings);
        let rendered = prediction_cloud(&queries, &predictions, &classes).stage("gpsm_save")?;
        save_ply(&rendered, out.join(GPSM_PREDICTION_FILE)).stage("gpsm_save")?;
    }

    if config.method.som() {
        let mut tree =
            SemanticOctree::new(config.som.octree_config(), classes.clone()).stage("som_build")?;
        let insert = tree
            .insert_scan(config.som.origin, &cloud)
            .stage("som_build")?;
        lap("som_build", &mut timings);
        let threshold = config.som.occupancy_threshold;
        tree.save_dump(out.join(SOM_TREE_FILE), threshold)
            .stage("som_save")?;
        let occupied = tree.occupied_cloud(threshold).stage("som_save")?;
        summary.som_occupied_leaves = occupied.len();
        save_ply(&occupied, out.join(SOM_OCCUPIED_FILE)).stage("som_save")?;
        summary.som_insert = Some(insert);
    }

    if config.evaluate {
        cmd_eval(config)?;
        lap("eval", &mut timings);
    }
    summary.timings = timings;
    write_json(&out.join(RUN_SUMMARY_FILE), &summary).stage("summary")?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: u16,
    pub name: String,
    pub gpsm_auc: Option<f64>,
    pub som_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_points: usize,
    pub gpsm: Option<AucReport>,
    pub som: Option<AucReport>,
    pub table: Vec<EvalRow>,
}

/// Ground-truth labeled points and their labels.
fn ground_truth(config: &RunConfig) -> Result<(LabeledPointCloud, ClassSet)> {
    let (input, classes) = load_input(config)?;
    let gt = match &config.ground_truth {
        Some(p) => load_ply(p)?,
        None => input,
    };
    let keep: Vec<usize> = (0..gt.len())
        .filter(|&i| gt.labels()[i].is_some())
        .collect();
    Ok((gt.select(&keep), classes))
}

/// Score the built maps at every labeled ground-truth point and write the
/// side-by-side report.
pub fn cmd_eval(config: &RunConfig) -> StageResult<EvalReport> {
    config.validate()?;
    let out = &config.output_dir;
    let (gt, classes) = ground_truth(config).stage("eval_load")?;
    let truth: Vec<u16> = gt.labels().iter().map(|l| l.unwrap()).collect();
    let points = gt.to_matrix();

    let gpsm = if config.method.gpsm() {
        let model = GpsmModel::load(out.join(GPSM_MODEL_FILE)).stage("eval_load")?;
        if model.class_set().ids() != classes.ids() {
            return Err(config_error(
                "model class set differs from the configured class set",
            ));
        }
        let preds: Vec<Vec<f64>> = model
            .query_batch(&points)
            .stage("eval_gpsm")?
            .into_iter()
            .map(|p| p.class_probs)
            .collect();
        if config.roc_csv {
            let csv = roc_csv(&preds, &truth, &classes).stage("eval_gpsm")?;
            fs::write(out.join("roc_gpsm.csv"), csv)
                .map_err(GpsmError::from)
                .stage("eval_gpsm")?;
        }
        Some(total_auc(&preds, &truth, &classes).stage("eval_gpsm")?)
    } else {
        None
    };

    let som = if config.method.som() {
        let tree = SemanticOctree::load_dump(out.join(SOM_TREE_FILE), classes.clone())
            .stage("eval_load")?;
        let threshold = config.som.occupancy_threshold;
        let preds: Vec<Vec<f64>> = (0..gt.len())
            .map(|i| tree.class_scores(gt.point(i), threshold))
            .collect();
        if config.roc_csv {
            let csv = roc_csv(&preds, &truth, &classes).stage("eval_som")?;
            fs::write(out.join("roc_som.csv"), csv)
                .map_err(GpsmError::from)
                .stage("eval_som")?;
        }
        Some(total_auc(&preds, &truth, &classes).stage("eval_som")?)
    } else {
        None
    };

    let lookup = |r: &Option<AucReport>, id: u16| {
        r.as_ref()
            .and_then(|r| r.per_class.iter().find(|c| c.id == id).and_then(|c| c.auc))
    };
    let table = classes
        .iter()
        .map(|c| EvalRow {
            id: c.id,
            name: c.name.clone(),
            gpsm_auc: lookup(&gpsm, c.id),
            som_auc: lookup(&som, c.id),
        })
        .collect();
    let report = EvalReport {
        n_points: gt.len(),
        gpsm,
        som,
        table,
    };
    write_json(&out.join(EVAL_REPORT_FILE), &report).stage("eval_write")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toy2dResult {
    pub grid_nodes: usize,
    /// Largest `|Σ_j p_j − 1|` over the grid.
    pub max_normalization_error: f64,
    pub all_log_probs_finite: bool,
    /// Share of each cluster's training points assigned to that cluster.
    pub cluster_accuracy: Vec<f64>,
}

pub const TOY2D_GRID_FILE: &str = "toy2d_grid.csv";
pub const TOY2D_TRAIN_FILE: &str = "toy2d_train.csv";

/// Three 2D clusters, an exact one-vs-rest GP classifier with optimized
/// hyperparameters, and log class probabilities on a 101×101 grid over
/// `[−5, 5]²`.
pub fn cmd_toy2d(output_dir: &Path, seed: u64) -> StageResult<Toy2dResult> {
    fs::create_dir_all(output_dir)
        .map_err(GpsmError::from)
        .stage("output")?;
    let centers = [vec![-2.0, -1.0], vec![2.0, -1.0], vec![0.0, 2.0]];
    let (x, labels) = gaussian_clusters(&centers, 40, 0.7, seed).stage("toy2d_data")?;
    let classes = ClassSet::numbered(3).stage("toy2d_data")?;
    let config = GpsmConfig {
        inference: Inference::Exact,
        optimize: true,
        budget: 30,
        seed,
        ..GpsmConfig::default()
    };
    let theta0 = Hyperparameters::isotropic(2, 1.0, 2.0, 0.01);
    let model = train_gpsm(&x, &labels, &classes, &config, &theta0).stage("toy2d_train")?;

    let n = 101;
    let grid = DMatrix::from_fn(2, n * n, |a, j| {
        let k = if a == 0 { j % n } else { j / n };
        -5.0 + 10.0 * k as f64 / (n - 1) as f64
    });
    let preds = model.query_batch(&grid).stage("toy2d_query")?;
    let mut csv = String::from("x,y,log_p1,log_p2,log_p3,label\n");
    let mut max_err: f64 = 0.0;
    let mut finite = true;
    for (j, p) in preds.iter().enumerate() {
        max_err = max_err.max((p.class_probs.iter().sum::<f64>() - 1.0).abs());
        let logs = log_class_probs(p);
        finite &= logs.iter().all(|v| v.is_finite());
        csv.push_str(&format!("{},{}", grid[(0, j)], grid[(1, j)]));
        for l in &logs {
            csv.push_str(&format!(",{l}"));
        }
        csv.push_str(&format!(",{}\n", p.hard_label));
    }
    fs::write(output_dir.join(TOY2D_GRID_FILE), csv)
        .map_err(GpsmError::from)
        .stage("toy2d_write")?;

    let train_preds = model.query_batch(&x).stage("toy2d_query")?;
    let mut train_csv = String::from("x,y,label,predicted\n");
    let mut correct = vec![0usize; centers.len()];
    let mut total = vec![0usize; centers.len()];
    for (j, p) in train_preds.iter().enumerate() {
        let c = labels[j] as usize - 1;
        total[c] += 1;
        correct[c] += (p.hard_label == labels[j]) as usize;
        train_csv.push_str(&format!(
            "{},{},{},{}\n",
            x[(0, j)],
            x[(1, j)],
            labels[j],
            p.hard_label
        ));
    }
    fs::write(output_dir.join(TOY2D_TRAIN_FILE), train_csv)
        .map_err(GpsmError::from)
        .stage("toy2d_write")?;
    Ok(Toy2dResult {
        grid_nodes: n * n,
        max_normalization_error: max_err,
        all_log_probs_finite: finite,
        cluster_accuracy: correct
            .iter()
            .zip(&total)
            .map(|(c, t)| *c as f64 / *t as f64)
            .collect(),
    })
}

/// `log p_j` computed from the latent predictions in log space, so that
/// tiny probabilities stay finite.
pub fn log_class_probs(p: &SemanticPrediction) -> Vec<f64> {
    let logs: Vec<f64> = p
        .per_class_latent
        .iter()
        .map(|l| log_normal_cdf(l.mean / (1.0 + l.variance).sqrt()))
        .collect();
    let m = logs[argmax(&logs)];
    let lse = m + logs.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logs.iter().map(|v| v - lse).collect()
}

/// Write the occupied leaves of a tree dump as a colored PLY.
pub fn export_tree(
    tree: &Path,
    class_set: &Path,
    threshold: f64,
    output: &Path,
) -> StageResult<usize> {
    let classes = ClassSet::load(class_set).stage("export_load")?;
    let tree = SemanticOctree::load_dump(tree, classes).stage("export_load")?;
    let cloud = tree.occupied_cloud(threshold).stage("export_tree")?;
    save_ply(&cloud, output).stage("export_write")?;
    Ok(cloud.len())
}

/// Back-project depth (and optional label and color) PNGs into a PLY.
pub fn export_rgbd(
    depth: &Path,
    labels: Option<&Path>,
    color: Option<&Path>,
    intrinsics: &CameraIntrinsics,
    output: &Path,
) -> StageResult<usize> {
    let depth = load_depth_png(depth).stage("export_load")?;
    let labels = labels
        .map(load_label_png)
        .transpose()
        .stage("export_load")?;
    let colors = color.map(load_color_png).transpose().stage("export_load")?;
    let cloud = rgbd_to_pointcloud(&depth, labels.as_ref(), colors.as_ref(), intrinsics)
        .stage("export_rgbd")?;
    save_ply(&cloud, output).stage("export_write")?;
    Ok(cloud.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path, method: Method) -> RunConfig {
        let cloud = LabeledPointCloud::with_labels(
            vec![[0.5, 0.0, 1.0], [-0.5, 0.2, 1.5], [0.0, -0.4, 2.0]],
            vec![Some(1), Some(2), Some(1)],
        )
        .unwrap();
        save_ply(&cloud, dir.join("in.ply")).unwrap();
        ClassSet::numbered(2)
            .unwrap()
            .save(dir.join("classes.json"))
            .unwrap();
        RunConfig {
            input: InputSource::Ply {
                path: dir.join("in.ply"),
            },
            class_set: Some(dir.join("classes.json")),
            method,
            output_dir: dir.join("out"),
            gp: GpOptions {
                num_inducing: None,
                ..GpOptions::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn som_on_three_points_has_three_leaves() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), Method::Som);
        let s = cmd_build(&config).unwrap();
        assert_eq!(s.som_occupied_leaves, 3);
        let classes = ClassSet::numbered(2).unwrap();
        let tree =
            SemanticOctree::load_dump(config.output_dir.join(SOM_TREE_FILE), classes).unwrap();
        assert_eq!(tree.occupied_leaves(0.5).len(), 3);
    }

    #[test]
    fn gpsm_queries_every_input_point() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            evaluate: true,
            ..tiny_config(dir.path(), Method::Both)
        };
        let s = cmd_build(&config).unwrap();
        assert_eq!((s.n_q, s.n_t, s.n_c), (3, 3, 2));
        let pred = load_ply(config.output_dir.join(GPSM_PREDICTION_FILE)).unwrap();
        assert_eq!(pred.labels(), &[Some(1), Some(2), Some(1)]);
        let report: EvalReport = serde_json::from_str(
            &fs::read_to_string(config.output_dir.join(EVAL_REPORT_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(report.gpsm.unwrap().total_auc, 1.0);
    }

    #[test]
    fn config_errors_map_to_exit_code_two() {
        let config = RunConfig {
            downsample: 0,
            ..RunConfig::default()
        };
        assert_eq!(cmd_build(&config).unwrap_err().exit_code(), 2);
        let missing = RunConfig {
            input: InputSource::Ply {
                path: "/nonexistent/x.ply".into(),
            },
            ..RunConfig::default()
        };
        assert_eq!(cmd_build(&missing).unwrap_err().exit_code(), 2);
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let parsed =
            RunConfig::from_json(r#"{"downsample": 3, "gp": {"num_inducing": null}}"#).unwrap();
        assert_eq!(parsed.downsample, 3);
        assert_eq!(parsed.gp.num_inducing, None);
    }

    #[test]
    fn eval_without_artifacts_fails() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), Method::Gpsm);
        assert_eq!(cmd_eval(&config).unwrap_err().stage, "eval_load");
    }
}
