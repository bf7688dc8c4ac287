//! Checkpoint directories: `manifest.json` plus one `FLA1` file per
//! parameter array.

use std::path::Path;

use flat_core::flow::CascadeSchedule;
use flat_core::net::{ConvLayer, RegularizerNet, StepParameters, UnrolledModel};
use flat_core::train::TrainConfig;
use flat_core::RealArray;
use serde::{Deserialize, Serialize};

use crate::dataset::prepare_output_dir;
use crate::error::{Error, Result};
use crate::{fla, json};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "flat-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Serialized cascade schedule. Only a constant unit `lambda` is supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: String,
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: f64,
}

pub const LAMBDA_CONST1: &str = "const1";

impl ScheduleDoc {
    pub fn new(s: &CascadeSchedule) -> Result<Self> {
        if s.lambda().iter().any(|&l| l != 1.0) {
            return Err(Error::Config("only lambda(t) = 1 schedules can be serialized".into()));
        }
        Ok(Self {
            k: s.cascades(),
            alpha: s.alpha(),
            sigma: s.sigma(),
            lambda: LAMBDA_CONST1.into(),
            t: s.t().to_vec(),
            delta: s.delta().to_vec(),
            eta: s.eta().to_vec(),
            mu: s.mu(),
        })
    }

    /// Rebuilds the schedule and demands that every stored value matches the
    /// rebuilt one exactly.
    pub fn schedule(&self) -> std::result::Result<CascadeSchedule, String> {
        if self.lambda != LAMBDA_CONST1 {
            return Err(format!("unsupported lambda {:?}", self.lambda));
        }
        let s = CascadeSchedule::constant_lambda(self.k, self.alpha, 1.0, self.sigma).map_err(|e| e.to_string())?;
        let rebuilt = Self::new(&s).map_err(|e| e.to_string())?;
        if &rebuilt != self {
            return Err("stored schedule values do not match (K, alpha, sigma)".into());
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDoc {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

/// Where the weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingDoc {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub architecture: Vec<LayerDoc>,
    pub schedule: ScheduleDoc,
    pub weight_sharing: bool,
    pub grounded: bool,
    pub seed: u64,
    pub parameters: Vec<ParameterDoc>,
    pub training: Option<TrainingDoc>,
}

fn architecture(net: &RegularizerNet) -> Vec<LayerDoc> {
    net.layers()
        .iter()
        .map(|l| {
            let d = l.kernel.dims();
            LayerDoc { out_channels: d[0], in_channels: d[1], kernel_size: d[2], relu: l.relu }
        })
        .collect()
}

/// Writes `model` into `dir` (created or, with `force`, replaced).
pub fn save(dir: &Path, model: &UnrolledModel, seed: u64, training: Option<TrainingDoc>, force: bool) -> Result<()> {
    prepare_output_dir(dir, force)?;
    let mut parameters = Vec::new();
    for (name, array) in model.named_parameters() {
        let file = format!("{name}.fla");
        fla::write(&dir.join(&file), &array)?;
        parameters.push(ParameterDoc { name, file, dims: array.dims().to_vec() });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        architecture: architecture(model.regularizer(0)),
        schedule: ScheduleDoc::new(model.schedule())?,
        weight_sharing: model.weight_sharing(),
        grounded: model.is_grounded(),
        seed,
        parameters,
        training,
    };
    json::write(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let m: CheckpointManifest = json::read(&path)?;
    if m.format != FORMAT || m.version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("expected {FORMAT} v{FORMAT_VERSION}, found {} v{}", m.format, m.version)));
    }
    Ok(m)
}

/// Loads a checkpoint, rejecting any disagreement between the manifest and
/// the stored arrays.
pub fn load(dir: &Path) -> Result<(UnrolledModel, CheckpointManifest)> {
    let m = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST);
    let bad = |msg: String| Error::format(&manifest_path, msg);
    let schedule = m.schedule.schedule().map_err(bad)?;
    let k = schedule.cascades();
    let nets = if m.weight_sharing { 1 } else { k };
    let mut files = m.parameters.iter();
    let mut next = |expect: &str, dims: &[usize]| -> Result<RealArray> {
        let p = files.next().ok_or_else(|| bad(format!("missing parameter {expect}")))?;
        if p.name != expect || p.dims != dims {
            return Err(bad(format!("parameter {} {:?} where {expect} {dims:?} was expected", p.name, p.dims)));
        }
        let path = dir.join(&p.file);
        let array = fla::read(&path)?;
        if array.dims() != dims {
            return Err(Error::format(&path, format!("dims {:?} != manifest {dims:?}", array.dims())));
        }
        Ok(array)
    };
    let mut regularizers = Vec::with_capacity(nets);
    for i in 0..nets {
        let key = if m.weight_sharing { "shared".to_string() } else { format!("cascade{i:02}") };
        let mut layers = Vec::new();
        for (l, doc) in m.architecture.iter().enumerate() {
            let kd = [doc.out_channels, doc.in_channels, doc.kernel_size, doc.kernel_size];
            let kernel = next(&format!("{key}.layer{l}.kernel"), &kd)?;
            let bias = next(&format!("{key}.layer{l}.bias"), &[doc.out_channels])?;
            layers.push(ConvLayer { kernel, bias, relu: doc.relu });
        }
        regularizers.push(RegularizerNet::new(layers).map_err(|e| bad(e.to_string()))?);
    }
    let steps = if m.grounded {
        StepParameters::Grounded
    } else {
        let eta = next("eta", &[k])?.into_data();
        let mu = next("mu", &[1])?.data()[0];
        StepParameters::Learnable { eta, mu }
    };
    if files.next().is_some() {
        return Err(bad("unexpected extra parameters".into()));
    }
    let model = UnrolledModel::new(schedule, regularizers, m.weight_sharing, steps).map_err(|e| bad(e.to_string()))?;
    Ok((model, m))
}
