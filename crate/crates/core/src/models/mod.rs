//! The U-Net map generator, the score poolers and their training loops.

mod manifest;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use qmap_nn::{ComputeGraph, GraphBuilder, LayerSpec, Source, Topology};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::FrMethod;

pub use manifest::{data_fingerprint, ModelManifest};
pub use predict::{pooler_inputs, score_map_patches, Prediction, Predictor};
pub use train::{train_generator, train_pooler, PoolSample, PoolSource, TrainConfig, TrainHistory};

/// Name of the generator node whose output feeds the final sigmoid.
pub const GENERATOR_LOGITS: &str = "head_conv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub stage_channels: Vec<usize>,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            stage_channels: vec![32, 64, 128, 256],
            input_channels: 3,
            output_channels: 1,
        }
    }
}

impl UNetSpec {
    /// Narrow variant for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            stage_channels: vec![8, 16, 32, 64],
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.stage_channels.len()
    }

    /// Spatial sizes must survive `depth` halvings exactly.
    pub fn input_multiple(&self) -> usize {
        1 << self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(Error::Config("generator stage channels must be non-empty and positive".into()));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!("generator input channels {} not 1 or 3", self.input_channels)));
        }
        if self.output_channels == 0 {
            return Err(Error::Config("generator needs at least one output channel".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.input_multiple();
        if height % m != 0 || width % m != 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "generator input {height}x{width} is not divisible by {m}"
            )));
        }
        Ok(())
    }
}

pub fn generator_topology(spec: &UNetSpec) -> Result<Topology> {
    spec.validate()?;
    let mut b = GraphBuilder::new();
    let mut cur = b.input(spec.input_channels);
    let mut c_in = spec.input_channels;
    let mut skips: Vec<(Source, usize)> = Vec::with_capacity(spec.depth());
    for (i, &c) in spec.stage_channels.iter().enumerate() {
        let conv = b.then(format!("sp{i}_conv"), LayerSpec::conv(c_in, c), cur);
        let bn = b.then(format!("sp{i}_bn"), LayerSpec::batch_norm(c), conv);
        let act = b.then(format!("sp{i}_act"), LayerSpec::leaky_relu(), bn);
        cur = b.then(format!("sp{i}_pool"), LayerSpec::MaxPool2x2, act);
        skips.push((act, c));
        c_in = c;
    }
    for (j, &(skip, c)) in skips.iter().rev().enumerate() {
        let up = b.then(format!("up{j}_deconv"), LayerSpec::deconv(c_in, c), cur);
        let cat = b.push(format!("up{j}_cat"), LayerSpec::ConcatChannels, &[up, skip]);
        let conv = b.then(format!("up{j}_conv"), LayerSpec::conv(2 * c, c), cat);
        let bn = b.then(format!("up{j}_bn"), LayerSpec::batch_norm(c), conv);
        cur = b.then(format!("up{j}_act"), LayerSpec::leaky_relu(), bn);
        c_in = c;
    }
    let head = b.then(GENERATOR_LOGITS, LayerSpec::conv(c_in, spec.output_channels), cur);
    b.then("head_sigmoid", LayerSpec::Sigmoid, head);
    Ok(b.finish()?)
}

pub fn build_generator(spec: &UNetSpec, seed: u64) -> Result<ComputeGraph> {
    Ok(ComputeGraph::new(generator_topology(spec)?, seed)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Dpn,
    Fc2,
    DpnDirect,
}

impl PoolKind {
    pub fn token(self) -> &'static str {
        match self {
            PoolKind::Dpn => "dpn",
            PoolKind::Fc2 => "fc2",
            PoolKind::DpnDirect => "dpn_direct",
        }
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PoolKind::Dpn, PoolKind::Fc2, PoolKind::DpnDirect]
            .into_iter()
            .find(|k| k.token() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown pooler kind {s:?} (dpn, fc2, dpn_direct)")))
    }
}

/// Width of the two hidden layers of the fully connected pooler.
pub const FC2_UNITS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolNetSpec {
    pub kind: PoolKind,
    /// Channels per graph input.
    pub input_channels: usize,
    /// Number of graph inputs; above one each input gets its own trunk.
    pub streams: usize,
    pub conv_channels: Vec<usize>,
    pub fc_units: usize,
    pub dropout_p: f64,
    pub patch_size: usize,
}

impl Default for PoolNetSpec {
    fn default() -> Self {
        Self {
            kind: PoolKind::Dpn,
            input_channels: 1,
            streams: 1,
            conv_channels: vec![32, 64, 128, 128, 128],
            fc_units: 512,
            dropout_p: 0.5,
            patch_size: 144,
        }
    }
}

impl PoolNetSpec {
    pub fn desk(patch_size: usize) -> Self {
        Self {
            conv_channels: vec![8, 16, 32, 32, 32],
            fc_units: 64,
            patch_size,
            ..Self::default()
        }
    }

    pub fn fc2(input_channels: usize, patch_size: usize) -> Self {
        Self {
            kind: PoolKind::Fc2,
            input_channels,
            conv_channels: Vec::new(),
            fc_units: FC2_UNITS,
            patch_size,
            ..Self::default()
        }
    }

    /// Spatial size after the five conv stages.
    pub fn feature_size(&self) -> usize {
        self.patch_size >> 5
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.streams == 0 || self.fc_units == 0 {
            return Err(Error::Config("pooler channel, stream and unit counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout_p)));
        }
        match self.kind {
            PoolKind::Fc2 => {}
            PoolKind::Dpn | PoolKind::DpnDirect => {
                if self.conv_channels.len() != 5 || self.conv_channels.contains(&0) {
                    return Err(Error::Config("the conv pooler has exactly five positive stages".into()));
                }
                if self.feature_size() == 0 {
                    return Err(Error::Shape(format!(
                        "patch size {} does not survive five 2x2 poolings",
                        self.patch_size
                    )));
                }
            }
        }
        if self.kind == PoolKind::DpnDirect && (self.input_channels != 3 || self.streams != 1) {
            return Err(Error::Config("the direct pooler takes one 3-channel image".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        if height != self.patch_size || width != self.patch_size {
            return Err(Error::Shape(format!(
                "pooler expects {0}x{0} inputs, got {height}x{width}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

fn conv_trunk(b: &mut GraphBuilder, input: Source, in_ch: usize, spec: &PoolNetSpec, prefix: &str) -> (Source, usize) {
    let mut cur = input;
    let mut c_in = in_ch;
    for (i, &c) in spec.conv_channels.iter().enumerate() {
        let conv = b.then(format!("{prefix}conv{i}"), LayerSpec::conv(c_in, c), cur);
        let bn = b.then(format!("{prefix}bn{i}"), LayerSpec::batch_norm(c), conv);
        let act = b.then(format!("{prefix}act{i}"), LayerSpec::leaky_relu(), bn);
        cur = b.then(format!("{prefix}pool{i}"), LayerSpec::MaxPool2x2, act);
        c_in = c;
    }
    (cur, c_in)
}

pub fn pooler_topology(spec: &PoolNetSpec) -> Result<Topology> {
    spec.validate()?;
    let mut b = GraphBuilder::new();
    let inputs: Vec<Source> = (0..spec.streams).map(|_| b.input(spec.input_channels)).collect();
    let merge = |b: &mut GraphBuilder, parts: Vec<Source>| {
        if parts.len() == 1 {
            parts[0]
        } else {
            b.push("merge", LayerSpec::ConcatChannels, &parts)
        }
    };
    match spec.kind {
        PoolKind::Fc2 => {
            let x = merge(&mut b, inputs);
            let flat = spec.streams * spec.input_channels * spec.patch_size * spec.patch_size;
            let f1 = b.then("fc1", LayerSpec::fc(flat, spec.fc_units), x);
            let a1 = b.then("fc1_act", LayerSpec::leaky_relu(), f1);
            let d1 = b.then("fc1_drop", LayerSpec::Dropout { p: spec.dropout_p }, a1);
            let f2 = b.then("fc2", LayerSpec::fc(spec.fc_units, spec.fc_units), d1);
            let a2 = b.then("fc2_act", LayerSpec::leaky_relu(), f2);
            let d2 = b.then("fc2_drop", LayerSpec::Dropout { p: spec.dropout_p }, a2);
            b.then("score", LayerSpec::fc(spec.fc_units, 1), d2);
        }
        PoolKind::Dpn | PoolKind::DpnDirect => {
            let mut trunks = Vec::with_capacity(spec.streams);
            let mut channels = 0;
            for (s, &x) in inputs.iter().enumerate() {
                let prefix = if spec.streams == 1 { String::new() } else { format!("s{s}_") };
                let (t, c) = conv_trunk(&mut b, x, spec.input_channels, spec, &prefix);
                trunks.push(t);
                channels += c;
            }
            let x = merge(&mut b, trunks);
            let flat = channels * spec.feature_size() * spec.feature_size();
            let f1 = b.then("fc1", LayerSpec::fc(flat, spec.fc_units), x);
            let a1 = b.then("fc1_act", LayerSpec::leaky_relu(), f1);
            let d1 = b.then("fc1_drop", LayerSpec::Dropout { p: spec.dropout_p }, a1);
            b.then("score", LayerSpec::fc(spec.fc_units, 1), d1);
        }
    }
    Ok(b.finish()?)
}

pub fn build_pooler(spec: &PoolNetSpec, seed: u64) -> Result<ComputeGraph> {
    Ok(ComputeGraph::new(pooler_topology(spec)?, seed)?)
}

/// How several maps reach the pooler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Channel-wise concatenation in front of one pooler.
    SingleStream,
    /// One conv trunk per map, merged before the dense layers.
    MultiStream,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::SingleStream => "single",
            FusionMode::MultiStream => "multi",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "single_stream" => Ok(FusionMode::SingleStream),
            "multi" | "multi_stream" => Ok(FusionMode::MultiStream),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?} (single, multi)"))),
        }
    }
}

/// Maps fed to a pooler and how they are combined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fusion {
    pub mode: FusionMode,
    pub methods: Vec<FrMethod>,
}

impl Fusion {
    pub fn single(method: FrMethod) -> Self {
        Self {
            mode: FusionMode::SingleStream,
            methods: vec![method],
        }
    }

    /// `(streams, channels per stream)` of the matching pooler.
    pub fn pooler_inputs(&self) -> (usize, usize) {
        match self.mode {
            FusionMode::SingleStream => (1, self.methods.len()),
            FusionMode::MultiStream => (self.methods.len(), 1),
        }
    }

    /// Pooler spec wired for these maps.
    pub fn apply(&self, mut spec: PoolNetSpec) -> PoolNetSpec {
        let (streams, channels) = self.pooler_inputs();
        spec.streams = streams;
        spec.input_channels = channels;
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_generator_parameter_count() {
        let conv = |i: usize, o: usize| o * i * 9 + o;
        let deconv = |i: usize, o: usize| i * o * 4 + o;
        let bn = |c: usize| 2 * c;
        let down = conv(3, 32) + bn(32) + conv(32, 64) + bn(64) + conv(64, 128) + bn(128) + conv(128, 256) + bn(256);
        let up = deconv(256, 256)
            + conv(512, 256)
            + bn(256)
            + deconv(256, 128)
            + conv(256, 128)
            + bn(128)
            + deconv(128, 64)
            + conv(128, 64)
            + bn(64)
            + deconv(64, 32)
            + conv(64, 32)
            + bn(32);
        let head = conv(32, 1);
        assert_eq!(conv(3, 32), 896);
        assert_eq!(deconv(256, 256), 262_400);
        assert_eq!(head, 289);
        let hand = 896 + 64 + 18_496 + 128 + 73_856 + 256 + 295_168 + 512 + 262_400 + 1_179_904 + 512 + 131_200
            + 295_040
            + 256
            + 32_832
            + 73_792
            + 128
            + 8_224
            + 18_464
            + 64
            + 289;
        assert_eq!(down + up + head, hand);
        assert_eq!(generator_topology(&UNetSpec::default()).unwrap().param_count(), hand);
    }

    #[test]
    fn generator_shapes() {
        let topo = generator_topology(&UNetSpec::default()).unwrap();
        let trace = topo.shape_trace(&[[1, 3, 144, 144]]).unwrap();
        assert_eq!(trace.last().unwrap().1, [1, 1, 144, 144]);
        let trace = topo.shape_trace(&[[1, 3, 16, 16]]).unwrap();
        let bottleneck = trace.iter().find(|(n, _)| n == "sp3_pool").unwrap().1;
        assert_eq!(bottleneck, [1, 256, 1, 1]);
        assert!(topo.shape_trace(&[[1, 3, 24, 24]]).is_err());
        assert!(UNetSpec::default().check_input(24, 32).is_err());
    }

    #[test]
    fn pooler_counts_and_shapes() {
        let spec = PoolNetSpec::default();
        let topo = pooler_topology(&spec).unwrap();
        let conv = |i: usize, o: usize| o * i * 9 + o;
        let convs = conv(1, 32) + conv(32, 64) + conv(64, 128) + conv(128, 128) + conv(128, 128);
        let bns = 2 * (32 + 64 + 128 + 128 + 128);
        let fcs = (128 * 4 * 4 * 512 + 512) + (512 + 1);
        assert_eq!(topo.param_count(), convs + bns + fcs);
        assert_eq!(topo.shape_trace(&[[2, 1, 144, 144]]).unwrap().last().unwrap().1, [2, 1, 1, 1]);

        let fc2 = pooler_topology(&PoolNetSpec::fc2(1, 144)).unwrap();
        let flat = 144 * 144;
        assert_eq!(fc2.param_count(), flat * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 + 1);
        assert_eq!(fc2.param_count(), 22_285_313);

        let direct = PoolNetSpec {
            kind: PoolKind::DpnDirect,
            input_channels: 3,
            ..PoolNetSpec::default()
        };
        let topo = pooler_topology(&direct).unwrap();
        assert_eq!(topo.shape_trace(&[[1, 3, 144, 144]]).unwrap().last().unwrap().1, [1, 1, 1, 1]);
        assert!(pooler_topology(&PoolNetSpec { input_channels: 1, ..direct }).is_err());
    }

    #[test]
    fn fusion_wiring() {
        let fusion = Fusion {
            mode: FusionMode::SingleStream,
            methods: vec![FrMethod::FsimGm, FrMethod::Ssim],
        };
        let spec = fusion.apply(PoolNetSpec::desk(64));
        assert_eq!(pooler_topology(&spec).unwrap().input_channels, vec![2]);

        let multi = Fusion {
            mode: FusionMode::MultiStream,
            ..fusion
        };
        let spec = multi.apply(PoolNetSpec::desk(64));
        let topo = pooler_topology(&spec).unwrap();
        assert_eq!(topo.input_channels, vec![1, 1]);
        let trace = topo.shape_trace(&[[1, 1, 64, 64], [1, 1, 64, 64]]).unwrap();
        let get = |name: &str| trace.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(get("s0_pool4"), [1, 32, 2, 2]);
        assert_eq!(get("s1_pool4"), [1, 32, 2, 2]);
        assert_eq!(get("merge"), [1, 64, 2, 2]);
        assert_eq!("multi".parse::<FusionMode>().unwrap(), FusionMode::MultiStream);
    }
}
