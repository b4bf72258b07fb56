//! Miniature analogues of the dense, residual and squeeze-excitation
//! backbones, built as [`Graph`]s.
//!
//! All families share a stem (stride-2 3x3 convolution, ReLU, 2x2 average
//! pooling) and a head (global average pooling, linear). Stages are separated
//! by 2x2 average pooling; the Grad-CAM target is the last stage output.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId, Shape};
use crate::{Error, Result};

pub const MAX_PARAMS: usize = 500_000;
/// Minimum spatial size of the Grad-CAM feature map.
pub const MIN_FEATURE_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MiniDense,
    MiniRes,
    MiniSe,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::MiniDense => "mini_dense",
            Family::MiniRes => "mini_res",
            Family::MiniSe => "mini_se",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Family::MiniDense, Family::MiniRes, Family::MiniSe]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub stages: usize,
    /// Stem width; also stage widths for the residual families.
    pub channels: Vec<usize>,
    pub growth_rate: usize,
    pub se_reduction: usize,
}

impl ArchSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            stages: 3,
            channels: match family {
                Family::MiniDense => vec![16],
                Family::MiniRes | Family::MiniSe => vec![16, 24, 32],
            },
            growth_rate: 12,
            se_reduction: 4,
        }
    }

    /// Input channel count of each dense stage: stem width plus one growth
    /// block per preceding stage.
    pub fn dense_stage_inputs(&self) -> Vec<usize> {
        (0..self.stages).map(|s| self.channels[0] + s * self.growth_rate).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("architecture needs >= 1 stage and non-zero widths".into()));
        }
        match self.family {
            Family::MiniDense if self.growth_rate == 0 => {
                return Err(Error::Config("growth_rate must be >= 1".into()))
            }
            Family::MiniRes | Family::MiniSe if self.channels.len() != self.stages => {
                return Err(Error::Config(format!(
                    "{} stages need {} channel widths, got {}",
                    self.stages,
                    self.stages,
                    self.channels.len()
                )))
            }
            Family::MiniSe if self.se_reduction == 0 || self.channels.iter().any(|&c| c < self.se_reduction) => {
                return Err(Error::Config("se_reduction must divide into every stage width".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// A built network: graph, node of interest for Grad-CAM, input size, classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ArchSpec,
    pub graph: Graph,
    pub feature: NodeId,
    pub classes: usize,
}

impl Network {
    /// Build for single-channel `rows x cols` inputs.
    pub fn build(spec: &ArchSpec, classes: usize, rows: usize, cols: usize) -> Result<Self> {
        spec.validate()?;
        if classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        // Stem halves twice, each later stage boundary once more.
        let shrink = 4usize << (spec.stages - 1);
        if rows / shrink < MIN_FEATURE_SIDE || cols / shrink < MIN_FEATURE_SIDE {
            return Err(Error::Config(format!(
                "{rows}x{cols} input leaves a feature map below {MIN_FEATURE_SIDE}x{MIN_FEATURE_SIDE}"
            )));
        }
        let mut g = Graph::new();
        let x = g.input(Shape::new(1, rows, cols));
        let stem = g.conv("stem", x, spec.channels[0], 3, 2);
        let stem = g.relu(stem);
        let mut h = g.avg_pool2(stem);
        for s in 0..spec.stages {
            if s > 0 {
                h = g.avg_pool2(h);
            }
            h = match spec.family {
                Family::MiniDense => {
                    let y = g.conv(&format!("stage{s}.dense"), h, spec.growth_rate, 3, 1);
                    let y = g.relu(y);
                    g.concat(h, y)
                }
                Family::MiniRes => residual_block(&mut g, s, h, spec.channels[s], None),
                Family::MiniSe => residual_block(&mut g, s, h, spec.channels[s], Some(spec.se_reduction)),
            };
        }
        let feature = h;
        let pooled = g.global_avg_pool(h);
        g.linear("head", pooled, classes);
        if g.param_len >= MAX_PARAMS {
            return Err(Error::Config(format!(
                "{} parameters exceed the {MAX_PARAMS} budget",
                g.param_len
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            graph: g,
            feature,
            classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_len
    }

    pub fn feature_shape(&self) -> Shape {
        self.graph.shape(self.feature)
    }

    /// He-normal weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0f32; self.graph.param_len];
        for block in &self.graph.params {
            if block.fan_in == 0 {
                continue;
            }
            let std = (2.0 / block.fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[block.offset..block.offset + block.len] {
                *p = dist.sample(&mut rng) as f32;
            }
        }
        params
    }
}

/// conv-relu-conv (+ optional squeeze-excitation) plus identity or 1x1
/// projection shortcut, then ReLU.
fn residual_block(g: &mut Graph, stage: usize, x: NodeId, cout: usize, se: Option<usize>) -> NodeId {
    let cin = g.shape(x).c;
    let a = g.conv(&format!("stage{stage}.conv1"), x, cout, 3, 1);
    let a = g.relu(a);
    let mut b = g.conv(&format!("stage{stage}.conv2"), a, cout, 3, 1);
    if let Some(r) = se {
        let squeeze = g.global_avg_pool(b);
        let z = g.linear(&format!("stage{stage}.se.reduce"), squeeze, cout / r);
        let z = g.relu(z);
        let z = g.linear(&format!("stage{stage}.se.expand"), z, cout);
        let gate = g.sigmoid(z);
        b = g.scale_channels(b, gate);
    }
    let shortcut = if cin == cout {
        x
    } else {
        g.conv(&format!("stage{stage}.proj"), x, cout, 1, 1)
    };
    let sum = g.add(b, shortcut);
    g.relu(sum)
}
