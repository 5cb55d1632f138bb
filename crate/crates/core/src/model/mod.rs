//! The residual classifier every experiment runs against.

mod address;
mod spec;
mod train;
mod weights;

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{RunningStats, Tape, Var};
use crate::data::{DatasetStats, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

pub use address::LayerAddress;
pub use spec::{InputShape, ModelSpec, StageSpec, StemSpec};
pub use train::{evaluate_accuracy, train, EpochStats, TrainConfig, TrainingReport};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

/// Names of the addressable feature layers, in forward order.
pub const LAYER_NAMES: [&str; 5] = ["stem", "layer1", "layer2", "layer3", "layer4"];

/// Images per forward call when scanning a dataset.
pub const EVAL_BATCH: usize = 64;

/// A recorded forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub input: Var,
    pub logits: Var,
    /// Post-activation output of the stem and of each stage.
    pub activations: BTreeMap<String, Var>,
    pub params: BTreeMap<String, Var>,
}

/// A [`ModelSpec`] with parameters, batchnorm running statistics and the
/// input normalization it was trained with.
///
/// Inputs are raw pixels in `[0, 1]`; normalization is the first recorded op.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: BTreeMap<String, Tensor>,
    running: BTreeMap<String, RunningStats>,
    input_stats: DatasetStats,
}

struct ParamLayout {
    shapes: BTreeMap<String, Vec<usize>>,
    /// Batchnorm prefix → channel count.
    norms: BTreeMap<String, usize>,
}

fn block_prefix(stage: usize, block: usize) -> String {
    format!("layer{}.{}", stage + 1, block)
}

fn needs_downsample(in_c: usize, out_c: usize, stride: usize) -> bool {
    in_c != out_c || stride != 1
}

fn layout(spec: &ModelSpec) -> ParamLayout {
    let mut shapes = BTreeMap::new();
    let mut norms = BTreeMap::new();
    let conv = |name: String,
                out_c: usize,
                in_c: usize,
                k: usize,
                shapes: &mut BTreeMap<String, Vec<usize>>| {
        shapes.insert(format!("{name}.weight"), vec![out_c, in_c, k, k]);
    };
    let mut bn = |name: String, c: usize, shapes: &mut BTreeMap<String, Vec<usize>>| {
        shapes.insert(format!("{name}.weight"), vec![c]);
        shapes.insert(format!("{name}.bias"), vec![c]);
        norms.insert(name, c);
    };
    let c_in = spec.input_shape.channels;
    conv("stem.conv".into(), spec.stem.channels, c_in, 3, &mut shapes);
    bn("stem.bn".into(), spec.stem.channels, &mut shapes);
    let mut in_c = spec.stem.channels;
    for (s, stage) in spec.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let p = block_prefix(s, b);
            let stride = if b == 0 { stage.stride } else { 1 };
            conv(format!("{p}.conv1"), stage.channels, in_c, 3, &mut shapes);
            bn(format!("{p}.bn1"), stage.channels, &mut shapes);
            conv(
                format!("{p}.conv2"),
                stage.channels,
                stage.channels,
                3,
                &mut shapes,
            );
            bn(format!("{p}.bn2"), stage.channels, &mut shapes);
            if needs_downsample(in_c, stage.channels, stride) {
                conv(
                    format!("{p}.downsample.conv"),
                    stage.channels,
                    in_c,
                    1,
                    &mut shapes,
                );
                bn(format!("{p}.downsample.bn"), stage.channels, &mut shapes);
            }
            in_c = stage.channels;
        }
    }
    shapes.insert("fc.weight".into(), vec![spec.num_classes, in_c]);
    shapes.insert("fc.bias".into(), vec![spec.num_classes]);
    ParamLayout { shapes, norms }
}

/// Stacks `[3, H, W]` images into an `[N, 3, H, W]` batch.
pub fn batch_of(images: &[&LabeledImage]) -> Result<Tensor> {
    let px: Vec<&Tensor> = images.iter().map(|i| &i.pixels).collect();
    Tensor::stack(&px)
}

struct Recorder<'a> {
    tape: Tape,
    model: &'a Model,
    running: &'a mut BTreeMap<String, RunningStats>,
    training: bool,
    params: BTreeMap<String, Var>,
}

impl Recorder<'_> {
    fn param(&self, name: &str) -> Var {
        self.params[name]
    }

    fn conv_bn(
        &mut self,
        x: Var,
        conv: &str,
        bn: &str,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let w = self.param(&format!("{conv}.weight"));
        let y = self.tape.conv2d(x, w, None, stride, padding)?;
        let g = self.param(&format!("{bn}.weight"));
        let b = self.param(&format!("{bn}.bias"));
        let stats = self
            .running
            .get_mut(bn)
            .expect("layout lists every batchnorm");
        self.tape.batchnorm2d(y, g, b, stats, self.training)
    }

    fn block(
        &mut self,
        x: Var,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
    ) -> Result<Var> {
        let h = self.conv_bn(
            x,
            &format!("{prefix}.conv1"),
            &format!("{prefix}.bn1"),
            stride,
            1,
        )?;
        let h = self.tape.relu(h);
        let h = self.conv_bn(
            h,
            &format!("{prefix}.conv2"),
            &format!("{prefix}.bn2"),
            1,
            1,
        )?;
        let shortcut = if needs_downsample(in_c, out_c, stride) {
            self.conv_bn(
                x,
                &format!("{prefix}.downsample.conv"),
                &format!("{prefix}.downsample.bn"),
                stride,
                0,
            )?
        } else {
            x
        };
        let sum = self.tape.add(h, shortcut)?;
        Ok(self.tape.relu(sum))
    }

    fn run(mut self, batch: Tensor, input_grad: bool) -> Result<ForwardPass> {
        let model = self.model;
        let spec = &model.spec;
        let input = self.tape.leaf(batch.with_requires_grad(input_grad));
        let stats = &model.input_stats;
        let scale: Vec<f64> = stats.channel_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = (0..3)
            .map(|c| -stats.channel_mean[c] / stats.channel_std[c])
            .collect();
        let x = self.tape.channel_affine(input, &scale, &shift)?;

        let mut activations = BTreeMap::new();
        let x = self.conv_bn(x, "stem.conv", "stem.bn", spec.stem.stride, 1)?;
        let mut x = self.tape.relu(x);
        activations.insert("stem".to_string(), x);
        let mut in_c = spec.stem.channels;
        for (s, stage) in spec.stages.iter().enumerate() {
            for b in 0..stage.blocks {
                let stride = if b == 0 { stage.stride } else { 1 };
                x = self.block(x, &block_prefix(s, b), in_c, stage.channels, stride)?;
                in_c = stage.channels;
            }
            activations.insert(LAYER_NAMES[s + 1].to_string(), x);
        }
        let pooled = self.tape.global_avgpool(x)?;
        let (w, b) = (self.param("fc.weight"), self.param("fc.bias"));
        let logits = self.tape.linear(pooled, w, Some(b))?;
        Ok(ForwardPass {
            tape: self.tape,
            input,
            logits,
            activations,
            params: self.params,
        })
    }
}

impl Model {
    /// Fresh model: Kaiming-normal convolutions, unit/zero batchnorm affine,
    /// `N(0, 1/fan_in)` linear weights and zero bias.
    pub fn new(spec: ModelSpec, input_stats: DatasetStats, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = layout(&spec);
        let mut rng = substream(seed, "init");
        let mut params = BTreeMap::new();
        for (name, shape) in &layout.shapes {
            let t = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
                Tensor::from_fn(shape, |_| dist.sample(&mut rng))
            } else if name == "fc.weight" {
                let dist = Normal::new(0.0, (1.0 / shape[1] as f64).sqrt()).unwrap();
                Tensor::from_fn(shape, |_| dist.sample(&mut rng))
            } else if name.ends_with(".weight") {
                Tensor::ones(shape)
            } else {
                Tensor::zeros(shape)
            };
            params.insert(name.clone(), t);
        }
        let running = layout
            .norms
            .iter()
            .map(|(name, &c)| (name.clone(), RunningStats::new(c)))
            .collect();
        Ok(Self {
            spec,
            params,
            running,
            input_stats,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_stats(&self) -> &DatasetStats {
        &self.input_stats
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.running
    }

    /// Output channel count of an addressable layer.
    pub fn layer_channels(&self, layer: &str) -> Result<usize> {
        match LAYER_NAMES.iter().position(|&l| l == layer) {
            Some(0) => Ok(self.spec.stem.channels),
            Some(i) => Ok(self.spec.stages[i - 1].channels),
            None => Err(Error::Address(format!(
                "unknown layer `{layer}` (expected one of {})",
                LAYER_NAMES.join(", ")
            ))),
        }
    }

    /// Accepts `[3, H, W]` or `[N, 3, H, W]`, returning the batched form.
    pub fn check_input(&self, batch: &Tensor) -> Result<Tensor> {
        let s = self.spec.input_shape;
        let batch = match batch.rank() {
            3 => batch.reshape(&[1, batch.shape()[0], batch.shape()[1], batch.shape()[2]])?,
            4 => batch.clone(),
            r => return Err(Error::dim("forward", "rank", 4, r)),
        };
        let shape = batch.shape();
        for (axis, expected, actual) in [
            ("channels", s.channels, shape[1]),
            ("height", s.height, shape[2]),
            ("width", s.width, shape[3]),
        ] {
            if expected != actual {
                return Err(Error::dim("forward", axis, expected, actual));
            }
        }
        Ok(batch)
    }

    fn recorder<'a>(
        &'a self,
        running: &'a mut BTreeMap<String, RunningStats>,
        training: bool,
        param_grad: bool,
    ) -> Recorder<'a> {
        let mut tape = Tape::new();
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    tape.leaf(t.clone().with_requires_grad(param_grad)),
                )
            })
            .collect();
        Recorder {
            tape,
            model: self,
            running,
            training,
            params,
        }
    }

    /// Eval-mode forward pass with frozen weights. When `input_grad` is set
    /// the input pixels receive gradients.
    pub fn record(&self, batch: &Tensor, input_grad: bool) -> Result<ForwardPass> {
        let batch = self.check_input(batch)?;
        let mut running = self.running.clone();
        self.recorder(&mut running, false, false)
            .run(batch, input_grad)
    }

    /// Training-mode forward pass: batch statistics, running-stat updates,
    /// and gradients on every parameter.
    pub fn record_training(&mut self, batch: &Tensor) -> Result<ForwardPass> {
        let batch = self.check_input(batch)?;
        let mut running = std::mem::take(&mut self.running);
        let pass = self.recorder(&mut running, true, true).run(batch, false);
        self.running = running;
        pass
    }

    /// Eval-mode logits and the named activation map.
    pub fn forward_with_activations(
        &self,
        batch: &Tensor,
    ) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        let pass = self.record(batch, false)?;
        let acts = pass
            .activations
            .iter()
            .map(|(name, &v)| (name.clone(), pass.tape.value(v).clone()))
            .collect();
        Ok((pass.tape.value(pass.logits).clone(), acts))
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let pass = self.record(batch, false)?;
        Ok(pass.tape.value(pass.logits).clone())
    }

    /// Argmax predictions, evaluated in batches of [`EVAL_BATCH`].
    pub fn predict(&self, images: &[LabeledImage]) -> Result<Vec<usize>> {
        let k = self.num_classes();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_BATCH) {
            let refs: Vec<&LabeledImage> = chunk.iter().collect();
            let logits = self.logits(&batch_of(&refs)?)?;
            out.extend(logits.data().chunks_exact(k).map(crate::tensor::argmax));
        }
        Ok(out)
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: BTreeMap<String, Tensor>,
        running: BTreeMap<String, RunningStats>,
        input_stats: DatasetStats,
    ) -> Self {
        Self {
            spec,
            params,
            running,
            input_stats,
        }
    }

    pub(crate) fn expected_shapes(
        spec: &ModelSpec,
    ) -> (BTreeMap<String, Vec<usize>>, BTreeMap<String, usize>) {
        let l = layout(spec);
        (l.shapes, l.norms)
    }
}
