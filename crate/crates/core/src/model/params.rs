use rand::Rng;

use super::forward::BnSlot;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{
    AttentionScorer, BatchMoments, BatchNormGrads, BatchNormLayer, DenseGrads, DenseLayer,
    ScorerGrads,
};

/// A named view of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub values: &'a [f64],
}

/// A layer's tensors, enumerated in a fixed order.
pub trait ParamGroup {
    /// Trainable tensors.
    fn learnable(&self) -> Vec<Tensor<'_>>;
    fn learnable_mut(&mut self) -> Vec<&mut [f64]>;
    /// Trainable tensors followed by any other persisted state.
    fn state(&self) -> Vec<Tensor<'_>> {
        self.learnable()
    }
    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        self.learnable_mut()
    }
}

impl ParamGroup for DenseLayer {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight",
                dims: vec![self.weight.rows(), self.weight.cols()],
                values: self.weight.as_slice(),
            },
            Tensor {
                name: "bias",
                dims: vec![self.bias.len()],
                values: &self.bias,
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

impl ParamGroup for DenseGrads {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight",
                dims: vec![self.weight.rows(), self.weight.cols()],
                values: self.weight.as_slice(),
            },
            Tensor {
                name: "bias",
                dims: vec![self.bias.len()],
                values: &self.bias,
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

impl ParamGroup for BatchNormLayer {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        let d = vec![self.dim()];
        vec![
            Tensor {
                name: "gamma",
                dims: d.clone(),
                values: &self.gamma,
            },
            Tensor {
                name: "beta",
                dims: d,
                values: &self.beta,
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn state(&self) -> Vec<Tensor<'_>> {
        let mut t = self.learnable();
        let d = vec![self.dim()];
        t.push(Tensor {
            name: "running_mean",
            dims: d.clone(),
            values: &self.running_mean,
        });
        t.push(Tensor {
            name: "running_var",
            dims: d,
            values: &self.running_var,
        });
        t
    }
    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

impl ParamGroup for BatchNormGrads {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        let d = vec![self.gamma.len()];
        vec![
            Tensor {
                name: "gamma",
                dims: d.clone(),
                values: &self.gamma,
            },
            Tensor {
                name: "beta",
                dims: d,
                values: &self.beta,
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

impl ParamGroup for AttentionScorer {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight",
                dims: vec![self.weight.len()],
                values: &self.weight,
            },
            Tensor {
                name: "bias",
                dims: vec![1],
                values: std::slice::from_ref(&self.bias),
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, std::slice::from_mut(&mut self.bias)]
    }
}

impl ParamGroup for ScorerGrads {
    fn learnable(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor {
                name: "weight",
                dims: vec![self.weight.len()],
                values: &self.weight,
            },
            Tensor {
                name: "bias",
                dims: vec![1],
                values: std::slice::from_ref(&self.bias),
            },
        ]
    }
    fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, std::slice::from_mut(&mut self.bias)]
    }
}

/// Generates the ordered layer listing shared by parameters and gradients.
macro_rules! layer_layout {
    ($ty:ty { $($name:literal => $field:ident),* $(,)? }) => {
        impl $ty {
            pub fn groups(&self) -> Vec<(&'static str, &dyn ParamGroup)> {
                vec![$(($name, &self.$field as &dyn ParamGroup)),*]
            }

            pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut dyn ParamGroup)> {
                vec![$(($name, &mut self.$field as &mut dyn ParamGroup)),*]
            }
        }
    };
}

/// All parameters of the network. Every branch is allocated regardless of
/// the ablation flags; inactive layers simply never receive gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub frame_proj: DenseLayer,
    pub frame_bn: BatchNormLayer,
    pub frame_attention: AttentionScorer,
    pub qual_proj: DenseLayer,
    pub qual_bn: BatchNormLayer,
    pub quant_proj: DenseLayer,
    pub quant_bn: BatchNormLayer,
    pub meta_proj: DenseLayer,
    pub meta_bn: BatchNormLayer,
    pub meta_joint_proj: DenseLayer,
    pub meta_joint_bn: BatchNormLayer,
    pub text_proj: DenseLayer,
    pub text_bn: BatchNormLayer,
    pub modal_attention: AttentionScorer,
    pub head_hidden: DenseLayer,
    pub head_bn: BatchNormLayer,
    pub head_out: DenseLayer,
}

layer_layout!(ModelParams {
    "visual.proj" => frame_proj,
    "visual.bn" => frame_bn,
    "visual.attention" => frame_attention,
    "meta.qual.proj" => qual_proj,
    "meta.qual.bn" => qual_bn,
    "meta.quant.proj" => quant_proj,
    "meta.quant.bn" => quant_bn,
    "meta.proj" => meta_proj,
    "meta.bn" => meta_bn,
    "meta.joint.proj" => meta_joint_proj,
    "meta.joint.bn" => meta_joint_bn,
    "text.proj" => text_proj,
    "text.bn" => text_bn,
    "fusion.attention" => modal_attention,
    "head.hidden" => head_hidden,
    "head.bn" => head_bn,
    "head.out" => head_out,
});

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub frame_proj: DenseGrads,
    pub frame_bn: BatchNormGrads,
    pub frame_attention: ScorerGrads,
    pub qual_proj: DenseGrads,
    pub qual_bn: BatchNormGrads,
    pub quant_proj: DenseGrads,
    pub quant_bn: BatchNormGrads,
    pub meta_proj: DenseGrads,
    pub meta_bn: BatchNormGrads,
    pub meta_joint_proj: DenseGrads,
    pub meta_joint_bn: BatchNormGrads,
    pub text_proj: DenseGrads,
    pub text_bn: BatchNormGrads,
    pub modal_attention: ScorerGrads,
    pub head_hidden: DenseGrads,
    pub head_bn: BatchNormGrads,
    pub head_out: DenseGrads,
}

layer_layout!(ModelGrads {
    "visual.proj" => frame_proj,
    "visual.bn" => frame_bn,
    "visual.attention" => frame_attention,
    "meta.qual.proj" => qual_proj,
    "meta.qual.bn" => qual_bn,
    "meta.quant.proj" => quant_proj,
    "meta.quant.bn" => quant_bn,
    "meta.proj" => meta_proj,
    "meta.bn" => meta_bn,
    "meta.joint.proj" => meta_joint_proj,
    "meta.joint.bn" => meta_joint_bn,
    "text.proj" => text_proj,
    "text.bn" => text_bn,
    "fusion.attention" => modal_attention,
    "head.hidden" => head_hidden,
    "head.bn" => head_bn,
    "head.out" => head_out,
});

impl ModelParams {
    /// Glorot-uniform dense weights, zero biases, identity batch norms and
    /// zero attention scorers (uniform attention at step 0).
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let joint_in = c.qual_onehot_dim + c.quant_dim;
        let meta_cat = c.qual_feat_dim + c.quant_feat_dim;
        Ok(Self {
            frame_proj: DenseLayer::glorot(c.frame_embed_dim, c.modal_dim, rng),
            frame_bn: BatchNormLayer::new(c.modal_dim),
            frame_attention: AttentionScorer::zeros(c.modal_dim),
            qual_proj: DenseLayer::glorot(c.qual_onehot_dim, c.qual_feat_dim, rng),
            qual_bn: BatchNormLayer::new(c.qual_feat_dim),
            quant_proj: DenseLayer::glorot(c.quant_dim, c.quant_feat_dim, rng),
            quant_bn: BatchNormLayer::new(c.quant_feat_dim),
            meta_proj: DenseLayer::glorot(meta_cat, c.modal_dim, rng),
            meta_bn: BatchNormLayer::new(c.modal_dim),
            meta_joint_proj: DenseLayer::glorot(joint_in, c.modal_dim, rng),
            meta_joint_bn: BatchNormLayer::new(c.modal_dim),
            text_proj: DenseLayer::glorot(c.text_embed_dim, c.modal_dim, rng),
            text_bn: BatchNormLayer::new(c.modal_dim),
            modal_attention: AttentionScorer::zeros(c.modal_dim),
            head_hidden: DenseLayer::glorot(c.modal_dim, c.head_hidden_dim, rng),
            head_bn: BatchNormLayer::new(c.head_hidden_dim),
            head_out: DenseLayer::glorot(c.head_hidden_dim, 1, rng),
            config,
        })
    }

    /// Same layout as `init` with every tensor at its neutral value; used as
    /// a skeleton when loading.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let joint_in = c.qual_onehot_dim + c.quant_dim;
        let meta_cat = c.qual_feat_dim + c.quant_feat_dim;
        Ok(Self {
            frame_proj: DenseLayer::zeros(c.frame_embed_dim, c.modal_dim),
            frame_bn: BatchNormLayer::new(c.modal_dim),
            frame_attention: AttentionScorer::zeros(c.modal_dim),
            qual_proj: DenseLayer::zeros(c.qual_onehot_dim, c.qual_feat_dim),
            qual_bn: BatchNormLayer::new(c.qual_feat_dim),
            quant_proj: DenseLayer::zeros(c.quant_dim, c.quant_feat_dim),
            quant_bn: BatchNormLayer::new(c.quant_feat_dim),
            meta_proj: DenseLayer::zeros(meta_cat, c.modal_dim),
            meta_bn: BatchNormLayer::new(c.modal_dim),
            meta_joint_proj: DenseLayer::zeros(joint_in, c.modal_dim),
            meta_joint_bn: BatchNormLayer::new(c.modal_dim),
            text_proj: DenseLayer::zeros(c.text_embed_dim, c.modal_dim),
            text_bn: BatchNormLayer::new(c.modal_dim),
            modal_attention: AttentionScorer::zeros(c.modal_dim),
            head_hidden: DenseLayer::zeros(c.modal_dim, c.head_hidden_dim),
            head_bn: BatchNormLayer::new(c.head_hidden_dim),
            head_out: DenseLayer::zeros(c.head_hidden_dim, 1),
            config,
        })
    }

    pub fn bn(&self, slot: BnSlot) -> &BatchNormLayer {
        match slot {
            BnSlot::Frame => &self.frame_bn,
            BnSlot::Qual => &self.qual_bn,
            BnSlot::Quant => &self.quant_bn,
            BnSlot::Meta => &self.meta_bn,
            BnSlot::MetaJoint => &self.meta_joint_bn,
            BnSlot::Text => &self.text_bn,
            BnSlot::Head => &self.head_bn,
        }
    }

    pub fn bn_mut(&mut self, slot: BnSlot) -> &mut BatchNormLayer {
        match slot {
            BnSlot::Frame => &mut self.frame_bn,
            BnSlot::Qual => &mut self.qual_bn,
            BnSlot::Quant => &mut self.quant_bn,
            BnSlot::Meta => &mut self.meta_bn,
            BnSlot::MetaJoint => &mut self.meta_joint_bn,
            BnSlot::Text => &mut self.text_bn,
            BnSlot::Head => &mut self.head_bn,
        }
    }

    /// Folds the batch moments from a train-mode pass into the running
    /// statistics.
    pub fn apply_moments(&mut self, moments: &[(BnSlot, BatchMoments)]) {
        for (slot, m) in moments {
            self.bn_mut(*slot).update_running(m);
        }
    }

    /// `(qualified name, tensor)` for every learnable tensor.
    pub fn learnable_tensors(&self) -> Vec<(String, Tensor<'_>)> {
        qualify(self.groups(), |g| g.learnable())
    }

    /// Every persisted tensor including batch-norm running statistics.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<'_>)> {
        qualify(self.groups(), |g| g.state())
    }

    pub fn learnable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.groups_mut()
            .into_iter()
            .flat_map(|(_, g)| g.learnable_mut())
            .collect()
    }

    pub fn state_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.groups_mut()
            .into_iter()
            .flat_map(|(_, g)| g.state_mut())
            .collect()
    }

    /// Concatenation of all learnable tensors.
    pub fn flat_learnable(&self) -> Vec<f64> {
        self.learnable_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.values.to_vec())
            .collect()
    }

    /// Concatenation of every persisted tensor, running statistics included.
    pub fn flat_state(&self) -> Vec<f64> {
        self.state_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.values.to_vec())
            .collect()
    }

    pub fn set_flat_learnable(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.learnable_slices_mut().iter().map(|s| s.len()).sum();
        if total != flat.len() {
            return Err(Error::shape("set_flat_learnable", total, flat.len()));
        }
        let mut offset = 0;
        for s in self.learnable_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn num_learnable(&self) -> usize {
        self.learnable_tensors()
            .iter()
            .map(|(_, t)| t.values.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.state_tensors()
            .iter()
            .all(|(_, t)| t.values.iter().all(|v| v.is_finite()))
    }
}

impl ModelGrads {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        let joint_in = c.qual_onehot_dim + c.quant_dim;
        let meta_cat = c.qual_feat_dim + c.quant_feat_dim;
        Self {
            frame_proj: DenseGrads::zeros(c.frame_embed_dim, c.modal_dim),
            frame_bn: BatchNormGrads::zeros(c.modal_dim),
            frame_attention: ScorerGrads::zeros(c.modal_dim),
            qual_proj: DenseGrads::zeros(c.qual_onehot_dim, c.qual_feat_dim),
            qual_bn: BatchNormGrads::zeros(c.qual_feat_dim),
            quant_proj: DenseGrads::zeros(c.quant_dim, c.quant_feat_dim),
            quant_bn: BatchNormGrads::zeros(c.quant_feat_dim),
            meta_proj: DenseGrads::zeros(meta_cat, c.modal_dim),
            meta_bn: BatchNormGrads::zeros(c.modal_dim),
            meta_joint_proj: DenseGrads::zeros(joint_in, c.modal_dim),
            meta_joint_bn: BatchNormGrads::zeros(c.modal_dim),
            text_proj: DenseGrads::zeros(c.text_embed_dim, c.modal_dim),
            text_bn: BatchNormGrads::zeros(c.modal_dim),
            modal_attention: ScorerGrads::zeros(c.modal_dim),
            head_hidden: DenseGrads::zeros(c.modal_dim, c.head_hidden_dim),
            head_bn: BatchNormGrads::zeros(c.head_hidden_dim),
            head_out: DenseGrads::zeros(c.head_hidden_dim, 1),
        }
    }

    pub fn tensors(&self) -> Vec<(String, Tensor<'_>)> {
        qualify(self.groups(), |g| g.learnable())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.groups()
            .into_iter()
            .flat_map(|(_, g)| g.learnable().into_iter().map(|t| t.values))
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Sum of squared entries of the named group's tensors.
    pub fn group_norm_sq(&self, group: &str) -> f64 {
        self.groups()
            .into_iter()
            .filter(|(n, _)| *n == group)
            .flat_map(|(_, g)| {
                g.learnable()
                    .into_iter()
                    .flat_map(|t| t.values.iter().map(|v| v * v).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .sum()
    }
}

fn qualify<'a>(
    groups: Vec<(&'static str, &'a dyn ParamGroup)>,
    pick: impl Fn(&'a dyn ParamGroup) -> Vec<Tensor<'a>>,
) -> Vec<(String, Tensor<'a>)> {
    groups
        .into_iter()
        .flat_map(|(prefix, g)| {
            pick(g)
                .into_iter()
                .map(move |t| (format!("{prefix}.{}", t.name), t))
        })
        .collect()
}
