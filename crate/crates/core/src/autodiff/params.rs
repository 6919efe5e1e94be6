use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Gradients, Tape, Var};

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Shared convolutional feature extractor.
    Features,
    /// Object-class head.
    Classifier,
    /// Permutation-index head.
    Jigsaw,
    /// Frozen encoder of a learned style coder.
    Encoder,
    /// Trainable decoder of a learned style coder.
    Decoder,
}

impl ParamGroup {
    pub fn tag(self) -> &'static str {
        match self {
            ParamGroup::Features => "f",
            ParamGroup::Classifier => "c",
            ParamGroup::Jigsaw => "j",
            ParamGroup::Encoder => "enc",
            ParamGroup::Decoder => "dec",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "f" => ParamGroup::Features,
            "c" => ParamGroup::Classifier,
            "j" => ParamGroup::Jigsaw,
            "enc" => ParamGroup::Encoder,
            "dec" => ParamGroup::Decoder,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
    pub has_grad: bool,
}

/// Ordered, uniquely named parameter tensors with gradient slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// The tape handles of a [`ParamSet`] attached to one forward pass.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, group: ParamGroup, value: Tensor) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            group,
            value,
            grad,
            has_grad: false,
        });
        Ok(())
    }

    /// Fan-in scaled uniform initialisation: `U(-b, b)` with
    /// `b = gain / sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bound = gain / (fan_in as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, group, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn attach(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .params
                .iter()
                .map(|p| (p.name.clone(), tape.leaf(p.value.clone())))
                .collect(),
        }
    }

    /// Records every parameter as a constant (no gradients flow into it).
    pub fn attach_frozen(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .params
                .iter()
                .map(|p| (p.name.clone(), tape.constant(p.value.clone())))
                .collect(),
        }
    }

    /// Adds the gradients of one backward sweep into the gradient slots.
    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &ParamVars) -> Result<()> {
        for p in &mut self.params {
            let var = vars.get(&p.name)?;
            if let Some(g) = grads.raw(var) {
                p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            p.has_grad = true;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
            p.has_grad = false;
        }
    }
}
