use super::arch::{mirror_for_side, ArchSpec};
use super::layers::{Ctx, Node};
use super::real::Real;
use super::tensor::Act;
use super::weights::WeightVector;
use super::TensorError;
use serde::{Deserialize, Serialize};

/// Shape of a side module added next to an existing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideKind {
    /// One 3x3 convolution plus batch norm (linear layer at the output).
    OneLayer,
    /// A copy of the block it sits next to.
    Block,
}

/// Which side modules a network carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideRecord {
    pub step: usize,
    pub kind: SideKind,
    pub include_io: bool,
}

#[derive(Debug, Clone)]
pub struct SideModule<T> {
    pub step: usize,
    pub node: Node<T>,
}

/// A layer of the layer-freezing plan: input layer, one block, or the output layer.
#[derive(Debug, Clone)]
pub struct Unit<T> {
    pub name: String,
    pub base: Node<T>,
    pub sides: Vec<SideModule<T>>,
}

/// Input layer, blocks, global average pooling and linear output, each
/// layer optionally carrying additive side modules.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub arch: ArchSpec,
    pub units: Vec<Unit<T>>,
    pub sides: Vec<SideRecord>,
    /// Only side modules with `step <= side_limit` contribute when set.
    pub side_limit: Option<usize>,
    gap: Node<T>,
}

/// Per-layer outputs of one forward pass (the last entry is the logits).
pub type LayerOutputs<T> = Vec<Act<T>>;

impl<T: Real> Network<T> {
    /// Build the network and freshly initialized weights.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<(Self, WeightVector<T>), TensorError> {
        arch.validate()?;
        let mut units = vec![Unit { name: "input".into(), base: arch.input_layer("input"), sides: Vec::new() }];
        for i in 0..arch.block_io().len() {
            let name = format!("block{}", i + 1);
            units.push(Unit { base: arch.block(i, &name), name, sides: Vec::new() });
        }
        units.push(Unit { name: "output".into(), base: arch.output_layer("output"), sides: Vec::new() });
        let mut net = Self { arch, units, sides: Vec::new(), side_limit: None, gap: Node::global_avg_pool() };
        let mut w = WeightVector::new();
        for u in &mut net.units {
            u.base.register(&mut w, seed)?;
        }
        Ok((net, w))
    }

    /// Rebuild a network with the given side modules and bind it to `w`,
    /// which must have exactly the resulting schema.
    pub fn with_sides(arch: ArchSpec, sides: &[SideRecord], w: &WeightVector<T>) -> Result<Self, TensorError> {
        let (mut net, mut fresh) = Self::new(arch, 0)?;
        for s in sides {
            net.attach_sides(&mut fresh, s.step, s.kind, s.include_io, 0)?;
        }
        fresh.check_schema(w)?;
        Ok(net)
    }

    pub fn block_count(&self) -> usize {
        self.units.len() - 2
    }

    pub fn unit_names(&self) -> Vec<String> {
        self.units.iter().map(|u| u.name.clone()).collect()
    }

    fn side_node(&self, unit: usize, step: usize, kind: SideKind) -> Node<T> {
        let a = &self.arch;
        let prefix = format!("side{step}.{}", self.units[unit].name);
        let last = self.units.len() - 1;
        if unit == last {
            let mut n = a.output_layer(&prefix);
            n.zero_last();
            return n;
        }
        let one_layer = |cin: usize, cout: usize, stride: usize| {
            let mut n = Node::Seq(vec![Node::conv(format!("{prefix}.conv"), cin, cout, 3, stride, 1), Node::bn(format!("{prefix}.bn"), cout)]);
            n.zero_last();
            n
        };
        if unit == 0 {
            return one_layer(3, a.stem_width(), 1);
        }
        let (cin, cout, stride) = a.block_io()[unit - 1];
        match kind {
            SideKind::OneLayer => one_layer(cin, cout, stride),
            SideKind::Block => mirror_for_side(a.block(unit - 1, &prefix)),
        }
    }

    /// Add zero-output side modules for `step` next to every block (and the
    /// input and output layers when `include_io`), appending their entries to `w`.
    /// Their nonzero parts are drawn from `seed`.
    pub fn attach_sides(&mut self, w: &mut WeightVector<T>, step: usize, kind: SideKind, include_io: bool, seed: u64) -> Result<(), TensorError> {
        if self.sides.iter().any(|s| s.step == step) {
            return Err(TensorError::Schema(format!("side modules for step {step} already attached")));
        }
        let last = self.units.len() - 1;
        for u in 0..self.units.len() {
            if !include_io && (u == 0 || u == last) {
                continue;
            }
            let mut node = self.side_node(u, step, kind);
            node.register(w, seed)?;
            self.units[u].sides.push(SideModule { step, node });
        }
        self.sides.push(SideRecord { step, kind, include_io });
        Ok(())
    }

    fn active(&self, step: usize) -> bool {
        self.side_limit.is_none_or(|l| step <= l)
    }

    fn unit_forward(&mut self, u: usize, x: Act<T>, w: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        let limit = self.side_limit;
        let unit = &mut self.units[u];
        let mut side_out = Vec::new();
        for s in &mut unit.sides {
            if limit.is_none_or(|l| s.step <= l) {
                side_out.push(s.node.forward(x.clone(), w, ctx));
            }
        }
        let mut y = unit.base.forward(x, w, ctx);
        for s in &side_out {
            y.add_assign(s);
        }
        y
    }

    /// Logits as a `(classes, N, 1, 1)` activation.
    pub fn forward(&mut self, x: Act<T>, w: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        self.forward_layers(x, w, ctx, false).0
    }

    /// Forward pass that can also return each layer's output (block outputs
    /// are taken before global pooling).
    pub fn forward_layers(&mut self, x: Act<T>, w: &mut WeightVector<T>, ctx: &Ctx, record: bool) -> (Act<T>, LayerOutputs<T>) {
        let last = self.units.len() - 1;
        let mut outs = Vec::new();
        let mut h = x;
        for u in 0..last {
            h = self.unit_forward(u, h, w, ctx);
            if record {
                outs.push(h.clone());
            }
        }
        h = self.gap.forward(h, w, ctx);
        let logits = self.unit_forward(last, h, w, ctx);
        if record {
            outs.push(logits.clone());
        }
        (logits, outs)
    }

    /// Accumulate parameter gradients of `sum(dlogits * logits)` into `g`.
    pub fn backward(&mut self, dlogits: Act<T>, w: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) {
        let last = self.units.len() - 1;
        let mut d = self.unit_backward(last, dlogits, w, g, ctx);
        d = self.gap.backward(d, w, g, ctx);
        for u in (0..last).rev() {
            d = self.unit_backward(u, d, w, g, ctx);
        }
    }

    fn unit_backward(&mut self, u: usize, dy: Act<T>, w: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        let active: Vec<bool> = self.units[u].sides.iter().map(|s| self.active(s.step)).collect();
        let unit = &mut self.units[u];
        let mut dx = unit.base.backward(dy.clone(), w, g, ctx);
        for (s, on) in unit.sides.iter_mut().zip(active) {
            if on {
                dx.add_assign(&s.node.backward(dy.clone(), w, g, ctx));
            }
        }
        dx
    }

    /// Parameter mask selecting entries whose name satisfies `pred`.
    pub fn mask_where(w: &WeightVector<T>, pred: impl Fn(&str) -> bool) -> Vec<bool> {
        w.entries().iter().enumerate().map(|(i, e)| w.is_param(i) && pred(&e.name)).collect()
    }

    /// Every parameter.
    pub fn mask_all(w: &WeightVector<T>) -> Vec<bool> {
        Self::mask_where(w, |_| true)
    }

    /// Parameters of the base network in the named layers.
    pub fn mask_layers(w: &WeightVector<T>, layers: &[&str]) -> Vec<bool> {
        Self::mask_where(w, |n| layers.iter().any(|l| n.starts_with(&format!("{l}."))))
    }

    /// Parameters of the side modules for `step`.
    pub fn mask_side(w: &WeightVector<T>, step: usize) -> Vec<bool> {
        let p = format!("side{step}.");
        Self::mask_where(w, |n| n.starts_with(&p))
    }
}

/// Step index of a side-module entry name (`side3.block1.conv.weight` gives 3).
pub fn side_step_of(name: &str) -> Option<usize> {
    name.strip_prefix("side")?.split('.').next()?.parse().ok()
}
