use super::layers::Node;
use super::real::Real;
use super::TensorError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Conv,
    Res,
    Dense,
}

/// Network family, depth (number of blocks, 1 to 4) and width reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub depth: usize,
    /// Channel counts (and dense growth) are divided by this; 1 is full size.
    #[serde(default = "one")]
    pub width_divisor: usize,
    pub num_classes: usize,
}

fn one() -> usize {
    1
}

const STEM: usize = 64;
const GROWTH: usize = 32;
const BOTTLENECK: usize = 128;

impl ArchSpec {
    pub fn new(family: Family, depth: usize, num_classes: usize) -> Self {
        Self { family, depth, width_divisor: 1, num_classes }
    }

    pub fn with_divisor(mut self, d: usize) -> Self {
        self.width_divisor = d;
        self
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if !(1..=4).contains(&self.depth) {
            return Err(TensorError::Arch(format!("depth {} outside 1..=4", self.depth)));
        }
        if self.width_divisor == 0 || !GROWTH.is_multiple_of(self.width_divisor) {
            return Err(TensorError::Arch(format!("width divisor {} must divide {GROWTH}", self.width_divisor)));
        }
        if self.num_classes < 2 {
            return Err(TensorError::Arch("need at least two classes".into()));
        }
        Ok(())
    }

    fn ch(&self, c: usize) -> usize {
        c / self.width_divisor
    }

    /// Output widths of the blocks (conv and residual families).
    pub fn block_widths(&self) -> Vec<usize> {
        let full: &[usize] = match self.depth {
            1 => &[512],
            2 => &[128, 512],
            3 => &[128, 256, 512],
            _ => &[64, 128, 256, 512],
        };
        full.iter().map(|&c| self.ch(c)).collect()
    }

    /// Layers per dense block.
    pub fn dense_layers(&self) -> Vec<usize> {
        match self.depth {
            1 => vec![16],
            2 => vec![6, 16],
            3 => vec![6, 12, 16],
            _ => vec![6, 12, 24, 16],
        }
    }

    pub fn stem_width(&self) -> usize {
        self.ch(STEM)
    }

    /// `(input channels, output channels, stride)` of each block.
    pub fn block_io(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut c = self.stem_width();
        match self.family {
            Family::Conv => {
                for w in self.block_widths() {
                    out.push((c, w, 1));
                    c = w;
                }
            }
            Family::Res => {
                for (i, w) in self.block_widths().into_iter().enumerate() {
                    let stride = if i == 0 && c == w { 1 } else { 2 };
                    out.push((c, w, stride));
                    c = w;
                }
            }
            Family::Dense => {
                let layers = self.dense_layers();
                let g = self.ch(GROWTH);
                for (i, &l) in layers.iter().enumerate() {
                    let grown = c + l * g;
                    if i + 1 < layers.len() {
                        out.push((c, grown / 2, 2));
                        c = grown / 2;
                    } else {
                        out.push((c, grown, 1));
                        c = grown;
                    }
                }
            }
        }
        out
    }

    pub fn feature_width(&self) -> usize {
        self.block_io().last().map(|b| b.1).unwrap_or(self.stem_width())
    }

    pub fn input_layer<T: Real>(&self, prefix: &str) -> Node<T> {
        let c = self.stem_width();
        let conv = Node::conv(format!("{prefix}.conv"), 3, c, 3, 1, 1);
        match self.family {
            // Dense layers pre-activate, so the stem is a bare convolution.
            Family::Dense => Node::Seq(vec![conv]),
            _ => Node::Seq(vec![conv, Node::bn(format!("{prefix}.bn"), c), Node::relu()]),
        }
    }

    pub fn block<T: Real>(&self, i: usize, prefix: &str) -> Node<T> {
        let (cin, cout, stride) = self.block_io()[i];
        match self.family {
            Family::Conv => Node::Seq(vec![
                Node::conv(format!("{prefix}.conv"), cin, cout, 3, 1, 1),
                Node::bn(format!("{prefix}.bn"), cout),
                Node::relu(),
            ]),
            Family::Res => Node::Seq(vec![
                basic_block(&format!("{prefix}.0"), cin, cout, stride),
                basic_block(&format!("{prefix}.1"), cout, cout, 1),
            ]),
            Family::Dense => {
                let g = self.ch(GROWTH);
                let bott = self.ch(BOTTLENECK);
                let layers = self.dense_layers()[i];
                let mut items = Vec::new();
                let mut c = cin;
                for l in 0..layers {
                    let p = format!("{prefix}.layer{l}");
                    items.push(Node::dense(Node::Seq(vec![
                        Node::bn(format!("{p}.bn1"), c),
                        Node::relu(),
                        Node::conv(format!("{p}.conv1"), c, bott, 1, 1, 0),
                        Node::bn(format!("{p}.bn2"), bott),
                        Node::relu(),
                        Node::conv(format!("{p}.conv2"), bott, g, 3, 1, 1),
                    ])));
                    c += g;
                }
                if stride == 2 {
                    items.push(Node::bn(format!("{prefix}.trans.bn"), c));
                    items.push(Node::relu());
                    items.push(Node::conv(format!("{prefix}.trans.conv"), c, cout, 1, 1, 0));
                    items.push(Node::avg_pool2());
                } else {
                    items.push(Node::bn(format!("{prefix}.final_bn"), c));
                    items.push(Node::relu());
                }
                Node::Seq(items)
            }
        }
    }

    pub fn output_layer<T: Real>(&self, prefix: &str) -> Node<T> {
        Node::linear(format!("{prefix}.fc"), self.feature_width(), self.num_classes)
    }
}

fn basic_block<T: Real>(prefix: &str, cin: usize, cout: usize, stride: usize) -> Node<T> {
    let body = Node::Seq(vec![
        Node::conv(format!("{prefix}.conv1"), cin, cout, 3, stride, 1),
        Node::bn(format!("{prefix}.bn1"), cout),
        Node::relu(),
        Node::conv(format!("{prefix}.conv2"), cout, cout, 3, 1, 1),
        Node::bn(format!("{prefix}.bn2"), cout),
    ]);
    let shortcut = (stride != 1 || cin != cout).then(|| {
        Node::Seq(vec![Node::conv(format!("{prefix}.down.conv"), cin, cout, 1, stride, 0), Node::bn(format!("{prefix}.down.bn"), cout)])
    });
    Node::residual(body, shortcut, true)
}

/// Turn a copy of a block into a side module whose output starts at zero:
/// the trailing activation and an outer identity skip are dropped and the
/// last parameterized layer is zero-initialized.
pub fn mirror_for_side<T: Real>(block: Node<T>) -> Node<T> {
    let mut node = match block {
        Node::Seq(mut items) => {
            while matches!(items.last(), Some(Node::Relu(_))) {
                items.pop();
            }
            if let Some(Node::Residual(r)) = items.last() {
                if r.shortcut.is_none() {
                    if let Some(Node::Residual(r)) = items.pop() {
                        items.push(r.body);
                    }
                }
            }
            Node::Seq(items)
        }
        other => other,
    };
    node.zero_last();
    node
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::Conv => "Conv",
            Family::Res => "Res",
            Family::Dense => "Dense",
        };
        write!(f, "{fam}-{}", self.depth)
    }
}

/// `Conv-2`, `res-4`, `Dense-1`, ... (case-insensitive), with 10 classes.
impl FromStr for ArchSpec {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TensorError::Arch(format!("cannot parse architecture {s:?}"));
        let (fam, depth) = s.split_once('-').ok_or_else(bad)?;
        let family = match fam.to_ascii_lowercase().as_str() {
            "conv" => Family::Conv,
            "res" => Family::Res,
            "dense" => Family::Dense,
            _ => return Err(bad()),
        };
        let depth: usize = depth.parse().map_err(|_| bad())?;
        let spec = Self::new(family, depth, 10);
        spec.validate()?;
        Ok(spec)
    }
}
