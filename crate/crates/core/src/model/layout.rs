//! Layer inventory: every parameter tensor the network owns, in
//! registration order, plus the wiring that refers to them by id.

use mimo_tensor::{Graph, ParamId, ParamStore, Scalar, Shape, Var};

use super::config::{FusionMode, ModelConfig, LEVELS};
use crate::Result;

/// One parameter tensor of the inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    /// Inputs feeding one output unit; zero for biases.
    pub fan_in: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl Conv {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        Ok(if self.transposed {
            g.conv_transpose2d(x, w, Some(b), self.stride, self.padding)?
        } else {
            g.conv2d(x, w, Some(b), self.stride, self.padding)?
        })
    }

    pub fn apply_relu<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.apply(g, params, x)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Scm {
    pub stem: [Conv; 4],
    pub out: Conv,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Fusion {
    Fam(Conv),
    Concat(Conv),
    Sum,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Aff {
    pub squeeze: Conv,
    pub conv: Conv,
}

/// Wiring of a configured network. Arrays are indexed by level minus one,
/// or for level-to-level modules by the index noted on the field.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub eb_in: Conv,
    pub encoders: [Vec<ResBlock>; LEVELS],
    /// `down[i]` maps level `i + 1` to level `i + 2`.
    pub down: [Conv; 2],
    /// `scm[i]` and `fusion[i]` serve level `i + 2`.
    pub scm: Option<[Scm; 2]>,
    pub fusion: Option<[Fusion; 2]>,
    pub aff: Option<[Aff; 2]>,
    pub decoders: [Vec<ResBlock>; LEVELS],
    /// `up[i]` maps level `i + 2` to level `i + 1`; `merge[i]` serves level `i + 1`.
    pub up: [Conv; 2],
    pub merge: [Conv; 2],
    pub heads: [Option<Conv>; LEVELS],
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn param(&mut self, name: String, shape: Shape, fan_in: usize) -> ParamId {
        self.specs.push(ParamSpec { name, shape, fan_in });
        ParamId::from_index(self.specs.len() - 1)
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        let weight = self.param(format!("{name}.weight"), Shape::new(c_out, c_in, k, k), c_in * k * k);
        let bias = self.param(format!("{name}.bias"), Shape::new(c_out, 1, 1, 1), 0);
        Conv {
            weight,
            bias,
            stride,
            padding: k / 2,
            transposed: false,
        }
    }

    /// 4x4 kernel, stride 2, padding 1: exactly doubles the spatial size.
    /// Each output pixel sees a 2x2 footprint of the input per channel.
    fn up(&mut self, name: &str, c_in: usize, c_out: usize) -> Conv {
        let weight = self.param(format!("{name}.weight"), Shape::new(c_in, c_out, 4, 4), 4 * c_in);
        let bias = self.param(format!("{name}.bias"), Shape::new(c_out, 1, 1, 1), 0);
        Conv {
            weight,
            bias,
            stride: 2,
            padding: 1,
            transposed: true,
        }
    }

    fn res_stack(&mut self, prefix: &str, c: usize, blocks: usize) -> Vec<ResBlock> {
        (0..blocks)
            .map(|i| ResBlock {
                conv1: self.conv(&format!("{prefix}.res{i}.conv1"), c, c, 3, 1),
                conv2: self.conv(&format!("{prefix}.res{i}.conv2"), c, c, 3, 1),
            })
            .collect()
    }

    fn scm(&mut self, level: usize, c: usize) -> Scm {
        let quarter = (c / 4).max(1);
        let half = (c / 2).max(1);
        let rest = c.saturating_sub(3).max(1);
        let p = format!("scm{level}");
        Scm {
            stem: [
                self.conv(&format!("{p}.conv0"), 3, quarter, 3, 1),
                self.conv(&format!("{p}.conv1"), quarter, half, 1, 1),
                self.conv(&format!("{p}.conv2"), half, half, 3, 1),
                self.conv(&format!("{p}.conv3"), half, rest, 1, 1),
            ],
            out: self.conv(&format!("{p}.out"), rest + 3, c, 1, 1),
        }
    }

    fn fusion(&mut self, level: usize, c: usize, mode: FusionMode) -> Fusion {
        match mode {
            FusionMode::Fam => Fusion::Fam(self.conv(&format!("fam{level}.conv"), c, c, 3, 1)),
            FusionMode::Concat => Fusion::Concat(self.conv(&format!("fuse{level}.conv"), 2 * c, c, 1, 1)),
            FusionMode::Sum => Fusion::Sum,
        }
    }
}

/// Builds the wiring and the ordered parameter inventory for `config`.
pub(crate) fn build(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let ch = |level| config.channels(level);
    let blocks = config.num_resblocks;
    let mut b = Builder { specs: Vec::new() };

    let eb_in = b.conv("eb1.in", 3, ch(1), 3, 1);
    let eb1 = b.res_stack("eb1", ch(1), blocks);
    let mut down = Vec::new();
    let mut scm = Vec::new();
    let mut fusion = Vec::new();
    let mut encoders = vec![eb1];
    for level in 2..=LEVELS {
        down.push(b.conv(&format!("down{level}"), ch(level - 1), ch(level), 3, 2));
        if config.enable_mise {
            scm.push(b.scm(level, ch(level)));
            fusion.push(b.fusion(level, ch(level), config.fusion));
        }
        encoders.push(b.res_stack(&format!("eb{level}"), ch(level), blocks));
    }

    let total: usize = (1..=LEVELS).map(ch).sum();
    let aff = config.enable_aff.then(|| {
        [1, 2].map(|n| Aff {
            squeeze: b.conv(&format!("aff{n}.squeeze"), total, ch(n), 1, 1),
            conv: b.conv(&format!("aff{n}.conv"), ch(n), ch(n), 3, 1),
        })
    });

    let mut heads = [None; LEVELS];
    let db3 = b.res_stack("db3", ch(3), blocks);
    if config.enable_mosd {
        heads[2] = Some(b.conv("head3", ch(3), 3, 3, 1));
    }
    let up2 = b.up("up2", ch(3), ch(2));
    let merge2 = b.conv("merge2", 2 * ch(2), ch(2), 1, 1);
    let db2 = b.res_stack("db2", ch(2), blocks);
    if config.enable_mosd {
        heads[1] = Some(b.conv("head2", ch(2), 3, 3, 1));
    }
    let up1 = b.up("up1", ch(2), ch(1));
    let merge1 = b.conv("merge1", 2 * ch(1), ch(1), 1, 1);
    let db1 = b.res_stack("db1", ch(1), blocks);
    heads[0] = Some(b.conv("head1", ch(1), 3, 3, 1));

    let layout = Layout {
        eb_in,
        encoders: encoders.try_into().expect("three encoder levels"),
        down: pair(down).expect("two down-convs"),
        scm: pair(scm),
        fusion: pair(fusion),
        aff,
        decoders: [db1, db2, db3],
        up: [up1, up2],
        merge: [merge1, merge2],
        heads,
    };
    (layout, b.specs)
}

fn pair<X>(v: Vec<X>) -> Option<[X; 2]> {
    v.try_into().ok()
}
