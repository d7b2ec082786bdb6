//! Code-defined reference architectures.

use crate::arch::{ArchDocument, ArchitectureSpec, LayerDocument, LayerKind};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 3] = ["chain3", "resnet-tiny", "resnet50-shape"];

/// Look up a builtin by name.
pub fn by_name(name: &str) -> Result<ArchitectureSpec> {
    match name {
        "chain3" => Ok(chain3()),
        "resnet-tiny" => Ok(resnet_tiny()),
        "resnet50-shape" => Ok(resnet50_shape()),
        other => Err(Error::Validation(format!(
            "unknown builtin architecture {other:?} (expected one of {BUILTIN_NAMES:?})"
        ))),
    }
}

struct Builder {
    layers: Vec<LayerDocument>,
    edges: Vec<[usize; 2]>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            layers: Vec::new(),
            edges: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        from: &[usize],
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        affine: bool,
        group: Option<usize>,
    ) -> usize {
        let id = self.layers.len();
        self.layers.push(LayerDocument {
            id,
            kind: LayerKind::Conv,
            c_in,
            c_out,
            k,
            stride,
            pad: k / 2,
            bias,
            affine,
            prunable: true,
            group,
            pool: None,
        });
        self.edges.extend(from.iter().map(|&p| [p, id]));
        id
    }

    fn classifier(&mut self, from: &[usize], c_in: usize, classes: usize) -> usize {
        let id = self.layers.len();
        self.layers.push(LayerDocument {
            id,
            kind: LayerKind::Fc,
            c_in,
            c_out: classes,
            k: 1,
            stride: 1,
            pad: 0,
            bias: true,
            affine: false,
            prunable: false,
            group: None,
            pool: None,
        });
        self.edges.extend(from.iter().map(|&p| [p, id]));
        id
    }

    fn finish(self, name: &str, input: [usize; 3], classifier: usize) -> ArchitectureSpec {
        ArchitectureSpec::from_document(ArchDocument {
            name: name.to_string(),
            input,
            layers: self.layers,
            edges: self.edges,
            classifier,
        })
        .expect("builtin architecture is valid")
    }
}

/// Input 3x8x8; conv 3->4, conv 4->6 (k3, s1, p1, bias); global pool; fc 6->10.
pub fn chain3() -> ArchitectureSpec {
    let mut b = Builder::new();
    let l0 = b.conv(&[], 3, 4, 3, 1, true, false, None);
    let l1 = b.conv(&[l0], 4, 6, 3, 1, true, false, None);
    let fc = b.classifier(&[l1], 6, 10);
    b.finish("chain3", [3, 8, 8], fc)
}

/// A two-stage residual network on 3x16x16 inputs.
///
/// Stem conv 3->8, stage 1 with two basic blocks of width 8 (identity
/// shortcuts), stage 2 with two basic blocks of width 16, the first one
/// strided with a 1x1 projection shortcut. Each stage's block outputs (and the
/// stem or projection feeding the residual stream) form one coupling group.
pub fn resnet_tiny() -> ArchitectureSpec {
    let mut b = Builder::new();
    let g1 = Some(0);
    let g2 = Some(1);
    let stem = b.conv(&[], 3, 8, 3, 1, false, true, g1);
    let mut stream = vec![stem];
    for _ in 0..2 {
        let c1 = b.conv(&stream, 8, 8, 3, 1, false, true, None);
        let c2 = b.conv(&[c1], 8, 8, 3, 1, false, true, g1);
        stream.push(c2);
    }
    let c1 = b.conv(&stream, 8, 16, 3, 2, false, true, None);
    let c2 = b.conv(&[c1], 16, 16, 3, 1, false, true, g2);
    let short = b.conv(&stream, 8, 16, 1, 2, false, true, g2);
    let mut stream = vec![c2, short];
    let c1 = b.conv(&stream, 16, 16, 3, 1, false, true, None);
    let c2 = b.conv(&[c1], 16, 16, 3, 1, false, true, g2);
    stream.push(c2);
    stream.sort_unstable();
    let fc = b.classifier(&stream, 16, 10);
    b.finish("resnet-tiny", [3, 16, 16], fc)
}

/// Shape-only ResNet-50 at 224x224 (bottleneck v1.5 layout, stride on the
/// 3x3 conv), 1000 classes. Convs carry a per-channel affine in place of batch
/// norm and no bias.
pub fn resnet50_shape() -> ArchitectureSpec {
    let mut b = Builder::new();
    let mut stem = LayerDocument {
        id: 0,
        kind: LayerKind::Conv,
        c_in: 3,
        c_out: 64,
        k: 7,
        stride: 2,
        pad: 3,
        bias: false,
        affine: true,
        prunable: true,
        group: None,
        pool: Some([3, 2, 1]),
    };
    stem.id = b.layers.len();
    b.layers.push(stem);

    let mut stream = vec![0usize];
    let mut in_ch = 64;
    let stages = [(64usize, 3usize, 1usize), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    for (s, &(width, blocks, stride)) in stages.iter().enumerate() {
        let out_ch = width * 4;
        let group = Some(s);
        let mut next = Vec::new();
        for blk in 0..blocks {
            let st = if blk == 0 { stride } else { 1 };
            let c_in = if blk == 0 { in_ch } else { out_ch };
            let input = if blk == 0 { stream.clone() } else { next.clone() };
            let c1 = b.conv(&input, c_in, width, 1, 1, false, true, None);
            let c2 = b.conv(&[c1], width, width, 3, st, false, true, None);
            let c3 = b.conv(&[c2], width, out_ch, 1, 1, false, true, group);
            if blk == 0 {
                let down = b.conv(&input, c_in, out_ch, 1, st, false, true, group);
                next.push(down);
            }
            next.push(c3);
            next.sort_unstable();
        }
        stream = next;
        in_ch = out_ch;
    }
    let fc = b.classifier(&stream, in_ch, 1000);
    b.finish("resnet50-shape", [3, 224, 224], fc)
}
