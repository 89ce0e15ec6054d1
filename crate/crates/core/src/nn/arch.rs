/// One convolution layer; square kernels, zero padding, ReLU after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Layer sizes of the shared conv + fully connected actor-critic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    /// Side of the square single-channel input map.
    pub input: usize,
    pub convs: [ConvSpec; 3],
    pub proprio: usize,
    pub hidden: usize,
    pub channels: usize,
    pub options: usize,
}

/// Named slice of the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".b")
    }
}

impl Arch {
    /// 1x32x32 -> 16@16x16 -> 32@8x8 -> 32@4x4, flatten (512) + proprio (6)
    /// -> 256 -> {15 logits, 1 value}.
    pub fn standard() -> Self {
        Arch {
            input: 32,
            convs: [
                ConvSpec {
                    out_channels: 16,
                    kernel: 5,
                    stride: 2,
                    pad: 2,
                },
                ConvSpec {
                    out_channels: 32,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                ConvSpec {
                    out_channels: 32,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
            ],
            proprio: 6,
            hidden: 256,
            channels: 5,
            options: 3,
        }
    }

    /// Same layer kinds at toy width on a 4x4 map, for gradient checks.
    pub fn toy() -> Self {
        Arch {
            input: 4,
            convs: [
                ConvSpec {
                    out_channels: 2,
                    kernel: 5,
                    stride: 2,
                    pad: 2,
                },
                ConvSpec {
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                ConvSpec {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
            ],
            proprio: 6,
            hidden: 7,
            channels: 5,
            options: 3,
        }
    }

    /// Spatial side after each conv layer.
    pub fn sizes(&self) -> [usize; 3] {
        let s1 = self.convs[0].out_size(self.input);
        let s2 = self.convs[1].out_size(s1);
        let s3 = self.convs[2].out_size(s2);
        [s1, s2, s3]
    }

    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.convs[layer - 1].out_channels
        }
    }

    pub fn flat_len(&self) -> usize {
        let s = self.sizes()[2];
        self.convs[2].out_channels * s * s
    }

    pub fn feature_len(&self) -> usize {
        self.flat_len() + self.proprio
    }

    pub fn logits_len(&self) -> usize {
        self.channels * self.options
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let b = ParamBlock {
                name,
                offset,
                shape,
            };
            offset += b.len();
            blocks.push(b);
        };
        for (l, c) in self.convs.iter().enumerate() {
            push(
                format!("conv{}.w", l + 1),
                vec![c.out_channels, self.in_channels(l), c.kernel, c.kernel],
            );
            push(format!("conv{}.b", l + 1), vec![c.out_channels]);
        }
        push("fc1.w".into(), vec![self.hidden, self.feature_len()]);
        push("fc1.b".into(), vec![self.hidden]);
        push("policy.w".into(), vec![self.logits_len(), self.hidden]);
        push("policy.b".into(), vec![self.logits_len()]);
        push("value.w".into(), vec![1, self.hidden]);
        push("value.b".into(), vec![1]);
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ParamBlock::len).sum()
    }
}
