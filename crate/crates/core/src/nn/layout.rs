//! Named parameter blocks inside one flat vector.

use rand::Rng;

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

/// Allocation plan for a model's parameters. The ordered block list doubles
/// as the architecture description stored in checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
}

/// Offsets of one dense layer, weight row-major `fan_out x fan_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: &str, len: usize, init: Init) -> usize {
        let offset = self.total;
        self.blocks.push(Block {
            name: name.to_string(),
            offset,
            len,
            init,
        });
        self.total += len;
        offset
    }

    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = self.alloc(&format!("{name}.w"), fan_in * fan_out, Init::FanIn(fan_in));
        let b = self.alloc(&format!("{name}.b"), fan_out, Init::Zeros);
        Dense {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Fresh parameters; each block draws from its own stream so adding a
    /// block never perturbs the others. Values are rounded to f32.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        for (i, block) in self.blocks.iter().enumerate() {
            let dst = &mut params[block.offset..block.offset + block.len];
            match block.init {
                Init::Zeros => {}
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    let mut r = rng::stream(seed, &[0x1a7, i as u64]);
                    for p in dst {
                        *p = r.random_range(-bound..bound) as f32 as f64;
                    }
                }
            }
        }
        params
    }

    pub fn arch(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("{}:{}", b.name, b.len))
            .collect::<Vec<_>>()
            .join(";")
    }
}
