//! Labeled, counter-keyed random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, label, t, i, j)`. Streams never depend on how many draws other
//! streams made, so results are identical regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels. The numeric tags are part of the determinism contract;
/// do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Label {
    Task = 1,
    Init = 2,
    Model = 3,
    Pairs = 4,
    AlignSelf = 5,
    AlignPeer = 6,
    GammaCalibration = 7,
    DittoGlobal = 8,
    IfcaSelect = 9,
    IfcaInit = 10,
    MEmpirical = 11,
}

const NONE: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5851_F42D_4C95_7F2D, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Factory for the substreams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: Label) -> Rng {
        self.keyed(label, NONE, NONE, NONE)
    }

    pub fn round(&self, label: Label, t: usize) -> Rng {
        self.keyed(label, t as u64, NONE, NONE)
    }

    pub fn client(&self, label: Label, t: usize, i: usize) -> Rng {
        self.keyed(label, t as u64, i as u64, NONE)
    }

    pub fn pair(&self, label: Label, t: usize, i: usize, j: usize) -> Rng {
        self.keyed(label, t as u64, i as u64, j as u64)
    }

    fn keyed(&self, label: Label, t: u64, i: u64, j: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(mix(&[label as u64, t, i, j]));
        rng
    }
}
