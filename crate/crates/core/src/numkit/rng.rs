use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::Vector;

/// Reproducible random stream addressed by `(seed, stream)`.
///
/// Backed by ChaCha8; distinct stream indices select non-overlapping
/// keystreams under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// One Student-t draw: a standard normal, then a chi-square(df), in that order.
    pub fn student_t(&mut self, df: u32) -> f64 {
        assert!(df >= 1, "Student-t needs df >= 1");
        let z = self.normal();
        let chi = ChiSquared::new(df as f64).expect("df >= 1").sample(&mut self.rng);
        z / (chi / df as f64).sqrt()
    }

    pub fn draw_student_t(&mut self, df: u32, n: usize) -> Vector {
        Vector::from_iterator(n, (0..n).map(|_| self.student_t(df)))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
