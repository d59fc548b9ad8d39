/// Counter-based random stream.
///
/// Draw `i` of a stream is a pure function of `(master_seed, stream_id, i)`,
/// so corpora can be generated per-utterance in any order (or in parallel)
/// and still come out bit-identical. Uniforms come from a splitmix-style
/// finalizer over the counter; Gaussians use Box-Muller on two uniforms.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    base: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> RngStream {
        let base = mix64(master_seed ^ mix64(stream_id.wrapping_mul(GOLDEN) ^ 0xA076_1D64_78BD_642F));
        RngStream {
            master_seed,
            stream_id,
            base,
            counter: 0,
        }
    }

    /// Stream dedicated to one utterance, keyed by `(master_seed, domain_id,
    /// utterance_id)`.
    pub fn for_utterance(master_seed: u64, domain_id: u32, utterance_id: u64) -> RngStream {
        RngStream::new(master_seed, mix64(domain_id as u64 ^ GOLDEN) ^ utterance_id)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [lo, hi], inclusive on both ends.
    pub fn uniform_usize(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        let draw = ((self.next_u64() as u128 * span as u128) >> 64) as u64;
        lo + draw as usize
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        // 1 - u1 lies in (0, 1], keeping the log finite.
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        radius * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_usize(0, i);
            items.swap(i, j);
        }
    }
}
