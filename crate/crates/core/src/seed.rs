use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Stream namespaces. Every consumer of randomness gets its own ChaCha stream
// of the master seed so that consumers never perturb each other.
pub(crate) const USER_CONTENT: u64 = 0x1000_0000;
pub(crate) const USER_DELETE: u64 = 0x2000_0000;
pub(crate) const PARTITION: u64 = 0x3000_0000;
pub(crate) const LABEL_MEANS: u64 = 0x4000_0000;
pub(crate) const CHUNK_SAMPLES: u64 = 0x5000_0000_0000;
pub(crate) const TEST_SET: u64 = 0x6000_0000;
pub(crate) const STORE: u64 = 0x7000_0000;

pub(crate) fn stream(seed: u64, namespace: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(namespace.wrapping_add(index));
    rng
}
