//! Frozen, CRC-guarded network blob (`.nnfc`).
//!
//! Little-endian layout:
//!
//! ```text
//! magic[4] version:u32 obs_dim:u32 act_dim:u32 num_layers:u32
//! num_layers × { in_dim:u32 out_dim:u32 activation:u32 }   (0 linear, 1 relu, 2 tanh)
//! num_layers × { weights: out×in f32 row-major, bias: out f32 }
//! crc32:u32 over every preceding byte
//! ```

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::training::{Activation, CriticNet, Dense, Mlp, PolicyNet};

pub const POLICY_MAGIC: [u8; 4] = *b"NNFC";
/// Critic sidecar checkpoints share the layout under a different magic.
pub const CRITIC_MAGIC: [u8; 4] = *b"NNCV";
pub const VERSION: u32 = 1;
pub const DEFAULT_BUDGET_BYTES: usize = 50_000;
pub const HEADER_BYTES: usize = 20;
pub const LAYER_ENTRY_BYTES: usize = 12;
pub const CRC_BYTES: usize = 4;
pub const MAX_LAYERS: usize = 64;
pub const MAX_WIDTH: usize = 1 << 16;

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

/// Streaming CRC-32 (reflected, polynomial 0xEDB88320).
#[derive(Debug, Clone, Copy)]
pub struct Crc32 {
    state: u32,
}

impl Default for Crc32 {
    fn default() -> Self {
        Self { state: 0xFFFF_FFFF }
    }
}

impl Crc32 {
    pub fn update(&mut self, bytes: &[u8]) {
        let mut c = self.state;
        for &b in bytes {
            c = CRC_TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
        }
        self.state = c;
    }

    pub fn finish(&self) -> u32 {
        self.state ^ 0xFFFF_FFFF
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = Crc32::default();
    c.update(bytes);
    c.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Byte offset of the weight matrix within the blob.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// A validated blob plus its parsed layer table. Weights stay in the blob.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    bytes: Arc<[u8]>,
    pub magic: [u8; 4],
    pub obs_dim: usize,
    pub act_dim: usize,
    pub layers: Vec<LayerDesc>,
    /// Two ping-pong activation buffers of the widest layer, f32.
    pub arena_bytes: usize,
}

impl LoadedModel {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn file_bytes(&self) -> usize {
        self.bytes.len()
    }

    /// File plus activation arena.
    pub fn footprint_bytes(&self) -> usize {
        self.file_bytes() + self.arena_bytes
    }

    pub fn max_width(&self) -> usize {
        self.arena_bytes / 8
    }

    pub fn check_budget(&self, budget: usize) -> Result<()> {
        if self.footprint_bytes() > budget {
            return Err(Error::Budget {
                required: self.footprint_bytes(),
                budget,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, layer: &LayerDesc, out: usize, input: usize) -> f32 {
        read_f32(&self.bytes, layer.weight_offset + 4 * (out * layer.in_dim + input))
    }

    #[inline]
    pub fn bias(&self, layer: &LayerDesc, out: usize) -> f32 {
        read_f32(&self.bytes, layer.bias_offset + 4 * out)
    }

    pub fn to_mlp(&self) -> Mlp<f32> {
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                weight: Array2::from_shape_fn((l.out_dim, l.in_dim), |(o, i)| self.weight(l, o, i)),
                bias: Array1::from_shape_fn(l.out_dim, |o| self.bias(l, o)),
                activation: l.activation,
            })
            .collect();
        Mlp::from_layers(layers)
    }
}

#[inline]
fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    let b = bytes.get(at..at + 4)?;
    Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Serializes any dense chain under `magic`, activations as stored.
pub fn export_mlp(mlp: &Mlp<f32>, magic: [u8; 4]) -> Vec<u8> {
    let payload: usize = mlp.layers.iter().map(|l| 4 * (l.weight.len() + l.bias.len())).sum();
    let mut out = Vec::with_capacity(HEADER_BYTES + LAYER_ENTRY_BYTES * mlp.layers.len() + payload + CRC_BYTES);
    out.extend_from_slice(&magic);
    for v in [
        VERSION,
        mlp.input_dim() as u32,
        mlp.output_dim() as u32,
        mlp.layers.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &mlp.layers {
        for v in [l.in_dim() as u32, l.out_dim() as u32, l.activation.code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for l in &mlp.layers {
        for w in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Freezes the deterministic policy: ReLU hidden layers and a tanh head.
/// The log-std vector is training-only and not exported.
pub fn export(policy: &PolicyNet) -> Vec<u8> {
    let mut mlp = policy.mlp.clone();
    mlp.layers.last_mut().unwrap().activation = Activation::Tanh;
    export_mlp(&mlp, POLICY_MAGIC)
}

pub fn export_critic(critic: &CriticNet) -> Vec<u8> {
    export_mlp(&critic.mlp, CRITIC_MAGIC)
}

/// Validates a policy blob.
pub fn load(bytes: &[u8]) -> Result<LoadedModel> {
    load_with_magic(bytes, POLICY_MAGIC)
}

/// Validates a policy blob and its footprint against `budget` bytes.
pub fn load_within(bytes: &[u8], budget: usize) -> Result<LoadedModel> {
    let model = load(bytes)?;
    model.check_budget(budget)?;
    Ok(model)
}

/// Structure is checked before the CRC so that truncation reports as a
/// format error; semantic dimension checks run last.
pub fn load_with_magic(bytes: &[u8], magic: [u8; 4]) -> Result<LoadedModel> {
    let fmt = |m: String| Err(Error::Format(m));
    if bytes.len() < HEADER_BYTES + CRC_BYTES {
        return fmt(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[..4] != magic {
        return fmt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        ));
    }
    let header = |i: usize| read_u32(bytes, 4 + 4 * i).expect("length checked") as usize;
    let version = header(0) as u32;
    if version != VERSION {
        return fmt(format!("unsupported version {version}"));
    }
    let (obs_dim, act_dim, num_layers) = (header(1), header(2), header(3));
    if num_layers == 0 || num_layers > MAX_LAYERS {
        return fmt(format!("layer count {num_layers} outside 1..={MAX_LAYERS}"));
    }
    let table_end = HEADER_BYTES + LAYER_ENTRY_BYTES * num_layers;
    if bytes.len() < table_end + CRC_BYTES {
        return fmt("truncated layer table".into());
    }
    let mut layers = Vec::with_capacity(num_layers);
    let mut offset = table_end;
    for k in 0..num_layers {
        let at = HEADER_BYTES + LAYER_ENTRY_BYTES * k;
        let field = |i: usize| read_u32(bytes, at + 4 * i).expect("length checked");
        let (in_dim, out_dim, code) = (field(0) as usize, field(1) as usize, field(2));
        if in_dim == 0 || out_dim == 0 || in_dim > MAX_WIDTH || out_dim > MAX_WIDTH {
            return fmt(format!("layer {k} has dimensions {in_dim}×{out_dim}"));
        }
        let Some(activation) = Activation::from_code(code) else {
            return fmt(format!("layer {k} has unknown activation code {code}"));
        };
        let weight_offset = offset;
        let bias_offset = weight_offset + 4 * in_dim * out_dim;
        offset = bias_offset + 4 * out_dim;
        layers.push(LayerDesc {
            in_dim,
            out_dim,
            activation,
            weight_offset,
            bias_offset,
        });
    }
    let expected = offset + CRC_BYTES;
    if bytes.len() != expected {
        return fmt(format!(
            "declared layout needs {expected} bytes, blob has {}",
            bytes.len()
        ));
    }
    let stored = read_u32(bytes, offset).expect("length checked");
    let computed = crc32(&bytes[..offset]);
    if stored != computed {
        return Err(Error::Corruption { stored, computed });
    }
    if layers[0].in_dim != obs_dim {
        return fmt(format!("first layer input {} != obs_dim {obs_dim}", layers[0].in_dim));
    }
    if layers[num_layers - 1].out_dim != act_dim {
        return fmt(format!(
            "last layer output {} != act_dim {act_dim}",
            layers[num_layers - 1].out_dim
        ));
    }
    for k in 1..num_layers {
        if layers[k - 1].out_dim != layers[k].in_dim {
            return fmt(format!("layer {} output does not feed layer {k}", k - 1));
        }
    }
    let max_width = layers
        .iter()
        .flat_map(|l| [l.in_dim, l.out_dim])
        .max()
        .expect("non-empty");
    Ok(LoadedModel {
        bytes: Arc::from(bytes),
        magic,
        obs_dim,
        act_dim,
        layers,
        arena_bytes: 4 * 2 * max_width,
    })
}

/// Rebuilds a training policy from a blob (log-std reset to `log_std`).
pub fn policy_from_blob(bytes: &[u8], log_std: f32) -> Result<PolicyNet> {
    let mut mlp = load(bytes)?.to_mlp();
    mlp.layers.last_mut().unwrap().activation = Activation::Linear;
    Ok(PolicyNet {
        mlp,
        log_std: [log_std; crate::observation::ACT_DIM],
    })
}

pub fn critic_from_blob(bytes: &[u8]) -> Result<CriticNet> {
    Ok(CriticNet {
        mlp: load_with_magic(bytes, CRITIC_MAGIC)?.to_mlp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        export(&PolicyNet::new(&mut rng, 0.6, 0.0))
    }

    #[test]
    fn crc_check_values() {
        assert_eq!(crc32(b""), 0x0000_0000);
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b"The quick brown fox jumps over the lazy dog"), 0x414F_A339);
    }

    #[test]
    fn crc_streams_across_calls() {
        let data = b"split this message anywhere";
        for cut in 0..data.len() {
            let mut c = Crc32::default();
            c.update(&data[..cut]);
            c.update(&data[cut..]);
            assert_eq!(c.finish(), crc32(data));
        }
    }

    #[test]
    fn canonical_layout() {
        let blob = canonical();
        let payload = 4 * (15 * 64 + 64 + 64 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(payload, 12_944);
        assert_eq!(blob.len(), payload + HEADER_BYTES + 3 * LAYER_ENTRY_BYTES + CRC_BYTES);
        assert_eq!(blob.len(), 13_004);
        assert_eq!(&blob[..4], b"NNFC");
        assert_eq!(&blob[4..8], &[1, 0, 0, 0]);
        let model = load(&blob).unwrap();
        assert_eq!(model.arena_bytes, 512);
        assert_eq!(model.footprint_bytes(), 13_516);
        let acts: Vec<_> = model.layers.iter().map(|l| l.activation).collect();
        assert_eq!(acts, vec![Activation::Relu, Activation::Relu, Activation::Tanh]);
    }

    #[test]
    fn reexport_is_byte_identical() {
        let blob = canonical();
        let model = load(&blob).unwrap();
        assert_eq!(export_mlp(&model.to_mlp(), POLICY_MAGIC), blob);
    }

    #[test]
    fn flipped_payload_byte_is_corruption() {
        let mut blob = canonical();
        blob[500] ^= 0x10;
        assert!(matches!(load(&blob), Err(Error::Corruption { .. })));
    }

    #[test]
    fn truncation_is_format_error() {
        let blob = canonical();
        for len in [0, 3, 19, 40, 100, blob.len() - 1] {
            assert!(matches!(load(&blob[..len]), Err(Error::Format(_))), "len {len}");
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut blob = canonical();
        blob[0] = b'X';
        assert!(matches!(load(&blob), Err(Error::Format(_))));
        // the critic magic is not a policy
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = export_critic(&CriticNet::new(&mut rng));
        assert!(matches!(load(&critic), Err(Error::Format(_))));
        assert!(critic_from_blob(&critic).is_ok());
    }

    #[test]
    fn inconsistent_dims_are_format_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = PolicyNet::new(&mut rng, 0.0, 0.0).mlp;
        mlp.layers.last_mut().unwrap().activation = Activation::Tanh;
        let mut blob = export_mlp(&mlp, POLICY_MAGIC);
        // declare act_dim 5, re-seal the crc
        blob[12..16].copy_from_slice(&5u32.to_le_bytes());
        let n = blob.len() - 4;
        let crc = crc32(&blob[..n]);
        blob[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(load(&blob), Err(Error::Format(_))));
    }

    #[test]
    fn budget_is_enforced() {
        let blob = canonical();
        assert!(load_within(&blob, DEFAULT_BUDGET_BYTES).is_ok());
        assert!(matches!(
            load_within(&blob, 10_000),
            Err(Error::Budget { required: 13_516, budget: 10_000 })
        ));
    }

    #[test]
    fn mutated_blobs_never_panic() {
        let blob = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100_000 {
            let mut b = blob.clone();
            match rng.gen_range(0..4) {
                0 => {
                    let i = rng.gen_range(0..b.len());
                    b[i] = rng.gen();
                }
                1 => b.truncate(rng.gen_range(0..b.len())),
                2 => {
                    // corrupt a header word, then re-seal so structure checks run
                    let i = rng.gen_range(0..14) * 4;
                    let v: u32 = rng.gen_range(0..70_000);
                    b[i..i + 4].copy_from_slice(&v.to_le_bytes());
                    let n = b.len() - 4;
                    let crc = crc32(&b[..n]);
                    b[n..].copy_from_slice(&crc.to_le_bytes());
                }
                _ => {
                    let extra = rng.gen_range(1..16);
                    b.extend((0..extra).map(|_| rng.gen::<u8>()));
                }
            }
            if let Ok(model) = load(&b) {
                assert!(model.footprint_bytes() >= model.file_bytes());
                let _ = model.to_mlp();
            }
        }
    }

    #[test]
    fn policy_roundtrip_through_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = PolicyNet::new(&mut rng, 0.2, 0.0);
        let back = policy_from_blob(&export(&policy), 0.0).unwrap();
        assert_eq!(back.mlp, policy.mlp);
    }
}
