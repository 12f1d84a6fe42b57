//! Versioned checkpoint container: a text header followed by little-endian
//! `f32` tensors in the order the header declares them.
//!
//! ```text
//! imbnas-checkpoint 1
//! kind: supernet
//! space: {"num_cells":1,...}
//! genotype: -
//! epoch: 30
//! rng: <seed hex> <stream> <word pos>
//! schedule: 3f2a9c...
//! tensor: stem.weight 48
//! ...
//! checksum: <sha256 of everything above plus the payload>
//! end
//! <payload>
//! ```

use std::path::Path;

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::{SuperNetwork, Subnet, TrainSchedule};
use crate::error::{Error, Result};
use crate::nn::{Network, OpParams};
use crate::rng::{stream, RandomStream};
use crate::space::{Genotype, SearchSpace};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "imbnas-checkpoint";

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Supernet,
    Subnet,
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::Supernet => "supernet",
            ModelKind::Subnet => "subnet",
        }
    }
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub space: SearchSpace,
    pub genotype: Option<Genotype>,
    pub epoch: usize,
    pub rng: Option<RandomStream>,
    pub schedule: Option<String>,
    pub network: Network,
}

fn tensors(net: &Network) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = vec![
        ("stem.weight".into(), &net.stem_weight),
        ("stem.norm_mean".into(), &net.stem_running.mean),
        ("stem.norm_var".into(), &net.stem_running.var),
    ];
    for (e, slots) in net.blocks.iter().enumerate() {
        for (s, block) in slots.iter().enumerate() {
            if let OpParams::SepConv {
                depthwise,
                pointwise,
                running,
            } = &block.params
            {
                out.push((format!("edge{e}.op{s}.depthwise"), depthwise));
                out.push((format!("edge{e}.op{s}.pointwise"), pointwise));
                out.push((format!("edge{e}.op{s}.norm_mean"), &running.mean));
                out.push((format!("edge{e}.op{s}.norm_var"), &running.var));
            }
        }
    }
    out.push(("head.weight".into(), &net.head_weight));
    out.push(("head.bias".into(), &net.head_bias));
    out
}

fn tensors_mut(net: &mut Network) -> Vec<(String, &mut Vec<f64>)> {
    let mut out: Vec<(String, &mut Vec<f64>)> = vec![
        ("stem.weight".into(), &mut net.stem_weight),
        ("stem.norm_mean".into(), &mut net.stem_running.mean),
        ("stem.norm_var".into(), &mut net.stem_running.var),
    ];
    for (e, slots) in net.blocks.iter_mut().enumerate() {
        for (s, block) in slots.iter_mut().enumerate() {
            if let OpParams::SepConv {
                depthwise,
                pointwise,
                running,
            } = &mut block.params
            {
                out.push((format!("edge{e}.op{s}.depthwise"), depthwise));
                out.push((format!("edge{e}.op{s}.pointwise"), pointwise));
                out.push((format!("edge{e}.op{s}.norm_mean"), &mut running.mean));
                out.push((format!("edge{e}.op{s}.norm_var"), &mut running.var));
            }
        }
    }
    out.push(("head.weight".into(), &mut net.head_weight));
    out.push(("head.bias".into(), &mut net.head_bias));
    out
}

fn encode_rng(rng: &RandomStream) -> String {
    format!(
        "{} {} {}",
        hex::encode(rng.get_seed()),
        rng.get_stream(),
        rng.get_word_pos()
    )
}

fn decode_rng(s: &str) -> Result<RandomStream> {
    let bad = |m: &str| field_err("rng", m);
    let parts: Vec<&str> = s.split(' ').collect();
    let [seed, stream_id, pos] = parts[..] else {
        return Err(bad("expected `<seed> <stream> <word pos>`"));
    };
    let seed: [u8; 32] = hex::decode(seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("seed is not 32 hex bytes"))?;
    let mut rng = RandomStream::from_seed(seed);
    rng.set_stream(stream_id.parse().map_err(|_| bad("bad stream id"))?);
    rng.set_word_pos(pos.parse().map_err(|_| bad("bad word position"))?);
    Ok(rng)
}

impl Checkpoint {
    pub fn from_supernet(net: &SuperNetwork, rng: Option<&RandomStream>, schedule: Option<&TrainSchedule>) -> Self {
        Checkpoint {
            kind: ModelKind::Supernet,
            space: net.space.clone(),
            genotype: None,
            epoch: net.epoch_counter,
            rng: rng.cloned(),
            schedule: schedule.map(TrainSchedule::fingerprint),
            network: net.net.clone(),
        }
    }

    pub fn from_subnet(net: &Subnet, rng: Option<&RandomStream>, schedule: Option<&TrainSchedule>) -> Self {
        Checkpoint {
            kind: ModelKind::Subnet,
            space: net.space.clone(),
            genotype: Some(net.genotype.clone()),
            epoch: net.epoch_counter,
            rng: rng.cloned(),
            schedule: schedule.map(TrainSchedule::fingerprint),
            network: net.net.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let list = tensors(&self.network);
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
        header.push_str(&format!("kind: {}\n", self.kind.as_str()));
        header.push_str(&format!(
            "space: {}\n",
            serde_json::to_string(&self.space).expect("space serializes")
        ));
        header.push_str(&format!(
            "genotype: {}\n",
            self.genotype.as_ref().map_or("-".to_string(), Genotype::encode)
        ));
        header.push_str(&format!("epoch: {}\n", self.epoch));
        header.push_str(&format!("rng: {}\n", self.rng.as_ref().map_or("-".to_string(), encode_rng)));
        header.push_str(&format!("schedule: {}\n", self.schedule.as_deref().unwrap_or("-")));
        for (name, values) in &list {
            header.push_str(&format!("tensor: {name} {}\n", values.len()));
        }
        let mut payload = Vec::new();
        for (_, values) in &list {
            for &v in *values {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(header.as_bytes());
        hasher.update(&payload);
        header.push_str(&format!("checksum: {}\nend\n", hex::encode(hasher.finalize())));
        let mut out = header.into_bytes();
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header_end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| field_err("header", "no header terminator; file truncated or not a checkpoint"))?;
        let header = std::str::from_utf8(&bytes[..=header_end]).map_err(|_| field_err("header", "not valid UTF-8"))?;
        let payload = &bytes[header_end + 5..];
        let mut lines: Vec<&str> = header.lines().collect();

        let first = lines.first().copied().unwrap_or_default();
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| field_err("magic", format!("expected `{MAGIC}`, found `{first}`")))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(field_err(
                "version",
                format!("unsupported format version `{version}`, expected {FORMAT_VERSION}"),
            ));
        }

        let checksum_line = lines.pop().unwrap_or_default();
        let expected = checksum_line
            .strip_prefix("checksum: ")
            .ok_or_else(|| field_err("checksum", "missing checksum line"))?;
        let hashed_len = header.len() - checksum_line.len() - 1;
        let mut hasher = Sha256::new();
        hasher.update(&bytes[..hashed_len]);
        hasher.update(payload);
        if hex::encode(hasher.finalize()) != expected {
            return Err(field_err("checksum", "contents do not match the recorded checksum"));
        }

        let mut fields = std::collections::BTreeMap::new();
        let mut declared = Vec::new();
        for line in &lines[1..] {
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| field_err("header", format!("malformed line `{line}`")))?;
            if key == "tensor" {
                let (name, len) = value
                    .rsplit_once(' ')
                    .ok_or_else(|| field_err("tensor", format!("malformed entry `{value}`")))?;
                let len: usize = len
                    .parse()
                    .map_err(|_| field_err(&format!("tensor:{name}"), "bad length"))?;
                declared.push((name.to_string(), len));
            } else {
                fields.insert(key, value);
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| field_err(k, "missing"));

        let kind = match get("kind")? {
            "supernet" => ModelKind::Supernet,
            "subnet" => ModelKind::Subnet,
            other => return Err(field_err("kind", format!("unknown model kind `{other}`"))),
        };
        let space: SearchSpace =
            serde_json::from_str(get("space")?).map_err(|e| field_err("space", e.to_string()))?;
        let genotype = match get("genotype")? {
            "-" => None,
            token => Some(Genotype::decode(token, &space).map_err(|e| field_err("genotype", e.to_string()))?),
        };
        if (kind == ModelKind::Subnet) != genotype.is_some() {
            return Err(field_err("genotype", "present exactly for sub-network checkpoints"));
        }
        let epoch = get("epoch")?
            .parse()
            .map_err(|_| field_err("epoch", "not an integer"))?;
        let rng = match get("rng")? {
            "-" => None,
            s => Some(decode_rng(s)?),
        };
        let schedule = match get("schedule")? {
            "-" => None,
            s => Some(s.to_string()),
        };

        let edge_ops: Vec<Vec<_>> = match &genotype {
            Some(g) => g.ops().iter().map(|&o| vec![space.candidate_ops[o]]).collect(),
            None => vec![space.candidate_ops.clone(); space.genotype_len()],
        };
        let mut network = Network::with_edge_ops(&space, &edge_ops, &mut stream(0, 0));
        let mut slots = tensors_mut(&mut network);
        if slots.len() != declared.len() {
            return Err(field_err(
                "tensor",
                format!("{} tensors declared, model needs {}", declared.len(), slots.len()),
            ));
        }
        let total: usize = declared.iter().map(|(_, n)| n * 4).sum();
        if payload.len() != total {
            return Err(field_err(
                "payload",
                format!("{} bytes present, {total} declared", payload.len()),
            ));
        }
        let mut offset = 0;
        for ((name, len), (want_name, slot)) in declared.iter().zip(slots.iter_mut()) {
            if name != want_name || *len != slot.len() {
                return Err(field_err(
                    &format!("tensor:{name}"),
                    format!("expected `{want_name}` with {} values", slot.len()),
                ));
            }
            for (i, v) in slot.iter_mut().enumerate() {
                let at = offset + 4 * i;
                *v = f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes")) as f64;
            }
            offset += 4 * len;
        }
        drop(slots);
        Ok(Checkpoint {
            kind,
            space,
            genotype,
            epoch,
            rng,
            schedule,
            network,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn into_supernet(self) -> Result<SuperNetwork> {
        if self.kind != ModelKind::Supernet {
            return Err(field_err("kind", "expected a super-network checkpoint"));
        }
        Ok(SuperNetwork {
            space: self.space,
            net: self.network,
            epoch_counter: self.epoch,
        })
    }

    pub fn into_subnet(self) -> Result<Subnet> {
        let genotype = match (self.kind, self.genotype) {
            (ModelKind::Subnet, Some(g)) => g,
            _ => return Err(field_err("kind", "expected a sub-network checkpoint")),
        };
        Ok(Subnet {
            space: self.space,
            genotype,
            net: self.network,
            epoch_counter: self.epoch,
        })
    }
}

/// Serializes a super-network together with the random stream that will
/// continue its training.
pub fn save_checkpoint(net: &SuperNetwork, rng: &RandomStream) -> Vec<u8> {
    Checkpoint::from_supernet(net, Some(rng), None).to_bytes()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(SuperNetwork, Option<RandomStream>)> {
    let ckpt = Checkpoint::from_bytes(bytes)?;
    let rng = ckpt.rng.clone();
    Ok((ckpt.into_supernet()?, rng))
}

/// Loads a super-network and checks that it was built over `space`.
pub fn load_checkpoint_for(bytes: &[u8], space: &SearchSpace) -> Result<(SuperNetwork, Option<RandomStream>)> {
    let (net, rng) = load_checkpoint(bytes)?;
    if &net.space != space {
        return Err(field_err("space", "checkpoint was saved for a different search space"));
    }
    Ok((net, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::space::build_search_space;
    use crate::supernet::{extract_subnet, forward_with_path, init_supernet};
    use crate::tensor::Tensor;
    use rand::Rng;

    fn setup() -> (SuperNetwork, Tensor) {
        let space = build_search_space(1, 3, &["skip", "separable-conv-3x3", "max-pool-3x3"], 4, 3)
            .unwrap()
            .with_input_channels(2);
        let net = init_supernet(&space, &mut stream(1, 0));
        let mut rng = stream(2, 0);
        let x = Tensor::from_vec(3, 2, 4, 4, (0..96).map(|_| rng.random_range(-2.0..2.0)).collect());
        (net, x)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut net, x) = setup();
        net.epoch_counter = 17;
        let mut rng = stream(5, 3);
        let _: u64 = rng.random();
        let bytes = save_checkpoint(&net, &rng);
        let (loaded, r2) = load_checkpoint(&bytes).unwrap();
        assert_eq!(loaded, net);
        let mut r2 = r2.unwrap();
        assert_eq!(r2.random::<u64>(), rng.random::<u64>());
        let g = Genotype(vec![1, 2, 1]);
        let a = forward_with_path(&net, &g, &x).unwrap();
        let b = forward_with_path(&loaded, &g, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subnet_round_trip() {
        let (net, x) = setup();
        let sub = extract_subnet(&net, &Genotype(vec![1, 0, 2])).unwrap();
        let bytes = Checkpoint::from_subnet(&sub, None, None).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_subnet().unwrap();
        assert_eq!(back, sub);
        let a = sub.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_single_byte_corruption_is_rejected() {
        let (net, _) = setup();
        let bytes = save_checkpoint(&net, &stream(0, 0));
        let header_len = bytes.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
        for i in (0..bytes.len()).step_by(7).chain(0..header_len) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x20;
            assert!(load_checkpoint(&bad).is_err(), "corruption at byte {i} accepted");
        }
    }

    #[test]
    fn truncation_and_version_errors_name_fields() {
        let (net, _) = setup();
        let bytes = save_checkpoint(&net, &stream(0, 0));
        match load_checkpoint(&bytes[..bytes.len() - 3]) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "checksum"),
            other => panic!("unexpected {other:?}"),
        }
        match load_checkpoint(&bytes[..40]) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "header"),
            other => panic!("unexpected {other:?}"),
        }
        let text = String::from_utf8_lossy(&bytes).replacen("imbnas-checkpoint 1", "imbnas-checkpoint 9", 1);
        match load_checkpoint(text.as_bytes()) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "version"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_space_rejected() {
        let (net, _) = setup();
        let bytes = save_checkpoint(&net, &stream(0, 0));
        let other = net.space.clone().with_num_classes(7);
        match load_checkpoint_for(&bytes, &other) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "space"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_checkpoint_for(&bytes, &net.space).is_ok());
    }
}
