//! Checkpoint persistence: a plain-text manifest followed by raw
//! little-endian float64 arrays.
//!
//! The format is deliberately framework-free — any language can recover
//! the weights with a text scan and a byte copy. Two hashes guard it: the
//! payload hash detects corruption at load time, and the config hash ties
//! the artifact back to the resolved config that produced it. Saving and
//! loading round-trip the parameters bitwise.

use crate::error::{io_err, HarnessError};

use rdmd_core::net::{init_generator_from, DenoiserNet, GeneratorNet, NetConfig};
use rdmd_core::rng::Rng;
use rdmd_core::schedule::NoiseSchedule;
use rdmd_core::Tensor;

use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "rdmd-checkpoint v1";

/// 64-bit FNV-1a over a byte stream; the hash used everywhere in the
/// artifact formats (stable, dependency-free, trivially reimplementable).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// What kind of network the payload holds.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointKind {
    Denoiser,
    /// One-step generator: the conditioning level it was frozen at and the
    /// transport coefficient it was trained with.
    Generator { sigma_init: f64, lambda: f64 },
}

/// A saved network plus the context needed to reuse it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub iteration: usize,
    pub seed: u64,
    /// FNV-1a of the resolved config TOML of the producing run.
    pub config_hash: u64,
    pub schedule: NoiseSchedule,
    pub net_config: NetConfig,
    /// Parameters in canonical traversal order.
    pub params: Vec<Tensor>,
}

/// Names the canonical parameter list implied by a net config:
/// input encoder, time encoder, then decoder, each as weight/bias pairs.
fn param_names(config: &NetConfig) -> Vec<String> {
    let mut names = Vec::new();
    let blocks = [
        ("input_encoder", config.encoder_dims.len()),
        ("time_encoder", config.encoder_dims.len()),
        ("decoder", config.decoder_dims.len()),
    ];
    for (block, layers) in blocks {
        for layer in 0..layers {
            names.push(format!("{block}.{layer}.weight"));
            names.push(format!("{block}.{layer}.bias"));
        }
    }
    names
}

fn payload_bytes(params: &[Tensor]) -> Vec<u8> {
    let len: usize = params.iter().map(|t| t.len()).sum();
    let mut bytes = Vec::with_capacity(len * 8);
    for t in params {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

impl Checkpoint {
    pub fn of_denoiser(
        net: &DenoiserNet,
        schedule: &NoiseSchedule,
        iteration: usize,
        seed: u64,
        config_hash: u64,
    ) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Denoiser,
            iteration,
            seed,
            config_hash,
            schedule: schedule.clone(),
            net_config: net.config.clone(),
            params: net.params().into_iter().cloned().collect(),
        }
    }

    pub fn of_generator(
        generator: &GeneratorNet,
        lambda: f64,
        schedule: &NoiseSchedule,
        iteration: usize,
        seed: u64,
        config_hash: u64,
    ) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Generator { sigma_init: generator.sigma_init, lambda },
            iteration,
            seed,
            config_hash,
            schedule: schedule.clone(),
            net_config: generator.net.config.clone(),
            params: generator.net.params().into_iter().cloned().collect(),
        }
    }

    /// Serializes manifest + payload and writes the file.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let names = param_names(&self.net_config);
        if names.len() != self.params.len() {
            return Err(HarnessError::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "architecture implies {} arrays but {} were supplied",
                    names.len(),
                    self.params.len()
                ),
            });
        }
        let payload = payload_bytes(&self.params);
        let mut text = String::new();
        let _ = writeln!(text, "{MAGIC}");
        match &self.kind {
            CheckpointKind::Denoiser => {
                let _ = writeln!(text, "kind denoiser");
            }
            CheckpointKind::Generator { sigma_init, lambda } => {
                let _ = writeln!(text, "kind generator");
                let _ = writeln!(text, "sigma_init {sigma_init}");
                let _ = writeln!(text, "lambda {lambda}");
            }
        }
        let _ = writeln!(text, "iteration {}", self.iteration);
        let _ = writeln!(text, "seed {}", self.seed);
        let _ = writeln!(text, "config_hash {:016x}", self.config_hash);
        let s = &self.schedule;
        let _ = writeln!(text, "sigma_min {}", s.sigma_min);
        let _ = writeln!(text, "t_max {}", s.t_max);
        let _ = writeln!(text, "rho {}", s.rho);
        let c = &self.net_config;
        let _ = writeln!(text, "input_dim {}", c.input_dim);
        let _ = writeln!(text, "encoder_dims {}", join_dims(&c.encoder_dims));
        let _ = writeln!(text, "decoder_dims {}", join_dims(&c.decoder_dims));
        let _ = writeln!(text, "embed_dim {}", c.embed_dim);
        let _ = writeln!(text, "leaky_slope {}", c.leaky_slope);
        match c.sigma_data {
            Some(sd) => {
                let _ = writeln!(text, "sigma_data {sd}");
            }
            None => {
                let _ = writeln!(text, "sigma_data none");
            }
        }
        let _ = writeln!(text, "arrays {}", self.params.len());
        for (name, t) in names.iter().zip(&self.params) {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(text, "array {name} {}", shape.join("x"));
        }
        let _ = writeln!(text, "payload_hash {:016x}", fnv1a64(&payload));
        let _ = writeln!(text, "payload");
        let mut bytes = text.into_bytes();
        bytes.extend_from_slice(&payload);
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    /// Reads a checkpoint, verifying the magic line, the manifest shape
    /// declarations, and the payload hash. Any mismatch fails loudly.
    pub fn load(path: &Path) -> Result<Checkpoint, HarnessError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let bad = |message: String| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let marker = b"\npayload\n";
        let split = find_subsequence(&bytes, marker)
            .ok_or_else(|| bad("missing payload marker".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|e| bad(format!("manifest is not utf-8: {e}")))?;
        let payload = &bytes[split + marker.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("not a checkpoint (expected `{MAGIC}` on line 1)")));
        }
        let mut kind_name = None;
        let mut sigma_init = None;
        let mut lambda = None;
        let mut iteration = None;
        let mut seed = None;
        let mut config_hash = None;
        let mut sigma_min = None;
        let mut t_max = None;
        let mut rho = None;
        let mut input_dim = None;
        let mut encoder_dims = None;
        let mut decoder_dims = None;
        let mut embed_dim = None;
        let mut leaky_slope = None;
        let mut sigma_data: Option<Option<f64>> = None;
        let mut arrays_declared = None;
        let mut payload_hash = None;
        let mut array_shapes: Vec<(String, Vec<usize>)> = Vec::new();
        for line in lines {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed manifest line `{line}`")))?;
            match key {
                "kind" => kind_name = Some(value.to_string()),
                "sigma_init" => sigma_init = Some(parse_f64(value, "sigma_init", &bad)?),
                "lambda" => lambda = Some(parse_f64(value, "lambda", &bad)?),
                "iteration" => iteration = Some(parse_usize(value, "iteration", &bad)?),
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?)
                }
                "config_hash" => {
                    config_hash = Some(
                        u64::from_str_radix(value, 16)
                            .map_err(|e| bad(format!("config_hash: {e}")))?,
                    )
                }
                "payload_hash" => {
                    payload_hash = Some(
                        u64::from_str_radix(value, 16)
                            .map_err(|e| bad(format!("payload_hash: {e}")))?,
                    )
                }
                "sigma_min" => sigma_min = Some(parse_f64(value, "sigma_min", &bad)?),
                "t_max" => t_max = Some(parse_f64(value, "t_max", &bad)?),
                "rho" => rho = Some(parse_f64(value, "rho", &bad)?),
                "input_dim" => input_dim = Some(parse_usize(value, "input_dim", &bad)?),
                "embed_dim" => embed_dim = Some(parse_usize(value, "embed_dim", &bad)?),
                "leaky_slope" => leaky_slope = Some(parse_f64(value, "leaky_slope", &bad)?),
                "sigma_data" => {
                    sigma_data = Some(if value == "none" {
                        None
                    } else {
                        Some(parse_f64(value, "sigma_data", &bad)?)
                    })
                }
                "encoder_dims" => encoder_dims = Some(parse_dims(value, "encoder_dims", &bad)?),
                "decoder_dims" => decoder_dims = Some(parse_dims(value, "decoder_dims", &bad)?),
                "arrays" => arrays_declared = Some(parse_usize(value, "arrays", &bad)?),
                "array" => {
                    let (name, shape) = value
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("malformed array line `{line}`")))?;
                    let dims = shape
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<usize>, _>>()
                        .map_err(|e| bad(format!("array {name} shape: {e}")))?;
                    array_shapes.push((name.to_string(), dims));
                }
                other => return Err(bad(format!("unknown manifest key `{other}`"))),
            }
        }
        let missing = |field: &str| bad(format!("manifest is missing `{field}`"));
        let kind_name = kind_name.ok_or_else(|| missing("kind"))?;
        let kind = match kind_name.as_str() {
            "denoiser" => CheckpointKind::Denoiser,
            "generator" => CheckpointKind::Generator {
                sigma_init: sigma_init.ok_or_else(|| missing("sigma_init"))?,
                lambda: lambda.ok_or_else(|| missing("lambda"))?,
            },
            other => return Err(bad(format!("unknown kind `{other}`"))),
        };
        let declared = arrays_declared.ok_or_else(|| missing("arrays"))?;
        if declared != array_shapes.len() {
            return Err(bad(format!(
                "manifest declares {declared} arrays but lists {}",
                array_shapes.len()
            )));
        }
        let expected_hash = payload_hash.ok_or_else(|| missing("payload_hash"))?;
        let actual_hash = fnv1a64(payload);
        if expected_hash != actual_hash {
            return Err(bad(format!(
                "payload hash mismatch: manifest says {expected_hash:016x}, payload hashes to {actual_hash:016x} — file is corrupted"
            )));
        }
        let total: usize = array_shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(bad(format!(
                "payload holds {} bytes but the manifest implies {}",
                payload.len(),
                total * 8
            )));
        }
        let net_config = NetConfig {
            input_dim: input_dim.ok_or_else(|| missing("input_dim"))?,
            encoder_dims: encoder_dims.ok_or_else(|| missing("encoder_dims"))?,
            decoder_dims: decoder_dims.ok_or_else(|| missing("decoder_dims"))?,
            embed_dim: embed_dim.ok_or_else(|| missing("embed_dim"))?,
            leaky_slope: leaky_slope.ok_or_else(|| missing("leaky_slope"))?,
            sigma_data: sigma_data.ok_or_else(|| missing("sigma_data"))?,
        };
        let expected_names = param_names(&net_config);
        if expected_names.len() != array_shapes.len() {
            return Err(bad(format!(
                "architecture implies {} arrays, manifest lists {}",
                expected_names.len(),
                array_shapes.len()
            )));
        }
        for (expected, (actual, _)) in expected_names.iter().zip(&array_shapes) {
            if expected != actual {
                return Err(bad(format!(
                    "array order mismatch: expected `{expected}`, found `{actual}`"
                )));
            }
        }
        let mut params = Vec::with_capacity(array_shapes.len());
        let mut offset = 0;
        for (name, shape) in &array_shapes {
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for i in 0..len {
                let start = (offset + i) * 8;
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&payload[start..start + 8]);
                data.push(f64::from_le_bytes(buf));
            }
            offset += len;
            params.push(
                Tensor::new(shape.clone(), data)
                    .map_err(|e| bad(format!("array {name}: {e}")))?,
            );
        }
        Ok(Checkpoint {
            kind,
            iteration: iteration.ok_or_else(|| missing("iteration"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            config_hash: config_hash.ok_or_else(|| missing("config_hash"))?,
            schedule: NoiseSchedule {
                t_max: t_max.ok_or_else(|| missing("t_max"))?,
                sigma_min: sigma_min.ok_or_else(|| missing("sigma_min"))?,
                rho: rho.ok_or_else(|| missing("rho"))?,
            },
            net_config,
            params,
        })
    }

    /// Rebuilds the denoiser network from the payload.
    pub fn to_denoiser(&self, path: &Path) -> Result<DenoiserNet, HarnessError> {
        if self.kind != CheckpointKind::Denoiser {
            return Err(HarnessError::Checkpoint {
                path: path.to_path_buf(),
                message: format!("expected a denoiser checkpoint, found {:?}", self.kind),
            });
        }
        self.rebuild_net(path)
    }

    /// Rebuilds the one-step generator from the payload.
    pub fn to_generator(&self, path: &Path) -> Result<GeneratorNet, HarnessError> {
        match self.kind {
            CheckpointKind::Generator { sigma_init, .. } => {
                let net = self.rebuild_net(path)?;
                // Wrap via the canonical constructor so the conditioning
                // level is validated against the stored schedule...
                let generator = init_generator_from(&net, sigma_init, &self.schedule)?;
                Ok(generator)
            }
            _ => Err(HarnessError::Checkpoint {
                path: path.to_path_buf(),
                message: format!("expected a generator checkpoint, found {:?}", self.kind),
            }),
        }
    }

    fn rebuild_net(&self, path: &Path) -> Result<DenoiserNet, HarnessError> {
        let mut net = DenoiserNet::init(self.net_config.clone(), &mut Rng::new(0))?;
        let mut slots = net.params_mut();
        if slots.len() != self.params.len() {
            return Err(HarnessError::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "architecture expects {} arrays, checkpoint holds {}",
                    slots.len(),
                    self.params.len()
                ),
            });
        }
        for (slot, stored) in slots.iter_mut().zip(&self.params) {
            if slot.shape() != stored.shape() {
                return Err(HarnessError::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!(
                        "array shape mismatch: net expects {:?}, checkpoint holds {:?}",
                        slot.shape(),
                        stored.shape()
                    ),
                });
            }
            slot.data_mut().copy_from_slice(stored.data());
        }
        Ok(net)
    }
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_dims(
    value: &str,
    field: &str,
    bad: &impl Fn(String) -> HarnessError,
) -> Result<Vec<usize>, HarnessError> {
    value
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<usize>, _>>()
        .map_err(|e| bad(format!("{field}: {e}")))
}

fn parse_f64(
    value: &str,
    field: &str,
    bad: &impl Fn(String) -> HarnessError,
) -> Result<f64, HarnessError> {
    value.parse::<f64>().map_err(|e| bad(format!("{field}: {e}")))
}

fn parse_usize(
    value: &str,
    field: &str,
    bad: &impl Fn(String) -> HarnessError,
) -> Result<usize, HarnessError> {
    value.parse::<usize>().map_err(|e| bad(format!("{field}: {e}")))
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scratch_dir;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_dim: 2,
            encoder_dims: vec![4, 4],
            decoder_dims: vec![8, 2],
            embed_dim: 4,
            leaky_slope: 0.01,
            sigma_data: Some(1.0),
        }
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn denoiser_round_trip_is_bitwise() {
        let dir = scratch_dir("ckpt-roundtrip");
        let net = DenoiserNet::init(tiny_config(), &mut Rng::new(5)).unwrap();
        let schedule = NoiseSchedule::default();
        let saved = Checkpoint::of_denoiser(&net, &schedule, 123, 9, 0xdead_beef);
        let path = dir.join("net.ckpt");
        saved.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.iteration, 123);
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.config_hash, 0xdead_beef);
        assert_eq!(loaded.schedule, schedule);
        for (a, b) in saved.params.iter().zip(&loaded.params) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let rebuilt = loaded.to_denoiser(&path).unwrap();
        assert_eq!(rebuilt, net);
    }

    #[test]
    fn generator_round_trip_keeps_conditioning() {
        let dir = scratch_dir("ckpt-generator");
        let net = DenoiserNet::init(tiny_config(), &mut Rng::new(6)).unwrap();
        let schedule = NoiseSchedule::default();
        let generator = init_generator_from(&net, 1.0, &schedule).unwrap();
        let saved = Checkpoint::of_generator(&generator, 0.2, &schedule, 10, 3, 7);
        let path = dir.join("gen.ckpt");
        saved.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.kind, CheckpointKind::Generator { sigma_init: 1.0, lambda: 0.2 });
        let rebuilt = loaded.to_generator(&path).unwrap();
        assert_eq!(rebuilt, generator);
        assert!(loaded.to_denoiser(&path).is_err());
    }

    #[test]
    fn save_twice_produces_identical_bytes() {
        let dir = scratch_dir("ckpt-bytes");
        let net = DenoiserNet::init(tiny_config(), &mut Rng::new(7)).unwrap();
        let schedule = NoiseSchedule::default();
        let ckpt = Checkpoint::of_denoiser(&net, &schedule, 1, 2, 3);
        let a = dir.join("a.ckpt");
        let b = dir.join("b.ckpt");
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corrupted_payload_fails_loudly() {
        let dir = scratch_dir("ckpt-corrupt");
        let net = DenoiserNet::init(tiny_config(), &mut Rng::new(8)).unwrap();
        let schedule = NoiseSchedule::default();
        let path = dir.join("net.ckpt");
        Checkpoint::of_denoiser(&net, &schedule, 1, 2, 3).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&path, bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = scratch_dir("ckpt-truncated");
        let path = dir.join("net.ckpt");
        std::fs::write(&path, b"rdmd-checkpoint v1\nkind denoiser\n").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn foreign_file_is_rejected_at_the_magic_line() {
        let dir = scratch_dir("ckpt-foreign");
        let path = dir.join("net.ckpt");
        std::fs::write(&path, b"something else\npayload\n").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("not a checkpoint"), "{err}");
    }
}
