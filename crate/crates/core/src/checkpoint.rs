//! Trainer checkpoints: one text file per network per agent plus a JSON
//! manifest with the iteration counters and every agent's RNG position.
//! Replay buffers are not saved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::{AgentNets, Trainer};
use crate::nn::Mlp;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;
const ROLES: [&str; 4] = ["actor", "critic", "target-actor", "target-critic"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte ChaCha key.
    pub seed: String,
    pub stream: u64,
    /// Decimal, since the position is a 68-bit counter.
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub iteration: u64,
    pub federation_rounds: u64,
    pub sensitive_agents: usize,
    pub insensitive_agents: usize,
    pub files: Vec<String>,
    pub rngs: Vec<RngState>,
}

fn file_name(trainer: &Trainer, k: usize, role: &str) -> String {
    let s = trainer.sensitive.len();
    if k < s {
        format!("sensitive-{k:03}-{role}.txt")
    } else {
        format!("insensitive-{:03}-{role}.txt", k - s)
    }
}

fn role_net<'a>(nets: &'a AgentNets, role: &str) -> &'a Mlp {
    match role {
        "actor" => &nets.actor,
        "critic" => &nets.critic,
        "target-actor" => &nets.target_actor,
        _ => &nets.target_critic,
    }
}

fn role_net_mut<'a>(nets: &'a mut AgentNets, role: &str) -> &'a mut Mlp {
    match role {
        "actor" => &mut nets.actor,
        "critic" => &mut nets.critic,
        "target-actor" => &mut nets.target_actor,
        _ => &mut nets.target_critic,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("bad rng seed {s:?}"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn save(trainer: &Trainer, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for k in 0..trainer.agents() {
        for role in ROLES {
            let name = file_name(trainer, k, role);
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            role_net(trainer.nets(k), role).write_to(&mut w)?;
            w.flush()?;
            files.push(name);
        }
    }
    let rngs = trainer
        .rngs()
        .map(|r| RngState {
            seed: hex(&r.get_seed()),
            stream: r.get_stream(),
            word_pos: r.get_word_pos().to_string(),
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT_VERSION,
        iteration: trainer.iteration(),
        federation_rounds: trainer.federation_rounds(),
        sensitive_agents: trainer.sensitive.len(),
        insensitive_agents: trainer.insensitive.len(),
        files,
        rngs,
    };
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(manifest)
}

/// Restores networks, counters and RNG positions into a trainer built for
/// the same population.
pub fn load(trainer: &mut Trainer, dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format {}", manifest.format)));
    }
    if manifest.sensitive_agents != trainer.sensitive.len() || manifest.insensitive_agents != trainer.insensitive.len()
    {
        return Err(Error::Checkpoint(format!(
            "population {}+{} does not match trainer {}+{}",
            manifest.sensitive_agents,
            manifest.insensitive_agents,
            trainer.sensitive.len(),
            trainer.insensitive.len()
        )));
    }
    let mut loaded = Vec::with_capacity(trainer.agents());
    for k in 0..trainer.agents() {
        let mut nets = trainer.nets(k).clone();
        for role in ROLES {
            let net = Mlp::read_from(BufReader::new(File::open(dir.join(file_name(trainer, k, role)))?))?;
            let slot = role_net_mut(&mut nets, role);
            if !slot.same_shape(&net) {
                return Err(Error::Checkpoint(format!(
                    "{} has the wrong shape",
                    file_name(trainer, k, role)
                )));
            }
            *slot = net;
        }
        loaded.push(nets);
    }
    if manifest.rngs.len() != trainer.agents() {
        return Err(Error::Checkpoint("rng count does not match population".into()));
    }
    let mut rngs = Vec::with_capacity(manifest.rngs.len());
    for state in &manifest.rngs {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(unhex(&state.seed)?);
        rng.set_stream(state.stream);
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad word position {:?}", state.word_pos)))?;
        rng.set_word_pos(pos);
        rngs.push(rng);
    }
    for (slot, nets) in trainer.nets_mut().zip(loaded) {
        *slot = nets;
    }
    for (slot, rng) in trainer.rngs_mut().zip(rngs) {
        *slot = rng;
    }
    trainer.set_progress(manifest.iteration, manifest.federation_rounds);
    Ok(manifest)
}
