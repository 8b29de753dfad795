//! JSON loading and saving for MDPs, games and policies.
//!
//! Floats are written in shortest round-trip form, so `load(save(x)) == x`
//! bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{validate_mdp, FiniteMdp, TabularPolicy};
use crate::multi_agent::{validate_game, AgentPolicySet, MarkovGame};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses JSON from a string; `path` is only used in error messages.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        // serde_json appends " at line L column C"; the location is kept
        // in its own fields instead.
        let full = e.to_string();
        let message = match full.rfind(" at line ") {
            Some(i) => full[..i].to_string(),
            None => full,
        };
        Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message,
        }
    })
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_json(&text, path)
}

pub fn to_json<T: Serialize>(payload: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(payload)?;
    text.push('\n');
    Ok(text)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, payload: &T) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(payload)?).map_err(|e| io_error(path, e))
}

/// Writes serializable rows as CSV with a header taken from field names.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Loads and validates an MDP.
pub fn load_mdp(path: impl AsRef<Path>) -> Result<FiniteMdp> {
    let mdp: FiniteMdp = load_json(&path)?;
    validate_mdp(&mdp).into_result(&format!("MDP in {}", path.as_ref().display()))?;
    Ok(mdp)
}

/// Loads and validates a Markov game.
pub fn load_game(path: impl AsRef<Path>) -> Result<MarkovGame> {
    let game: MarkovGame = load_json(&path)?;
    validate_game(&game).into_result(&format!("game in {}", path.as_ref().display()))?;
    Ok(game)
}

/// Loads and validates a policy stored as a 2-D array.
pub fn load_policy(path: impl AsRef<Path>) -> Result<TabularPolicy> {
    let pi: TabularPolicy = load_json(&path)?;
    pi.validate()
        .into_result(&format!("policy in {}", path.as_ref().display()))?;
    Ok(pi)
}

pub fn load_policy_set(path: impl AsRef<Path>) -> Result<AgentPolicySet> {
    AgentPolicySet::new(load_json::<AgentPolicySet>(&path)?.policies)
}
