//! CSV text with a fingerprint header.

use sha2::{Digest, Sha256};

use crate::RunConfig;

pub fn fingerprint(command: &str, config: Option<&RunConfig>, seed: u64) -> String {
    let doc = serde_json::json!({
        "command": command,
        "config": config.map(RunConfig::canonical),
        "seed": seed,
    });
    Sha256::digest(doc.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Nine significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(command: &str, config: &RunConfig, seed: u64, columns: &[&str]) -> Self {
        let mut text = format!("# qrkey {command}\n# fingerprint sha256:{}\n", fingerprint(command, Some(config), seed));
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}
