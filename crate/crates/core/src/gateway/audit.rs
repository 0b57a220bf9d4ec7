use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GatewayError;

/// One line of the audit log. `response` is the raw body, byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub endpoint: String,
    pub request: Value,
    pub status: u16,
    pub response: String,
    pub attempts: u32,
    pub started_ms: u128,
    pub finished_ms: u128,
}

/// Append-only JSON-lines log shared between worker threads.
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn create(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Ok(AuditLog { file: Mutex::new(file) })
    }

    pub fn append(&self, entry: &AuditEntry) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(entry).expect("entry serialises");
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| GatewayError::Io(e.to_string()))
    }
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditEntry>, GatewayError> {
    let f = File::open(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
