//! File-backed email and text alert sinks.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::AlertChannel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboxRecord {
    pub channel: AlertChannel,
    pub entry_id: u64,
    pub written_at: u64,
    pub rendered_text: String,
}

/// One JSON-lines file per channel; at most one record per (entry, channel).
#[derive(Debug)]
pub struct Outbox {
    dir: PathBuf,
    delivered: BTreeSet<(AlertChannel, u64)>,
}

impl Outbox {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Outbox> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut delivered = BTreeSet::new();
        for channel in [AlertChannel::Email, AlertChannel::Text] {
            let path = Self::path_in(&dir, channel);
            terminate_torn_line(&path)?;
            for rec in read_records(&path)? {
                delivered.insert((rec.channel, rec.entry_id));
            }
        }
        Ok(Outbox { dir, delivered })
    }

    pub fn path(&self, channel: AlertChannel) -> PathBuf {
        Self::path_in(&self.dir, channel)
    }

    fn path_in(dir: &Path, channel: AlertChannel) -> PathBuf {
        dir.join(format!("{}.jsonl", channel.as_str()))
    }

    /// Append a record unless this (entry, channel) pair was already written.
    /// Returns whether a line was written.
    pub fn deliver(&mut self, record: OutboxRecord) -> io::Result<bool> {
        if record.channel == AlertChannel::Ringer {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "ringer alerts are pushed, not written to an outbox",
            ));
        }
        let key = (record.channel, record.entry_id);
        if self.delivered.contains(&key) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(record.channel))?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        self.delivered.insert(key);
        Ok(true)
    }

    pub fn records(&self, channel: AlertChannel) -> io::Result<Vec<OutboxRecord>> {
        read_records(&self.path(channel))
    }
}

/// Close off a partial last line so the next append starts on a fresh line.
fn terminate_torn_line(path: &Path) -> io::Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    if bytes.last().is_some_and(|b| *b != b'\n') {
        OpenOptions::new()
            .append(true)
            .open(path)?
            .write_all(b"\n")?;
    }
    Ok(())
}

/// Read a channel file, skipping unreadable lines.
pub fn read_records(path: &Path) -> io::Result<Vec<OutboxRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            Err(e) => log::warn!("outbox {}: skipping unreadable line: {e}", path.display()),
        }
    }
    Ok(out)
}
