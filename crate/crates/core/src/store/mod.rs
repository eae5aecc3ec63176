//! Durable, append-only persistence.
//!
//! Data directory layout:
//!
//! ```text
//! <data>/entries.log        entry_created / entry_decided records
//! <data>/settings.log       settings_changed records
//! <data>/images/<id>.pgm    uploaded camera frames
//! <outbox>/email.jsonl      one OutboxRecord per line
//! <outbox>/text.jsonl
//! ```
//!
//! Every append is flushed to disk before it returns, and callers only
//! acknowledge an operation after the append succeeded. On open, both logs
//! are replayed; a torn tail is cut off, and an interior corruption stops
//! replay and is preserved in `entries.log.corrupt-<offset>` before the log
//! is truncated to its valid prefix.

pub mod log;
pub mod outbox;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use self::log::{replay, replay_into, LogBody, LogRecord, Recovery, Stop, StoreState};
pub use outbox::{Outbox, OutboxRecord};

use crate::model::{EntryRecord, OwnerSettings, Verdict};

const ENTRIES_LOG: &str = "entries.log";
const SETTINGS_LOG: &str = "settings.log";
const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage write failed: {0}")]
    Io(#[from] io::Error),
    #[error("storage write failed: injected fault")]
    Injected,
}

#[derive(Debug, Error)]
pub enum DecideError {
    #[error("no such entry {0}")]
    NoSuchEntry(u64),
    #[error("entry {} is already decided", .0.entry_id)]
    AlreadyDecided(EntryRecord),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

/// A fresh upload to persist.
#[derive(Debug, Clone)]
pub struct NewEntry<'a> {
    pub received_at: u64,
    pub image_pgm: Option<&'a [u8]>,
    pub camera_fault: bool,
    pub press_id: u64,
    pub pressed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Created {
    Fresh(EntryRecord),
    /// The same press was uploaded before; nothing was written.
    Duplicate(EntryRecord),
}

impl Created {
    pub fn record(&self) -> &EntryRecord {
        match self {
            Created::Fresh(r) | Created::Duplicate(r) => r,
        }
    }
}

/// Append-only log segment with rollback of partial writes.
#[derive(Debug)]
struct Segment {
    file: File,
    len: u64,
}

impl Segment {
    fn open(path: &Path, valid_len: usize) -> io::Result<Segment> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        file.set_len(valid_len as u64)?;
        file.sync_all()?;
        let mut seg = Segment {
            file,
            len: valid_len as u64,
        };
        seg.seek_end()?;
        Ok(seg)
    }

    fn seek_end(&mut self) -> io::Result<()> {
        use std::io::Seek;
        self.file.seek(io::SeekFrom::Start(self.len))?;
        Ok(())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        let result = self
            .file
            .write_all(bytes)
            .and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                // Cut the partial record so later appends stay frame-aligned.
                let _ = self.file.set_len(self.len);
                let _ = self.seek_end();
                Err(e)
            }
        }
    }
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    entries: Segment,
    settings: Segment,
    state: StoreState,
    recovery_warnings: Vec<String>,
    recovery_stop: Option<Stop>,
    fail_writes: bool,
}

impl Store {
    /// Open (or create) the store in `dir` and replay its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(IMAGES_DIR))?;

        let entries_path = dir.join(ENTRIES_LOG);
        let entry_bytes = read_or_empty(&entries_path)?;
        let entries_rec = replay(&entry_bytes);
        preserve_corruption(&entries_path, &entry_bytes, &entries_rec)?;

        let settings_path = dir.join(SETTINGS_LOG);
        let settings_bytes = read_or_empty(&settings_path)?;
        let settings_rec = replay_into(entries_rec.state.clone(), &settings_bytes);
        preserve_corruption(&settings_path, &settings_bytes, &settings_rec)?;

        let mut warnings = entries_rec.warnings.clone();
        warnings.extend(settings_rec.warnings.iter().cloned());
        for w in &warnings {
            ::log::warn!("recovery: {w}");
        }
        if let Some(stop) = &entries_rec.stop {
            ::log::warn!("recovery: entries.log stopped early: {stop:?}");
        }

        Ok(Store {
            entries: Segment::open(&entries_path, entries_rec.valid_len)?,
            settings: Segment::open(&settings_path, settings_rec.valid_len)?,
            state: settings_rec.state,
            recovery_warnings: warnings,
            recovery_stop: entries_rec.stop.or(settings_rec.stop),
            fail_writes: false,
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn settings(&self) -> &OwnerSettings {
        &self.state.settings
    }

    pub fn entry(&self, id: u64) -> Option<&EntryRecord> {
        self.state.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &EntryRecord> {
        self.state.entries.values()
    }

    pub fn recovery_warnings(&self) -> &[String] {
        &self.recovery_warnings
    }

    pub fn recovery_stop(&self) -> Option<&Stop> {
        self.recovery_stop.as_ref()
    }

    /// Make every subsequent write fail, as a full disk would.
    pub fn inject_write_failure(&mut self, fail: bool) {
        self.fail_writes = fail;
    }

    pub fn history(&self, from_ms: u64, to_ms: u64, limit: usize) -> Vec<EntryRecord> {
        self.state.history(from_ms, to_ms, limit)
    }

    pub fn image_path(&self, entry_id: u64) -> PathBuf {
        self.dir.join(IMAGES_DIR).join(format!("{entry_id}.pgm"))
    }

    pub fn image(&self, entry_id: u64) -> Option<Vec<u8>> {
        self.entry(entry_id)?.image_url.as_ref()?;
        fs::read(self.image_path(entry_id)).ok()
    }

    pub fn create_entry(&mut self, new: NewEntry<'_>, now: u64) -> Result<Created, StoreError> {
        if let Some(existing) = self.state.entry_for_origin(new.press_id, new.pressed_at) {
            return Ok(Created::Duplicate(existing.clone()));
        }
        let entry_id = self.state.next_entry_id();
        let image_url = match new.image_pgm {
            Some(bytes) => {
                self.write_image(entry_id, bytes)?;
                Some(format!("/images/{entry_id}.pgm"))
            }
            None => None,
        };
        let record = LogRecord {
            written_at: now,
            body: LogBody::EntryCreated {
                entry_id,
                received_at: new.received_at,
                image_url,
                camera_fault: new.camera_fault,
                press_id: new.press_id,
                pressed_at: new.pressed_at,
            },
        };
        self.append_entry_log(&record)?;
        Ok(Created::Fresh(self.state.entries[&entry_id].clone()))
    }

    /// Record the single allowed transition of an entry's access field.
    pub fn decide(
        &mut self,
        entry_id: u64,
        verdict: Verdict,
        now: u64,
    ) -> Result<EntryRecord, DecideError> {
        let entry = self
            .state
            .entries
            .get(&entry_id)
            .ok_or(DecideError::NoSuchEntry(entry_id))?;
        if entry.access_granted.is_decided() {
            return Err(DecideError::AlreadyDecided(entry.clone()));
        }
        let record = LogRecord {
            written_at: now,
            body: LogBody::EntryDecided {
                entry_id,
                verdict,
                decided_at: now,
            },
        };
        self.append_entry_log(&record)?;
        Ok(self.state.entries[&entry_id].clone())
    }

    pub fn set_settings(&mut self, settings: OwnerSettings, now: u64) -> Result<(), StoreError> {
        let record = LogRecord {
            written_at: now,
            body: LogBody::SettingsChanged { settings },
        };
        self.check_writable()?;
        self.settings.append(&record.encode())?;
        self.apply_written(&record);
        Ok(())
    }

    fn append_entry_log(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        self.check_writable()?;
        self.entries.append(&record.encode())?;
        self.apply_written(record);
        Ok(())
    }

    fn apply_written(&mut self, record: &LogRecord) {
        // Callers validate before writing, so apply cannot reject here.
        if let Err(w) = self.state.apply(record) {
            ::log::error!("store: record written but not applied: {w}");
        }
    }

    fn write_image(&mut self, entry_id: u64, bytes: &[u8]) -> Result<(), StoreError> {
        self.check_writable()?;
        let mut file = File::create(self.image_path(entry_id))?;
        file.write_all(bytes)?;
        file.sync_data()?;
        Ok(())
    }

    fn check_writable(&self) -> Result<(), StoreError> {
        if self.fail_writes {
            Err(StoreError::Injected)
        } else {
            Ok(())
        }
    }
}

fn read_or_empty(path: &Path) -> io::Result<Vec<u8>> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

fn preserve_corruption(path: &Path, bytes: &[u8], rec: &Recovery) -> io::Result<()> {
    if let Some(Stop::Corrupt { offset, .. }) = &rec.stop {
        let mut name = path.as_os_str().to_owned();
        name.push(format!(".corrupt-{offset}"));
        fs::write(PathBuf::from(name), bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Access;

    fn upload(press_id: u64, at: u64, image: Option<&[u8]>) -> NewEntry<'_> {
        NewEntry {
            received_at: at,
            image_pgm: image,
            camera_fault: image.is_none(),
            press_id,
            pressed_at: at,
        }
    }

    #[test]
    fn entries_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            store
                .create_entry(upload(1, 100, Some(b"P5")), 100)
                .unwrap();
            store.create_entry(upload(2, 200, None), 200).unwrap();
            store.decide(1, Verdict::Granted, 300).unwrap();
            store
                .set_settings(
                    OwnerSettings {
                        do_not_disturb: true,
                        ..OwnerSettings::default()
                    },
                    400,
                )
                .unwrap();
        }
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.entry(1).unwrap().access_granted, Access::Yes);
        assert_eq!(store.entry(2).unwrap().image_url, None);
        assert!(store.entry(2).unwrap().camera_fault);
        assert!(store.settings().do_not_disturb);
        assert_eq!(store.image(1).unwrap(), b"P5");
        assert_eq!(store.image(2), None);
    }

    #[test]
    fn duplicate_upload_returns_same_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let a = store.create_entry(upload(7, 100, None), 100).unwrap();
        let b = store.create_entry(upload(7, 100, None), 900).unwrap();
        assert!(matches!(a, Created::Fresh(_)));
        assert!(matches!(b, Created::Duplicate(_)));
        assert_eq!(a.record().entry_id, b.record().entry_id);
        assert_eq!(store.entries().count(), 1);
    }

    #[test]
    fn single_transition() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.create_entry(upload(1, 100, None), 100).unwrap();
        store.decide(1, Verdict::Denied, 200).unwrap();
        assert!(matches!(
            store.decide(1, Verdict::Granted, 300),
            Err(DecideError::AlreadyDecided(r)) if r.access_granted == Access::No
        ));
        assert!(matches!(
            store.decide(9, Verdict::Granted, 300),
            Err(DecideError::NoSuchEntry(9))
        ));
    }

    #[test]
    fn failed_writes_change_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.create_entry(upload(1, 100, None), 100).unwrap();
        store.inject_write_failure(true);
        assert!(store.create_entry(upload(2, 200, None), 200).is_err());
        assert!(matches!(
            store.decide(1, Verdict::Granted, 300),
            Err(DecideError::Storage(_))
        ));
        store.inject_write_failure(false);
        assert_eq!(store.entries().count(), 1);
        let created = store.create_entry(upload(2, 200, None), 200).unwrap();
        assert_eq!(created.record().entry_id, 2);
        drop(store);
        assert_eq!(Store::open(dir.path()).unwrap().entries().count(), 2);
    }

    #[test]
    fn torn_tail_trimmed_then_appendable() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            store.create_entry(upload(1, 100, None), 100).unwrap();
            store.create_entry(upload(2, 200, None), 200).unwrap();
        }
        let path = dir.path().join(ENTRIES_LOG);
        let len = fs::metadata(&path).unwrap().len();
        OpenOptions::new()
            .write(true)
            .open(&path)
            .unwrap()
            .set_len(len - 3)
            .unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        assert_eq!(store.entries().count(), 1);
        assert!(matches!(store.recovery_stop(), Some(Stop::TornTail { .. })));
        store.create_entry(upload(3, 300, None), 300).unwrap();
        drop(store);
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.entries().count(), 2);
        assert_eq!(store.recovery_stop(), None);
    }

    #[test]
    fn interior_corruption_preserved() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            for i in 1..=3 {
                store
                    .create_entry(upload(i, i * 100, None), i * 100)
                    .unwrap();
            }
        }
        let path = dir.path().join(ENTRIES_LOG);
        let mut bytes = fs::read(&path).unwrap();
        let first_len = LogRecord {
            written_at: 100,
            body: LogBody::EntryCreated {
                entry_id: 1,
                received_at: 100,
                image_url: None,
                camera_fault: true,
                press_id: 1,
                pressed_at: 100,
            },
        }
        .encode()
        .len();
        bytes[first_len + 8] ^= 0x55;
        fs::write(&path, &bytes).unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.entries().count(), 1);
        assert!(
            matches!(store.recovery_stop(), Some(Stop::Corrupt { offset, .. }) if *offset == first_len)
        );
        assert!(dir
            .path()
            .join(format!("entries.log.corrupt-{first_len}"))
            .exists());
    }
}
