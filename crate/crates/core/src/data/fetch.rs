//! Checksummed dataset cache.
//!
//! Each file lists alternative sources in `datasets.json`. A source may pin a SHA-256 of the
//! file it produces; sources without one are trusted on first use and their digest is
//! recorded in `pins.json` inside the cache, after which the file is held to it. A cached
//! file that matches no known digest is renamed to `<file>.corrupt` and reported.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::idx::encode_idx;
use super::{DataError, DatasetName};

pub const CACHE_ENV: &str = "EMERGENCE_LAB_CACHE";
/// Directory (`<dir>/<dataset>/<file>`) or URL base (`<base>/<dataset>/<file>.gz`) tried
/// before the manifest sources.
pub const MIRROR_ENV: &str = "EMERGENCE_LAB_MIRROR";

const PINS_FILE: &str = "pins.json";
const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub datasets: BTreeMap<String, DatasetEntry>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct DatasetEntry {
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sources: Vec<SourceSpec>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Raw { url: String, sha256: Option<String> },
    Gzip { url: String, sha256: Option<String> },
    /// One member of a (possibly gzipped) tar archive.
    TarMember { url: String, member: String, sha256: Option<String> },
    /// Archive with one `<class>.json` per class, each `{"data": [[784 bytes], ...]}`;
    /// the first `test_per_class` rows of every class form the test split.
    ClassJson { url: String, member: String, test_per_class: usize, sha256: Option<String> },
}

impl SourceSpec {
    pub fn url(&self) -> &str {
        match self {
            SourceSpec::Raw { url, .. }
            | SourceSpec::Gzip { url, .. }
            | SourceSpec::TarMember { url, .. }
            | SourceSpec::ClassJson { url, .. } => url,
        }
    }

    pub fn sha256(&self) -> Option<&str> {
        match self {
            SourceSpec::Raw { sha256, .. }
            | SourceSpec::Gzip { sha256, .. }
            | SourceSpec::TarMember { sha256, .. }
            | SourceSpec::ClassJson { sha256, .. } => sha256.as_deref(),
        }
    }
}

/// The manifest shipped with the crate.
pub fn manifest() -> &'static Manifest {
    static MANIFEST: OnceLock<Manifest> = OnceLock::new();
    MANIFEST.get_or_init(|| serde_json::from_str(include_str!("datasets.json")).expect("bundled manifest parses"))
}

/// `$EMERGENCE_LAB_CACHE`, else `$XDG_CACHE_HOME/emergence-lab`, else `~/.cache/emergence-lab`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(dir).join("emergence-lab");
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("emergence-lab")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    pub dir: PathBuf,
    pub paths: Vec<PathBuf>,
    pub bytes_downloaded: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_pins(cache: &Path) -> Result<BTreeMap<String, String>, DataError> {
    let path = cache.join(PINS_FILE);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| DataError::Format(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(DataError::io(&path, e)),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| DataError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

/// HTTP agent trusting the operating system's certificate store.
fn agent() -> ureq::Agent {
    let tls = ureq::tls::TlsConfig::builder().root_certs(ureq::tls::RootCerts::PlatformVerifier).build();
    ureq::Agent::config_builder().tls_config(tls).build().into()
}

/// Downloads and conversions shared by the files of one fetch call.
#[derive(Default)]
struct Session {
    downloads: HashMap<String, Vec<u8>>,
    converted: HashMap<String, BTreeMap<String, Vec<u8>>>,
    bytes: u64,
}

impl Session {
    fn get(&mut self, url: &str) -> Result<&[u8], DataError> {
        if !self.downloads.contains_key(url) {
            let net = |message: String| DataError::Network { url: url.to_string(), message };
            let response = agent().get(url).call().map_err(|e| net(e.to_string()))?;
            let mut body = Vec::new();
            response.into_body().into_reader().read_to_end(&mut body).map_err(|e| net(e.to_string()))?;
            self.bytes += body.len() as u64;
            self.downloads.insert(url.to_string(), body);
        }
        Ok(&self.downloads[url])
    }

    fn produce(&mut self, source: &SourceSpec, file: &str) -> Result<Vec<u8>, DataError> {
        match source {
            SourceSpec::Raw { url, .. } => Ok(self.get(url)?.to_vec()),
            SourceSpec::Gzip { url, .. } => gunzip(self.get(url)?, url),
            SourceSpec::TarMember { url, member, .. } => {
                let archive = self.get(url)?;
                tar_members(archive, url, |name| name == member)?
                    .remove(member)
                    .ok_or_else(|| DataError::Format(format!("{url}: archive has no member {member}")))
            }
            SourceSpec::ClassJson { url, member, test_per_class, .. } => {
                if !self.converted.contains_key(url) {
                    let archive = self.get(url)?;
                    let files = convert_class_json(archive, url, member, *test_per_class)?;
                    self.converted.insert(url.clone(), files);
                }
                self.converted[url]
                    .get(file)
                    .cloned()
                    .ok_or_else(|| DataError::Format(format!("{url}: conversion yields no {file}")))
            }
        }
    }
}

fn gunzip(bytes: &[u8], origin: &str) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| DataError::Format(format!("{origin}: gzip: {e}")))?;
    Ok(out)
}

fn tar_members(
    archive: &[u8],
    origin: &str,
    wanted: impl Fn(&str) -> bool,
) -> Result<BTreeMap<String, Vec<u8>>, DataError> {
    let fmt = |e: std::io::Error| DataError::Format(format!("{origin}: tar: {e}"));
    let reader: Box<dyn Read + '_> =
        if archive.starts_with(&[0x1f, 0x8b]) { Box::new(GzDecoder::new(archive)) } else { Box::new(archive) };
    let mut tar = tar::Archive::new(reader);
    let mut out = BTreeMap::new();
    for entry in tar.entries().map_err(fmt)? {
        let mut entry = entry.map_err(fmt)?;
        let name = entry.path().map_err(fmt)?.to_string_lossy().into_owned();
        if wanted(&name) {
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(fmt)?;
            out.insert(name, buf);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ClassRows {
    data: Vec<Vec<u8>>,
}

/// Rebuilds the four IDX files; samples are interleaved across classes (0, 1, ..., 9, 0, ...).
/// Rows that are not exactly 28x28 are dropped.
fn convert_class_json(
    archive: &[u8],
    origin: &str,
    prefix: &str,
    test_per_class: usize,
) -> Result<BTreeMap<String, Vec<u8>>, DataError> {
    let members = tar_members(archive, origin, |n| n.starts_with(prefix) && n.ends_with(".json"))?;
    let mut classes = Vec::new();
    for c in 0..10 {
        let name = format!("{prefix}{c}.json");
        let bytes = members
            .get(&name)
            .ok_or_else(|| DataError::Format(format!("{origin}: archive has no member {name}")))?;
        let parsed: ClassRows =
            serde_json::from_slice(bytes).map_err(|e| DataError::Format(format!("{origin}: {name}: {e}")))?;
        let rows: Vec<Vec<u8>> = parsed.data.into_iter().filter(|r| r.len() == 784).collect();
        classes.push(rows);
    }
    let per_class = classes.iter().map(Vec::len).min().unwrap_or(0);
    if per_class <= test_per_class {
        return Err(DataError::Format(format!("{origin}: only {per_class} rows per class")));
    }
    let mut out = BTreeMap::new();
    for (prefix, range) in [("t10k", 0..test_per_class), ("train", test_per_class..per_class)] {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in range {
            for (c, rows) in classes.iter().enumerate() {
                images.extend_from_slice(&rows[k]);
                labels.push(c as u8);
            }
        }
        let n = labels.len();
        out.insert(format!("{prefix}-images-idx3-ubyte"), encode_idx(&[n, 28, 28], &images));
        out.insert(format!("{prefix}-labels-idx1-ubyte"), encode_idx(&[n], &labels));
    }
    Ok(out)
}

fn mirror_source(dataset: DatasetName, file: &str) -> Option<SourceSpec> {
    let mirror = std::env::var(MIRROR_ENV).ok().filter(|m| !m.is_empty())?;
    let local = Path::new(&mirror).join(dataset.as_str()).join(file);
    if local.is_file() {
        return Some(SourceSpec::Raw { url: format!("file://{}", local.display()), sha256: None });
    }
    Some(SourceSpec::Gzip { url: format!("{}/{}/{file}.gz", mirror.trim_end_matches('/'), dataset.as_str()), sha256: None })
}

/// Ensures every file of `name` is in `cache/<name>/` and matches a known digest. Cached
/// hits touch no network.
pub fn fetch_dataset(name: DatasetName, cache: &Path) -> Result<FetchReport, DataError> {
    let entry = manifest()
        .datasets
        .get(name.as_str())
        .ok_or_else(|| DataError::UnknownDataset(name.as_str().to_string()))?;
    let dir = cache.join(name.as_str());
    fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    let lock_path = cache.join(LOCK_FILE);
    let lock = File::create(&lock_path).map_err(|e| DataError::io(&lock_path, e))?;
    lock.lock().map_err(|e| DataError::io(&lock_path, e))?;

    let mut pins = read_pins(cache)?;
    let mut session = Session::default();
    let mut paths = Vec::new();
    let mut pins_changed = false;
    for file in &entry.files {
        let key = format!("{}/{}", name.as_str(), file.name);
        let path = dir.join(&file.name);
        let mut known: Vec<String> = file.sources.iter().filter_map(|s| s.sha256().map(str::to_string)).collect();
        known.extend(pins.get(&key).cloned());
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
            let actual = sha256_hex(&bytes);
            if known.is_empty() {
                pins.insert(key, actual);
                pins_changed = true;
            } else if !known.contains(&actual) {
                let quarantine = path.with_file_name(format!("{}.corrupt", file.name));
                fs::rename(&path, &quarantine).map_err(|e| DataError::io(&path, e))?;
                return Err(DataError::Integrity {
                    file: key,
                    expected: known.join(" or "),
                    actual,
                    quarantined: Some(quarantine),
                });
            }
            paths.push(path);
            continue;
        }

        let sources: Vec<SourceSpec> = mirror_source(name, &file.name).into_iter().chain(file.sources.clone()).collect();
        let mut failures = Vec::new();
        let mut stored = false;
        for source in &sources {
            let produced = match source.url().strip_prefix("file://") {
                Some(local) => fs::read(local).map_err(|e| DataError::io(Path::new(local), e)),
                None => session.produce(source, &file.name),
            };
            let bytes = match produced {
                Ok(b) => b,
                Err(e) => {
                    failures.push(e);
                    continue;
                }
            };
            let actual = sha256_hex(&bytes);
            let acceptable = match (source.sha256(), pins.get(&key)) {
                (Some(expected), _) => expected == actual,
                (None, Some(pinned)) => *pinned == actual,
                // mirrors are held to any digest the manifest knows for this file
                (None, None) => known.is_empty() || known.contains(&actual),
            };
            if !acceptable {
                failures.push(DataError::Integrity {
                    file: key.clone(),
                    expected: source.sha256().map(str::to_string).or_else(|| pins.get(&key).cloned()).unwrap_or_default(),
                    actual,
                    quarantined: None,
                });
                continue;
            }
            if !pins.contains_key(&key) && source.sha256().is_none() && known.is_empty() {
                pins.insert(key.clone(), actual);
                pins_changed = true;
            }
            write_atomic(&path, &bytes)?;
            stored = true;
            break;
        }
        if !stored {
            // network trouble anywhere stays retryable; otherwise report the last failure
            if failures.iter().any(DataError::is_retryable) || failures.is_empty() {
                let tried: Vec<String> = failures.iter().map(|e| e.to_string()).collect();
                return Err(DataError::Network { url: key, message: format!("all sources failed: {}", tried.join("; ")) });
            }
            return Err(failures.pop().expect("non-empty"));
        }
        paths.push(path);
    }
    if pins_changed {
        let text = serde_json::to_string_pretty(&pins).expect("string map serializes");
        write_atomic(&cache.join(PINS_FILE), text.as_bytes())?;
    }
    drop(lock);
    Ok(FetchReport { dir, paths, bytes_downloaded: session.bytes })
}
