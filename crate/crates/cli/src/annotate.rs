//! HTTP service collecting region annotations.
//!
//! Submissions are appended to `annotations.jsonl` in the store directory and
//! never rewritten. Export averages the masks of correctly decided
//! submissions per image and writes a manifest that passes strict loading.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cyborg::ablations::binarize_mask;
use cyborg::grid::Grid;
use cyborg::io::{decode_gray_png, encode_gray_png, save_gray_png};
use cyborg::manifest::{load_manifest, write_manifest, Label, ManifestOptions, ManifestRow, Split};
use cyborg::saliency::average_annotations;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub const DEFAULT_MIN_REGIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Typical,
    Atypical,
    Unsure,
}

impl Decision {
    fn matches(self, label: Label) -> bool {
        matches!(
            (self, label),
            (Decision::Typical, Label::Typical) | (Decision::Atypical, Label::Atypical)
        )
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub image_id: String,
    pub decision: Decision,
    /// Base64-encoded single-channel PNG at the image's resolution.
    pub mask: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredAnnotation {
    image_id: String,
    decision: Decision,
    /// Base64 of the binarized mask re-encoded as PNG.
    mask: String,
    timestamp_ms: u128,
}

#[derive(Clone, Debug)]
struct ImageEntry {
    path: PathBuf,
    label: Label,
    split: Split,
    saliency: Option<PathBuf>,
    width: usize,
    height: usize,
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Manifest listing the images to annotate with their true labels.
    pub manifest: PathBuf,
    pub store_dir: PathBuf,
    pub min_regions: usize,
}

pub struct AppState {
    images: BTreeMap<String, ImageEntry>,
    store_dir: PathBuf,
    min_regions: usize,
    /// Decoded masks per stored submission, in submission order.
    records: Mutex<Vec<(StoredAnnotation, Grid)>>,
}

impl AppState {
    pub fn open(cfg: &ServiceConfig) -> cyborg::Result<Self> {
        let records = load_manifest(
            &cfg.manifest,
            ManifestOptions {
                strict_saliency: false,
            },
        )?;
        let mut images = BTreeMap::new();
        for r in records {
            let grid = cyborg::io::load_gray_png(&r.image)?;
            let id = r
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            images.insert(
                id,
                ImageEntry {
                    width: grid.width(),
                    height: grid.height(),
                    path: r.image,
                    label: r.label,
                    split: r.split,
                    saliency: r.saliency,
                },
            );
        }
        fs::create_dir_all(&cfg.store_dir)?;
        let mut stored = Vec::new();
        let log = cfg.store_dir.join("annotations.jsonl");
        if log.exists() {
            for line in fs::read_to_string(&log)?
                .lines()
                .filter(|l| !l.trim().is_empty())
            {
                let a: StoredAnnotation = serde_json::from_str(line)?;
                let bytes = B64
                    .decode(&a.mask)
                    .map_err(|e| cyborg::Error::SchemaError(format!("stored mask: {e}")))?;
                let grid = decode_gray_png(&bytes)?;
                stored.push((a, grid));
            }
        }
        Ok(Self {
            images,
            store_dir: cfg.store_dir.clone(),
            min_regions: cfg.min_regions,
            records: Mutex::new(stored),
        })
    }
}

/// Number of 8-connected foreground components of a binary mask.
pub fn count_regions(mask: &Grid) -> usize {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut regions = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.as_slice()[start] < 0.5 {
            continue;
        }
        regions += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.as_slice()[j] >= 0.5 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    regions
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn reject(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct Task {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    /// Base64-encoded grayscale PNG.
    pub image: String,
}

/// The training image with the fewest stored submissions; ties go to the
/// smallest id.
async fn next_task(State(state): State<Arc<AppState>>) -> Response {
    let records = state.records.lock().await;
    let mut counts: BTreeMap<&str, usize> = state
        .images
        .iter()
        .filter(|(_, e)| e.split == Split::Train)
        .map(|(id, _)| (id.as_str(), 0))
        .collect();
    for (a, _) in records.iter() {
        if let Some(c) = counts.get_mut(a.image_id.as_str()) {
            *c += 1;
        }
    }
    let Some((id, _)) = counts.into_iter().min_by_key(|&(_, c)| c) else {
        return reject(StatusCode::NOT_FOUND, "no images to annotate");
    };
    let entry = &state.images[id];
    match fs::read(&entry.path) {
        Ok(bytes) => Json(Task {
            image_id: id.to_string(),
            width: entry.width,
            height: entry.height,
            image: B64.encode(bytes),
        })
        .into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Serialize, Deserialize, Debug)]
pub struct Accepted {
    pub image_id: String,
    pub regions: usize,
}

async fn submit(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let sub: Submission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return reject(StatusCode::BAD_REQUEST, format!("invalid submission: {e}")),
    };
    let Some(entry) = state.images.get(&sub.image_id) else {
        return reject(
            StatusCode::BAD_REQUEST,
            format!("unknown image_id {:?}", sub.image_id),
        );
    };
    let mask = match B64
        .decode(sub.mask.as_bytes())
        .map_err(|e| e.to_string())
        .and_then(|b| decode_gray_png(&b).map_err(|e| e.to_string()))
    {
        Ok(g) => binarize_mask(&g),
        Err(e) => {
            return reject(
                StatusCode::BAD_REQUEST,
                format!("mask is not a grayscale PNG: {e}"),
            )
        }
    };
    if mask.dims() != (entry.width, entry.height) {
        return reject(
            StatusCode::BAD_REQUEST,
            format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                entry.width,
                entry.height
            ),
        );
    }
    let regions = count_regions(&mask);
    if regions < state.min_regions {
        return reject(
            StatusCode::BAD_REQUEST,
            format!(
                "mask has {regions} regions, at least {} required",
                state.min_regions
            ),
        );
    }

    let mut records = state.records.lock().await;
    if records
        .iter()
        .any(|(a, g)| a.image_id == sub.image_id && a.decision == sub.decision && *g == mask)
    {
        return reject(StatusCode::CONFLICT, "duplicate submission");
    }
    let encoded = match encode_gray_png(&mask) {
        Ok(b) => B64.encode(b),
        Err(e) => return reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let stored = StoredAnnotation {
        image_id: sub.image_id.clone(),
        decision: sub.decision,
        mask: encoded,
        timestamp_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    if let Err(e) = append_line(&state.store_dir.join("annotations.jsonl"), &stored) {
        return reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    records.push((stored, mask));
    (
        StatusCode::CREATED,
        Json(Accepted {
            image_id: sub.image_id,
            regions,
        }),
    )
        .into_response()
}

fn append_line(path: &Path, record: &StoredAnnotation) -> cyborg::Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Writes `export/saliency/<id>.png` and `export/manifest.csv` under the
/// store directory and returns the manifest path. Training images without a
/// correctly decided submission are left out.
pub fn export_manifest(
    state: &AppState,
    records: &[(StoredAnnotation, Grid)],
) -> cyborg::Result<PathBuf> {
    let dir = state.store_dir.join("export");
    let mut masks: BTreeMap<&str, Vec<Grid>> = BTreeMap::new();
    for (a, g) in records {
        if let Some(e) = state.images.get(&a.image_id) {
            if a.decision.matches(e.label) {
                masks
                    .entry(a.image_id.as_str())
                    .or_default()
                    .push(g.clone());
            }
        }
    }
    let abs = |p: &Path| -> cyborg::Result<String> {
        Ok(fs::canonicalize(p)
            .map_err(|_| cyborg::Error::DanglingPath(p.to_path_buf()))?
            .to_string_lossy()
            .into_owned())
    };
    let mut rows = Vec::new();
    for (id, e) in &state.images {
        let saliency = if e.split == Split::Train {
            let Some(ms) = masks.get(id.as_str()) else {
                continue;
            };
            let avg = average_annotations(ms)?;
            let path = dir.join("saliency").join(format!("{id}.png"));
            save_gray_png(avg.values(), &path)?;
            Some(abs(&path)?)
        } else {
            e.saliency.as_deref().map(abs).transpose()?
        };
        rows.push(ManifestRow {
            image: abs(&e.path)?,
            label: e.label,
            saliency,
            split: e.split,
        });
    }
    fs::create_dir_all(&dir)?;
    let path = dir.join("manifest.csv");
    write_manifest(&rows, fs::File::create(&path)?)?;
    Ok(path)
}

async fn export(State(state): State<Arc<AppState>>) -> Response {
    let records = state.records.lock().await;
    match export_manifest(&state, &records).and_then(|p| Ok(fs::read_to_string(p)?)) {
        Ok(text) => ([(header::CONTENT_TYPE, "text/csv")], text).into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/task", get(next_task))
        .route("/annotation", post(submit))
        .route("/export/manifest", get(export))
        .with_state(state)
}

pub async fn serve(cfg: &ServiceConfig, addr: SocketAddr) -> cyborg::Result<()> {
    let state = Arc::new(AppState::open(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
