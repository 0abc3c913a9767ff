//! On-disk formats: graph directories, texts, lexical caches, CSV tables.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trn_ood_core::text::{LexEntry, LexicalCache};
use trn_ood_core::{Tensor, TrnGraph};

use crate::error::{HarnessError, Result};
use crate::npy::Npy;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(HarnessError::io(path))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(HarnessError::io(dir))?;
    tmp.write_all(bytes).map_err(HarnessError::io(path))?;
    tmp.persist(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

pub fn read_npy(path: &Path) -> Result<Npy> {
    Npy::from_bytes(&read_file(path)?).map_err(|e| e.context(&path.display().to_string()))
}

/// CSV text preceded by a `# config_hash: …` comment line.
pub fn csv_bytes<S: Serialize>(config_hash: &str, rows: &[S]) -> Vec<u8> {
    let mut out = format!("# config_hash: {config_hash}\n").into_bytes();
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r).expect("serializable row");
    }
    w.flush().expect("in-memory writer");
    drop(w);
    out
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_file(path)?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// The `config_hash` recorded on the first line of a harness CSV.
pub fn csv_config_hash(path: &Path) -> Result<Option<String>> {
    let bytes = read_file(path)?;
    let first = bytes.split(|&b| b == b'\n').next().unwrap_or(&[]);
    Ok(std::str::from_utf8(first)
        .ok()
        .and_then(|l| l.strip_prefix("# config_hash: "))
        .map(str::to_string))
}

#[derive(Serialize, Deserialize)]
struct TextRecord {
    id: i64,
    text: String,
}

/// JSON Lines, one `{"id", "text"}` object per node. Ids must cover `0..n`
/// exactly once; file order is free.
pub fn parse_texts(bytes: &[u8]) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|_| HarnessError::Format("texts: not UTF-8".into()))?;
    let mut recs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TextRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Format(format!("texts line {}: {e}", ln + 1)))?;
        recs.push(r);
    }
    let n = recs.len();
    let mut out: Vec<Option<String>> = vec![None; n];
    for r in recs {
        let slot = usize::try_from(r.id)
            .ok()
            .and_then(|i| out.get_mut(i))
            .ok_or_else(|| HarnessError::Format(format!("texts: id {} outside 0..{n}", r.id)))?;
        if slot.replace(r.text).is_some() {
            return Err(HarnessError::Format(format!("texts: duplicate id {}", r.id)));
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

pub fn texts_bytes(texts: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, text) in texts.iter().enumerate() {
        let rec = TextRecord {
            id: id as i64,
            text: text.clone(),
        };
        serde_json::to_writer(&mut out, &rec).expect("serializable record");
        out.push(b'\n');
    }
    out
}

#[derive(Serialize, Deserialize, Default)]
struct LexRecord {
    #[serde(default)]
    syn: Vec<String>,
    #[serde(default)]
    ant: Vec<String>,
}

/// `{word: {"syn": [...], "ant": [...]}}`.
pub fn parse_lexicon(bytes: &[u8]) -> Result<LexicalCache> {
    let map: BTreeMap<String, LexRecord> =
        serde_json::from_slice(bytes).map_err(|e| HarnessError::Format(format!("lexicon: {e}")))?;
    Ok(LexicalCache::new(
        map.into_iter()
            .map(|(w, r)| (w, LexEntry { syn: r.syn, ant: r.ant })),
    ))
}

pub fn lexicon_bytes(cache: &LexicalCache) -> Vec<u8> {
    let map: BTreeMap<&String, LexRecord> = cache
        .iter()
        .map(|(w, e)| {
            (
                w,
                LexRecord {
                    syn: e.syn.clone(),
                    ant: e.ant.clone(),
                },
            )
        })
        .collect();
    json_bytes(&map)
}

/// Edge list from an `[m × 2]` integer NPY array or a whitespace-separated
/// two-column text file (`#` starts a comment), chosen by extension.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let bytes = read_file(path)?;
    let ctx = path.display().to_string();
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => edges_from_npy(&Npy::from_bytes(&bytes)?).map_err(|e| e.context(&ctx)),
        Some("txt") => edges_from_text(&bytes).map_err(|e| e.context(&ctx)),
        _ => Err(HarnessError::Format(format!("{ctx}: edge list must end in .npy or .txt"))),
    }
}

pub fn edges_from_npy(a: &Npy) -> Result<Vec<(usize, usize)>> {
    if a.shape.len() != 2 || a.shape[1] != 2 {
        return Err(HarnessError::Format(format!("edges: expected shape [m, 2], got {:?}", a.shape)));
    }
    let v = a.to_i64()?;
    v.chunks_exact(2).map(|p| Ok((index(p[0])?, index(p[1])?))).collect()
}

fn index(v: i64) -> Result<usize> {
    usize::try_from(v).map_err(|_| HarnessError::Format(format!("negative node index {v}")))
}

pub fn edges_from_text(bytes: &[u8]) -> Result<Vec<(usize, usize)>> {
    let text = std::str::from_utf8(bytes).map_err(|_| HarnessError::Format("edges: not UTF-8".into()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => continue,
            [a, b] => {
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| HarnessError::Format(format!("edges line {}: bad index {s:?}", ln + 1)))
                };
                out.push((parse(a)?, parse(b)?));
            }
            _ => {
                return Err(HarnessError::Format(format!(
                    "edges line {}: expected two columns",
                    ln + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn edges_npy(edges: &[(usize, usize)]) -> Npy {
    let flat: Vec<u32> = edges
        .iter()
        .flat_map(|&(i, j)| [i as u32, j as u32])
        .collect();
    Npy::from_u32(&[edges.len(), 2], &flat)
}

pub fn features_from_npy(a: &Npy) -> Result<Tensor<f32>> {
    if a.shape.len() != 2 {
        return Err(HarnessError::Format(format!("features: expected a matrix, got shape {:?}", a.shape)));
    }
    Ok(Tensor::new(&a.shape, a.to_f32()?)?)
}

pub fn labels_from_npy(a: &Npy) -> Result<Vec<usize>> {
    if a.shape.len() != 1 {
        return Err(HarnessError::Format(format!("labels: expected a vector, got shape {:?}", a.shape)));
    }
    a.to_i64()?.into_iter().map(index).collect()
}

pub fn usize_npy(v: &[usize]) -> Npy {
    let w: Vec<i64> = v.iter().map(|&x| x as i64).collect();
    Npy::from_i64(&[w.len()], &w)
}

/// Files of a graph directory, in write order.
pub fn graph_files(g: &TrnGraph) -> Vec<(&'static str, Vec<u8>)> {
    let x = g.features();
    let mut files = vec![
        ("features.npy", Npy::from_f32(x.shape(), x.data()).to_bytes()),
        ("edges.npy", edges_npy(g.edges()).to_bytes()),
        ("labels.npy", usize_npy(g.labels()).to_bytes()),
    ];
    if let Some(t) = g.texts() {
        files.push(("texts.jsonl", texts_bytes(t)));
    }
    if let Some(y) = g.years() {
        files.push(("years.npy", Npy::from_i64(&[y.len()], y).to_bytes()));
    }
    files
}

/// Writes `g` under `dir` and returns `file → sha256` for every file written.
pub fn save_graph(dir: &Path, g: &TrnGraph) -> Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    for (name, bytes) in graph_files(g) {
        write_atomic(&dir.join(name), &bytes)?;
        digests.insert(name.to_string(), sha256_hex(&bytes));
    }
    Ok(digests)
}

pub fn load_graph(dir: &Path, num_classes: usize) -> Result<TrnGraph> {
    let x = features_from_npy(&read_npy(&dir.join("features.npy"))?)?;
    let edges = read_edges(&dir.join("edges.npy"))?;
    let labels = labels_from_npy(&read_npy(&dir.join("labels.npy"))?)?;
    let mut g = TrnGraph::new(x, edges, labels, num_classes)?;
    let texts = dir.join("texts.jsonl");
    if texts.exists() {
        g = g.with_texts(parse_texts(&read_file(&texts)?)?)?;
    }
    let years = dir.join("years.npy");
    if years.exists() {
        g = g.with_years(read_npy(&years)?.to_i64()?)?;
    }
    Ok(g)
}
