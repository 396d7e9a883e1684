//! Item catalog, purchase logs and the leave-last-basket-out split.
//!
//! Items are addressed internally by their `u32` position in the
//! [`Catalog`]; users by their position in an [`InteractionLog`]. Both
//! orders are deterministic (catalog: file order, users: sorted by id).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

pub const EMBEDDING_DIM: usize = 2048;
const EMBEDDINGS_MAGIC: &[u8] = b"CNEMB1";

pub type ItemIdx = u32;
pub type UserIdx = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub item_id: String,
    pub embedding: Vec<f32>,
    pub artist_id: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    ids: Vec<String>,
    index: HashMap<String, ItemIdx>,
    embeddings: Array2<f32>,
    artists: Vec<Option<u32>>,
    artist_ids: Vec<String>,
}

impl Catalog {
    /// Validates and indexes `records`. Every embedding must have `dim`
    /// finite entries and a non-zero norm; ids must be unique.
    pub fn from_records(records: Vec<ItemRecord>, dim: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(records.len());
        let mut index = HashMap::with_capacity(records.len());
        let mut embeddings = Array2::zeros((records.len(), dim));
        let mut artist_names: Vec<Option<String>> = Vec::with_capacity(records.len());
        for (row, rec) in records.into_iter().enumerate() {
            validate_embedding(&rec.item_id, &rec.embedding, dim)
                .map_err(|m| Error::InvalidArgument(format!("item {} (row {}): {m}", rec.item_id, row + 1)))?;
            if index.insert(rec.item_id.clone(), row as ItemIdx).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate item id {:?} (row {})",
                    rec.item_id,
                    row + 1
                )));
            }
            embeddings.row_mut(row).assign(&ArrayView1::from(&rec.embedding));
            ids.push(rec.item_id);
            artist_names.push(rec.artist_id);
        }
        let mut catalog = Catalog {
            ids,
            index,
            embeddings,
            artists: Vec::new(),
            artist_ids: Vec::new(),
        };
        catalog.assign_artists(artist_names);
        Ok(catalog)
    }

    fn assign_artists(&mut self, names: Vec<Option<String>>) {
        let distinct: BTreeSet<&String> = names.iter().flatten().collect();
        let artist_ids: Vec<String> = distinct.into_iter().cloned().collect();
        let lookup: HashMap<&String, u32> = artist_ids.iter().enumerate().map(|(i, a)| (a, i as u32)).collect();
        self.artists = names.iter().map(|n| n.as_ref().map(|n| lookup[n])).collect();
        self.artist_ids = artist_ids;
    }

    /// Attaches `item_id → artist_id` metadata. Items absent from the map
    /// have no artist.
    pub fn set_artists(&mut self, map: &HashMap<String, String>) -> Result<()> {
        for id in map.keys() {
            if !self.index.contains_key(id) {
                return Err(Error::UnknownItem(id.clone()));
            }
        }
        let names = self.ids.iter().map(|id| map.get(id).cloned()).collect();
        self.assign_artists(names);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn id(&self, item: ItemIdx) -> &str {
        &self.ids[item as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<ItemIdx> {
        self.index.get(id).copied()
    }

    pub fn embedding(&self, item: ItemIdx) -> ArrayView1<'_, f32> {
        self.embeddings.row(item as usize)
    }

    pub fn embeddings(&self) -> &Array2<f32> {
        &self.embeddings
    }

    /// Gathers the embeddings of `items` into a dense `f64` matrix.
    pub fn gather(&self, items: &[ItemIdx]) -> Array2<f64> {
        let mut out = Array2::zeros((items.len(), self.dim()));
        for (r, &i) in items.iter().enumerate() {
            out.row_mut(r)
                .iter_mut()
                .zip(self.embeddings.row(i as usize))
                .for_each(|(o, &v)| *o = v as f64);
        }
        out
    }

    pub fn artist(&self, item: ItemIdx) -> Option<u32> {
        self.artists[item as usize]
    }

    pub fn artist_id(&self, artist: u32) -> &str {
        &self.artist_ids[artist as usize]
    }

    pub fn has_artists(&self) -> bool {
        self.artists.iter().any(Option::is_some)
    }

    pub fn record(&self, item: ItemIdx) -> ItemRecord {
        ItemRecord {
            item_id: self.id(item).to_string(),
            embedding: self.embedding(item).to_vec(),
            artist_id: self.artist(item).map(|a| self.artist_id(a).to_string()),
        }
    }
}

fn validate_embedding(id: &str, values: &[f32], dim: usize) -> std::result::Result<(), String> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(format!("invalid item id {id:?}"));
    }
    if values.len() != dim {
        return Err(format!("dimension mismatch: expected {dim}, found {}", values.len()));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(format!("non-finite value at column {}", pos + 1));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err("zero-norm embedding".into());
    }
    Ok(())
}

/// Loads a catalog from either the `CNEMB1` binary format or a headerless
/// TSV of `item_id \t v1 … v_dim`. The format is detected from the magic.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<Catalog> {
    let bytes = fs::read(path)?;
    let records = if bytes.starts_with(EMBEDDINGS_MAGIC) {
        read_embeddings_binary(path, &bytes, dim)?
    } else {
        read_embeddings_tsv(path, &bytes, dim)?
    };
    if records.is_empty() {
        return Err(Error::format(path, "no items"));
    }
    let mut seen = HashMap::new();
    for (row, rec) in records.iter().enumerate() {
        validate_embedding(&rec.item_id, &rec.embedding, dim).map_err(|m| Error::parse(path, row + 1, m))?;
        if let Some(prev) = seen.insert(rec.item_id.as_str(), row) {
            return Err(Error::parse(
                path,
                row + 1,
                format!("duplicate item id {:?} (first at row {})", rec.item_id, prev + 1),
            ));
        }
    }
    Catalog::from_records(records, dim)
}

fn read_embeddings_tsv(path: &Path, bytes: &[u8], dim: usize) -> Result<Vec<ItemRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, format!("invalid UTF-8: {e}")))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let embedding = fields
            .enumerate()
            .map(|(c, f)| {
                f.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::parse(path, n + 1, format!("column {}: {e}", c + 2)))
            })
            .collect::<Result<Vec<f32>>>()?;
        if embedding.len() != dim {
            return Err(Error::parse(
                path,
                n + 1,
                format!("dimension mismatch: expected {dim}, found {}", embedding.len()),
            ));
        }
        records.push(ItemRecord {
            item_id: id,
            embedding,
            artist_id: None,
        });
    }
    Ok(records)
}

fn read_embeddings_binary(path: &Path, bytes: &[u8], dim: usize) -> Result<Vec<ItemRecord>> {
    let mut r = Reader::new(path, bytes);
    r.expect_magic(EMBEDDINGS_MAGIC)?;
    let count = r.u32()? as usize;
    let file_dim = r.u32()? as usize;
    if file_dim != dim {
        return Err(Error::format(
            path,
            format!("dimension mismatch: expected {dim}, file has {file_dim}"),
        ));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let id = r.str(len)?.to_string();
        let embedding = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        records.push(ItemRecord {
            item_id: id,
            embedding,
            artist_id: None,
        });
    }
    r.finish()?;
    Ok(records)
}

pub fn encode_embeddings_binary(catalog: &Catalog) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + catalog.len() * (catalog.dim() * 4 + 10));
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&(catalog.len() as u32).to_le_bytes());
    out.extend_from_slice(&(catalog.dim() as u32).to_le_bytes());
    for (i, id) in catalog.ids.iter().enumerate() {
        let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("item id too long: {id}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in catalog.embeddings.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_embeddings(catalog: &Catalog, path: &Path) -> Result<()> {
    write_atomic(path, &encode_embeddings_binary(catalog)?)
}

/// Reads an `item_id \t artist_id` TSV (optional header).
pub fn load_artists(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("item_id\t")) {
            continue;
        }
        let mut f = line.split('\t');
        match (f.next(), f.next()) {
            (Some(item), Some(artist)) if !item.is_empty() && !artist.is_empty() => {
                map.insert(item.to_string(), artist.to_string());
            }
            _ => return Err(Error::parse(path, n + 1, "expected item_id<TAB>artist_id")),
        }
    }
    Ok(map)
}

pub fn encode_artists(catalog: &Catalog) -> String {
    let mut out = String::from("item_id\tartist_id\n");
    for i in 0..catalog.len() as ItemIdx {
        if let Some(a) = catalog.artist(i) {
            let _ = writeln!(out, "{}\t{}", catalog.id(i), catalog.artist_id(a));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basket {
    pub index: u64,
    /// Sorted, deduplicated.
    pub items: Vec<ItemIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub id: String,
    /// Ordered by strictly increasing `Basket::index`.
    pub baskets: Vec<Basket>,
    positives: Vec<ItemIdx>,
}

impl UserHistory {
    pub fn new(id: String, mut baskets: Vec<Basket>) -> Self {
        baskets.sort_by_key(|b| b.index);
        let positives = union_of(baskets.iter());
        UserHistory { id, baskets, positives }
    }

    /// All items the user purchased (sorted).
    pub fn positives(&self) -> &[ItemIdx] {
        &self.positives
    }

    pub fn owns(&self, item: ItemIdx) -> bool {
        self.positives.binary_search(&item).is_ok()
    }

    /// Union of baskets `0..=k` (sorted).
    pub fn cumulative(&self, k: usize) -> Vec<ItemIdx> {
        union_of(self.baskets[..=k].iter())
    }
}

fn union_of<'a>(baskets: impl Iterator<Item = &'a Basket>) -> Vec<ItemIdx> {
    let set: BTreeSet<ItemIdx> = baskets.flat_map(|b| b.items.iter().copied()).collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    users: Vec<UserHistory>,
    index: HashMap<String, UserIdx>,
}

impl InteractionLog {
    /// Groups `(user, item, basket_index)` rows into per-user baskets.
    /// Duplicate rows collapse; users end up sorted by id.
    pub fn from_rows(rows: impl IntoIterator<Item = (String, ItemIdx, u64)>) -> Self {
        let mut grouped: BTreeMap<String, BTreeMap<u64, BTreeSet<ItemIdx>>> = BTreeMap::new();
        for (user, item, basket) in rows {
            grouped.entry(user).or_default().entry(basket).or_default().insert(item);
        }
        let users = grouped
            .into_iter()
            .map(|(id, baskets)| {
                let baskets = baskets
                    .into_iter()
                    .map(|(index, items)| Basket {
                        index,
                        items: items.into_iter().collect(),
                    })
                    .collect();
                UserHistory::new(id, baskets)
            })
            .collect();
        Self::from_users(users)
    }

    pub fn from_users(mut users: Vec<UserHistory>) -> Self {
        users.sort_by(|a, b| a.id.cmp(&b.id));
        let index = users.iter().enumerate().map(|(i, u)| (u.id.clone(), i as UserIdx)).collect();
        InteractionLog { users, index }
    }

    pub fn users(&self) -> &[UserHistory] {
        &self.users
    }

    pub fn user(&self, u: UserIdx) -> &UserHistory {
        &self.users[u as usize]
    }

    pub fn user_index(&self, id: &str) -> Option<UserIdx> {
        self.index.get(id).copied()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_baskets(&self) -> usize {
        self.users.iter().map(|u| u.baskets.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// TSV with header `user_id\titem_id\tbasket_index`, rows in user,
    /// basket, item order.
    pub fn to_tsv(&self, catalog: &Catalog) -> String {
        let mut out = String::from("user_id\titem_id\tbasket_index\n");
        for u in &self.users {
            for b in &u.baskets {
                for &i in &b.items {
                    let _ = writeln!(out, "{}\t{}\t{}", u.id, catalog.id(i), b.index);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasketMode {
    /// Baskets come from the `basket_index` column.
    #[default]
    Indexed,
    /// Every row is its own basket, in file order.
    OneItemBaskets,
}

pub fn load_transactions(path: &Path, catalog: &Catalog, mode: BasketMode) -> Result<InteractionLog> {
    let text = fs::read_to_string(path)?;
    parse_transactions(path, &text, catalog, mode)
}

fn parse_transactions(path: &Path, text: &str, catalog: &Catalog, mode: BasketMode) -> Result<InteractionLog> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, "empty transactions file"))?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name);
    let user_col = col("user_id").ok_or_else(|| Error::parse(path, 1, "missing column user_id"))?;
    let item_col = col("item_id").ok_or_else(|| Error::parse(path, 1, "missing column item_id"))?;
    let basket_col = match mode {
        BasketMode::Indexed => Some(col("basket_index").ok_or_else(|| Error::parse(path, 1, "missing column basket_index"))?),
        BasketMode::OneItemBaskets => None,
    };
    let mut rows = Vec::new();
    let mut per_user_counter: HashMap<String, u64> = HashMap::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| {
            fields
                .get(c)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::parse(path, n + 1, format!("missing value in column {}", c + 1)))
        };
        let user = get(user_col)?.to_string();
        let item_id = get(item_col)?;
        let item = catalog
            .index_of(item_id)
            .ok_or_else(|| Error::parse(path, n + 1, format!("unknown item id {item_id:?}")))?;
        let basket = match basket_col {
            Some(c) => get(c)?
                .parse::<u64>()
                .map_err(|e| Error::parse(path, n + 1, format!("basket_index: {e}")))?,
            None => {
                let counter = per_user_counter.entry(user.clone()).or_insert(0);
                *counter += 1;
                *counter - 1
            }
        };
        rows.push((user, item, basket));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no transactions"));
    }
    Ok(InteractionLog::from_rows(rows))
}

/// Train history plus the held-out final basket of each eligible user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: InteractionLog,
    /// Keyed by the user's index in `train`.
    pub test: BTreeMap<UserIdx, Basket>,
}

/// Holds out the last basket of every user with at least two baskets.
///
/// Items of the final basket the user already bought earlier are dropped
/// from the held-out basket; if nothing remains, the basket stays in train.
pub fn split_train_test(log: &InteractionLog) -> Split {
    let mut train_users = Vec::with_capacity(log.num_users());
    let mut held_out: Vec<(String, Basket)> = Vec::new();
    for user in log.users() {
        if user.baskets.len() < 2 {
            train_users.push(user.clone());
            continue;
        }
        let (last, earlier) = user.baskets.split_last().expect("at least two baskets");
        let history = UserHistory::new(user.id.clone(), earlier.to_vec());
        let fresh: Vec<ItemIdx> = last.items.iter().copied().filter(|&i| !history.owns(i)).collect();
        if fresh.is_empty() {
            train_users.push(user.clone());
        } else {
            held_out.push((
                user.id.clone(),
                Basket {
                    index: last.index,
                    items: fresh,
                },
            ));
            train_users.push(history);
        }
    }
    let train = InteractionLog::from_users(train_users);
    let test = held_out
        .into_iter()
        .map(|(id, b)| (train.user_index(&id).expect("test user kept in train"), b))
        .collect();
    Split { train, test }
}

impl Split {
    pub fn test_to_tsv(&self, catalog: &Catalog) -> String {
        let mut out = String::from("user_id\titem_id\tbasket_index\n");
        for (&u, b) in &self.test {
            for &i in &b.items {
                let _ = writeln!(out, "{}\t{}\t{}", self.train.user(u).id, catalog.id(i), b.index);
            }
        }
        out
    }

    /// Audit listing of held-out `(user_id, item_id)` pairs, sorted.
    pub fn manifest(&self, catalog: &Catalog) -> String {
        let mut pairs: Vec<(&str, &str)> = self
            .test
            .iter()
            .flat_map(|(&u, b)| b.items.iter().map(move |&i| (self.train.user(u).id.as_str(), catalog.id(i))))
            .collect();
        pairs.sort();
        let mut out = String::from("user_id\titem_id\n");
        for (u, i) in pairs {
            let _ = writeln!(out, "{u}\t{i}");
        }
        out
    }
}

/// A catalog with its split, as persisted in a data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: Catalog,
    pub split: Split,
}

pub const ITEMS_FILE: &str = "items.bin";
pub const ARTISTS_FILE: &str = "artists.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const SPLIT_MANIFEST_FILE: &str = "split_manifest.tsv";

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_embeddings(&self.catalog, &dir.join(ITEMS_FILE))?;
        if self.catalog.has_artists() {
            write_atomic(&dir.join(ARTISTS_FILE), encode_artists(&self.catalog).as_bytes())?;
        }
        write_atomic(&dir.join(TRAIN_FILE), self.split.train.to_tsv(&self.catalog).as_bytes())?;
        write_atomic(&dir.join(TEST_FILE), self.split.test_to_tsv(&self.catalog).as_bytes())?;
        write_atomic(&dir.join(SPLIT_MANIFEST_FILE), self.split.manifest(&self.catalog).as_bytes())?;
        Ok(())
    }

    /// Opens a saved dataset; the embedding size comes from the item file.
    pub fn open(dir: &Path) -> Result<Self> {
        let items_path = dir.join(ITEMS_FILE);
        let bytes = fs::read(&items_path)?;
        let mut r = Reader::new(&items_path, &bytes);
        r.expect_magic(EMBEDDINGS_MAGIC)?;
        r.u32()?;
        let dim = r.u32()? as usize;
        let mut catalog = Catalog::from_records(read_embeddings_binary(&items_path, &bytes, dim)?, dim)?;
        let artists_path = dir.join(ARTISTS_FILE);
        if artists_path.exists() {
            catalog.set_artists(&load_artists(&artists_path)?)?;
        }
        let train = load_transactions(&dir.join(TRAIN_FILE), &catalog, BasketMode::Indexed)?;
        let test_path = dir.join(TEST_FILE);
        let test_text = fs::read_to_string(&test_path)?;
        let mut test = BTreeMap::new();
        if test_text.lines().filter(|l| !l.trim().is_empty()).count() > 1 {
            let log = parse_transactions(&test_path, &test_text, &catalog, BasketMode::Indexed)?;
            for user in log.users() {
                let u = train
                    .user_index(&user.id)
                    .ok_or_else(|| Error::format(&test_path, format!("test user {:?} absent from train", user.id)))?;
                if user.baskets.len() != 1 {
                    return Err(Error::format(
                        &test_path,
                        format!("test user {:?} has {} baskets", user.id, user.baskets.len()),
                    ));
                }
                test.insert(u, user.baskets[0].clone());
            }
        }
        Ok(Dataset {
            catalog,
            split: Split { train, test },
        })
    }
}
