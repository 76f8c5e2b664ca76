//! Prompt tokenization, lookup-table embeddings and token-index selection.
//!
//! The tokenizer is a greedy longest-match over an explicit subtoken
//! vocabulary with single-character fallback: prompts are lowercased and
//! whitespace-collapsed, then consumed left to right taking the longest
//! matching subtoken at each position. Characters with no entry are skipped,
//! so tokenization is total. Sequences are framed with begin/end specials and
//! padded or truncated to a fixed length.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use std::collections::HashMap;

/// Fixed token-sequence length used throughout the pipeline.
pub const DEFAULT_SEQ_LEN: usize = 77;

const VOCAB_MAGIC: &str = "GLVOCAB";
const VOCAB_VERSION: u32 = 1;
const BLOB_SENTINEL: &str = "---BLOB---";

/// Which token positions feed the heatmap aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Every real prompt token (padding excluded; specials per flag).
    All,
    /// Only the positions covering the pathology string's subtokens.
    Pathology,
}

impl std::str::FromStr for TokenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TokenMode::All),
            "pathology" => Ok(TokenMode::Pathology),
            other => Err(Error::InvalidArgument(format!("unknown token mode `{other}`"))),
        }
    }
}

/// Subtoken table with per-id embedding rows and begin/end/pad specials.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    begin_id: u32,
    end_id: u32,
    pad_id: u32,
    embed_dim: usize,
    /// |V| x embed_dim, row-major.
    embedding: Vec<f32>,
    max_token_chars: usize,
}

impl Vocabulary {
    /// Assembles a vocabulary from `(subtoken, id)` entries, special ids and
    /// a flat row-major embedding table.
    pub fn from_parts(
        entries: Vec<(String, u32)>,
        begin_id: u32,
        end_id: u32,
        pad_id: u32,
        embed_dim: usize,
        embedding: Vec<f32>,
    ) -> Result<Self> {
        let n = entries.len();
        if embed_dim == 0 {
            return Err(Error::CorruptVocabulary("embedding dim must be >= 1".into()));
        }
        if embedding.len() != n * embed_dim {
            return Err(Error::CorruptVocabulary(format!(
                "embedding blob has {} values, expected {} ({} entries x dim {})",
                embedding.len(),
                n * embed_dim,
                n,
                embed_dim
            )));
        }
        if !embedding.iter().all(|v| v.is_finite()) {
            return Err(Error::CorruptVocabulary("embedding table contains non-finite values".into()));
        }
        let mut id_to_token = vec![String::new(); n];
        let mut seen = vec![false; n];
        let mut token_to_id = HashMap::with_capacity(n);
        for (tok, id) in entries {
            let idx = id as usize;
            if idx >= n {
                return Err(Error::CorruptVocabulary(format!(
                    "id {id} out of range for {n} entries (ids must be dense 0..{n})"
                )));
            }
            if seen[idx] {
                return Err(Error::CorruptVocabulary(format!("duplicate id {id}")));
            }
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::CorruptVocabulary(format!("duplicate subtoken `{tok}`")));
            }
            seen[idx] = true;
            id_to_token[idx] = tok;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::CorruptVocabulary("ids are not dense".into()));
        }
        for (name, id) in [("begin", begin_id), ("end", end_id), ("pad", pad_id)] {
            if id as usize >= n {
                return Err(Error::CorruptVocabulary(format!("special `{name}` id {id} out of range")));
            }
        }
        if begin_id == end_id || begin_id == pad_id || end_id == pad_id {
            return Err(Error::CorruptVocabulary("begin/end/pad ids must be distinct".into()));
        }
        let specials = [begin_id, end_id, pad_id];
        let mut max_token_chars = 1;
        for (idx, tok) in id_to_token.iter().enumerate() {
            if tok.is_empty() || tok.contains('\t') || tok.contains('\n') || tok.contains('\r') {
                return Err(Error::CorruptVocabulary(format!(
                    "subtoken for id {idx} is empty or contains tab/newline"
                )));
            }
            if specials.contains(&(idx as u32)) {
                continue;
            }
            let nchars = tok.chars().count();
            max_token_chars = max_token_chars.max(nchars);
            // Multi-character subtokens must decompose into known single
            // characters so greedy matching is total over the alphabet.
            if nchars > 1 {
                for ch in tok.chars() {
                    if !token_to_id.contains_key(ch.to_string().as_str()) {
                        return Err(Error::CorruptVocabulary(format!(
                            "subtoken `{tok}` uses character `{ch}` with no single-character entry"
                        )));
                    }
                }
            }
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
            begin_id,
            end_id,
            pad_id,
            embed_dim,
            embedding,
            max_token_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn begin_id(&self) -> u32 {
        self.begin_id
    }

    pub fn end_id(&self) -> u32 {
        self.end_id
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn embedding_row(&self, id: u32) -> Option<&[f32]> {
        let idx = id as usize;
        if idx >= self.len() {
            return None;
        }
        Some(&self.embedding[idx * self.embed_dim..(idx + 1) * self.embed_dim])
    }

    pub fn embedding_table(&self) -> &[f32] {
        &self.embedding
    }

    /// Iterates entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.id_to_token.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32))
    }

    fn is_special(&self, id: u32) -> bool {
        id == self.begin_id || id == self.end_id || id == self.pad_id
    }

    /// Serializes the vocabulary: a UTF-8 header (counts, dim, special ids),
    /// one `subtoken<TAB>id` line per entry, a `---BLOB---` sentinel, then
    /// the embedding table as raw little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&format!("{VOCAB_MAGIC} {VOCAB_VERSION}\n"));
        header.push_str(&format!("entries {}\n", self.len()));
        header.push_str(&format!("dim {}\n", self.embed_dim));
        header.push_str(&format!("specials {} {} {}\n", self.begin_id, self.end_id, self.pad_id));
        for (tok, id) in self.entries() {
            header.push_str(&format!("{tok}\t{id}\n"));
        }
        header.push_str(BLOB_SENTINEL);
        header.push('\n');
        let mut bytes = header.into_bytes();
        for v in &self.embedding {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    /// Parses the documented vocabulary format; `origin` names the source in
    /// error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fmt = |reason: String| Error::format(origin, reason);
        let sentinel = format!("{BLOB_SENTINEL}\n");
        let split = find_subslice(bytes, sentinel.as_bytes())
            .ok_or_else(|| fmt(format!("missing `{BLOB_SENTINEL}` sentinel")))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| fmt("header is not valid UTF-8".into()))?;
        let blob = &bytes[split + sentinel.len()..];

        let mut lines = header.lines();
        let magic = lines.next().ok_or_else(|| fmt("empty header".into()))?;
        if magic != format!("{VOCAB_MAGIC} {VOCAB_VERSION}") {
            return Err(fmt(format!("bad magic/version line `{magic}`")));
        }
        let mut expect_entries: Option<usize> = None;
        let mut dim: Option<usize> = None;
        let mut specials: Option<(u32, u32, u32)> = None;
        let mut entries: Vec<(String, u32)> = Vec::new();
        for line in lines {
            if let Some((tok, id)) = line.split_once('\t') {
                let id: u32 =
                    id.parse().map_err(|_| fmt(format!("bad id in entry line `{line}`")))?;
                entries.push((tok.to_string(), id));
                continue;
            }
            let mut it = line.split_whitespace();
            match it.next() {
                Some("entries") => {
                    expect_entries = Some(
                        it.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| fmt(format!("bad entries line `{line}`")))?,
                    )
                }
                Some("dim") => {
                    dim = Some(
                        it.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| fmt(format!("bad dim line `{line}`")))?,
                    )
                }
                Some("specials") => {
                    let mut parse = || -> Result<u32> {
                        it.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| fmt(format!("bad specials line `{line}`")))
                    };
                    specials = Some((parse()?, parse()?, parse()?));
                }
                _ => return Err(fmt(format!("unrecognized header line `{line}`"))),
            }
        }
        let expect_entries = expect_entries.ok_or_else(|| fmt("missing `entries` line".into()))?;
        let dim = dim.ok_or_else(|| fmt("missing `dim` line".into()))?;
        let (begin, end, pad) = specials.ok_or_else(|| fmt("missing `specials` line".into()))?;
        if entries.len() != expect_entries {
            return Err(fmt(format!(
                "header declares {expect_entries} entries but lists {}",
                entries.len()
            )));
        }
        if blob.len() != expect_entries * dim * 4 {
            return Err(fmt(format!(
                "embedding blob has {} bytes, expected {}",
                blob.len(),
                expect_entries * dim * 4
            )));
        }
        let mut table = Vec::with_capacity(expect_entries * dim);
        for chunk in blob.chunks_exact(4) {
            table.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        Vocabulary::from_parts(entries, begin, end, pad, dim, table)
            .map_err(|e| fmt(e.to_string()))
    }

    /// Greedy longest-match segmentation of normalized text into subtoken
    /// ids, without framing or padding. Unknown characters are skipped.
    fn segment(&self, normalized: &str) -> Vec<u32> {
        let chars: Vec<char> = normalized.chars().collect();
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut matched = None;
            let longest = self.max_token_chars.min(chars.len() - pos);
            for len in (1..=longest).rev() {
                let cand: String = chars[pos..pos + len].iter().collect();
                if let Some(&id) = self.token_to_id.get(cand.as_str()) {
                    if !self.is_special(id) {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => pos += 1, // unknown character: skip
            }
        }
        ids
    }
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Fixed-length padded token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    /// true = real token (begin/end included), false = padding.
    padding_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn padding_mask(&self) -> &[bool] {
        &self.padding_mask
    }

    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of real (non-padding) positions.
    pub fn real_len(&self) -> usize {
        self.padding_mask.iter().filter(|&&m| m).count()
    }
}

/// Tokenizes a prompt into exactly `seq_len` ids: begin + subtokens + end,
/// padded or truncated (begin and end always survive truncation).
pub fn tokenize(prompt: &str, vocab: &Vocabulary, seq_len: usize) -> Result<TokenSequence> {
    if seq_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence length must fit begin and end tokens, got {seq_len}"
        )));
    }
    let mut body = vocab.segment(&normalize_prompt(prompt));
    body.truncate(seq_len - 2);
    let mut ids = Vec::with_capacity(seq_len);
    ids.push(vocab.begin_id());
    ids.extend_from_slice(&body);
    ids.push(vocab.end_id());
    let real = ids.len();
    ids.resize(seq_len, vocab.pad_id());
    let padding_mask = (0..seq_len).map(|i| i < real).collect();
    Ok(TokenSequence { ids, padding_mask })
}

/// Concatenation of the subtoken strings at real non-special positions.
pub fn detokenize(tokens: &TokenSequence, vocab: &Vocabulary) -> String {
    tokens
        .ids
        .iter()
        .zip(&tokens.padding_mask)
        .filter(|&(&id, &real)| real && !vocab.is_special(id))
        .filter_map(|(&id, _)| vocab.token_str(id))
        .collect()
}

/// Per-position embedding matrix (seq_len x embed_dim) for a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    matrix: Tensor,
    source: TokenSequence,
}

impl PromptEmbedding {
    /// seq_len x embed_dim matrix; row s is the embedding of token s.
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn tokens(&self) -> &TokenSequence {
        &self.source
    }

    pub fn seq_len(&self) -> usize {
        self.source.seq_len()
    }
}

/// Row-wise table lookup of a token sequence's embeddings.
pub fn embed(tokens: &TokenSequence, vocab: &Vocabulary) -> Result<PromptEmbedding> {
    let dim = vocab.embed_dim();
    let mut data = Vec::with_capacity(tokens.seq_len() * dim);
    for &id in tokens.ids() {
        let row = vocab.embedding_row(id).ok_or_else(|| {
            Error::CorruptVocabulary(format!("token id {id} outside table of {} entries", vocab.len()))
        })?;
        data.extend_from_slice(row);
    }
    Ok(PromptEmbedding {
        matrix: Tensor::new(vec![tokens.seq_len(), dim], data)?,
        source: tokens.clone(),
    })
}

/// The embedded empty prompt, used for the unconditional denoiser path.
pub fn null_context(vocab: &Vocabulary, seq_len: usize) -> Result<PromptEmbedding> {
    embed(&tokenize("", vocab, seq_len)?, vocab)
}

/// Selects the token positions whose attention maps enter the aggregation.
///
/// `All` returns every real position, excluding begin/end unless
/// `include_specials` is set. `Pathology` returns the positions of every
/// contiguous occurrence of the pathology string's subtoken ids; absence is
/// an error so callers can filter such samples.
pub fn select_token_indices(
    tokens: &TokenSequence,
    mode: TokenMode,
    pathology: Option<&str>,
    vocab: &Vocabulary,
    include_specials: bool,
) -> Result<Vec<usize>> {
    match mode {
        TokenMode::All => {
            let picked: Vec<usize> = tokens
                .ids()
                .iter()
                .zip(tokens.padding_mask())
                .enumerate()
                .filter(|&(_, (&id, &real))| real && (include_specials || !vocab.is_special(id)))
                .map(|(i, _)| i)
                .collect();
            Ok(picked)
        }
        TokenMode::Pathology => {
            let pathology = pathology
                .filter(|p| !p.trim().is_empty())
                .ok_or_else(|| Error::InvalidArgument("pathology mode requires a pathology string".into()))?;
            let needle = vocab.segment(&normalize_prompt(pathology));
            if needle.is_empty() {
                return Err(Error::EmptySelection(format!(
                    "pathology `{pathology}` tokenizes to nothing"
                )));
            }
            let real = tokens.real_len();
            let hay = &tokens.ids()[..real];
            let mut picked = Vec::new();
            if needle.len() <= hay.len() {
                for start in 0..=hay.len() - needle.len() {
                    if hay[start..start + needle.len()] == needle[..] {
                        picked.extend(start..start + needle.len());
                    }
                }
            }
            picked.dedup();
            if picked.is_empty() {
                return Err(Error::EmptySelection(format!(
                    "pathology `{pathology}` does not occur in the prompt's tokens"
                )));
            }
            Ok(picked)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small vocabulary: specials, single characters, and a few subwords.
    pub(crate) fn test_vocab() -> Vocabulary {
        let mut entries: Vec<(String, u32)> = Vec::new();
        let add = |s: &str, entries: &mut Vec<(String, u32)>| {
            let id = entries.len() as u32;
            entries.push((s.to_string(), id));
        };
        add("<begin>", &mut entries);
        add("<end>", &mut entries);
        add("<pad>", &mut entries);
        for c in "abcdefghijklmnopqrstuvwxyz ".chars() {
            add(&c.to_string(), &mut entries);
        }
        for w in ["pneumo", "thorax", "right", "lesion"] {
            add(w, &mut entries);
        }
        let n = entries.len();
        let dim = 4;
        // Distinct rows; pad row is all zeros.
        let mut table = vec![0.0f32; n * dim];
        for id in 0..n {
            if id == 2 {
                continue;
            }
            for d in 0..dim {
                table[id * dim + d] = (id * dim + d + 1) as f32 * 0.01;
            }
        }
        Vocabulary::from_parts(entries, 0, 1, 2, dim, table).unwrap()
    }

    #[test]
    fn empty_prompt_is_begin_end_pad() {
        let v = test_vocab();
        let t = tokenize("", &v, 8).unwrap();
        assert_eq!(t.ids()[0], v.begin_id());
        assert_eq!(t.ids()[1], v.end_id());
        assert!(t.ids()[2..].iter().all(|&id| id == v.pad_id()));
        assert_eq!(t.padding_mask(), &[true, true, false, false, false, false, false, false]);
    }

    #[test]
    fn truncation_preserves_begin_and_end() {
        let v = test_vocab();
        let t = tokenize("abcdefghij", &v, 6).unwrap();
        assert_eq!(t.seq_len(), 6);
        assert_eq!(t.ids()[0], v.begin_id());
        assert_eq!(t.ids()[5], v.end_id());
        assert_eq!(t.real_len(), 6);
    }

    #[test]
    fn greedy_longest_match_splits_oov_word() {
        let v = test_vocab();
        let t = tokenize("pneumothorax", &v, 8).unwrap();
        let pneumo = v.token_to_id["pneumo"];
        let thorax = v.token_to_id["thorax"];
        assert_eq!(&t.ids()[..4], &[v.begin_id(), pneumo, thorax, v.end_id()]);
    }

    #[test]
    fn tokenize_is_total_on_arbitrary_input() {
        let v = test_vocab();
        for junk in ["Ümläut ✓ 123!?", "   ", "ALL  CAPS\twhitespace\n"] {
            let t = tokenize(junk, &v, 16).unwrap();
            assert_eq!(t.seq_len(), 16);
        }
    }

    #[test]
    fn round_trip_reproduces_normalized_text() {
        let v = test_vocab();
        let raw = "Right   PNEUMOTHORAX  seen";
        let t = tokenize(raw, &v, 40).unwrap();
        assert_eq!(detokenize(&t, &v), normalize_prompt(raw));
    }

    #[test]
    fn embed_is_row_lookup() {
        let v = test_vocab();
        let t = tokenize("ab", &v, 8).unwrap();
        let e = embed(&t, &v).unwrap();
        assert_eq!(e.matrix().shape(), &[8, 4]);
        for (s, &id) in t.ids().iter().enumerate() {
            let row = &e.matrix().data()[s * 4..(s + 1) * 4];
            assert_eq!(row, v.embedding_row(id).unwrap());
        }
        // pad rows identical across positions
        let p1 = &e.matrix().data()[4 * 4..5 * 4];
        let p2 = &e.matrix().data()[7 * 4..8 * 4];
        assert_eq!(p1, p2);
    }

    #[test]
    fn shared_prefix_shares_embedding_rows() {
        let v = test_vocab();
        let a = embed(&tokenize("right a", &v, 12).unwrap(), &v).unwrap();
        let b = embed(&tokenize("right b", &v, 12).unwrap(), &v).unwrap();
        // positions 0..3 = [begin, right, ' '] identical
        assert_eq!(&a.matrix().data()[..3 * 4], &b.matrix().data()[..3 * 4]);
    }

    #[test]
    fn orthogonal_test_vocab_embeds_orthogonally() {
        let entries: Vec<(String, u32)> =
            ["<b>", "<e>", "<p>", "x", "y"].iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect();
        let mut table = vec![0.0f32; 5 * 5];
        for i in 0..5 {
            table[i * 5 + i] = 1.0;
        }
        let v = Vocabulary::from_parts(entries, 0, 1, 2, 5, table).unwrap();
        let e = embed(&tokenize("xy", &v, 6).unwrap(), &v).unwrap();
        let m = e.matrix().data();
        for i in 0..4 {
            for j in i + 1..4 {
                let dot: f32 = (0..5).map(|d| m[i * 5 + d] * m[j * 5 + d]).sum();
                assert_eq!(dot, 0.0, "rows {i} and {j} not orthogonal");
            }
        }
    }

    #[test]
    fn select_all_excludes_specials_by_default() {
        let v = test_vocab();
        let empty = tokenize("", &v, 8).unwrap();
        assert!(select_token_indices(&empty, TokenMode::All, None, &v, false).unwrap().is_empty());

        let t = tokenize("abc", &v, 8).unwrap(); // begin a b c end
        assert_eq!(select_token_indices(&t, TokenMode::All, None, &v, false).unwrap(), vec![1, 2, 3]);
        assert_eq!(
            select_token_indices(&t, TokenMode::All, None, &v, true).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn select_pathology_covers_its_subtokens() {
        let v = test_vocab();
        let t = tokenize("right pneumothorax", &v, 12).unwrap();
        // [begin, right, ' ', pneumo, thorax, end, ...]
        let got = select_token_indices(&t, TokenMode::Pathology, Some("pneumothorax"), &v, false).unwrap();
        assert_eq!(got, vec![3, 4]);

        let all = select_token_indices(&t, TokenMode::All, None, &v, false).unwrap();
        assert!(got.iter().all(|i| all.contains(i)));
    }

    #[test]
    fn select_pathology_absent_is_empty_selection_error() {
        let v = test_vocab();
        let t = tokenize("right", &v, 12).unwrap();
        let err = select_token_indices(&t, TokenMode::Pathology, Some("lesion"), &v, false);
        assert!(matches!(err, Err(Error::EmptySelection(_))));
        let err = select_token_indices(&t, TokenMode::Pathology, None, &v, false);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vocabulary_bytes_round_trip_including_space_token() {
        let v = test_vocab();
        let bytes = v.to_bytes();
        let back = Vocabulary::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.len(), v.len());
        assert_eq!(back.embed_dim(), v.embed_dim());
        assert_eq!(back.embedding_table(), v.embedding_table());
        let t = tokenize("right pneumothorax", &back, 12).unwrap();
        assert_eq!(t.ids(), tokenize("right pneumothorax", &v, 12).unwrap().ids());

        // truncated blob and bad magic are format errors
        assert!(matches!(
            Vocabulary::from_bytes(&bytes[..bytes.len() - 3], "mem"),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Vocabulary::from_bytes(&bad, "mem"), Err(Error::Format { .. })));
    }

    #[test]
    fn vocabulary_validation_catches_corruption() {
        let entries = vec![("<b>".to_string(), 0), ("<e>".to_string(), 1), ("<p>".to_string(), 2)];
        // bad blob length
        assert!(Vocabulary::from_parts(entries.clone(), 0, 1, 2, 3, vec![0.0; 8]).is_err());
        // duplicate specials
        assert!(Vocabulary::from_parts(entries.clone(), 0, 0, 2, 3, vec![0.0; 9]).is_err());
        // multi-char subtoken without character coverage
        let bad = vec![
            ("<b>".to_string(), 0),
            ("<e>".to_string(), 1),
            ("<p>".to_string(), 2),
            ("ab".to_string(), 3),
        ];
        assert!(matches!(
            Vocabulary::from_parts(bad, 0, 1, 2, 2, vec![0.0; 8]),
            Err(Error::CorruptVocabulary(_))
        ));
    }
}
